#include "flowcodec/range_coder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "flowcodec/errors.hpp"

namespace flowcodec {

namespace {

constexpr uint32_t kTopValue = 1u << 24;
constexpr int kGammaLengthBits = 5;

}  // namespace

CdfTable make_cdf_table(std::span<const double> pmf, int32_t offset) {
  const size_t n = pmf.size() + 1;
  if (n > kCdfTotal) throw ArgumentError("cdf table has more buckets than the coder precision allows");
  std::vector<int64_t> freq(n);
  double covered = 0.0;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double p = std::isfinite(pmf[i]) ? std::max(pmf[i], 0.0) : 0.0;
    covered += p;
    freq[i] = std::max<int64_t>(1, std::llround(p * kCdfTotal));
  }
  freq[n - 1] = std::max<int64_t>(1, std::llround(std::max(0.0, 1.0 - covered) * kCdfTotal));

  int64_t sum = 0;
  for (auto f : freq) sum += f;
  while (sum != static_cast<int64_t>(kCdfTotal)) {
    auto largest = std::max_element(freq.begin(), freq.end());
    if (sum < static_cast<int64_t>(kCdfTotal)) {
      *largest += static_cast<int64_t>(kCdfTotal) - sum;
      sum = kCdfTotal;
    } else {
      const int64_t take = std::min<int64_t>(sum - kCdfTotal, *largest - 1);
      *largest -= take;
      sum -= take;
    }
  }

  CdfTable table;
  table.offset = offset;
  table.cdf.resize(n + 1);
  table.cdf[0] = 0;
  for (size_t i = 0; i < n; ++i) table.cdf[i + 1] = table.cdf[i] + static_cast<uint32_t>(freq[i]);
  return table;
}

void RangeEncoder::shift_low() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<uint8_t>(low_ >> 32);
    uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = static_cast<uint32_t>(static_cast<uint32_t>(low_) << 8);
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
  const uint32_t r = range_ >> kCdfPrecisionBits;
  low_ += static_cast<uint64_t>(r) * cum;
  range_ = r * freq;
  while (range_ < kTopValue) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(uint32_t value, int bits) {
  if (bits < 1 || bits > 16) throw ArgumentError("encode_bits: width must be in [1, 16]");
  const uint32_t r = range_ >> bits;
  low_ += static_cast<uint64_t>(r) * (value & ((1u << bits) - 1));
  range_ = r;
  while (range_ < kTopValue) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_symbol(int32_t symbol, const CdfTable& table) {
  if (symbol >= table.min_symbol() && symbol <= table.max_symbol()) {
    const auto b = static_cast<size_t>(symbol - table.offset);
    encode(table.cdf[b], table.frequency(b));
    return;
  }
  const size_t esc = table.buckets() - 1;
  encode(table.cdf[esc], table.frequency(esc));
  const bool above = symbol > table.max_symbol();
  const uint64_t distance = above ? static_cast<uint64_t>(int64_t{symbol} - table.max_symbol())
                                  : static_cast<uint64_t>(int64_t{table.min_symbol()} - symbol);
  encode_bits(above ? 1 : 0, 1);
  const int width = std::bit_width(distance);  // >= 1
  encode_bits(static_cast<uint32_t>(width - 1), kGammaLengthBits);
  int remaining = width - 1;  // leading one bit is implicit
  while (remaining > 0) {
    const int chunk = std::min(remaining, 16);
    remaining -= chunk;
    encode_bits(static_cast<uint32_t>(distance >> remaining), chunk);
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  if (finished_) return out_;
  finished_ = true;
  // Pick the value in [low, low + range) with the most trailing zero bits.
  const uint64_t hi = low_ + range_;
  for (int k = 32; k >= 0; --k) {
    const uint64_t mask = (uint64_t{1} << k) - 1;
    const uint64_t v = (low_ + mask) & ~mask;
    if (v < hi) {
      low_ = v;
      break;
    }
  }
  for (int i = 0; i < 5; ++i) shift_low();
  // The first byte is the initial cache and always zero.
  if (!out_.empty()) out_.erase(out_.begin());
  while (!out_.empty() && out_.back() == 0) out_.pop_back();
  return out_;
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : in_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ < in_.size()) return in_[pos_++];
  ++overrun_;
  return 0;
}

uint32_t RangeDecoder::target() {
  step_ = range_ >> kCdfPrecisionBits;
  return std::min(code_ / step_, kCdfTotal - 1);
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq) {
  code_ -= step_ * cum;
  range_ = step_ * freq;
  while (range_ < kTopValue) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

uint32_t RangeDecoder::decode_bits(int bits) {
  if (bits < 1 || bits > 16) throw ArgumentError("decode_bits: width must be in [1, 16]");
  const uint32_t step = range_ >> bits;
  const uint32_t v = std::min(code_ / step, (1u << bits) - 1);
  code_ -= step * v;
  range_ = step;
  while (range_ < kTopValue) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return v;
}

int32_t RangeDecoder::decode_symbol(const CdfTable& table) {
  const uint32_t t = target();
  const auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), t);
  const auto b = static_cast<size_t>(it - table.cdf.begin()) - 1;
  consume(table.cdf[b], table.frequency(b));
  if (b + 1 < table.buckets()) return table.offset + static_cast<int32_t>(b);

  const bool above = decode_bits(1) != 0;
  const int width = static_cast<int>(decode_bits(kGammaLengthBits)) + 1;
  uint64_t distance = 1;
  int remaining = width - 1;
  while (remaining > 0) {
    const int chunk = std::min(remaining, 16);
    remaining -= chunk;
    distance = (distance << chunk) | decode_bits(chunk);
  }
  const int64_t value = above ? int64_t{table.max_symbol()} + static_cast<int64_t>(distance)
                              : int64_t{table.min_symbol()} - static_cast<int64_t>(distance);
  if (value < INT32_MIN || value > INT32_MAX) throw DecodeError("escaped symbol out of range");
  return static_cast<int32_t>(value);
}

std::vector<uint8_t> range_encode(std::span<const int32_t> symbols, std::span<const uint32_t> table_index,
                                  std::span<const CdfTable> tables) {
  if (symbols.size() != table_index.size()) throw ArgumentError("range_encode: one table index per symbol");
  RangeEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) {
    if (table_index[i] >= tables.size()) throw ArgumentError("range_encode: table index out of range");
    enc.encode_symbol(symbols[i], tables[table_index[i]]);
  }
  return enc.finish();
}

std::vector<int32_t> range_decode(std::span<const uint8_t> bytes, std::span<const uint32_t> table_index,
                                  std::span<const CdfTable> tables) {
  RangeDecoder dec(bytes);
  std::vector<int32_t> out(table_index.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (table_index[i] >= tables.size()) throw ArgumentError("range_decode: table index out of range");
    out[i] = dec.decode_symbol(tables[table_index[i]]);
  }
  return out;
}

double table_cost_bits(int32_t symbol, const CdfTable& table) {
  if (symbol >= table.min_symbol() && symbol <= table.max_symbol()) {
    return kCdfPrecisionBits - std::log2(static_cast<double>(table.frequency(static_cast<size_t>(symbol - table.offset))));
  }
  const bool above = symbol > table.max_symbol();
  const uint64_t distance = above ? static_cast<uint64_t>(int64_t{symbol} - table.max_symbol())
                                  : static_cast<uint64_t>(int64_t{table.min_symbol()} - symbol);
  return kCdfPrecisionBits - std::log2(static_cast<double>(table.frequency(table.buckets() - 1))) + 1 +
         kGammaLengthBits + (std::bit_width(distance) - 1);
}

}  // namespace flowcodec
