#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace flowcodec {

/// Frequencies of every table are quantized to this many bits.
inline constexpr int kCdfPrecisionBits = 16;
inline constexpr uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

/// Quantized CDF over the symbols [offset, offset + n - 2] plus one trailing
/// escape bucket. cdf has n + 1 entries, cdf[0] == 0, cdf[n] == kCdfTotal,
/// and is strictly increasing (every bucket has frequency >= 1).
struct CdfTable {
  int32_t offset = 0;
  std::vector<uint32_t> cdf;

  size_t buckets() const { return cdf.size() - 1; }
  int32_t min_symbol() const { return offset; }
  int32_t max_symbol() const { return offset + static_cast<int32_t>(buckets()) - 2; }
  uint32_t frequency(size_t bucket) const { return cdf[bucket + 1] - cdf[bucket]; }
};

/// Builds a table from probabilities of the in-range symbols. Mass not
/// covered by `pmf` goes to the escape bucket. Integer-only after the initial
/// rounding, so identical inputs give identical tables everywhere.
CdfTable make_cdf_table(std::span<const double> pmf, int32_t offset);

/// Byte-oriented range coder (32-bit range, carry propagation). Output is
/// terminated with the shortest suffix that pins the final interval; the
/// decoder reads zeros past the end of the buffer.
class RangeEncoder {
 public:
  /// Codes the interval [cum, cum + freq) out of kCdfTotal.
  void encode(uint32_t cum, uint32_t freq);
  /// Codes `bits` raw bits (1..16) with uniform probability.
  void encode_bits(uint32_t value, int bits);
  /// Codes one symbol under `table`; out-of-range values use the escape
  /// bucket followed by an Elias-gamma coded magnitude.
  void encode_symbol(int32_t symbol, const CdfTable& table);

  std::vector<uint8_t> finish();

 private:
  void shift_low();

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> out_;
  bool finished_ = false;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes);

  /// Returns a value in [0, kCdfTotal) identifying the coded interval.
  uint32_t target();
  /// Consumes the interval found via target().
  void consume(uint32_t cum, uint32_t freq);
  uint32_t decode_bits(int bits);
  int32_t decode_symbol(const CdfTable& table);

  /// Bytes requested beyond the end of the input (zeros were substituted).
  size_t overrun() const { return overrun_; }

 private:
  uint8_t next_byte();

  std::span<const uint8_t> in_;
  size_t pos_ = 0;
  size_t overrun_ = 0;
  uint32_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t step_ = 0;
};

/// Codes symbols[i] under tables[table_index[i]].
std::vector<uint8_t> range_encode(std::span<const int32_t> symbols, std::span<const uint32_t> table_index,
                                  std::span<const CdfTable> tables);
std::vector<int32_t> range_decode(std::span<const uint8_t> bytes, std::span<const uint32_t> table_index,
                                  std::span<const CdfTable> tables);

/// Ideal code length in bits of `symbol` under `table` (escape included).
double table_cost_bits(int32_t symbol, const CdfTable& table);

}  // namespace flowcodec
