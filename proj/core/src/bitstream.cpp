#include "flowcodec/bitstream.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

#include "flowcodec/errors.hpp"

namespace flowcodec {

namespace {

constexpr int kKindBits = 3;
constexpr uint8_t kMaxKind = static_cast<uint8_t>(PacketKind::kIntra);

void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }
void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_varint(std::vector<uint8_t>& out, uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<uint8_t>(v));
}
size_t varint_size(uint64_t v) {
  size_t n = 1;
  while (v >= 0x80) {
    v >>= 7;
    ++n;
  }
  return n;
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : in_(bytes) {}

  uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    const uint16_t v = static_cast<uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t varint(const char* what) {
    uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const uint8_t b = u8(what);
      v |= static_cast<uint64_t>(b & 0x7F) << shift;
      if ((b & 0x80) == 0) return v;
    }
    throw DecodeError(std::string("malformed length prefix in ") + what + at());
  }
  std::vector<uint8_t> bytes(size_t n, const char* what) {
    need(n, what);
    std::vector<uint8_t> v(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                           in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == in_.size(); }
  size_t pos() const { return pos_; }
  std::string at() const { return " at byte " + std::to_string(pos_); }

 private:
  void need(size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw DecodeError(std::string("truncated ") + what + at());
  }

  std::span<const uint8_t> in_;
  size_t pos_ = 0;
};

bool terminates_frame(PacketKind k) { return k == PacketKind::kResidual || k == PacketKind::kIntra; }

// Valid orders: [HYPER_MV] MV [HYPER_RES] RESIDUAL, or [HYPER_RES] INTRA.
bool valid_frame(const std::vector<Packet>& packets) {
  size_t i = 0;
  auto take = [&](PacketKind k) {
    if (i < packets.size() && packets[i].kind == k) {
      ++i;
      return true;
    }
    return false;
  };
  if (take(PacketKind::kHyperRes)) return take(PacketKind::kIntra) && i == packets.size();
  if (take(PacketKind::kIntra)) return i == packets.size();
  take(PacketKind::kHyperMv);
  if (!take(PacketKind::kMv)) return false;
  take(PacketKind::kHyperRes);
  return take(PacketKind::kResidual) && i == packets.size();
}

}  // namespace

std::string to_string(PacketKind kind) {
  switch (kind) {
    case PacketKind::kMv: return "MV";
    case PacketKind::kResidual: return "RESIDUAL";
    case PacketKind::kHyperMv: return "HYPER_MV";
    case PacketKind::kHyperRes: return "HYPER_RES";
    case PacketKind::kIntra: return "INTRA";
  }
  return "UNKNOWN";
}

std::vector<uint8_t> pack_bitstream(const VideoBitstream& bs) {
  const auto& h = bs.header;
  if (h.version != kBitstreamVersion) throw ArgumentError("pack_bitstream: unsupported version");
  if ((h.flags & ~kFlagFrameCrc) != 0) throw ArgumentError("pack_bitstream: unknown flag bits");
  if (h.gop_size == 0) throw ArgumentError("pack_bitstream: gop_size must be >= 1");
  if (h.n_frames != bs.frames.size()) throw ArgumentError("pack_bitstream: n_frames does not match frame count");

  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u8(out, h.version);
  put_u8(out, h.flags);
  put_u16(out, h.width);
  put_u16(out, h.height);
  put_u8(out, h.pad_right);
  put_u8(out, h.pad_bottom);
  put_u8(out, h.gop_size);
  put_u32(out, h.n_frames);
  put_u32(out, std::bit_cast<uint32_t>(h.flow_scale));
  out.insert(out.end(), h.model_id.begin(), h.model_id.end());

  for (size_t f = 0; f < bs.frames.size(); ++f) {
    const auto& frame = bs.frames[f];
    if (!valid_frame(frame.packets)) {
      throw ArgumentError("pack_bitstream: frame " + std::to_string(f) + " has an invalid packet sequence");
    }
    if (h.has_crc()) put_u32(out, frame.crc);
    for (const auto& p : frame.packets) {
      put_varint(out, (static_cast<uint64_t>(p.payload.size()) << kKindBits) | static_cast<uint8_t>(p.kind));
      out.insert(out.end(), p.payload.begin(), p.payload.end());
    }
  }
  return out;
}

VideoBitstream unpack_bitstream(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  VideoBitstream bs;
  auto& h = bs.header;
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw DecodeError("bad magic: not a flowcodec bitstream");
  }
  r.bytes(kMagic.size(), "magic");
  h.version = r.u8("header");
  if (h.version != kBitstreamVersion) {
    throw DecodeError("unsupported bitstream version " + std::to_string(h.version) + " (expected " +
                      std::to_string(kBitstreamVersion) + ")");
  }
  h.flags = r.u8("header");
  if ((h.flags & ~kFlagFrameCrc) != 0) throw DecodeError("unknown header flags " + std::to_string(h.flags));
  h.width = r.u16("header");
  h.height = r.u16("header");
  h.pad_right = r.u8("header");
  h.pad_bottom = r.u8("header");
  h.gop_size = r.u8("header");
  h.n_frames = r.u32("header");
  h.flow_scale = std::bit_cast<float>(r.u32("header"));
  const auto id = r.bytes(h.model_id.size(), "header");
  std::copy(id.begin(), id.end(), h.model_id.begin());
  if (h.gop_size == 0) throw DecodeError("header: gop_size is zero");
  if (h.n_frames > 0 && (h.width == 0 || h.height == 0)) throw DecodeError("header: zero frame size");

  for (uint32_t f = 0; f < h.n_frames; ++f) {
    FrameRecord frame;
    if (h.has_crc()) frame.crc = r.u32("frame checksum");
    while (true) {
      const uint64_t tag = r.varint("packet header");
      const auto kind = static_cast<uint8_t>(tag & ((1u << kKindBits) - 1));
      if (kind > kMaxKind) throw DecodeError("unknown packet kind " + std::to_string(kind) + r.at());
      const uint64_t len = tag >> kKindBits;
      if (len > bytes.size()) throw DecodeError("truncated packet payload" + r.at());
      Packet p{static_cast<PacketKind>(kind), r.bytes(static_cast<size_t>(len), "packet payload")};
      const bool last = terminates_frame(p.kind);
      frame.packets.push_back(std::move(p));
      if (last) break;
      if (frame.packets.size() > 3) break;
    }
    if (!valid_frame(frame.packets)) {
      throw DecodeError("frame " + std::to_string(f) + ": invalid packet sequence" + r.at());
    }
    bs.frames.push_back(std::move(frame));
  }
  if (!r.done()) throw DecodeError("trailing bytes after the last frame" + r.at());
  return bs;
}

size_t container_overhead_bytes(const VideoBitstream& bs) {
  size_t n = kHeaderBytes;
  for (const auto& frame : bs.frames) {
    if (bs.header.has_crc()) n += 4;
    for (const auto& p : frame.packets) n += varint_size(static_cast<uint64_t>(p.payload.size()) << kKindBits);
  }
  return n;
}

uint32_t crc32_bytes(std::span<const uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace flowcodec
