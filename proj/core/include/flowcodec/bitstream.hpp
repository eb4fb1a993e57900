#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace flowcodec {

enum class PacketKind : uint8_t { kMv = 0, kResidual = 1, kHyperMv = 2, kHyperRes = 3, kIntra = 4 };

std::string to_string(PacketKind kind);

struct Packet {
  PacketKind kind = PacketKind::kIntra;
  std::vector<uint8_t> payload;

  bool operator==(const Packet&) const = default;
};

/// One coded frame. A P-frame is [HYPER_MV] MV [HYPER_RES] RESIDUAL, an intra
/// frame is [HYPER_RES] INTRA; the terminating RESIDUAL or INTRA packet marks
/// the end of the frame.
struct FrameRecord {
  uint32_t crc = 0;  // CRC-32 of the 8-bit reconstruction, if the header says so
  std::vector<Packet> packets;

  bool operator==(const FrameRecord&) const = default;
};

inline constexpr std::array<char, 4> kMagic{'F', 'V', 'C', '1'};
inline constexpr uint8_t kBitstreamVersion = 1;
inline constexpr uint8_t kFlagFrameCrc = 0x01;
/// Bytes before the first frame record.
inline constexpr size_t kHeaderBytes = 29;

struct BitstreamHeader {
  uint8_t version = kBitstreamVersion;
  uint8_t flags = kFlagFrameCrc;
  uint16_t width = 0;  // before padding
  uint16_t height = 0;
  uint8_t pad_right = 0;
  uint8_t pad_bottom = 0;
  uint8_t gop_size = 1;
  uint32_t n_frames = 0;
  float flow_scale = 20.0f;
  std::array<uint8_t, 8> model_id{};

  bool has_crc() const { return (flags & kFlagFrameCrc) != 0; }
  bool operator==(const BitstreamHeader&) const = default;
};

struct VideoBitstream {
  BitstreamHeader header;
  std::vector<FrameRecord> frames;  // header.n_frames entries

  bool operator==(const VideoBitstream&) const = default;
};

/// Serializes to the wire format (little-endian, see docs/bitstream.md).
/// Throws ArgumentError when the grammar or field ranges are violated.
std::vector<uint8_t> pack_bitstream(const VideoBitstream& bs);
/// Parses the wire format. Throws DecodeError on bad magic, unsupported
/// version, unknown flags or packet kinds, truncation and trailing bytes.
VideoBitstream unpack_bitstream(std::span<const uint8_t> bytes);

/// Bytes spent on framing (header, CRCs, packet length prefixes).
size_t container_overhead_bytes(const VideoBitstream& bs);

uint32_t crc32_bytes(std::span<const uint8_t> bytes);

}  // namespace flowcodec
