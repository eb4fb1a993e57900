#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "flowcodec/bitstream.hpp"
#include "flowcodec/errors.hpp"

using namespace flowcodec;

namespace {

Packet packet(PacketKind kind, size_t size, uint8_t fill) { return {kind, std::vector<uint8_t>(size, fill)}; }

VideoBitstream sample_stream() {
  VideoBitstream bs;
  bs.header.width = 60;
  bs.header.height = 30;
  bs.header.pad_right = 4;
  bs.header.pad_bottom = 2;
  bs.header.gop_size = 2;
  bs.header.n_frames = 3;
  bs.header.flow_scale = 20.0f;
  bs.header.model_id = {1, 2, 3, 4, 5, 6, 7, 8};
  bs.frames.push_back({0xDEADBEEF, {packet(PacketKind::kIntra, 10, 0xAA)}});
  bs.frames.push_back({0x01020304,
                       {packet(PacketKind::kHyperMv, 3, 1), packet(PacketKind::kMv, 200, 2),
                        packet(PacketKind::kHyperRes, 0, 0), packet(PacketKind::kResidual, 5, 3)}});
  bs.frames.push_back({7, {packet(PacketKind::kHyperRes, 2, 9), packet(PacketKind::kIntra, 1, 4)}});
  return bs;
}

}  // namespace

TEST(Bitstream, RoundTrip) {
  const auto bs = sample_stream();
  const auto bytes = pack_bitstream(bs);
  EXPECT_EQ(unpack_bitstream(bytes), bs);
}

TEST(Bitstream, HeaderLayout) {
  const auto bytes = pack_bitstream(sample_stream());
  ASSERT_GE(bytes.size(), kHeaderBytes);
  EXPECT_EQ(std::memcmp(bytes.data(), "FVC1", 4), 0);
  EXPECT_EQ(bytes[4], kBitstreamVersion);
  EXPECT_EQ(bytes[5], kFlagFrameCrc);
  EXPECT_EQ(bytes[6] | (bytes[7] << 8), 60);  // width, little-endian
  EXPECT_EQ(bytes[8] | (bytes[9] << 8), 30);
  EXPECT_EQ(bytes[10], 4);
  EXPECT_EQ(bytes[11], 2);
  EXPECT_EQ(bytes[12], 2);
  EXPECT_EQ(bytes[13], 3);  // n_frames low byte
  float scale;
  std::memcpy(&scale, bytes.data() + 17, 4);
  EXPECT_EQ(scale, 20.0f);
  EXPECT_EQ(bytes[21], 1);
  EXPECT_EQ(bytes[28], 8);
  // First frame: crc (LE) then varint (10 << 3 | INTRA) then payload.
  EXPECT_EQ(bytes[29], 0xEF);
  EXPECT_EQ(bytes[33], (10 << 3) | 4);
  EXPECT_EQ(bytes[34], 0xAA);
}

TEST(Bitstream, OverheadAccounting) {
  const auto bs = sample_stream();
  size_t payload = 0;
  for (const auto& f : bs.frames)
    for (const auto& p : f.packets) payload += p.payload.size();
  EXPECT_EQ(pack_bitstream(bs).size(), payload + container_overhead_bytes(bs));
  // 29 header + 3 CRCs + 6 one-byte prefixes + one two-byte prefix (200 << 3).
  EXPECT_EQ(container_overhead_bytes(bs), 29u + 12u + 6u + 2u);
}

TEST(Bitstream, WithoutCrc) {
  auto bs = sample_stream();
  bs.header.flags = 0;
  for (auto& f : bs.frames) f.crc = 0;
  const auto bytes = pack_bitstream(bs);
  EXPECT_EQ(bytes.size(), pack_bitstream(sample_stream()).size() - 12);
  EXPECT_EQ(unpack_bitstream(bytes), bs);
}

TEST(Bitstream, PackRejectsBadGrammar) {
  auto bs = sample_stream();
  bs.frames[1].packets.pop_back();  // P-frame without RESIDUAL
  EXPECT_THROW(pack_bitstream(bs), ArgumentError);
  bs = sample_stream();
  bs.frames[0].packets.push_back(packet(PacketKind::kMv, 1, 0));  // packet after the terminator
  EXPECT_THROW(pack_bitstream(bs), ArgumentError);
  bs = sample_stream();
  bs.header.n_frames = 4;
  EXPECT_THROW(pack_bitstream(bs), ArgumentError);
  bs = sample_stream();
  bs.header.gop_size = 0;
  EXPECT_THROW(pack_bitstream(bs), ArgumentError);
}

TEST(Bitstream, UnpackRejectsCorruption) {
  const auto good = pack_bitstream(sample_stream());
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(unpack_bitstream(bad), DecodeError);
  bad = good;
  bad[4] = 9;
  EXPECT_THROW(unpack_bitstream(bad), DecodeError);
  bad = good;
  bad[5] = 0x80;
  EXPECT_THROW(unpack_bitstream(bad), DecodeError);
  bad = good;
  bad[12] = 0;
  EXPECT_THROW(unpack_bitstream(bad), DecodeError);
  bad = good;
  bad[33] = (10 << 3) | 6;  // unknown packet kind
  EXPECT_THROW(unpack_bitstream(bad), DecodeError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(unpack_bitstream(bad), DecodeError);
  for (size_t cut : {size_t{0}, size_t{5}, size_t{28}, size_t{31}, good.size() - 1}) {
    EXPECT_THROW(unpack_bitstream(std::span<const uint8_t>(good.data(), cut)), DecodeError) << cut;
  }
}

TEST(Bitstream, RandomBytesNeverCrash) {
  std::mt19937_64 rng(41);
  const auto good = pack_bitstream(sample_stream());
  for (int trial = 0; trial < 2000; ++trial) {
    auto bytes = good;
    const int flips = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < flips; ++i) bytes[rng() % bytes.size()] = static_cast<uint8_t>(rng());
    try {
      (void)unpack_bitstream(bytes);
    } catch (const DecodeError&) {
    }
  }
}

TEST(Bitstream, LargePayloadVarint) {
  VideoBitstream bs;
  bs.header.width = bs.header.height = 16;
  bs.header.n_frames = 1;
  bs.frames.push_back({0, {packet(PacketKind::kIntra, 70000, 5)}});
  EXPECT_EQ(unpack_bitstream(pack_bitstream(bs)), bs);
}

TEST(Bitstream, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_bytes({reinterpret_cast<const uint8_t*>(s.data()), s.size()}), 0xCBF43926u);
}

TEST(Bitstream, KindNames) {
  EXPECT_EQ(to_string(PacketKind::kMv), "MV");
  EXPECT_EQ(to_string(PacketKind::kHyperRes), "HYPER_RES");
}
