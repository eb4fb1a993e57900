#include <gtest/gtest.h>
#include <json.hpp>

#include "flowcodec/codec.hpp"
#include "flowcodec/errors.hpp"
#include "support/micro_model.hpp"

using namespace flowcodec;
using namespace flowcodec::testing;

namespace {

RawVideo odd_sized_clip(int frames) {
  // 30x50 forces padding on both edges.
  RawVideo v;
  const auto src = moving_square(frames, 64, 2.0);
  for (const auto& f : src.frames) v.frames.push_back(crop_frame(f, 30, 50));
  return v;
}

void expect_closure(const EncodeOutput& enc, const DecodeOutput& dec) {
  ASSERT_EQ(enc.reconstructions.size(), dec.video.size());
  for (size_t i = 0; i < dec.video.size(); ++i) {
    EXPECT_TRUE(enc.reconstructions[i].bit_equal(dec.video.frames[i])) << "frame " << i;
  }
}

}  // namespace

TEST(DecodedFrameBufferTest, CapacityAndOrder) {
  DecodedFrameBuffer dfb(2);
  EXPECT_THROW(dfb.latest(), ArgumentError);
  dfb.push(torch::full({1}, 1.0));
  dfb.push(torch::full({1}, 2.0));
  dfb.push(torch::full({1}, 3.0));
  EXPECT_EQ(dfb.size(), 2u);
  EXPECT_EQ(dfb.latest().item<double>(), 3.0);
  dfb.clear();
  EXPECT_TRUE(dfb.empty());
  EXPECT_THROW(DecodedFrameBuffer(0), ArgumentError);
}

TEST(Codec, ClosureWithPadding) {
  torch::set_num_threads(1);
  auto model = micro_model(61);
  const auto video = odd_sized_clip(5);
  CodecOptions opts;
  opts.gop_size = 3;
  const auto enc = encode_video(video, model, opts);
  EXPECT_EQ(enc.bitstream.header.pad_right, 14);
  EXPECT_EQ(enc.bitstream.header.pad_bottom, 2);
  EXPECT_EQ(enc.frames[0].role, FrameRole::kIntra);
  EXPECT_EQ(enc.frames[1].role, FrameRole::kPredicted);
  EXPECT_EQ(enc.frames[3].role, FrameRole::kIntra);
  const auto bytes = pack_bitstream(enc.bitstream);
  const auto dec = decode_video(unpack_bitstream(bytes), model);
  expect_closure(enc, dec);
  for (size_t i = 0; i < dec.crcs.size(); ++i) EXPECT_EQ(dec.crcs[i], enc.bitstream.frames[i].crc);
  EXPECT_EQ(dec.video.width(), 50);
  EXPECT_EQ(dec.video.height(), 30);
}

TEST(Codec, SeparateHyperPackets) {
  auto model = micro_model(62);
  const auto video = moving_square(3);
  CodecOptions opts;
  opts.separate_hyper = true;
  const auto enc = encode_video(video, model, opts);
  const auto& p = enc.bitstream.frames[1].packets;
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[0].kind, PacketKind::kHyperMv);
  EXPECT_EQ(p[3].kind, PacketKind::kResidual);
  EXPECT_EQ(enc.bitstream.frames[0].packets.front().kind, PacketKind::kHyperRes);
  double bits = 0;
  for (const auto& f : enc.bitstream.frames)
    for (const auto& pk : f.packets) bits += 8.0 * pk.payload.size();
  EXPECT_DOUBLE_EQ(enc.payload_bits(), bits);
  expect_closure(enc, decode_video(unpack_bitstream(pack_bitstream(enc.bitstream)), model));
  // Merged and separate layouts reconstruct identically.
  const auto merged = encode_video(video, model);
  for (size_t i = 0; i < video.size(); ++i) EXPECT_TRUE(merged.reconstructions[i].bit_equal(enc.reconstructions[i]));
}

TEST(Codec, ParallelGopsMatchSerial) {
  auto model = micro_model(63);
  const auto video = moving_square(7);
  CodecOptions serial;
  serial.gop_size = 2;
  CodecOptions parallel = serial;
  parallel.jobs = 3;
  EXPECT_EQ(pack_bitstream(encode_video(video, model, serial).bitstream),
            pack_bitstream(encode_video(video, model, parallel).bitstream));
}

TEST(Codec, RateAccounting) {
  auto model = micro_model(64);
  const auto video = moving_square(4);
  const auto enc = encode_video(video, model);
  double payload = 0;
  for (const auto& f : enc.bitstream.frames)
    for (const auto& p : f.packets) payload += 8.0 * p.payload.size();
  EXPECT_DOUBLE_EQ(enc.payload_bits(), payload);
  EXPECT_DOUBLE_EQ(enc.bpp(), payload / (4.0 * 32 * 32));
  EXPECT_GT(enc.bpp_container(), enc.bpp());
  EXPECT_GT(enc.estimated_bits(), 0.0);
  for (const auto& f : enc.frames) {
    EXPECT_FALSE(f.separate_hyper);
    EXPECT_GT(f.bits_hyper, 0.0);
    EXPECT_LT(f.bits_hyper, f.bits());
  }
  const auto j = nlohmann::json::parse(encode_stats_json(enc, hex(enc.bitstream.header.model_id)));
  EXPECT_EQ(j["schema"], "flowcodec.encode_stats");
  EXPECT_EQ(j["frames"].size(), 4u);
  EXPECT_EQ(j["frames"][0]["type"], "I");
  EXPECT_DOUBLE_EQ(j["payload_bits"].get<double>(), payload);
}

TEST(Codec, DetectsWrongModelAndCorruption) {
  auto model = micro_model(65);
  const auto video = moving_square(3);
  const auto enc = encode_video(video, model);
  auto other = micro_model(66);
  EXPECT_THROW(decode_video(enc.bitstream, other), DecodeError);

  auto bad_crc = enc.bitstream;
  bad_crc.frames[1].crc ^= 1;
  EXPECT_THROW(decode_video(bad_crc, model), DecodeError);

  // Without checksums a payload flip decodes to something else but does not crash.
  CodecOptions no_crc;
  no_crc.frame_crc = false;
  auto plain = encode_video(video, model, no_crc).bitstream;
  EXPECT_EQ(pack_bitstream(plain).size(), pack_bitstream(enc.bitstream).size() - 12);
  plain.frames[0].packets.back().payload[0] ^= 0x55;
  EXPECT_NO_THROW(decode_video(plain, model));

  auto roles = enc.bitstream;
  std::swap(roles.frames[0], roles.frames[1]);
  EXPECT_THROW(decode_video(roles, model, false), DecodeError);

  auto scale = enc.bitstream;
  scale.header.flow_scale = 7.0f;
  EXPECT_THROW(decode_video(scale, model), DecodeError);

  auto pad = enc.bitstream;
  pad.header.pad_right = 3;
  EXPECT_THROW(decode_video(pad, model), DecodeError);
}

TEST(Codec, FrameLevelApi) {
  auto model = micro_model(67);
  CodecContext enc_ctx(model), dec_ctx(model);
  DecodedFrameBuffer enc_dfb, dec_dfb;
  const auto video = moving_square(2);
  EXPECT_THROW(encode_frame_p(enc_ctx, video.frames[0].batch(), enc_dfb), ArgumentError);
  auto i = encode_frame_i(enc_ctx, video.frames[0].batch(), enc_dfb);
  auto p = encode_frame_p(enc_ctx, video.frames[1].batch(), enc_dfb);
  EXPECT_TRUE(decode_frame_i(dec_ctx, i.record, 32, 32, dec_dfb).equal(i.reconstruction));
  EXPECT_TRUE(decode_frame_p(dec_ctx, p.record, 32, 32, dec_dfb).equal(p.reconstruction));
  EXPECT_THROW(encode_frame_i(enc_ctx, torch::rand({1, 3, 30, 32}), enc_dfb), ShapeError);
}

TEST(Codec, OptionValidation) {
  auto model = micro_model(68);
  CodecOptions opts;
  opts.gop_size = 0;
  EXPECT_THROW(encode_video(moving_square(2), model, opts), ArgumentError);
  EXPECT_THROW(encode_video(RawVideo{}, model), ArgumentError);
}

TEST(Codec, FrameCrcMatchesZlibOverBytes) {
  Frame f(torch::zeros({3, 1, 1}));
  const uint8_t zeros[3] = {0, 0, 0};
  EXPECT_EQ(frame_crc(f), crc32_bytes(zeros));
}
