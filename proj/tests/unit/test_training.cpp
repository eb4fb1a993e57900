#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "flowcodec/errors.hpp"
#include "flowcodec/metrics.hpp"
#include "flowcodec/training.hpp"
#include "support/micro_model.hpp"
#include "support/temp_dir.hpp"

using namespace flowcodec;
using namespace flowcodec::testing;

namespace {

TrainConfig micro_train_config() {
  TrainConfig cfg;
  apply_train_config(cfg, parse_key_values("model.mv_channels=8\nmodel.mv_hyper_channels=4\nmodel.res_channels=8\n"
                                           "model.res_hyper_channels=4\nmodel.flow_width0=4\nmodel.flow_width1=4\n"
                                           "model.flow_width2=4\nmodel.mvf_width=4\nmodel.mcdr_width=4\n"
                                           "model.mcdr_blocks=1\nmodel.rf_width=4\nmodel.rf_blocks=1\n"));
  cfg.steps = 3;
  cfg.batch = 1;
  cfg.clip_len = 3;
  cfg.crop = 32;
  cfg.log_every = 1;
  cfg.lr_initial = 1e-3;
  cfg.lr_final = 1e-4;
  return cfg;
}

/// Replays one fixed clip; optionally poisons it from a given call on.
class FixedSource : public ClipSource {
 public:
  explicit FixedSource(int poison_from = -1) : poison_from_(poison_from) {}
  std::vector<torch::Tensor> sample(int batch, int clip_len, std::mt19937_64&) override {
    const auto v = moving_square(clip_len, 32);
    std::vector<torch::Tensor> clip;
    for (const auto& f : v.frames) clip.push_back(f.batch().repeat({batch, 1, 1, 1}));
    if (poison_from_ >= 0 && calls_ >= poison_from_) clip[1] = torch::full_like(clip[1], NAN);
    ++calls_;
    return clip;
  }

 private:
  int poison_from_;
  int calls_ = 0;
};

std::vector<torch::Tensor> snapshot(CodecModel& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m->parameters()) out.push_back(p.detach().clone());
  return out;
}

}  // namespace

TEST(RdLoss, MseAndRate) {
  auto frame = torch::zeros({2, 3, 4, 8});
  auto rec = torch::full({2, 3, 4, 8}, 0.1);
  auto v = rd_loss(frame, rec, torch::tensor(32.0), torch::tensor(96.0), 10.0, DistortionMode::kMse);
  EXPECT_NEAR(v.distortion.item<double>(), 0.01, 1e-7);
  EXPECT_NEAR(v.rate.item<double>(), 128.0 / 64.0, 1e-7);
  EXPECT_NEAR(v.total.item<double>(), 10.0 * 0.01 + 2.0, 1e-6);
  auto big = torch::rand({1, 3, 16, 16});
  auto s = rd_loss(big, big, torch::tensor(0.0), torch::tensor(0.0), 10.0, DistortionMode::kMsSsim);
  EXPECT_NEAR(s.distortion.item<double>(), 0.0, 1e-12);
}

TEST(TrainingSetup, MakeModelDependsOnlyOnSeed) {
  const auto cfg = model_config_for(micro_train_config());
  auto a = make_model(cfg, 11);
  torch::rand({100});
  auto b = make_model(cfg, 11);
  auto c = make_model(cfg, 12);
  EXPECT_EQ(model_id(a), model_id(b));
  EXPECT_NE(model_id(a), model_id(c));
}

TEST(TrainingSetup, SyntheticSourceShapes) {
  std::mt19937_64 rng(3);
  for (const char* kind : {"moving_square", "translating_texture", "mixed"}) {
    auto src = make_synthetic_source(32, kind, 2.0);
    const auto clip = src->sample(2, 4, rng);
    ASSERT_EQ(clip.size(), 4u);
    for (const auto& f : clip) {
      EXPECT_EQ(f.sizes(), (std::vector<int64_t>{2, 3, 32, 32}));
      EXPECT_GE(f.min().item<float>(), 0.0f);
      EXPECT_LE(f.max().item<float>(), 1.0f);
    }
  }
  EXPECT_THROW(make_synthetic_source(32, "noise", 2.0), ArgumentError);
}

TEST(TrainingSetup, VideoSourceCrops) {
  std::mt19937_64 rng(4);
  auto src = make_video_source({moving_square(6, 48)}, 32);
  const auto clip = src->sample(3, 4, rng);
  ASSERT_EQ(clip.size(), 4u);
  EXPECT_EQ(clip[0].sizes(), (std::vector<int64_t>{3, 3, 32, 32}));
}

TEST(TrainStage, LogsAndChangesWeights) {
  auto cfg = micro_train_config();
  auto model = make_model(model_config_for(cfg), 1);
  const auto before = snapshot(model);
  FixedSource src;
  int logs = 0;
  TrainHooks hooks;
  hooks.on_log = [&](const StepLog&) { ++logs; };
  const auto r = train_stage(model, src, cfg, hooks);
  EXPECT_FALSE(r.aborted);
  EXPECT_EQ(r.steps_done, 3);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(logs, 3);
  EXPECT_DOUBLE_EQ(r.log[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.log[2].lr, 1e-4);
  for (const auto& e : r.log) {
    EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_GT(e.bpp, 0.0);
  }
  const auto after = snapshot(model);
  bool changed = false;
  for (size_t i = 0; i < before.size(); ++i) changed = changed || !before[i].equal(after[i]);
  EXPECT_TRUE(changed);
  const auto csv = format_train_log(r.log);
  EXPECT_EQ(csv.rfind("step,loss,distortion,bpp,psnr,lr\n", 0), 0u);
}

TEST(TrainStage, UnrollUsesReconstructedReferences) {
  auto cfg = micro_train_config();
  cfg.steps = 1;
  cfg.clip_len = 4;
  auto model = make_model(model_config_for(cfg), 2);
  FixedSource src;
  int calls = 0;
  TrainHooks hooks;
  hooks.on_reference = [&](int t, const torch::Tensor& ref, const torch::Tensor& prev_rec,
                           const torch::Tensor& prev_orig) {
    EXPECT_EQ(t, calls + 1);
    EXPECT_TRUE(ref.equal(prev_rec));
    EXPECT_FALSE(ref.equal(prev_orig));
    ++calls;
  };
  train_stage(model, src, cfg, hooks);
  EXPECT_EQ(calls, 3);
}

TEST(TrainStage, NonFiniteLossRestoresWeights) {
  auto cfg = micro_train_config();
  cfg.steps = 5;
  auto model = make_model(model_config_for(cfg), 3);
  const auto before = snapshot(model);
  FixedSource src(2);
  const auto r = train_stage(model, src, cfg);
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.steps_done, 2);
  EXPECT_NE(r.abort_reason.find("step 2"), std::string::npos);
  // No snapshot was taken after the initial one, so the weights are the initial ones.
  const auto after = snapshot(model);
  for (size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i].equal(after[i]));
  for (const auto& p : model->parameters()) EXPECT_TRUE(torch::isfinite(p).all().item<bool>());
}

TEST(TrainStage, FlowWarmupTouchesOnlyFlow) {
  auto cfg = micro_train_config();
  cfg.steps = 2;
  cfg.flow_warmup_steps = 2;
  auto model = make_model(model_config_for(cfg), 4);
  std::vector<std::pair<std::string, torch::Tensor>> before;
  for (const auto& p : model->named_parameters()) before.emplace_back(p.key(), p.value().detach().clone());
  FixedSource src;
  const auto r = train_stage(model, src, cfg);
  EXPECT_FALSE(r.aborted);
  auto after = model->named_parameters();
  bool flow_changed = false;
  for (const auto& [name, value] : before) {
    const bool same = value.equal(after[name]);
    if (name.rfind("flow.", 0) == 0) {
      flow_changed = flow_changed || !same;
    } else {
      EXPECT_TRUE(same) << name;
    }
  }
  EXPECT_TRUE(flow_changed);
}

TEST(TrainFull, WritesCheckpointsAndLogs) {
  TempDir dir;
  auto cfg = micro_train_config();
  cfg.steps = 2;
  cfg.finetune_steps = 1;
  cfg.alphas = {64, 512};
  cfg.data = "synthetic";
  cfg.crop = 32;
  cfg.output_dir = dir.path().string();
  auto models = train_full(cfg);
  ASSERT_EQ(models.size(), 2u);
  for (const char* f : {"pretrain.pt", "pretrain_log.csv", "alpha_64.pt", "alpha_512.pt", "finetune_alpha_64_log.csv",
                        "finetune_alpha_512_log.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.file(f))) << f;
  }
  auto ck = load_checkpoint(dir.file("alpha_512.pt"));
  EXPECT_EQ(ck.metadata.at("alpha"), "512");
  EXPECT_EQ(ck.metadata.at("stage"), "finetune");
  EXPECT_EQ(ck.metadata.at("steps_done"), "1");
  EXPECT_TRUE(ck.metadata.count("git_describe"));
  EXPECT_EQ(ck.metadata.at("train.steps"), "1");
  EXPECT_EQ(model_id(ck.model), model_id(models[1].model));
  EXPECT_NE(model_id(models[0].model), model_id(models[1].model));
}

TEST(EvaluateClip, DeterministicAndConsistent) {
  auto model = micro_model(9);
  const auto clip = moving_square(3, 32);
  const auto a = evaluate_clip(model, clip, 256);
  const auto b = evaluate_clip(model, clip, 256);
  EXPECT_EQ(a.psnr, b.psnr);
  EXPECT_EQ(a.bpp_estimated, b.bpp_estimated);
  EXPECT_GT(a.bpp_estimated, 0.0);
  EXPECT_GT(a.loss, a.bpp_estimated);
}
