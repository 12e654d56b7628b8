#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace pfseg;
using pfseg::testing::TempDir;

namespace {

ModelSpec small_spec(Variant v) { return ModelSpec::for_variant(v).narrowed(16); }

TrainConfig short_run(std::size_t steps1 = 3, std::size_t steps2 = 2) {
  TrainConfig c;
  c.steps_phase1 = steps1;
  c.steps_phase2 = steps2;
  c.crop_height = c.crop_width = 20;
  c.batch_size = 2;
  c.lr = 0.05;
  c.seed = 8;
  return c;
}

struct Trained {
  Model<float> model;
  TrainResult result;
};

Trained train_small(Variant v, const MemoryFrames& data, const TrainConfig& cfg = short_run()) {
  Model<float> m = build_model<float>(small_spec(v), 2);
  TrainResult r = train(m, data, cfg);
  return {std::move(m), std::move(r)};
}

}  // namespace

TEST(Checkpoint, RoundTripIsExactAndCanonical) {
  const MemoryFrames data(pfseg::testing::tiny_synthetic(2));
  const Trained t = train_small(Variant::DecoderPrior, data);
  ASSERT_FALSE(t.result.state.velocity.empty());
  const std::vector<char> bytes = encode_checkpoint(t.model, t.result.state);
  const LoadedCheckpoint back = decode_checkpoint(bytes, t.model.spec);
  EXPECT_TRUE(back.model.spec == t.model.spec);
  EXPECT_EQ(back.model.params, t.model.params);
  EXPECT_EQ(back.state, t.result.state);
  EXPECT_EQ(encode_checkpoint(back.model, back.state), bytes);
  for (const auto& [name, w] : t.model.params)
    EXPECT_EQ(std::memcmp(w.ptr(), back.model.params.at(name).ptr(), w.numel() * sizeof(float)), 0) << name;

  TempDir dir("ckpt");
  save_checkpoint(t.model, t.result.state, dir / "m.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "m.ckpt").model.params, t.model.params);
}

TEST(Checkpoint, EveryCorruptionIsDetected) {
  const Model<float> m = build_model<float>(small_spec(Variant::EmbeddingPrior), 1);
  const std::vector<char> bytes = encode_checkpoint(m, TrainState{});
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<char> bad = bytes;
    bad[rng() % bad.size()] ^= static_cast<char>(1 << (rng() % 8));
    EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  }
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(decode_checkpoint(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<long>(cut))),
                 CheckpointError);
}

TEST(Checkpoint, SpecMismatchNamesTheDifferingTensors) {
  const Model<float> m = build_model<float>(small_spec(Variant::DecoderPrior), 1);
  const std::vector<char> bytes = encode_checkpoint(m, TrainState{});
  try {
    decode_checkpoint(bytes, small_spec(Variant::Baseline));
    FAIL() << "mismatch not reported";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("extra tensors"), std::string::npos) << msg;
    EXPECT_NE(msg.find("fuse3.out.weight"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("missing tensors"), std::string::npos) << msg;
  }
  TempDir dir("ckpt-missing");
  EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), DataError);
}

TEST(Finetune, CopiesSharedNamesAndReportsFreshOnes) {
  const Model<float> base = build_model<float>(small_spec(Variant::Baseline), 3);
  const FinetuneResult ft = finetune_from(base, small_spec(Variant::EmbeddingPrior), 9);
  EXPECT_EQ(ft.copied.size(), base.params.size());
  for (const auto& n : ft.copied) EXPECT_EQ(ft.model.params.at(n), base.params.at(n)) << n;
  ASSERT_FALSE(ft.fresh.empty());
  for (const auto& n : ft.fresh) EXPECT_TRUE(n.starts_with("fuse0.")) << n;
  EXPECT_THROW(finetune_from(base, ModelSpec::for_variant(Variant::Baseline).narrowed(8), 0), DataError);
}

TEST(Finetune, StackedStartsAsTheBaseline) {
  const MemoryFrames data(pfseg::testing::tiny_synthetic(1));
  const Model<float> base = build_model<float>(small_spec(Variant::Baseline), 3);
  const FinetuneResult ft = finetune_from(base, small_spec(Variant::StackedPrior), 9);
  const LabeledFramePair p = data.get(0);
  EXPECT_EQ(predict(ft.model, p), predict(base, p));
}

TEST(Finetune, BottleneckFusionStartsNearIdentity) {
  const Model<float> base = build_model<float>(small_spec(Variant::Baseline), 3);
  const FinetuneResult ft = finetune_from(base, small_spec(Variant::DecoderPrior), 9);
  const std::string stem = fusion_name(0);
  const Tensor<float>& w_image = ft.model.params.at(stem + ".image.weight");
  const Tensor<float>& w_out = ft.model.params.at(stem + ".out.weight");
  const std::size_t c = w_image.dim(0), k = w_image.dim(2);
  EXPECT_EQ(w_image[(1 * c + 1) * k * k + k * k / 2], kFusionIdentityScale);
  EXPECT_EQ(w_out[(1 * c + 1) * k * k + k * k / 2], 1.0f / kFusionIdentityScale);
  EXPECT_EQ(w_image[(1 * c + 0) * k * k + k * k / 2], 0.0f);
  for (float w : ft.model.params.at(stem + ".prior.weight").data()) ASSERT_EQ(w, 0.0f);

  // Decoder sites keep the random init.
  const Model<float> fresh = build_model<float>(small_spec(Variant::DecoderPrior), 9);
  for (std::size_t site = 1; site < fusion_sites(Variant::DecoderPrior); ++site)
    for (const char* role : {".prior.weight", ".image.weight", ".out.weight"}) {
      const std::string name = fusion_name(site) + role;
      EXPECT_EQ(ft.model.params.at(name), fresh.params.at(name)) << name;
    }

  // Small features pass through almost unchanged.
  std::mt19937_64 rng(5);
  const auto e = pfseg::testing::random_tensor<float>(rng, {1, c, 6, 6}, -0.5, 0.5);
  const auto p = pfseg::testing::random_tensor<float>(rng, {1, c, 6, 6}, -0.5, 0.5);
  const FusionModuleParams<float> f{ft.model.params.at(stem + ".prior.weight"), w_image, w_out, {}, {}, {}};
  const Tensor<float> y = fusion_forward(f, p, e);
  for (std::size_t i = 0; i < e.numel(); ++i) EXPECT_NEAR(y[i], e[i], 0.01) << i;

  FinetuneResult rnd = finetune_from(base, small_spec(Variant::DecoderPrior), 9, FusionInit::Random);
  EXPECT_EQ(rnd.model.params.at(stem + ".prior.weight"), fresh.params.at(stem + ".prior.weight"));
  EXPECT_THROW(init_fusion_near_identity(rnd.model, 4), std::out_of_range);
}

TEST(Finetune, EmbedStartsIndependentOfThePrior) {
  const Model<float> base = build_model<float>(small_spec(Variant::Baseline), 3);
  const FinetuneResult ft = finetune_from(base, small_spec(Variant::EmbeddingPrior), 9);
  const MemoryFrames data(pfseg::testing::tiny_synthetic(1));
  LabeledFramePair a = data.get(0), b = a;
  for (auto& v : b.prior.data()) v = 1.0f - v;
  const std::size_t H = a.height(), W = a.width();
  const Tensor<float> x1 = a.current.reshaped({1, 3, H, W});
  const Tensor<float> pa = a.prior.reshaped({1, 3, H, W}), pb = b.prior.reshaped({1, 3, H, W});
  const Tensor<float> ya = infer(ft.model, &pa, x1);
  EXPECT_EQ(std::memcmp(ya.ptr(), infer(ft.model, &pb, x1).ptr(), ya.numel() * sizeof(float)), 0);
}

TEST(Train, DeterministicForFixedInputs) {
  const MemoryFrames data(pfseg::testing::tiny_synthetic(3));
  const Trained a = train_small(Variant::EmbeddingPrior, data), b = train_small(Variant::EmbeddingPrior, data);
  EXPECT_EQ(a.model.params, b.model.params);
  ASSERT_EQ(a.result.log.size(), 5u);
  for (std::size_t i = 0; i < a.result.log.size(); ++i) EXPECT_EQ(a.result.log[i].loss, b.result.log[i].loss);
  EXPECT_EQ(a.result.log[2].phase, 1);
  EXPECT_EQ(a.result.log[3].phase, 2);
  EXPECT_DOUBLE_EQ(a.result.log[3].lr, 0.05 * 0.1);
}

TEST(Train, ResumingMidEpochMatchesOneLongRun) {
  // Three items at batch size 2: the split falls inside the second epoch.
  const MemoryFrames data(pfseg::testing::tiny_synthetic(3));
  const Trained whole = train_small(Variant::Baseline, data, short_run(4, 0));
  Trained part = train_small(Variant::Baseline, data, short_run(2, 0));
  // Round-trip the state through a checkpoint before continuing.
  LoadedCheckpoint ck = decode_checkpoint(encode_checkpoint(part.model, part.result.state));
  train(ck.model, data, short_run(2, 0), ck.state);
  EXPECT_EQ(ck.model.params, whole.model.params);
}

TEST(Train, WorkerCountDoesNotChangeResults) {
  const MemoryFrames data(pfseg::testing::tiny_synthetic(2));
  set_worker_count(0);
  const Trained serial = train_small(Variant::DecoderPrior, data);
  set_worker_count(3);
  const Trained threaded = train_small(Variant::DecoderPrior, data);
  set_worker_count(-1);
  EXPECT_EQ(serial.model.params, threaded.model.params);
}

TEST(Train, NonFiniteLossRaisesNumericalError) {
  const MemoryFrames data(pfseg::testing::tiny_synthetic(1));
  Model<float> m = build_model<float>(small_spec(Variant::Baseline), 2);
  // Nothing after the classifier can mask a NaN.
  m.params.at("classifier.bias")[0] = std::nanf("");
  EXPECT_THROW(train(m, data, short_run(0, 1)), NumericalError);
}

TEST(Train, PriorVariantsNeedPriors) {
  auto items = pfseg::testing::tiny_synthetic(1);
  items[0].prior = Tensor<float>();
  EXPECT_THROW(train_small(Variant::StackedPrior, MemoryFrames(items)), DataError);
  EXPECT_THROW(train_small(Variant::Baseline, MemoryFrames()), DataError);
}

TEST(Train, LossCsvSchema) {
  std::ostringstream os;
  write_log_csv(os, {{1, 1, 2.5, 0.01}, {2, 2, 0.125, 0.001}});
  EXPECT_EQ(os.str(), "step,phase,loss,lr\n1,1,2.50000000,0.01\n2,2,0.12500000,0.001\n");
}

TEST(Train, RejectsBadConfig) {
  TrainConfig c = short_run();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = short_run();
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}
