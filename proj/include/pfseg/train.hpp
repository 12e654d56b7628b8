#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pfseg/checkpoint.hpp"
#include "pfseg/classes.hpp"
#include "pfseg/dataset.hpp"
#include "pfseg/metrics.hpp"
#include "pfseg/models.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/optim.hpp"

namespace pfseg {

struct TrainConfig {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double phase2_lr_scale = 0.1;
  std::size_t batch_size = 4;
  std::size_t steps_phase1 = 0;  // random crops
  std::size_t steps_phase2 = 0;  // full frames
  std::size_t crop_height = 227, crop_width = 227;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;
  std::size_t prior_offset = 30;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0) || !(phase2_lr_scale > 0)) throw ConfigError("learning rates must be positive");
    if (momentum < 0 || weight_decay < 0) throw ConfigError("momentum and weight_decay must be >= 0");
    if (crop_height == 0 || crop_width == 0) throw ConfigError("crop extents must be positive");
  }
};

struct LogRow {
  std::size_t step;
  int phase;
  double loss;
  double lr;
};

struct TrainResult {
  std::vector<LogRow> log;
  TrainState state;
};

/// Training log CSV: step,phase,loss,lr.
inline void write_log_csv(std::ostream& os, const std::vector<LogRow>& log) {
  os << "step,phase,loss,lr\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%.8f,%.8g\n", r.step, r.phase, r.loss, r.lr);
    os << buf;
  }
}

struct Batch {
  Tensor<float> prior, current;
  IntTensor labels;
};

inline Batch make_batch(const std::vector<LabeledFramePair>& items) {
  if (items.empty()) throw DataError("empty batch");
  std::vector<Tensor<float>> p, c;
  std::vector<IntTensor> l;
  for (const auto& it : items) {
    if (it.height() != items[0].height() || it.width() != items[0].width())
      throw DataError("batch items differ in size: " + it.meta.id);
    p.push_back(it.prior);
    c.push_back(it.current);
    l.push_back(it.labels);
  }
  return {stack<float>(p), stack<float>(c), stack<std::int32_t>(l)};
}

using StepCallback = std::function<void(std::size_t step, const Model<float>&)>;

/// Two-phase SGD: steps_phase1 on random crops (padded to multiples of 16),
/// then steps_phase2 on full frames at lr * phase2_lr_scale. Deterministic
/// for a given (config, dataset, initial model).
inline TrainResult train(Model<float>& model, const FrameSource& data, const TrainConfig& cfg,
                         TrainState state = {}, const StepCallback& on_eval = {}) {
  cfg.validate();
  const std::size_t total = cfg.steps_phase1 + cfg.steps_phase2;
  TrainResult result;
  if (total == 0) {
    result.state = std::move(state);
    return result;
  }
  if (data.size() == 0) throw DataError("training set is empty");
  if (state.rng_state == 0) state.rng_state = cfg.seed ^ detail::fnv1a("train-crops");
  Sgd<float> sgd(cfg.momentum, cfg.weight_decay);
  sgd.velocity() = std::move(state.velocity);

  // Epoch e visits the items in a shuffle keyed by (seed, e); draw k of the
  // run is position k mod N of epoch k / N. Both follow from the step
  // counter, so resuming from a checkpoint continues the same sequence.
  const std::uint64_t n = data.size();
  std::vector<std::size_t> order(data.size());
  std::uint64_t order_epoch = ~std::uint64_t{0};
  auto index_at = [&](std::uint64_t draw) {
    const std::uint64_t epoch = draw / n;
    if (epoch != order_epoch) {
      std::uint64_t r = cfg.seed ^ detail::fnv1a("epoch:" + std::to_string(epoch));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[detail::splitmix64(r) % i]);
      order_epoch = epoch;
    }
    return order[draw % n];
  };

  for (std::size_t s = 0; s < total; ++s) {
    const bool crops = s < cfg.steps_phase1;
    const double lr = crops ? cfg.lr : cfg.lr * cfg.phase2_lr_scale;
    std::vector<LabeledFramePair> items;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      LabeledFramePair p = data.get(index_at(state.step * cfg.batch_size + b));
      if (uses_prior(model.spec.variant) && p.prior.empty())
        throw DataError("variant " + std::string(variant_name(model.spec.variant)) + " needs priors; item " +
                        p.meta.id + " has none");
      items.push_back(crops ? random_crop_pair(p, cfg.crop_height, cfg.crop_width, detail::splitmix64(state.rng_state))
                            : pad_to_multiple(p));
    }
    const Batch batch = make_batch(items);

    Tape<float> tape;
    Var<float> logits = forward(model, tape, std::optional<Var<float>>(tape.constant(batch.prior)),
                                tape.constant(batch.current));
    Var<float> loss = softmax_cross_entropy(logits, batch.labels);
    const double lv = loss.value().item();
    if (!std::isfinite(lv))
      throw NumericalError("non-finite loss at step " + std::to_string(state.step + 1));
    tape.backward(loss);
    sgd.step(model.params, tape.parameter_gradients(), lr);
    ++state.step;
    result.log.push_back({static_cast<std::size_t>(state.step), crops ? 1 : 2, lv, lr});
    if (on_eval && cfg.eval_every && state.step % cfg.eval_every == 0) on_eval(state.step, model);
  }
  state.velocity = std::move(sgd.velocity());
  result.state = std::move(state);
  return result;
}

/// Argmax labels for one pair at its native size (padding handled inside).
inline IntTensor predict(const Model<float>& model, const LabeledFramePair& pair) {
  const LabeledFramePair padded = pad_to_multiple(pair);
  const std::size_t H = padded.height(), W = padded.width();
  const Tensor<float> x0 = padded.prior.reshaped({1, 3, H, W});
  const Tensor<float> x1 = padded.current.reshaped({1, 3, H, W});
  const IntTensor full = argmax_channels(infer(model, &x0, x1));
  const std::size_t h = pair.height(), w = pair.width();
  IntTensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = full[y * W + x];
  return out;
}

struct Evaluation {
  ConfusionMatrix confusion;
  MetricsReport report;
};

/// Confusion matrix and report over a whole source.
inline Evaluation evaluate(const Model<float>& model, const FrameSource& data, const ClassTable& table,
                           const std::function<void(const LabeledFramePair&, const IntTensor&)>& on_item = {}) {
  if (model.spec.num_classes != table.size())
    throw std::invalid_argument("evaluate: classifier has " + std::to_string(model.spec.num_classes) +
                                " outputs but class table has " + std::to_string(table.size()) + " classes");
  ConfusionMatrix cm(table.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LabeledFramePair p = data.get(i);
    const IntTensor pred = predict(model, p);
    cm.update(pred, p.labels);
    if (on_item) on_item(p, pred);
  }
  return {cm, make_report(cm, table)};
}

struct FinetuneResult {
  Model<float> model;
  std::vector<std::string> copied, fresh;
};

/// Scale of the near-identity fusion init: W_image = a*I and W_out = I/a at
/// the centre tap, W_prior = 0, so conv(tanh(a*e)) / a ~ e for moderate e.
inline constexpr float kFusionIdentityScale = 0.25f;

/// Sets fusion module `site` of `m` to the near-identity form above; biases
/// are zeroed. Its output then follows the fusion-free path closely.
inline void init_fusion_near_identity(Model<float>& m, std::size_t site, float a = kFusionIdentityScale) {
  if (site >= fusion_sites(m.spec.variant)) throw std::out_of_range("no fusion site " + std::to_string(site));
  const std::string stem = fusion_name(site);
  for (auto& [name, t] : m.params) {
    if (!name.starts_with(stem + ".")) continue;
    t.fill(0.0f);
    const bool image = name == stem + ".image.weight", out = name == stem + ".out.weight";
    if (!image && !out) continue;
    const std::size_t c = t.dim(0), k = t.dim(2), centre = (k / 2) * k + k / 2;
    for (std::size_t o = 0; o < c; ++o) t[(o * c + o) * k * k + centre] = image ? a : 1.0f / a;
  }
}

/// How finetune_from initialises fresh fusion modules. BottleneckIdentity
/// starts the bottleneck site near the identity and keeps the random init
/// at decoder sites, whose larger activations saturate the tanh.
enum class FusionInit { Random, BottleneckIdentity };

/// Builds `target` and copies every parameter whose name exists in `source`.
/// A stacked model initialised from a 3-channel first conv copies the source
/// weights into the image channels and zeroes the prior channels, so its
/// initial output ignores the prior.
inline FinetuneResult finetune_from(const Model<float>& source, const ModelSpec& target, std::uint64_t seed,
                                    FusionInit fusion_init = FusionInit::BottleneckIdentity) {
  FinetuneResult r{build_model<float>(target, seed), {}, {}};
  if (fusion_init == FusionInit::BottleneckIdentity && fusion_sites(target.variant) > 0)
    init_fusion_near_identity(r.model, 0);
  for (auto& [name, t] : r.model.params) {
    auto it = source.params.find(name);
    if (it == source.params.end()) {
      r.fresh.push_back(name);
      continue;
    }
    const Tensor<float>& src = it->second;
    if (src.shape() == t.shape()) {
      t = src;
    } else if (name == encoder_name(0) + ".weight" && target.variant == Variant::StackedPrior &&
               src.rank() == 4 && src.dim(0) == t.dim(0) && src.dim(2) == t.dim(2) &&
               src.dim(1) == kImageChannels && t.dim(1) == 2 * kImageChannels) {
      // Input layout is concat(prior, image): channels [0, 3) prior, [3, 6) image.
      const std::size_t k2 = t.dim(2) * t.dim(3);
      t.fill(0.0f);
      for (std::size_t o = 0; o < t.dim(0); ++o)
        for (std::size_t c = 0; c < kImageChannels; ++c)
          for (std::size_t i = 0; i < k2; ++i)
            t[(o * t.dim(1) + kImageChannels + c) * k2 + i] = src[(o * src.dim(1) + c) * k2 + i];
    } else {
      throw DataError("finetune: parameter " + name + " has shape " + shape_string(src.shape()) +
                      " in the checkpoint but " + shape_string(t.shape()) + " in the target");
    }
    r.copied.push_back(name);
  }
  return r;
}

}  // namespace pfseg
