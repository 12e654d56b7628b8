#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pfseg/autograd.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kStages = 4;
/// Four 2x poolings: spatial extents must be multiples of this.
inline constexpr std::size_t kSpatialMultiple = 16;

enum class Variant { Baseline, StackedPrior, EmbeddingPrior, DecoderPrior };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::StackedPrior: return "stacked";
    case Variant::EmbeddingPrior: return "embed";
    case Variant::DecoderPrior: return "decoder";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "stacked") return Variant::StackedPrior;
  if (s == "embed") return Variant::EmbeddingPrior;
  if (s == "decoder") return Variant::DecoderPrior;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected baseline, stacked, embed or decoder)");
}

inline bool uses_prior(Variant v) { return v != Variant::Baseline; }

/// Number of fusion modules a variant carries.
inline std::size_t fusion_sites(Variant v) {
  switch (v) {
    case Variant::EmbeddingPrior: return 1;
    case Variant::DecoderPrior: return kStages;
    default: return 0;
  }
}

struct ModelSpec {
  Variant variant = Variant::Baseline;
  std::size_t input_channels = kImageChannels;
  std::size_t num_classes = 11;
  std::vector<std::size_t> encoder_widths{64, 128, 256, 512};
  std::vector<std::size_t> decoder_widths{512, 256, 128, 64};
  std::size_t backbone_kernel = 7;
  std::size_t fusion_kernel = 3;
  bool fusion_bias = false;

  static ModelSpec for_variant(Variant v, std::size_t num_classes = 11) {
    ModelSpec s;
    s.variant = v;
    s.num_classes = num_classes;
    s.input_channels = v == Variant::StackedPrior ? 2 * kImageChannels : kImageChannels;
    return s;
  }

  /// Same spec with every stage width divided by `divisor`.
  ModelSpec narrowed(std::size_t divisor) const {
    ModelSpec s = *this;
    for (auto& w : s.encoder_widths) w = std::max<std::size_t>(1, w / divisor);
    for (auto& w : s.decoder_widths) w = std::max<std::size_t>(1, w / divisor);
    return s;
  }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
    if (encoder_widths.size() != kStages || decoder_widths.size() != kStages)
      throw std::invalid_argument("model: encoder and decoder need 4 widths each (eight conv layers)");
    for (std::size_t i = 0; i < kStages; ++i) {
      if (encoder_widths[i] == 0 || decoder_widths[i] == 0) throw std::invalid_argument("model: zero width");
      if (decoder_widths[i] != encoder_widths[kStages - 1 - i])
        throw std::invalid_argument("model: decoder widths must mirror encoder widths for index unpooling");
    }
    const std::size_t want = variant == Variant::StackedPrior ? 2 * kImageChannels : kImageChannels;
    if (input_channels != want)
      throw std::invalid_argument("model: variant " + std::string(variant_name(variant)) + " needs " +
                                  std::to_string(want) + " input channels, spec has " +
                                  std::to_string(input_channels));
    if (backbone_kernel % 2 == 0 || fusion_kernel % 2 == 0)
      throw std::invalid_argument("model: kernel sizes must be odd");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class LayerKind { EncoderConv, DecoderConv, Classifier, FusionConv };

/// One convolution in the structural plan, pointing at its registry entries.
struct LayerPlan {
  std::string weight;
  std::optional<std::string> bias;
  LayerKind kind;
  std::size_t in_channels, out_channels, kernel;
};

inline std::string encoder_name(std::size_t i) { return "enc" + std::to_string(i + 1); }
inline std::string decoder_name(std::size_t i) { return "dec" + std::to_string(i + 1); }
inline std::string fusion_name(std::size_t site) { return "fuse" + std::to_string(site); }

/// Channel width at each fusion site: the bottleneck, then the outputs of
/// the first three decoder stages.
inline std::size_t fusion_width(const ModelSpec& s, std::size_t site) { return s.decoder_widths[site]; }

inline std::vector<LayerPlan> layer_plan(const ModelSpec& s) {
  s.validate();
  std::vector<LayerPlan> plan;
  const std::size_t k = s.backbone_kernel;
  std::size_t in = s.input_channels;
  for (std::size_t i = 0; i < kStages; ++i) {
    plan.push_back({encoder_name(i) + ".weight", encoder_name(i) + ".bias", LayerKind::EncoderConv, in,
                    s.encoder_widths[i], k});
    in = s.encoder_widths[i];
  }
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::size_t out = i + 1 < kStages ? s.decoder_widths[i + 1] : s.decoder_widths[i];
    plan.push_back({decoder_name(i) + ".weight", decoder_name(i) + ".bias", LayerKind::DecoderConv,
                    s.decoder_widths[i], out, k});
  }
  plan.push_back({"classifier.weight", "classifier.bias", LayerKind::Classifier, s.decoder_widths[kStages - 1],
                  s.num_classes, 1});
  for (std::size_t site = 0; site < fusion_sites(s.variant); ++site) {
    const std::size_t c = fusion_width(s, site);
    for (const char* role : {"prior", "image", "out"}) {
      const std::string base = fusion_name(site) + "." + role;
      plan.push_back({base + ".weight", s.fusion_bias ? std::optional<std::string>(base + ".bias") : std::nullopt,
                      LayerKind::FusionConv, c, c, s.fusion_kernel});
    }
  }
  return plan;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Fan-in scaled uniform fill, seeded per parameter name so that adding or
/// removing other parameters never changes this one.
template <class T>
Tensor<T> init_weight(const Shape& shape, std::size_t fan_in, double gain, std::uint64_t seed, std::string_view name) {
  std::uint64_t state = seed ^ detail::fnv1a(name);
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (auto& v : t.data()) {
    const double u = static_cast<double>(detail::splitmix64(state) >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * bound);
  }
  return t;
}

template <class T>
struct Model {
  ModelSpec spec;
  std::map<std::string, Tensor<T>> params;
  std::vector<LayerPlan> plan;

  const Tensor<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("model has no parameter " + name);
    return it->second;
  }
};

/// ReLU layers use the He gain; the linear classifier and fusion convs use 1.
inline double init_gain(const LayerPlan& layer) {
  switch (layer.kind) {
    case LayerKind::EncoderConv:
    case LayerKind::DecoderConv:
      return std::sqrt(2.0);
    case LayerKind::Classifier:
    case LayerKind::FusionConv:
      return 1.0;
  }
  return 1.0;
}

/// Instantiates a variant with deterministic weights; biases start at zero.
template <class T = float>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  Model<T> m{spec, {}, layer_plan(spec)};
  for (const auto& layer : m.plan) {
    const std::size_t fan_in = layer.in_channels * layer.kernel * layer.kernel;
    const double gain = init_gain(layer);
    m.params.emplace(layer.weight, init_weight<T>({layer.out_channels, layer.in_channels, layer.kernel, layer.kernel},
                                                  fan_in, gain, seed, layer.weight));
    if (layer.bias) m.params.emplace(*layer.bias, Tensor<T>({layer.out_channels}, T{0}));
  }
  return m;
}

template <class T>
std::size_t count_params(const Model<T>& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.params) n += t.numel();
  return n;
}

/// Same count straight from the plan, without allocating weights.
inline std::size_t count_params(const ModelSpec& s) {
  std::size_t n = 0;
  for (const auto& l : layer_plan(s)) n += l.out_channels * l.in_channels * l.kernel * l.kernel + (l.bias ? l.out_channels : 0);
  return n;
}

struct ParamRow {
  std::string name;
  Shape shape;
  std::size_t count;
};

/// Registry entries in name order. Shared weights appear once.
template <class T>
std::vector<ParamRow> param_report(const Model<T>& m) {
  std::vector<ParamRow> rows;
  for (const auto& [name, t] : m.params) rows.push_back({name, t.shape(), t.numel()});
  return rows;
}

/// Resolves a parameter name to a tape variable.
template <class T>
using Binder = std::function<Var<T>(const std::string&)>;

template <class T>
Binder<T> bind_parameters(const std::map<std::string, Tensor<T>>& params, Tape<T>& tape) {
  return [&params, &tape](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("missing parameter " + name);
    return tape.parameter(it->second, name);
  };
}

template <class T>
struct FusionVars {
  Var<T> w_prior, w_image, w_out;
  std::optional<Var<T>> b_prior, b_image, b_out;
};

/// A = tanh(conv(e_prior, W_prior) + conv(e_image, W_image)); returns conv(A, W_out).
/// Spatial extents are preserved.
template <class T>
Var<T> fusion_forward(const FusionVars<T>& f, Var<T> e_prior, Var<T> e_image, Var<T>* activation = nullptr) {
  if (e_prior.shape() != e_image.shape())
    throw ShapeError("fusion: prior features " + shape_string(e_prior.shape()) + " vs image features " +
                     shape_string(e_image.shape()));
  const int pad = static_cast<int>(f.w_prior.shape()[2] / 2);
  Var<T> a = tanh_op(add_op(conv2d(e_prior, f.w_prior, f.b_prior, 1, pad), conv2d(e_image, f.w_image, f.b_image, 1, pad)));
  if (activation) *activation = a;
  return conv2d(a, f.w_out, f.b_out, 1, static_cast<int>(f.w_out.shape()[2] / 2));
}

template <class T>
struct FusionModuleParams {
  Tensor<T> w_prior, w_image, w_out;
  std::optional<Tensor<T>> b_prior, b_image, b_out;
};

/// Value-level convenience wrapper around the tape form.
template <class T>
Tensor<T> fusion_forward(const FusionModuleParams<T>& p, const Tensor<T>& e_prior, const Tensor<T>& e_image) {
  Tape<T> tape;
  auto opt = [&tape](const std::optional<Tensor<T>>& b) {
    return b ? std::optional<Var<T>>(tape.constant(*b)) : std::nullopt;
  };
  FusionVars<T> f{tape.constant(p.w_prior), tape.constant(p.w_image), tape.constant(p.w_out),
                  opt(p.b_prior),           opt(p.b_image),           opt(p.b_out)};
  return fusion_forward(f, tape.constant(e_prior), tape.constant(e_image)).value();
}

namespace detail {

template <class T>
Var<T> conv_layer(const Binder<T>& bind, const std::string& stem, Var<T> x, std::size_t kernel) {
  return conv2d(x, bind(stem + ".weight"), std::optional<Var<T>>(bind(stem + ".bias")), 1,
                static_cast<int>(kernel / 2));
}

template <class T>
FusionVars<T> fusion_vars(const ModelSpec& s, const Binder<T>& bind, std::size_t site) {
  const std::string stem = fusion_name(site);
  auto b = [&](const char* role) {
    return s.fusion_bias ? std::optional<Var<T>>(bind(stem + "." + role + ".bias")) : std::nullopt;
  };
  return {bind(stem + ".prior.weight"), bind(stem + ".image.weight"), bind(stem + ".out.weight"),
          b("prior"), b("image"), b("out")};
}

}  // namespace detail

template <class T>
struct Encoded {
  Var<T> bottleneck;
  std::array<IndexMap, kStages> indices;
};

/// Four [conv -> relu -> 2x2 max-pool] stages.
template <class T>
Encoded<T> encode(const ModelSpec& s, const Binder<T>& bind, Var<T> x) {
  Encoded<T> e{x, {}};
  for (std::size_t i = 0; i < kStages; ++i) {
    auto pooled = max_pool2d(relu_op(detail::conv_layer(bind, encoder_name(i), e.bottleneck, s.backbone_kernel)));
    e.bottleneck = pooled.values;
    e.indices[i] = std::move(pooled.indices);
  }
  return e;
}

/// Decoder stage i: unpool with the mirrored encoder indices -> conv -> relu.
template <class T>
Var<T> decode_stage(const ModelSpec& s, const Binder<T>& bind, std::size_t stage, Var<T> h,
                    const std::array<IndexMap, kStages>& indices) {
  Var<T> up = max_unpool2d(h, indices[kStages - 1 - stage]);
  return relu_op(detail::conv_layer(bind, decoder_name(stage), up, s.backbone_kernel));
}

template <class T>
Var<T> classify(const ModelSpec&, const Binder<T>& bind, Var<T> h) {
  return detail::conv_layer(bind, "classifier", h, 1);
}

/// Forward pass with separately resolvable parameters for the image branch
/// and the prior branch. Passing the same binder for both gives the shared
/// model; distinct binders give unshared clones.
template <class T>
Var<T> forward_with(const ModelSpec& s, const Binder<T>& image_params, const Binder<T>& prior_params,
                    std::optional<Var<T>> x0, Var<T> x1) {
  const Tensor<T>& xv = x1.value();
  detail::require_rank4(xv, "forward input");
  const std::size_t image_c = s.variant == Variant::StackedPrior ? s.input_channels / 2 : s.input_channels;
  if (xv.dim(1) != image_c)
    throw ShapeError("forward: image has " + std::to_string(xv.dim(1)) + " channels, model expects " +
                     std::to_string(image_c));
  if (xv.dim(2) % kSpatialMultiple || xv.dim(3) % kSpatialMultiple)
    throw ShapeError("forward: spatial extents " + shape_string(xv.shape()) + " must be multiples of 16");
  if (uses_prior(s.variant)) {
    if (!x0) throw std::invalid_argument("forward: variant " + std::string(variant_name(s.variant)) + " needs a prior");
    if (x0->shape() != xv.shape())
      throw ShapeError("forward: prior " + shape_string(x0->shape()) + " vs image " + shape_string(xv.shape()));
  }

  switch (s.variant) {
    case Variant::Baseline:
    case Variant::StackedPrior: {
      Var<T> in = s.variant == Variant::StackedPrior ? concat_channels(*x0, x1) : x1;
      Encoded<T> e = encode(s, image_params, in);
      Var<T> h = e.bottleneck;
      for (std::size_t i = 0; i < kStages; ++i) h = decode_stage(s, image_params, i, h, e.indices);
      return classify(s, image_params, h);
    }
    case Variant::EmbeddingPrior: {
      Encoded<T> ep = encode(s, prior_params, *x0);
      Encoded<T> ei = encode(s, image_params, x1);
      Var<T> h = fusion_forward(detail::fusion_vars(s, image_params, 0), ep.bottleneck, ei.bottleneck);
      for (std::size_t i = 0; i < kStages; ++i) h = decode_stage(s, image_params, i, h, ei.indices);
      return classify(s, image_params, h);
    }
    case Variant::DecoderPrior: {
      Encoded<T> ep = encode(s, prior_params, *x0);
      Encoded<T> ei = encode(s, image_params, x1);
      Var<T> p = ep.bottleneck;
      Var<T> h = fusion_forward(detail::fusion_vars(s, image_params, 0), p, ei.bottleneck);
      for (std::size_t i = 0; i < kStages; ++i) {
        h = decode_stage(s, image_params, i, h, ei.indices);
        if (i + 1 < kStages) {
          p = decode_stage(s, prior_params, i, p, ep.indices);
          h = fusion_forward(detail::fusion_vars(s, image_params, i + 1), p, h);
        }
      }
      return classify(s, image_params, h);
    }
  }
  throw std::invalid_argument("forward: unknown variant");
}

/// Logits N x num_classes x H x W. Prior and image branches resolve to the
/// same registry entries.
template <class T>
Var<T> forward(const Model<T>& m, Tape<T>& tape, std::optional<Var<T>> x0, Var<T> x1) {
  const Binder<T> bind = bind_parameters(m.params, tape);
  return forward_with(m.spec, bind, bind, x0, x1);
}

/// Inference without keeping the tape around.
template <class T>
Tensor<T> infer(const Model<T>& m, const std::type_identity_t<Tensor<T>>* x0, const Tensor<T>& x1) {
  Tape<T> tape;
  std::optional<Var<T>> p;
  if (x0 && uses_prior(m.spec.variant)) p = tape.constant(*x0);
  return forward(m, tape, p, tape.constant(x1)).value();
}

}  // namespace pfseg
