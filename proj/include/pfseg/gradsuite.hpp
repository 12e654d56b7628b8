#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pfseg/gradcheck.hpp"
#include "pfseg/models.hpp"
#include "pfseg/ops.hpp"

// Finite-difference checks for every differentiable op on random f64
// tensors no larger than 2 x 4 x 6 x 6.
namespace pfseg {

struct GradTrial {
  MultiFunction f;
  std::vector<Tensor<double>> inputs;
};

struct GradCase {
  std::string name;
  std::function<GradTrial(std::uint64_t& rng)> make;
};

namespace detail {

inline double unit(std::uint64_t& s) { return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53; }

inline Tensor<double> random_tensor(std::uint64_t& s, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = lo + (hi - lo) * unit(s);
  return t;
}

/// Values bounded away from zero, for checks across the relu kink.
inline Tensor<double> off_zero_tensor(std::uint64_t& s, const Shape& shape) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = (unit(s) < 0.5 ? -1.0 : 1.0) * (0.05 + 0.95 * unit(s));
  return t;
}

/// Distinct values spaced 0.01 apart in random order, so no pooling window
/// has a near-tie that a perturbation could flip.
inline Tensor<double> distinct_tensor(std::uint64_t& s, const Shape& shape) {
  Tensor<double> t(shape);
  std::vector<std::size_t> perm(t.numel());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[splitmix64(s) % i]);
  for (std::size_t i = 0; i < perm.size(); ++i) t[i] = 0.01 * static_cast<double>(perm[i]) - 0.5;
  return t;
}

inline std::size_t pick(std::uint64_t& s, std::size_t lo, std::size_t hi) { return lo + splitmix64(s) % (hi - lo + 1); }

/// Reduces a tensor-valued output to a scalar with fixed random weights so
/// every output coordinate contributes a distinct gradient.
inline Var<double> project(Var<double> out, const Tensor<double>& weights) {
  Tape<double>& tape = *out.tape;
  return sum_op(mul_op(out, tape.constant(weights)));
}

}  // namespace detail

inline std::vector<GradCase> grad_cases() {
  using detail::pick;
  using detail::random_tensor;
  std::vector<GradCase> cases;

  auto unary_case = [](std::string name, std::function<Var<double>(Var<double>)> op, bool off_zero,
                       bool scalar_out = false) {
    return GradCase{name, [op, off_zero, scalar_out](std::uint64_t& s) {
                      const Shape shape{pick(s, 1, 2), pick(s, 1, 4), pick(s, 1, 6), pick(s, 1, 6)};
                      Tensor<double> x = off_zero ? detail::off_zero_tensor(s, shape) : random_tensor(s, shape, -2, 2);
                      Tensor<double> w = random_tensor(s, scalar_out ? Shape{1} : shape);
                      return GradTrial{[op, w](Tape<double>&, std::span<const Var<double>> v) {
                                         return detail::project(op(v[0]), w);
                                       },
                                       {x}};
                    }};
  };
  cases.push_back(unary_case("tanh", [](Var<double> x) { return tanh_op(x); }, false));
  cases.push_back(unary_case("relu", [](Var<double> x) { return relu_op(x); }, true));
  cases.push_back(unary_case("scale", [](Var<double> x) { return scale_op(x, -1.7); }, false));
  cases.push_back(unary_case("sum", [](Var<double> x) { return sum_op(x); }, false, true));

  auto binary_case = [](std::string name, std::function<Var<double>(Var<double>, Var<double>)> op) {
    return GradCase{name, [op](std::uint64_t& s) {
                      const Shape shape{pick(s, 1, 2), pick(s, 1, 4), pick(s, 1, 6), pick(s, 1, 6)};
                      Tensor<double> a = random_tensor(s, shape), b = random_tensor(s, shape);
                      Tensor<double> w = random_tensor(s, shape);
                      return GradTrial{[op, w](Tape<double>&, std::span<const Var<double>> v) {
                                         return detail::project(op(v[0], v[1]), w);
                                       },
                                       {a, b}};
                    }};
  };
  cases.push_back(binary_case("add", [](Var<double> a, Var<double> b) { return add_op(a, b); }));
  cases.push_back(binary_case("mul", [](Var<double> a, Var<double> b) { return mul_op(a, b); }));

  cases.push_back({"concat", [](std::uint64_t& s) {
                     const std::size_t n = pick(s, 1, 2), h = pick(s, 1, 6), w = pick(s, 1, 6);
                     const std::size_t ca = pick(s, 1, 2), cb = pick(s, 1, 2);
                     Tensor<double> a = random_tensor(s, {n, ca, h, w}), b = random_tensor(s, {n, cb, h, w});
                     Tensor<double> wt = random_tensor(s, {n, ca + cb, h, w});
                     return GradTrial{[wt](Tape<double>&, std::span<const Var<double>> v) {
                                        return detail::project(concat_channels(v[0], v[1]), wt);
                                      },
                                      {a, b}};
                   }});

  auto conv_case = [](std::string name, bool strided) {
    return GradCase{name, [strided](std::uint64_t& s) {
                      const std::size_t n = pick(s, 1, 2), cin = pick(s, 1, 4), cout = pick(s, 1, 4);
                      const std::size_t h = pick(s, 3, 6), w = pick(s, 3, 6), k = pick(s, 0, 1) ? 3 : 1;
                      const int stride = strided ? 2 : 1;
                      const int pad = static_cast<int>(pick(s, 0, k / 2));
                      Tensor<double> x = random_tensor(s, {n, cin, h, w});
                      Tensor<double> wt = random_tensor(s, {cout, cin, k, k});
                      Tensor<double> b = random_tensor(s, {cout});
                      const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
                      Tensor<double> proj = random_tensor(s, {n, cout, oh, ow});
                      return GradTrial{[proj, stride, pad](Tape<double>&, std::span<const Var<double>> v) {
                                         return detail::project(
                                             conv2d(v[0], v[1], std::optional<Var<double>>(v[2]), stride, pad), proj);
                                       },
                                       {x, wt, b}};
                    }};
  };
  cases.push_back(conv_case("conv2d", false));
  cases.push_back(conv_case("conv2d_stride2", true));

  cases.push_back({"max_pool2d", [](std::uint64_t& s) {
                     const Shape shape{pick(s, 1, 2), pick(s, 1, 4), 2 * pick(s, 1, 3), 2 * pick(s, 1, 3)};
                     Tensor<double> x = detail::distinct_tensor(s, shape);
                     Tensor<double> w = random_tensor(s, {shape[0], shape[1], shape[2] / 2, shape[3] / 2});
                     return GradTrial{[w](Tape<double>&, std::span<const Var<double>> v) {
                                        return detail::project(max_pool2d(v[0]).values, w);
                                      },
                                      {x}};
                   }});

  cases.push_back({"max_unpool2d", [](std::uint64_t& s) {
                     const Shape shape{pick(s, 1, 2), pick(s, 1, 4), 2 * pick(s, 1, 3), 2 * pick(s, 1, 3)};
                     // Indices come from pooling a fixed tensor; only the pooled values vary.
                     Tape<double> probe;
                     const IndexMap idx = max_pool2d(probe.constant(detail::distinct_tensor(s, shape))).indices;
                     Tensor<double> x = random_tensor(s, {shape[0], shape[1], shape[2] / 2, shape[3] / 2});
                     Tensor<double> w = random_tensor(s, shape);
                     return GradTrial{[idx, w](Tape<double>&, std::span<const Var<double>> v) {
                                        return detail::project(max_unpool2d(v[0], idx), w);
                                      },
                                      {x}};
                   }});

  cases.push_back({"softmax_cross_entropy", [](std::uint64_t& s) {
                     const std::size_t n = pick(s, 1, 2), c = pick(s, 2, 4), h = pick(s, 1, 6), w = pick(s, 1, 6);
                     Tensor<double> logits = random_tensor(s, {n, c, h, w}, -3, 3);
                     IntTensor labels({n, h, w});
                     for (auto& l : labels.data())
                       l = detail::unit(s) < 0.15 ? kVoidLabel : static_cast<std::int32_t>(pick(s, 0, c - 1));
                     labels[0] = 0;  // at least one counted pixel
                     return GradTrial{[labels](Tape<double>&, std::span<const Var<double>> v) {
                                        return softmax_cross_entropy(v[0], labels);
                                      },
                                      {logits}};
                   }});

  cases.push_back({"fusion", [](std::uint64_t& s) {
                     const std::size_t n = pick(s, 1, 2), c = pick(s, 1, 4), h = pick(s, 1, 6), w = pick(s, 1, 6);
                     const bool bias = pick(s, 0, 1) == 1;
                     std::vector<Tensor<double>> in{random_tensor(s, {n, c, h, w}), random_tensor(s, {n, c, h, w})};
                     for (int i = 0; i < 3; ++i) in.push_back(random_tensor(s, {c, c, 3, 3}, -0.5, 0.5));
                     if (bias)
                       for (int i = 0; i < 3; ++i) in.push_back(random_tensor(s, {c}, -0.5, 0.5));
                     Tensor<double> proj = random_tensor(s, {n, c, h, w});
                     return GradTrial{[proj, bias](Tape<double>&, std::span<const Var<double>> v) {
                                        FusionVars<double> f{v[2], v[3], v[4], {}, {}, {}};
                                        if (bias) f.b_prior = v[5], f.b_image = v[6], f.b_out = v[7];
                                        return detail::project(fusion_forward(f, v[0], v[1]), proj);
                                      },
                                      std::move(in)};
                   }});
  return cases;
}

struct GradCaseResult {
  std::string name;
  GradCheckResult worst;
  std::size_t trials;
};

/// Runs `trials` random checks of the named op ("all" for every op) and
/// reports the worst coordinate per op.
inline std::vector<GradCaseResult> run_grad_suite(const std::string& op, std::size_t trials, std::uint64_t seed,
                                                  double epsilon = 1e-5) {
  std::vector<GradCaseResult> out;
  for (const auto& c : grad_cases()) {
    if (op != "all" && op != c.name) continue;
    std::uint64_t rng = seed ^ detail::fnv1a(c.name);
    GradCaseResult r{c.name, {}, trials};
    for (std::size_t t = 0; t < trials; ++t) {
      GradTrial trial = c.make(rng);
      const GradCheckResult g = grad_check(trial.f, std::move(trial.inputs), epsilon);
      if (t == 0 || g.max_relative_error > r.worst.max_relative_error) r.worst = g;
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw std::invalid_argument("unknown op '" + op + "'");
  return out;
}

}  // namespace pfseg
