#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "pfseg/pfseg.hpp"

namespace pfseg::testing {

/// Directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pfseg-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <class T>
Tensor<T> random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// Direct six-loop convolution. The sum for each output runs over input
/// channel, kernel row, kernel column in that order, starting from zero; the
/// bias is added last.
template <class T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride,
                       std::size_t pad) {
  const std::size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), K = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor<T> y({N, Co, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          T acc{0};
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                const T xv = (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                                 ? T{0}
                                 : x.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                acc += xv * w.at(co, ci, ky, kx);
              }
          if (b) acc += (*b)[co];
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

/// Small synthetic set for quick training tests.
inline std::vector<LabeledFramePair> tiny_synthetic(std::size_t scenes, std::uint64_t seed = 5, std::size_t size = 32) {
  SyntheticConfig cfg;
  cfg.seed = seed;
  cfg.scenes = scenes;
  cfg.height = cfg.width = size;
  return generate_synthetic(cfg);
}

}  // namespace pfseg::testing
