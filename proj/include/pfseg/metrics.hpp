#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfseg/classes.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

/// counts[g][p] = number of non-void pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : c_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
  }

  std::size_t num_classes() const { return c_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_.at(gt * c_ + pred); }

  /// Adds one prediction/ground-truth pair of equal shape. Void ground truth
  /// is skipped; predictions must be valid class ids.
  void update(const IntTensor& pred, const IntTensor& gt) {
    if (pred.shape() != gt.shape())
      throw ShapeError("confusion update: prediction " + shape_string(pred.shape()) + " vs ground truth " +
                       shape_string(gt.shape()));
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const std::int32_t p = pred[i];
      if (p < 0 || static_cast<std::size_t>(p) >= c_)
        throw std::out_of_range("confusion update: prediction " + std::to_string(p) + " is not a class id");
    }
    for (std::size_t i = 0; i < gt.numel(); ++i) {
      const std::int32_t g = gt[i];
      if (g == kVoidLabel) continue;
      if (g < 0 || static_cast<std::size_t>(g) >= c_)
        throw std::out_of_range("confusion update: ground truth " + std::to_string(g) + " is not a class id");
      ++counts_[static_cast<std::size_t>(g) * c_ + static_cast<std::size_t>(pred[i])];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.c_ != c_) throw std::invalid_argument("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }
  std::uint64_t row_sum(std::size_t g) const {
    std::uint64_t t = 0;
    for (std::size_t p = 0; p < c_; ++p) t += counts_[g * c_ + p];
    return t;
  }
  std::uint64_t col_sum(std::size_t p) const {
    std::uint64_t t = 0;
    for (std::size_t g = 0; g < c_; ++g) t += counts_[g * c_ + p];
    return t;
  }
  std::uint64_t diagonal(std::size_t c) const { return counts_[c * c_ + c]; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

inline void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::domain_error("metrics: no evaluated pixels");
}

/// trace / total.
inline double global_accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  std::uint64_t tp = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) tp += cm.diagonal(c);
  return static_cast<double>(tp) / static_cast<double>(cm.total());
}

/// Recall per class; classes absent from the ground truth have no value.
inline std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c)
    if (const auto rs = cm.row_sum(c)) out[c] = static_cast<double>(cm.diagonal(c)) / static_cast<double>(rs);
  return out;
}

namespace detail {
inline double mean_present(const std::vector<std::optional<double>>& v) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) s += *x, ++n;
  if (!n) throw std::domain_error("metrics: no evaluated pixels");
  return s / static_cast<double>(n);
}
}  // namespace detail

/// Mean recall over classes present in the ground truth.
inline double class_accuracy(const ConfusionMatrix& cm) { return detail::mean_present(per_class_accuracy(cm)); }

/// TP / (TP + FP + FN) per class; classes with an empty union have no value.
inline std::vector<std::optional<double>> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::uint64_t tp = cm.diagonal(c);
    const std::uint64_t uni = cm.row_sum(c) + cm.col_sum(c) - tp;
    if (uni) out[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

inline double mean_iou(const ConfusionMatrix& cm) { return detail::mean_present(per_class_iou(cm)); }

/// Pixel-weighted accuracy over the ground-truth pixels of each group. Groups
/// without pixels are absent from the result.
inline std::map<ClassGroup, double> grouped_accuracy(const ConfusionMatrix& cm, std::span<const ClassGroup> partition) {
  if (partition.size() != cm.num_classes())
    throw std::invalid_argument("grouped accuracy: partition covers " + std::to_string(partition.size()) +
                                " classes, matrix has " + std::to_string(cm.num_classes()));
  std::map<ClassGroup, std::pair<std::uint64_t, std::uint64_t>> acc;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    auto& [hit, all] = acc[partition[c]];
    hit += cm.diagonal(c);
    all += cm.row_sum(c);
  }
  std::map<ClassGroup, double> out;
  for (const auto& [g, v] : acc)
    if (v.second) out[g] = static_cast<double>(v.first) / static_cast<double>(v.second);
  return out;
}

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> class_accuracy, class_iou;
  std::vector<std::uint64_t> class_pixels;
  std::uint64_t total_pixels = 0;
  double global = 0, class_mean = 0, mean_iou = 0;
  std::optional<double> static_accuracy, dynamic_accuracy;
  std::uint64_t static_pixels = 0, dynamic_pixels = 0;
};

inline MetricsReport make_report(const ConfusionMatrix& cm, const ClassTable& table) {
  if (table.size() != cm.num_classes())
    throw std::invalid_argument("metrics report: class table has " + std::to_string(table.size()) +
                                " classes, matrix has " + std::to_string(cm.num_classes()));
  MetricsReport r;
  r.class_names = table.names;
  r.class_accuracy = per_class_accuracy(cm);
  r.class_iou = per_class_iou(cm);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    r.class_pixels.push_back(cm.row_sum(c));
    (table.group(c) == ClassGroup::Static ? r.static_pixels : r.dynamic_pixels) += cm.row_sum(c);
  }
  r.total_pixels = cm.total();
  r.global = global_accuracy(cm);
  r.class_mean = class_accuracy(cm);
  r.mean_iou = mean_iou(cm);
  const auto grouped = grouped_accuracy(cm, table.groups);
  if (auto it = grouped.find(ClassGroup::Static); it != grouped.end()) r.static_accuracy = it->second;
  if (auto it = grouped.find(ClassGroup::Dynamic); it != grouped.end()) r.dynamic_accuracy = it->second;
  return r;
}

namespace detail {
inline std::string fmt6(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}
}  // namespace detail

/// CSV with header "name,accuracy,iou,pixels": one row per class, then the
/// summary rows global, class_mean, mean_iou, static, dynamic. Empty cells
/// mark absent classes/groups; class means exclude absent classes.
inline void write_metrics_csv(std::ostream& os, const MetricsReport& r) {
  os << "name,accuracy,iou,pixels\n";
  for (std::size_t c = 0; c < r.class_names.size(); ++c)
    os << r.class_names[c] << ',' << detail::fmt6(r.class_accuracy[c]) << ',' << detail::fmt6(r.class_iou[c]) << ','
       << r.class_pixels[c] << '\n';
  os << "global," << detail::fmt6(r.global) << ",," << r.total_pixels << '\n';
  os << "class_mean," << detail::fmt6(r.class_mean) << ",,\n";
  os << "mean_iou,," << detail::fmt6(r.mean_iou) << ",\n";
  os << "static," << detail::fmt6(r.static_accuracy) << ",," << r.static_pixels << '\n';
  os << "dynamic," << detail::fmt6(r.dynamic_accuracy) << ",," << r.dynamic_pixels << '\n';
}

}  // namespace pfseg
