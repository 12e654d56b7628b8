#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pfseg/config.hpp"
#include "pfseg/dataset.hpp"
#include "pfseg/metrics.hpp"
#include "pfseg/train.hpp"

namespace pfseg {

/// Metrics of one trained (variant, seed) cell, as fractions.
struct CompareRow {
  Variant variant;
  std::uint64_t seed;
  double class_mean, global, mean_iou;
  std::optional<double> static_accuracy, dynamic_accuracy;
};

struct SummaryStat {
  double mean = 0, sd = 0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation (0 for a single value).
inline SummaryStat summarize(const std::vector<double>& v) {
  SummaryStat s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct VariantSummary {
  Variant variant;
  std::size_t runs;
  SummaryStat class_mean, global, mean_iou, static_accuracy, dynamic_accuracy;
};

inline std::vector<VariantSummary> summarize_rows(const std::vector<CompareRow>& rows,
                                                  const std::vector<Variant>& order) {
  std::vector<VariantSummary> out;
  for (Variant v : order) {
    std::vector<double> c, g, i, st, dy;
    std::size_t runs = 0;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      ++runs;
      c.push_back(r.class_mean);
      g.push_back(r.global);
      i.push_back(r.mean_iou);
      if (r.static_accuracy) st.push_back(*r.static_accuracy);
      if (r.dynamic_accuracy) dy.push_back(*r.dynamic_accuracy);
    }
    out.push_back({v, runs, summarize(c), summarize(g), summarize(i), summarize(st), summarize(dy)});
  }
  return out;
}

namespace detail {
inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", 100.0 * v);
  return buf;
}
inline std::string pct_stat(const SummaryStat& s) { return s.n ? pct(s.mean) + "," + pct(s.sd) : std::string(","); }
inline std::string pct_opt(const std::optional<double>& v) { return v ? pct(*v) : std::string(); }
}  // namespace detail

/// Columns: variant,runs, then mean and sd (percent) for class, global, iou,
/// static, dynamic.
inline void write_summary_csv(std::ostream& os, const std::vector<VariantSummary>& s) {
  os << "variant,runs,class_mean,class_sd,global_mean,global_sd,iou_mean,iou_sd,static_mean,static_sd,dynamic_mean,"
        "dynamic_sd\n";
  for (const auto& r : s)
    os << variant_name(r.variant) << ',' << r.runs << ',' << detail::pct_stat(r.class_mean) << ','
       << detail::pct_stat(r.global) << ',' << detail::pct_stat(r.mean_iou) << ','
       << detail::pct_stat(r.static_accuracy) << ',' << detail::pct_stat(r.dynamic_accuracy) << '\n';
}

/// Columns: variant,seed,class,global,iou,static,dynamic (percent).
inline void write_runs_csv(std::ostream& os, const std::vector<CompareRow>& rows) {
  os << "variant,seed,class,global,iou,static,dynamic\n";
  for (const auto& r : rows)
    os << variant_name(r.variant) << ',' << r.seed << ',' << detail::pct(r.class_mean) << ',' << detail::pct(r.global)
       << ',' << detail::pct(r.mean_iou) << ',' << detail::pct_opt(r.static_accuracy) << ','
       << detail::pct_opt(r.dynamic_accuracy) << '\n';
}

using CompareProgress = std::function<void(const std::string&)>;

/// Trains and evaluates every (variant, seed) cell serially. With
/// compare_init=baseline, a baseline is first trained per seed and every
/// variant is then fine-tuned from it for the finetune step counts.
inline std::vector<CompareRow> run_compare(const RunConfig& cfg, const FrameSource& train_set,
                                           const FrameSource& test_set, const ClassTable& table,
                                           const std::vector<Variant>& variants,
                                           const std::vector<std::uint64_t>& seeds,
                                           const CompareProgress& progress = {}) {
  if (variants.empty()) throw ConfigError("compare needs at least one variant");
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  cfg.validate();
  const bool from_baseline = cfg.compare_init == "baseline";
  std::vector<CompareRow> rows;
  for (std::uint64_t seed : seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    std::optional<Model<float>> base;
    if (from_baseline) {
      base = build_model<float>(cfg.model_spec(Variant::Baseline, table.size()), seed);
      train(*base, train_set, tc);
    }
    for (Variant v : variants) {
      Model<float> m = build_model<float>(cfg.model_spec(v, table.size()), seed);
      TrainConfig run_cfg = tc;
      if (base) {
        // Every variant, the baseline included, gets the same fine-tuning
        // budget on top of the shared baseline.
        m = finetune_from(*base, m.spec, seed).model;
        run_cfg.steps_phase1 = cfg.finetune_steps_phase1;
        run_cfg.steps_phase2 = cfg.finetune_steps_phase2;
        run_cfg.seed = seed ^ detail::fnv1a("finetune");
      }
      train(m, train_set, run_cfg);
      const Evaluation ev = evaluate(m, test_set, table);
      rows.push_back({v, seed, ev.report.class_mean, ev.report.global, ev.report.mean_iou, ev.report.static_accuracy,
                      ev.report.dynamic_accuracy});
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s seed %llu: global %.2f class %.2f static %s dynamic %s",
                      std::string(variant_name(v)).c_str(), static_cast<unsigned long long>(seed), 100 * ev.report.global,
                      100 * ev.report.class_mean, detail::pct_opt(ev.report.static_accuracy).c_str(),
                      detail::pct_opt(ev.report.dynamic_accuracy).c_str());
        progress(buf);
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [&](const CompareRow& a, const CompareRow& b) {
    auto pos = [&](Variant v) { return std::find(variants.begin(), variants.end(), v) - variants.begin(); };
    return pos(a.variant) < pos(b.variant);
  });
  return rows;
}

}  // namespace pfseg
