#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "test_util.hpp"

using namespace pfseg;

namespace {

// Independent recount straight from the label arrays.
struct Recount {
  double global, class_mean, mean_iou;
  std::optional<double> static_acc, dynamic_acc;
};

Recount recount(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt, const ClassTable& table) {
  const std::size_t C = table.size();
  double hits = 0, valid = 0, acc_sum = 0, iou_sum = 0;
  std::size_t acc_n = 0, iou_n = 0;
  double group_hit[2] = {0, 0}, group_all[2] = {0, 0};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kVoidLabel) continue;
    ++valid;
    const int g = table.group(static_cast<std::size_t>(gt[i])) == ClassGroup::Dynamic;
    ++group_all[g];
    if (pred[i] == gt[i]) ++hits, ++group_hit[g];
  }
  for (std::size_t c = 0; c < C; ++c) {
    const auto cls = static_cast<std::int32_t>(c);
    double tp = 0, in_gt = 0, in_pred = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == kVoidLabel) continue;
      in_gt += gt[i] == cls;
      in_pred += pred[i] == cls;
      tp += gt[i] == cls && pred[i] == cls;
    }
    if (in_gt > 0) acc_sum += tp / in_gt, ++acc_n;
    if (in_gt + in_pred - tp > 0) iou_sum += tp / (in_gt + in_pred - tp), ++iou_n;
  }
  Recount r{hits / valid, acc_sum / static_cast<double>(acc_n), iou_sum / static_cast<double>(iou_n), {}, {}};
  if (group_all[0] > 0) r.static_acc = group_hit[0] / group_all[0];
  if (group_all[1] > 0) r.dynamic_acc = group_hit[1] / group_all[1];
  return r;
}

IntTensor as_tensor(const std::vector<std::int32_t>& v) { return IntTensor({v.size()}, v); }

ClassTable three_class_table() {
  ClassTable t{{"a", "b", "c"},
               {Rgb{1, 0, 0}, Rgb{0, 1, 0}, Rgb{0, 0, 1}},
               {ClassGroup::Static, ClassGroup::Static, ClassGroup::Dynamic}};
  t.validate();
  return t;
}

}  // namespace

TEST(Metrics, MatchBruteForceRecount) {
  const ClassTable table = default_class_table();
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 400;
    // Some trials leave classes out entirely.
    const std::size_t used = 1 + rng() % table.size();
    std::vector<std::int32_t> gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = rng() % 9 == 0 ? kVoidLabel : static_cast<std::int32_t>(rng() % used);
      pred[i] = rng() % 3 == 0 ? gt[i] : static_cast<std::int32_t>(rng() % table.size());
      if (pred[i] == kVoidLabel) pred[i] = 0;
    }
    if (std::all_of(gt.begin(), gt.end(), [](std::int32_t g) { return g == kVoidLabel; })) gt[0] = 0;
    ConfusionMatrix cm(table.size());
    cm.update(as_tensor(pred), as_tensor(gt));
    const MetricsReport r = make_report(cm, table);
    const Recount want = recount(pred, gt, table);
    EXPECT_NEAR(r.global, want.global, 1e-12);
    EXPECT_NEAR(r.class_mean, want.class_mean, 1e-12);
    EXPECT_NEAR(r.mean_iou, want.mean_iou, 1e-12);
    ASSERT_EQ(r.static_accuracy.has_value(), want.static_acc.has_value());
    ASSERT_EQ(r.dynamic_accuracy.has_value(), want.dynamic_acc.has_value());
    if (want.static_acc) {
      EXPECT_NEAR(*r.static_accuracy, *want.static_acc, 1e-12);
    }
    if (want.dynamic_acc) {
      EXPECT_NEAR(*r.dynamic_accuracy, *want.dynamic_acc, 1e-12);
    }
  }
}

TEST(Metrics, InvariantToPixelPermutation) {
  const ClassTable table = default_class_table();
  std::mt19937_64 rng(32);
  std::vector<std::int32_t> gt(500), pred(500);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = static_cast<std::int32_t>(rng() % table.size());
    pred[i] = static_cast<std::int32_t>(rng() % table.size());
  }
  std::vector<std::size_t> perm(gt.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::int32_t> gt2(gt.size()), pred2(gt.size());
  for (std::size_t i = 0; i < perm.size(); ++i) gt2[i] = gt[perm[i]], pred2[i] = pred[perm[i]];
  ConfusionMatrix a(table.size()), b(table.size());
  a.update(as_tensor(pred), as_tensor(gt));
  b.update(as_tensor(pred2), as_tensor(gt2));
  EXPECT_EQ(a, b);
}

TEST(Metrics, AbsentClassesAreExcludedFromMeans) {
  const ClassTable table = three_class_table();
  ConfusionMatrix cm(3);
  // Class c never occurs in the ground truth and is never predicted.
  cm.update(as_tensor({0, 1, 1}), as_tensor({0, 0, 1}));
  const auto acc = per_class_accuracy(cm);
  EXPECT_FALSE(acc[2].has_value());
  EXPECT_DOUBLE_EQ(class_accuracy(cm), (0.5 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(mean_iou(cm), (1.0 / 2 + 1.0 / 2) / 2);
  const MetricsReport r = make_report(cm, table);
  EXPECT_FALSE(r.dynamic_accuracy.has_value());
  EXPECT_EQ(r.dynamic_pixels, 0u);

  // Predicted but absent from the ground truth: IoU is 0, recall is absent.
  ConfusionMatrix fp(3);
  fp.update(as_tensor({2, 0}), as_tensor({0, 0}));
  EXPECT_FALSE(per_class_accuracy(fp)[2].has_value());
  EXPECT_EQ(per_class_iou(fp)[2], 0.0);
}

TEST(Metrics, VoidIsSkippedAndBadIdsRejected) {
  ConfusionMatrix cm(3);
  cm.update(as_tensor({0, 2}), as_tensor({kVoidLabel, 2}));
  EXPECT_EQ(cm.total(), 1u);
  EXPECT_THROW(cm.update(as_tensor({3}), as_tensor({0})), std::out_of_range);
  EXPECT_THROW(cm.update(as_tensor({0}), as_tensor({7})), std::out_of_range);
  EXPECT_THROW(cm.update(as_tensor({0, 0}), as_tensor({0})), ShapeError);
  ConfusionMatrix empty(3);
  EXPECT_THROW(global_accuracy(empty), std::domain_error);
}

TEST(Metrics, GoldenCsv) {
  ConfusionMatrix cm(3);
  cm.update(as_tensor({0, 1, 1, 1, 0, 2}), as_tensor({0, 0, 1, 1, 2, kVoidLabel}));
  std::ostringstream os;
  write_metrics_csv(os, make_report(cm, three_class_table()));
  EXPECT_EQ(os.str(),
            "name,accuracy,iou,pixels\n"
            "a,0.500000,0.333333,2\n"
            "b,1.000000,0.666667,2\n"
            "c,0.000000,0.000000,1\n"
            "global,0.600000,,5\n"
            "class_mean,0.500000,,\n"
            "mean_iou,,0.333333,\n"
            "static,0.750000,,4\n"
            "dynamic,0.000000,,1\n");
}

TEST(Metrics, MergedMatricesEqualOnePass) {
  std::mt19937_64 rng(33);
  std::vector<std::int32_t> gt(300), pred(300);
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = rng() % 11, pred[i] = rng() % 11;
  ConfusionMatrix whole(11), first(11), second(11);
  whole.update(as_tensor(pred), as_tensor(gt));
  first.update(as_tensor({pred.begin(), pred.begin() + 120}), as_tensor({gt.begin(), gt.begin() + 120}));
  second.update(as_tensor({pred.begin() + 120, pred.end()}), as_tensor({gt.begin() + 120, gt.end()}));
  first += second;
  EXPECT_EQ(first, whole);
  EXPECT_THROW(first += ConfusionMatrix(3), std::invalid_argument);
}

TEST(Metrics, EvaluateIsIndependentOfItemOrder) {
  const ClassTable table = default_class_table();
  const Model<float> model = build_model<float>(ModelSpec::for_variant(Variant::Baseline).narrowed(16), 4);
  auto items = pfseg::testing::tiny_synthetic(3);
  const MemoryFrames forward_order(items);
  std::reverse(items.begin(), items.end());
  const MemoryFrames reversed(items);
  EXPECT_EQ(evaluate(model, forward_order, table).confusion, evaluate(model, reversed, table).confusion);
  EXPECT_THROW(evaluate(model, forward_order, three_class_table()), std::invalid_argument);
}
