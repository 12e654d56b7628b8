#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "pfseg/cli.hpp"
#include "test_util.hpp"

using namespace pfseg;
using pfseg::testing::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pfseg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

const std::vector<std::string> kTinyModel{"--set", "width_divisor=16", "--set", "crop_height=16",
                                          "--set", "crop_width=16",    "--set", "batch_size=2"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  return args;
}

}  // namespace

TEST(Config, ParsesFileThenOverrides) {
  TempDir dir("cfg");
  std::ofstream(dir / "a.cfg") << "# comment\nlr = 0.5\n\nsteps_phase1=7  # trailing\nfusion_bias=true\n";
  const RunConfig c = load_run_config(dir / "a.cfg", {"lr=0.25"});
  EXPECT_DOUBLE_EQ(c.train.lr, 0.25);
  EXPECT_EQ(c.train.steps_phase1, 7u);
  EXPECT_TRUE(c.fusion_bias);
}

TEST(Config, ErrorsCarryOriginAndLine) {
  RunConfig c;
  try {
    apply_config_text(c, "lr=0.1\nlearning_rate=3\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_config_text(c, "lr 0.1\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "steps_phase1=ten\n"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "fusion_bias=maybe\n"), ConfigError);
  EXPECT_THROW(load_run_config(std::nullopt, {"backbone_kernel=4"}), ConfigError);
  EXPECT_THROW(load_run_config(std::nullopt, {"compare_init=imagenet"}), ConfigError);
  EXPECT_THROW(load_run_config(std::filesystem::path("/nonexistent/x.cfg")), ConfigError);
}

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run_cli({}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"params", "--variant", "wide"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"gen-data", "--out", "/tmp/x", "--size", "63x64"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"gen-data", "--out", "/tmp/x", "--size", "big"}).code, cli::kUsage);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
}

TEST(Cli, ParamsReportsEveryVariant) {
  const Outcome o = run_cli({"params", "--all"});
  ASSERT_EQ(o.code, cli::kOk) << o.err;
  std::istringstream in(o.out);
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::pair<std::size_t, std::size_t>> rows;
  std::string name;
  std::size_t n, delta;
  double millions;
  while (in >> name >> n >> delta >> millions) rows[name] = {n, delta};
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows["baseline"], std::make_pair(std::size_t{17071435}, std::size_t{0}));
  EXPECT_EQ(rows["stacked"].second, 9408u);
  EXPECT_EQ(rows["embed"].second, 7077888u);
  EXPECT_EQ(rows["decoder"].second, 9400320u);

  const Outcome one = run_cli({"params", "--variant", "embed"});
  ASSERT_EQ(one.code, cli::kOk);
  EXPECT_NE(one.out.find("fuse0.prior.weight"), std::string::npos);
  EXPECT_NE(one.out.find("total 24149323"), std::string::npos) << one.out;
}

TEST(Cli, GenerateTrainEvaluateRoundTrip) {
  TempDir dir("cli");
  const std::string data = (dir / "data").string(), ckpt = (dir / "m.ckpt").string();
  Outcome o = run_cli({"gen-data", "--seed", "1", "--scenes", "2", "--test-scenes", "1", "--size", "32x32", "--out", data});
  ASSERT_EQ(o.code, cli::kOk) << o.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "train" / "manifest.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "test" / "manifest.txt"));

  o = run_cli(with_tiny({"train", "--variant", "decoder", "--data", data, "--out-ckpt", ckpt, "--seed", "3", "--set",
                         "steps_phase1=2", "--set", "steps_phase2=1"}));
  ASSERT_EQ(o.code, cli::kOk) << o.err;
  const std::string loss = slurp(ckpt + ".loss.csv");
  EXPECT_EQ(first_line(loss), "step,phase,loss,lr");
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);

  o = run_cli({"eval", "--ckpt", ckpt, "--data", data, "--out-csv", (dir / "m.csv").string(), "--render-dir",
               (dir / "render").string()});
  ASSERT_EQ(o.code, cli::kOk) << o.err;
  EXPECT_EQ(first_line(slurp(dir / "m.csv")), "name,accuracy,iou,pixels");
  EXPECT_TRUE(std::filesystem::exists(dir / "render" / "item-000002-panel.ppm"));

  // Every baseline tensor exists in the decoder checkpoint.
  o = run_cli(with_tiny({"train", "--variant", "baseline", "--data", data, "--init-from", ckpt, "--out-ckpt",
                         (dir / "e.ckpt").string(), "--set", "steps_phase1=1"}));
  ASSERT_EQ(o.code, cli::kOk) << o.err;
  EXPECT_NE(o.out.find("fresh 0 tensors"), std::string::npos) << o.out;
}

TEST(Cli, DataErrorsExitWithTwo) {
  TempDir dir("cli-data");
  EXPECT_EQ(run_cli({"eval", "--ckpt", (dir / "none.ckpt").string(), "--data", dir.path().string()}).code, cli::kData);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run_cli({"eval", "--ckpt", (dir / "junk.ckpt").string(), "--data", dir.path().string()}).code, cli::kData);
  EXPECT_EQ(run_cli({"train", "--data", (dir / "empty").string(), "--out-ckpt", (dir / "x.ckpt").string()}).code,
            cli::kData);
}

TEST(Cli, NonFiniteTrainingExitsWithThree) {
  TempDir dir("cli-nan");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run_cli({"gen-data", "--scenes", "1", "--size", "32x32", "--out", data}).code, cli::kOk);
  Model<float> m = build_model<float>(ModelSpec::for_variant(Variant::Baseline).narrowed(16), 0);
  m.params.at("classifier.bias")[1] = std::nanf("");
  save_checkpoint(m, TrainState{}, dir / "nan.ckpt");
  const Outcome o = run_cli(with_tiny({"train", "--data", data, "--init-from", (dir / "nan.ckpt").string(),
                                       "--out-ckpt", (dir / "out.ckpt").string(), "--set", "steps_phase1=1"}));
  EXPECT_EQ(o.code, cli::kNumerical) << o.err;
}

TEST(Cli, CompareWritesSummaryAndRunTables) {
  TempDir dir("cli-cmp");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run_cli({"gen-data", "--scenes", "2", "--test-scenes", "1", "--size", "32x32", "--out", data}).code,
            cli::kOk);
  const Outcome o = run_cli(with_tiny({"compare", "--data", data, "--variants", "baseline", "embed", "--seeds", "0",
                                       "1", "--set", "steps_phase1=1", "--out", (dir / "s.csv").string(),
                                       "--runs-csv", (dir / "r.csv").string()}));
  ASSERT_EQ(o.code, cli::kOk) << o.err;
  const std::string summary = slurp(dir / "s.csv"), runs = slurp(dir / "r.csv");
  EXPECT_EQ(first_line(summary),
            "variant,runs,class_mean,class_sd,global_mean,global_sd,iou_mean,iou_sd,static_mean,static_sd,dynamic_mean,"
            "dynamic_sd");
  EXPECT_EQ(first_line(runs), "variant,seed,class,global,iou,static,dynamic");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 3);
  EXPECT_EQ(std::count(runs.begin(), runs.end(), '\n'), 5);
  EXPECT_EQ(summary.substr(summary.find('\n') + 1, 11), "baseline,2,");
}

TEST(Summary, SampleStandardDeviation) {
  const SummaryStat s = summarize({1.0, 2.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 7.0 / 3);
  const double m = 7.0 / 3;
  EXPECT_DOUBLE_EQ(s.sd, std::sqrt(((1 - m) * (1 - m) + (2 - m) * (2 - m) + (4 - m) * (4 - m)) / 2));
  EXPECT_EQ(summarize({5.0}).sd, 0.0);
}
