#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "pfseg/pfseg.hpp"

// Command-line front end. Exit codes: 0 success, 1 usage, 2 data, 3 numerical.
namespace pfseg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

namespace fs = std::filesystem;

inline std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw ConfigError("size must look like HxW, got '" + s + "'");
  return {std::stoul(m[1].str()), std::stoul(m[2].str())};
}

/// A manifest directory, `<root>/<split>/manifest.txt`, or a CamVid root.
inline std::unique_ptr<FrameSource> open_data(const fs::path& root, const std::string& split, std::size_t offset,
                                              const ClassTable& table) {
  if (fs::exists(root / "manifest.txt")) return std::make_unique<MemoryFrames>(load_manifest(root, table));
  if (fs::exists(root / split / "manifest.txt"))
    return std::make_unique<MemoryFrames>(load_manifest(root / split, table));
  if (fs::is_directory(root / split) && fs::is_directory(root / (split + "annot")))
    return std::make_unique<CamVidFrames>(load_camvid(root, split, offset, table));
  throw DataError("no dataset at " + root.string() + " (expected manifest.txt, " + split +
                  "/manifest.txt or a CamVid layout)");
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

/// Input, ground truth and prediction next to each other, 2 px apart.
inline RgbImage side_by_side(const std::vector<RgbImage>& panels) {
  std::size_t w = 0, h = 0;
  for (const auto& p : panels) w += p.width, h = std::max(h, p.height);
  w += 2 * (panels.size() - 1);
  RgbImage out(w, h);
  std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{255});
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t y = 0; y < p.height; ++y)
      for (std::size_t x = 0; x < p.width; ++x) out.set(y, x0 + x, p.get(y, x));
    x0 += p.width + 2;
  }
  return out;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Temporal-prior semantic segmentation toolkit", "pfseg"};
  app.require_subcommand(1);
  const ClassTable table = default_class_table();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic sequential-scene dataset");
  std::uint64_t gen_seed = 0;
  std::size_t gen_scenes = 8, gen_test = 0, gen_offset = 3, gen_frames = 1, gen_stride = 5;
  std::string gen_size = "64x64", gen_out;
  gen->add_option("--seed", gen_seed, "Scene seed");
  gen->add_option("--scenes", gen_scenes, "Number of (training) scenes")->check(CLI::PositiveNumber);
  gen->add_option("--test-scenes", gen_test,
                  "Also write this many held-out scenes; output then goes to <out>/train and <out>/test");
  gen->add_option("--size", gen_size, "Frame size HxW (multiples of 16)");
  gen->add_option("--offset", gen_offset, "Frames between prior and current")->check(CLI::PositiveNumber);
  gen->add_option("--frames-per-scene", gen_frames, "Labelled frames per scene")->check(CLI::PositiveNumber);
  gen->add_option("--frame-stride", gen_stride, "Frames between consecutive labelled frames of a scene");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train one variant");
  std::string tr_variant = "baseline", tr_data, tr_ckpt, tr_loss, tr_split = "train";
  std::optional<std::string> tr_config, tr_init;
  std::vector<std::string> tr_set;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--variant", tr_variant, "baseline | stacked | embed | decoder");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--split", tr_split, "Split used when --data holds several");
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--set", tr_set, "Config override key=value (repeatable)");
  tr->add_option("--seed", tr_seed, "Overrides the config seed");
  tr->add_option("--init-from", tr_init, "Fine-tune from this checkpoint");
  tr->add_option("--out-ckpt", tr_ckpt, "Checkpoint to write")->required();
  tr->add_option("--loss-csv", tr_loss, "Training log CSV (default <out-ckpt>.loss.csv)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_csv, ev_split = "test";
  std::optional<std::string> ev_render;
  std::size_t ev_offset = 30;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "Split used when --data holds several");
  ev->add_option("--offset", ev_offset, "Prior offset for CamVid layouts");
  ev->add_option("--out-csv", ev_csv, "Metrics CSV to write");
  ev->add_option("--render-dir", ev_render, "Write item-<id>-{input,gt,pred,panel}.ppm renders here");

  // params
  auto* pa = app.add_subcommand("params", "Per-layer parameter report");
  std::string pa_variant = "baseline";
  bool pa_all = false;
  std::size_t pa_classes = 11;
  pa->add_option("--variant", pa_variant, "baseline | stacked | embed | decoder");
  pa->add_flag("--all", pa_all, "All four variants with deltas against the baseline");
  pa->add_option("--classes", pa_classes, "Number of classes")->check(CLI::Range(2, 255));

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string gc_op = "all";
  std::size_t gc_trials = 20;
  std::uint64_t gc_seed = 0;
  gc->add_option("--op", gc_op, "Op name or 'all'");
  gc->add_option("--trials", gc_trials, "Random trials per op")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "Random seed");

  // compare
  auto* cmp = app.add_subcommand("compare", "Train and evaluate variants over several seeds");
  std::string cmp_data, cmp_out = "compare.csv";
  std::optional<std::string> cmp_config, cmp_runs;
  std::vector<std::string> cmp_variants{"baseline", "decoder"}, cmp_set;
  std::vector<std::uint64_t> cmp_seeds{0};
  cmp->add_option("--data", cmp_data, "Directory with train/ and test/ splits")->required();
  cmp->add_option("--config", cmp_config, "key=value config file");
  cmp->add_option("--set", cmp_set, "Config override key=value (repeatable)");
  cmp->add_option("--variants", cmp_variants, "Variants to compare")->expected(1, -1);
  cmp->add_option("--seeds", cmp_seeds, "Seeds")->expected(1, -1);
  cmp->add_option("--out", cmp_out, "Summary CSV (mean and sd per variant, percent)");
  cmp->add_option("--runs-csv", cmp_runs, "Per-run CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const auto [h, w] = parse_size(gen_size);
      SyntheticConfig sc;
      sc.seed = gen_seed;
      sc.height = h;
      sc.width = w;
      sc.prior_offset = gen_offset;
      sc.scenes = gen_scenes;
      sc.frames_per_scene = gen_frames;
      sc.frame_stride = gen_stride;
      if (gen_test == 0) {
        const auto items = generate_synthetic(sc, table);
        export_dataset(gen_out, items, table);
        out << items.size() << " items written to " << gen_out << '\n';
      } else {
        export_dataset(fs::path(gen_out) / "train", generate_synthetic(sc, table), table);
        sc.first_scene = gen_scenes;
        sc.scenes = gen_test;
        export_dataset(fs::path(gen_out) / "test", generate_synthetic(sc, table), table);
        out << gen_scenes * gen_frames << " train and " << gen_test * gen_frames << " test items written to " << gen_out
            << '\n';
      }
      return kOk;
    }

    if (*tr) {
      if (tr_seed) tr_set.push_back("seed=" + std::to_string(*tr_seed));
      const RunConfig cfg = load_run_config(tr_config ? std::optional<fs::path>(*tr_config) : std::nullopt, tr_set);
      const Variant v = parse_variant(tr_variant);
      const auto data = open_data(tr_data, tr_split, cfg.train.prior_offset, table);
      const ModelSpec spec = cfg.model_spec(v, table.size());
      Model<float> model = build_model<float>(spec, cfg.train.seed);
      if (tr_init) {
        const LoadedCheckpoint src = load_checkpoint(*tr_init);
        FinetuneResult ft = finetune_from(src.model, spec, cfg.train.seed);
        out << "copied " << ft.copied.size() << " tensors:";
        for (const auto& n : ft.copied) out << ' ' << n;
        out << "\nfresh " << ft.fresh.size() << " tensors:";
        for (const auto& n : ft.fresh) out << ' ' << n;
        out << '\n';
        model = std::move(ft.model);
      }
      const TrainResult res = train(model, *data, cfg.train);
      save_checkpoint(model, res.state, tr_ckpt);
      std::ostringstream log;
      write_log_csv(log, res.log);
      write_text(tr_loss.empty() ? tr_ckpt + ".loss.csv" : tr_loss, log.str());
      out << "trained " << variant_name(v) << " for " << res.log.size() << " steps";
      if (!res.log.empty()) out << ", final loss " << res.log.back().loss;
      out << "; checkpoint " << tr_ckpt << '\n';
      return kOk;
    }

    if (*ev) {
      if (!fs::exists(ev_ckpt)) throw DataError("missing checkpoint " + ev_ckpt);
      const LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
      const auto data = open_data(ev_data, ev_split, ev_offset, table);
      if (ev_render) fs::create_directories(*ev_render);
      const Evaluation res = evaluate(ck.model, *data, table, [&](const LabeledFramePair& p, const IntTensor& pred) {
        if (!ev_render) return;
        const fs::path dir = *ev_render;
        const RgbImage input = tensor_to_image(p.current), gt = labels_to_image(p.labels, table),
                       pr = labels_to_image(pred, table);
        write_ppm(dir / ("item-" + p.meta.id + "-input.ppm"), input);
        write_ppm(dir / ("item-" + p.meta.id + "-gt.ppm"), gt);
        write_ppm(dir / ("item-" + p.meta.id + "-pred.ppm"), pr);
        write_ppm(dir / ("item-" + p.meta.id + "-panel.ppm"), side_by_side({input, gt, pr}));
      });
      std::ostringstream csv;
      write_metrics_csv(csv, res.report);
      if (!ev_csv.empty()) write_text(ev_csv, csv.str());
      out << csv.str();
      return kOk;
    }

    if (*pa) {
      auto report = [&](Variant v) {
        return build_model<float>(ModelSpec::for_variant(v, pa_classes), 0);
      };
      if (!pa_all) {
        const Model<float> m = report(parse_variant(pa_variant));
        char buf[160];
        for (const auto& row : param_report(m)) {
          std::snprintf(buf, sizeof buf, "%-24s %-20s %12zu\n", row.name.c_str(), shape_string(row.shape).c_str(),
                        row.count);
          out << buf;
        }
        out << "total " << count_params(m) << '\n';
        return kOk;
      }
      const std::size_t base = count_params(ModelSpec::for_variant(Variant::Baseline, pa_classes));
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-10s %12s %12s %8s\n", "variant", "params", "delta", "millions");
      out << buf;
      for (Variant v : {Variant::Baseline, Variant::StackedPrior, Variant::EmbeddingPrior, Variant::DecoderPrior}) {
        const std::size_t n = count_params(ModelSpec::for_variant(v, pa_classes));
        std::snprintf(buf, sizeof buf, "%-10s %12zu %12zu %8.1f\n", std::string(variant_name(v)).c_str(), n, n - base,
                      static_cast<double>(n) / 1e6);
        out << buf;
      }
      return kOk;
    }

    if (*gc) {
      const auto results = run_grad_suite(gc_op, gc_trials, gc_seed);
      bool ok = true;
      char buf[160];
      for (const auto& r : results) {
        const bool pass = r.worst.max_relative_error < 1e-4;
        ok = ok && pass;
        std::snprintf(buf, sizeof buf, "%-22s trials %3zu  max rel err %.3e  %s\n", r.name.c_str(), r.trials,
                      r.worst.max_relative_error, pass ? "ok" : "FAIL");
        out << buf;
      }
      return ok ? kOk : kNumerical;
    }

    if (*cmp) {
      const RunConfig cfg = load_run_config(cmp_config ? std::optional<fs::path>(*cmp_config) : std::nullopt, cmp_set);
      std::vector<Variant> variants;
      for (const auto& s : cmp_variants) variants.push_back(parse_variant(s));
      const auto train_set = open_data(fs::path(cmp_data) / "train", "train", cfg.train.prior_offset, table);
      const auto test_set = open_data(fs::path(cmp_data) / "test", "test", cfg.train.prior_offset, table);
      const auto rows = run_compare(cfg, *train_set, *test_set, table, variants, cmp_seeds,
                                    [&](const std::string& line) { err << line << '\n'; });
      std::ostringstream summary;
      write_summary_csv(summary, summarize_rows(rows, variants));
      write_text(cmp_out, summary.str());
      if (cmp_runs) {
        std::ostringstream runs;
        write_runs_csv(runs, rows);
        write_text(*cmp_runs, runs.str());
      }
      out << summary.str();
      return kOk;
    }
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    // Shape, range and argument errors raised by the library are caused by
    // the inputs given on the command line.
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace pfseg::cli
