#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pfseg/models.hpp"
#include "pfseg/tensor.hpp"
#include "pfseg/train.hpp"

namespace pfseg {

/// Training and model settings shared by the train and compare commands.
/// Populated from a key=value file, then from command-line overrides.
struct RunConfig {
  TrainConfig train;
  std::size_t width_divisor = 1;
  std::size_t backbone_kernel = 7;
  std::size_t fusion_kernel = 3;
  bool fusion_bias = false;
  // How compare initialises prior variants: "scratch" or "baseline"
  // (fine-tune from the same-seed baseline run).
  std::string compare_init = "scratch";
  std::size_t finetune_steps_phase1 = 0;
  std::size_t finetune_steps_phase2 = 0;

  ModelSpec model_spec(Variant v, std::size_t num_classes = 11) const {
    ModelSpec s = ModelSpec::for_variant(v, num_classes).narrowed(width_divisor);
    s.backbone_kernel = backbone_kernel;
    s.fusion_kernel = fusion_kernel;
    s.fusion_bias = fusion_bias;
    return s;
  }

  void set(const std::string& key, const std::string& value);
  void validate() const {
    train.validate();
    if (width_divisor < 1) throw ConfigError("width_divisor must be >= 1");
    if (backbone_kernel % 2 == 0 || fusion_kernel % 2 == 0) throw ConfigError("kernel sizes must be odd");
    if (compare_init != "scratch" && compare_init != "baseline")
      throw ConfigError("compare_init must be scratch or baseline, got " + compare_init);
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError("config key " + key + ": cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <class U>
Setter number(U RunConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<U>(k, v); };
}
template <class U>
Setter train_number(U TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { c.train.*field = parse_number<U>(k, v); };
}

}  // namespace detail

/// Every accepted key. Anything else is rejected.
inline const std::map<std::string, detail::Setter>& config_schema() {
  using namespace detail;
  static const std::map<std::string, Setter> schema{
      {"lr", train_number(&TrainConfig::lr)},
      {"momentum", train_number(&TrainConfig::momentum)},
      {"weight_decay", train_number(&TrainConfig::weight_decay)},
      {"phase2_lr_scale", train_number(&TrainConfig::phase2_lr_scale)},
      {"batch_size", train_number(&TrainConfig::batch_size)},
      {"steps_phase1", train_number(&TrainConfig::steps_phase1)},
      {"steps_phase2", train_number(&TrainConfig::steps_phase2)},
      {"crop_height", train_number(&TrainConfig::crop_height)},
      {"crop_width", train_number(&TrainConfig::crop_width)},
      {"seed", train_number(&TrainConfig::seed)},
      {"eval_every", train_number(&TrainConfig::eval_every)},
      {"prior_offset", train_number(&TrainConfig::prior_offset)},
      {"width_divisor", number(&RunConfig::width_divisor)},
      {"backbone_kernel", number(&RunConfig::backbone_kernel)},
      {"fusion_kernel", number(&RunConfig::fusion_kernel)},
      {"fusion_bias",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.fusion_bias = parse_bool(k, v); }},
      {"compare_init", [](RunConfig& c, const std::string&, const std::string& v) { c.compare_init = v; }},
      {"finetune_steps_phase1", number(&RunConfig::finetune_steps_phase1)},
      {"finetune_steps_phase2", number(&RunConfig::finetune_steps_phase2)},
  };
  return schema;
}

inline void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& schema = config_schema();
  auto it = schema.find(key);
  if (it == schema.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

/// Splits "key=value"; surrounding whitespace is ignored.
inline std::pair<std::string, std::string> split_assignment(std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value, got '" + std::string(line) + "'");
  std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {std::move(key), std::move(value)};
}

/// Applies a config text on top of `cfg`. One assignment per line; '#'
/// starts a comment.
inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const std::string where = origin + ":" + std::to_string(n);
    auto [k, v] = split_assignment(line, where);
    try {
      cfg.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

/// File values first, then "key=value" overrides (later wins).
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  if (file) apply_config_file(cfg, *file);
  for (const auto& o : overrides) {
    auto [k, v] = split_assignment(o, "override");
    cfg.set(k, v);
  }
  cfg.validate();
  return cfg;
}

}  // namespace pfseg
