#pragma once

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlv/trainer.hpp"

namespace dlv {

// Flat key = value configuration. Precedence: flags > config file > defaults.
// "auto" resolves from the scale (guidance s^2, invariance s^2/4, patch 64 or 96).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

inline const std::vector<ConfigKey>& train_config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"scale", "2", "rescaling factor (2 or 4)"},
      {"c_w", "2", "downscaling-latent channels"},
      {"blocks", "8", "InvBlocks per Haar stage"},
      {"growth", "16", "DenseBlock growth channels"},
      {"clamp", "1", "bound on the coupling log-scale"},
      {"w_mode", "gaussian", "w sampling: zero or gaussian"},
      {"zhat_mode", "zero", "z_hat sampling: zero or gaussian"},
      {"quantize", "true", "round the LR to 8 bits during training and eval"},
      {"batch", "4", "patches per step"},
      {"patch", "auto", "HR patch side (auto: 64 at x2, 96 at x4)"},
      {"iterations", "5000", "training steps"},
      {"lr", "2e-4", "base learning rate"},
      {"halving_period", "1000", "steps between learning-rate halvings"},
      {"lambda_r", "1", "reconstruction weight"},
      {"lambda_g", "auto", "guidance weight (auto: s^2)"},
      {"lambda_d", "0.01", "distribution weight"},
      {"lambda_i", "auto", "LR-invariance weight (auto: s^2/4, 0 disables)"},
      {"m", "3", "w samples for the invariance term"},
      {"eval_every", "1000", "steps between evaluations (0: final only)"},
      {"checkpoint_every", "1000", "steps between checkpoints (0: final only)"},
      {"train_dir", "", "directory of training PNGs"},
      {"eval_dir", "", "directory of held-out PNGs"},
      {"out_dir", "run", "output directory for logs and checkpoints"},
  };
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Parses "key = value" lines; '#' starts a comment. Unknown keys are errors.
inline std::map<std::string, std::string> parse_config_text(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    bool known = false;
    for (const auto& k : train_config_schema()) known = known || k.name == key;
    if (!known) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_config_text(in);
}

/// Every schema key resolved to a string: `flags` win over `file`, which wins
/// over the schema default.
inline std::map<std::string, std::string> merge_config(const std::map<std::string, std::string>& flags,
                                                       const std::map<std::string, std::string>& file) {
  std::map<std::string, std::string> out;
  for (const auto& k : train_config_schema()) {
    if (auto it = flags.find(k.name); it != flags.end()) {
      out[k.name] = it->second;
    } else if (auto jt = file.find(k.name); jt != file.end()) {
      out[k.name] = jt->second;
    } else {
      out[k.name] = k.default_value;
    }
  }
  return out;
}

namespace detail {

template <typename F>
auto parse_value(const std::string& key, const std::string& value, F f) {
  try {
    std::size_t used = 0;
    auto v = f(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

inline TrainConfig to_train_config(const std::map<std::string, std::string>& kv, std::uint64_t seed) {
  auto str = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("config lacks key '" + k + "'");
    return it->second;
  };
  auto as_int = [&](const std::string& k) {
    return detail::parse_value(k, str(k), [](const std::string& s, std::size_t* u) { return std::stoi(s, u); });
  };
  auto as_long = [&](const std::string& k) {
    return detail::parse_value(k, str(k), [](const std::string& s, std::size_t* u) { return std::stol(s, u); });
  };
  auto as_double = [&](const std::string& k) {
    return detail::parse_value(k, str(k), [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
  };
  TrainConfig c;
  c.model.scale = as_int("scale");
  c.model.c_w = as_int("c_w");
  c.model.blocks = as_int("blocks");
  c.model.growth = as_int("growth");
  c.model.clamp = as_double("clamp");
  try {
    c.latents.w_mode = parse_latent_mode(str("w_mode"));
    c.latents.zhat_mode = parse_latent_mode(str("zhat_mode"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.latents.quantize = detail::parse_bool("quantize", str("quantize"));
  c.batch = as_int("batch");
  c.patch = str("patch") == "auto" ? (c.model.scale == 4 ? 96 : 64) : as_int("patch");
  c.iterations = as_long("iterations");
  c.learning_rate = as_double("lr");
  c.halving_period = as_long("halving_period");
  c.weights = LossWeights::defaults(c.model.scale);
  c.weights.recon = as_double("lambda_r");
  if (str("lambda_g") != "auto") c.weights.guidance = as_double("lambda_g");
  c.weights.distribution = as_double("lambda_d");
  if (str("lambda_i") != "auto") c.weights.invariance = as_double("lambda_i");
  c.weights.m = as_int("m");
  c.eval_every = as_long("eval_every");
  c.checkpoint_every = as_long("checkpoint_every");
  c.train_dir = str("train_dir");
  c.eval_dir = str("eval_dir");
  c.out_dir = str("out_dir");
  c.seed = seed;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace dlv
