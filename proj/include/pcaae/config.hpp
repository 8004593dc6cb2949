#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pcaae/errors.hpp"
#include "pcaae/surgery.hpp"
#include "pcaae/trainer.hpp"

namespace pcaae {

struct ConfigKey {
  const char* name;
  const char* fallback;
  const char* help;
};

/// "key = value" document; '#' starts a comment. Only the keys listed in
/// keys() are accepted.
class RunConfig {
 public:
  static const std::vector<ConfigKey>& keys() {
    static const std::vector<ConfigKey> k{
        // data generation
        {"count", "20000", "number of samples to generate"},
        {"size", "32", "image size s (pixels, >= 16)"},
        {"blur_sigma", "0.8", "Gaussian blur sigma (pixels)"},
        {"min_axis", "4", "minimum semi-axis a_min (pixels)"},
        // training
        {"data", "", "dataset file"},
        {"out_dir", "run", "output directory"},
        {"mode", "pcaae", "pcaae | pcawae | vanilla"},
        {"stages", "3", "latent size n"},
        {"lambda_cov", "1", "covariance loss weight"},
        {"lambda_adv", "0.1", "adversarial loss weight (pcawae)"},
        {"lr", "0.0002", "Adam learning rate"},
        {"beta1", "0.5", "Adam beta1"},
        {"beta2", "0.999", "Adam beta2"},
        {"adam_eps", "1e-8", "Adam epsilon"},
        {"batch_size", "64", "mini-batch size"},
        {"steps_per_stage", "8000", "optimizer steps per stage"},
        {"seed", "1", "master seed"},
        {"resume", "", "stage checkpoint to continue from"},
        // evaluation and traversal
        {"checkpoint", "", "model checkpoint"},
        {"component", "1", "latent component to sweep (1-based)"},
        {"range", "3", "sweep half-range r"},
        {"steps", "9", "number of grid cells"},
        {"out", "", "output file"},
        // surgery
        {"sigma_p", "0.3", "perturbation standard deviation"},
        {"samples", "20000", "training perturbation pool size"},
        {"eval_samples", "10240", "perturbations used for the PCC report"},
        {"base", "", "base point (comma-separated, empty = generator default)"},
        {"gen_seed", "2024", "generator mixing-matrix seed"},
        {"gen_dim", "8", "generator latent dimension d"},
        {"gen_size", "32", "generator image size"},
        {"gen_sharpness", "8", "rasterizer sharpness kappa"},
        {"gen_r_min", "4", "generator radius lower bound"},
        {"gen_r_max", "12", "generator radius upper bound"},
        {"gen_t_max", "0.5", "generator log-aspect bound"},
        {"gen_gains", "1,1,0.6", "generator readout gains (3 values)"},
    };
    return k;
  }

  static bool known(std::string_view key) {
    const auto& k = keys();
    return std::any_of(k.begin(), k.end(), [&](const ConfigKey& c) { return key == c.name; });
  }

  static RunConfig parse(std::string_view text, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + body + "'");
      const std::string key = trim(body.substr(0, eq));
      if (!known(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      cfg.values_[key] = trim(body.substr(eq + 1));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    for (const auto& k : keys())
      if (key == k.name) return k.fallback;
    throw ConfigError("unknown key '" + key + "'");
  }

  std::string require(const std::string& key) const {
    std::string v = get(key);
    if (v.empty()) throw ConfigError("missing required key '" + key + "'");
    return v;
  }

  double get_double(const std::string& key) const {
    const std::string v = get(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key) const {
    const std::string v = get(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
      throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
  }

  std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }

  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    const std::string v = get(key);
    if (trim(v).empty()) return out;
    std::istringstream in(v);
    std::string cell;
    while (std::getline(in, cell, ',')) {
      try {
        std::size_t used = 0;
        const std::string c = trim(cell);
        out.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects comma-separated numbers, got '" + v + "'");
      }
    }
    return out;
  }

  /// Every known key with its effective value, in declaration order.
  std::string resolved_text() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k.name << " = " << get(k.name) << '\n';
    return os.str();
  }

  void write_resolved(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    const auto path = (std::filesystem::path(dir) / "run.resolved.cfg").string();
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << resolved_text();
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.latent_max = get_size("stages");
    c.lambda_cov = get_double("lambda_cov");
    c.lambda_adv = get_double("lambda_adv");
    c.adam.lr = get_double("lr");
    c.adam.beta1 = get_double("beta1");
    c.adam.beta2 = get_double("beta2");
    c.adam.eps = get_double("adam_eps");
    c.batch_size = get_size("batch_size");
    c.steps_per_stage = get_size("steps_per_stage");
    c.seed = get_u64("seed");
    c.dataset_path = get("data");
    c.checkpoint_dir = get("out_dir");
    return c;
  }

  surgery::GeneratorOptions generator_options() const {
    surgery::GeneratorOptions g;
    g.latent_dim = get_size("gen_dim");
    g.image_size = get_size("gen_size");
    g.sharpness = get_double("gen_sharpness");
    g.r_min = get_double("gen_r_min");
    g.r_max = get_double("gen_r_max");
    g.t_max = get_double("gen_t_max");
    g.seed = get_u64("gen_seed");
    const auto gains = get_list("gen_gains");
    if (gains.size() != 3) throw ConfigError("key 'gen_gains' needs exactly 3 values");
    std::copy(gains.begin(), gains.end(), g.gains.begin());
    g.validate();
    return g;
  }

  surgery::SurgeryConfig surgery_config() const {
    surgery::SurgeryConfig c;
    c.base = get_list("base");
    c.sigma_p = get_double("sigma_p");
    c.latent_max = get_size("stages");
    c.lambda_cov = get_double("lambda_cov");
    c.samples = get_size("samples");
    c.batch_size = get_size("batch_size");
    c.steps_per_stage = get_size("steps_per_stage");
    c.adam.lr = get_double("lr");
    c.adam.beta1 = get_double("beta1");
    c.adam.beta2 = get_double("beta2");
    c.adam.eps = get_double("adam_eps");
    c.seed = get_u64("seed");
    c.checkpoint_dir = get("out_dir");
    return c;
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

  std::map<std::string, std::string> values_;
};

}  // namespace pcaae
