// SPDX-License-Identifier: Apache-2.0
#include "renerf/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace renerf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& default_settings() {
  static const std::vector<std::pair<std::string, std::string>> defaults{
      {"seed", "0"},
      {"rounds", "2"},
      {"ablation", "none"},
      {"factors", "seven_x"},
      {"targets", "none"},
      {"scene.name", "reference"},
      {"scene.gt_resolution", "96"},
      {"grid.resolution", "64"},
      {"grid.bbox_min", "-1 -1 -1"},
      {"grid.bbox_max", "1 1 1"},
      {"cameras.train_views", "6"},
      {"cameras.test_views", "6"},
      {"cameras.radius", "3.2"},
      {"cameras.elevation_deg", "25"},
      {"cameras.elevation_jitter_deg", "8"},
      {"cameras.width", "48"},
      {"cameras.height", "48"},
      {"cameras.focal", "44"},
      {"cameras.phase_deg", "0"},
      {"cameras.train_file", ""},
      {"cameras.test_file", ""},
      {"train.iterations", "2000"},
      {"train.batch_rays", "1024"},
      {"train.learning_rate_density", "0.05"},
      {"train.learning_rate_color", "0.01"},
      {"train.adam_beta1", "0.9"},
      {"train.adam_beta2", "0.99"},
      {"train.adam_eps", "1e-08"},
      {"train.n_samples", "128"},
      {"train.synthetic_stop_fraction", "0.27"},
      {"train.tv_weight", "0.0001"},
      {"train.background", "1 1 1"},
      {"uncertainty.lambda", "0.01"},
      {"uncertainty.max_pool_rays", "200000"},
      {"uncertainty.mask_rule", "quantile"},
      {"uncertainty.mask_value", "0.1"},
      {"render.n_samples", "128"},
  };
  return defaults;
}

Settings Settings::parse(std::string_view text) {
  Settings s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(t, fmt::format("line {}: malformed section header '{}'", line_no, t));
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(t, fmt::format("line {}: expected 'key = value', got '{}'", line_no, t));
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(t, fmt::format("line {}: empty key", line_no));
    s.values_[section.empty() ? key : section + "." + key] = trim(std::string_view(t).substr(eq + 1));
  }
  return s;
}

Settings Settings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", fmt::format("cannot read config file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  Settings s = parse(ss.str());
  s.base_dir_ = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return s;
}

void Settings::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError(std::string(assignment), fmt::format("--set expects key=value, got '{}'", assignment));
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

namespace {

class Reader {
 public:
  explicit Reader(const Settings& s) : settings_(s) {
    for (const auto& [k, v] : default_settings()) merged_[k] = v;
    for (const auto& [k, v] : s.values()) {
      if (!merged_.count(k)) throw ConfigError(k, fmt::format("unknown config key '{}'", k));
      merged_[k] = v;
    }
  }

  const std::string& str(const std::string& key) const { return merged_.at(key); }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError(key, fmt::format("config key '{}': expected a number, got '{}'", key, v));
  }

  long long integer(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    } catch (const std::exception&) {
    }
    throw ConfigError(key, fmt::format("config key '{}': expected an integer, got '{}'", key, v));
  }

  int positive(const std::string& key) const {
    const long long i = integer(key);
    if (i < 1) throw ConfigError(key, fmt::format("config key '{}' must be >= 1", key));
    return static_cast<int>(i);
  }

  Vec3 vec3(const std::string& key) const {
    std::istringstream in(str(key));
    Vec3 v;
    if (!(in >> v.x() >> v.y() >> v.z())) throw ConfigError(key, fmt::format("config key '{}': expected 3 numbers", key));
    std::string rest;
    if (in >> rest) throw ConfigError(key, fmt::format("config key '{}': expected 3 numbers", key));
    return v;
  }

  std::filesystem::path path(const std::string& key) const {
    std::filesystem::path p = str(key);
    return p.is_absolute() ? p : settings_.base_dir() / p;
  }

 private:
  const Settings& settings_;
  std::map<std::string, std::string> merged_;
};

FactorSource parse_factors(const std::string& value) {
  FactorSource f;
  if (value == "none") {
    f.kind = FactorSource::Kind::none;
  } else if (value.rfind("equal:", 0) == 0) {
    f.kind = FactorSource::Kind::equal;
    f.n = std::stoi(value.substr(6));
    (void)interpolation_factors(f.n);
  } else if (value.rfind("random:", 0) == 0) {
    f.kind = FactorSource::Kind::random;
    f.random_views = std::stoi(value.substr(7));
    if (f.random_views < 1) throw std::invalid_argument("random view count must be >= 1");
  } else {
    f.kind = FactorSource::Kind::preset;
    f.preset = parse_factor_preset(value);
  }
  return f;
}

}  // namespace

ExperimentConfig build_config(const Settings& settings) {
  const Reader r(settings);
  ExperimentConfig c;

  c.seed = static_cast<std::uint64_t>(r.integer("seed"));
  c.rounds = r.positive("rounds");
  try {
    c.ablation = parse_ablation(r.str("ablation"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("ablation", e.what());
  }
  try {
    c.factors = parse_factors(r.str("factors"));
  } catch (const std::exception& e) {
    throw ConfigError("factors", fmt::format("config key 'factors': {}", e.what()));
  }

  const std::string& scene = r.str("scene.name");
  if (scene == "reference")
    c.scene = reference_scene();
  else if (scene == "empty")
    c.scene = SceneSpec{};
  else
    throw ConfigError("scene.name", fmt::format("unknown scene '{}'", scene));
  const int gt = r.positive("scene.gt_resolution");
  c.gt_resolution = {gt, gt, gt};
  const int res = r.positive("grid.resolution");
  c.train_resolution = {res, res, res};
  c.bbox = BoundingBox{r.vec3("grid.bbox_min"), r.vec3("grid.bbox_max")};

  c.orbit.train_views = r.positive("cameras.train_views");
  c.orbit.test_views = r.positive("cameras.test_views");
  c.orbit.radius = r.real("cameras.radius");
  c.orbit.elevation_deg = r.real("cameras.elevation_deg");
  c.orbit.elevation_jitter_deg = r.real("cameras.elevation_jitter_deg");
  c.orbit.width = r.positive("cameras.width");
  c.orbit.height = r.positive("cameras.height");
  c.orbit.focal = r.real("cameras.focal");
  c.orbit.phase_deg = r.real("cameras.phase_deg");
  try {
    c.train_cameras = r.str("cameras.train_file").empty()
                          ? orbit_cameras(c.orbit, c.orbit.train_views, c.orbit.phase_deg)
                          : read_cameras(r.path("cameras.train_file"));
  } catch (const std::exception& e) {
    throw ConfigError("cameras.train_file", e.what());
  }
  try {
    c.test_cameras = r.str("cameras.test_file").empty()
                         ? orbit_cameras(c.orbit, c.orbit.test_views, c.orbit.phase_deg + 180.0 / c.orbit.train_views)
                         : read_cameras(r.path("cameras.test_file"));
  } catch (const std::exception& e) {
    throw ConfigError("cameras.test_file", e.what());
  }

  const std::string& targets = r.str("targets");
  if (targets != "none") {
    if (targets.rfind("test:", 0) != 0) throw ConfigError("targets", "targets must be 'none' or 'test:i,j,...'");
    std::istringstream in(targets.substr(5));
    for (std::string tok; std::getline(in, tok, ',');) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(tok);
      } catch (const std::exception&) {
        throw ConfigError("targets", fmt::format("bad test camera index '{}'", tok));
      }
      if (idx >= c.test_cameras.size()) throw ConfigError("targets", fmt::format("test camera {} out of range", idx));
      c.target_cameras.push_back(c.test_cameras[idx]);
    }
  }

  c.train.iterations = r.positive("train.iterations");
  c.train.batch_rays = r.positive("train.batch_rays");
  c.train.learning_rate_density = r.real("train.learning_rate_density");
  c.train.learning_rate_color = r.real("train.learning_rate_color");
  c.train.adam_beta1 = r.real("train.adam_beta1");
  c.train.adam_beta2 = r.real("train.adam_beta2");
  c.train.adam_eps = r.real("train.adam_eps");
  c.train.n_samples = r.positive("train.n_samples");
  c.train.synthetic_stop_fraction = r.real("train.synthetic_stop_fraction");
  c.train.tv_weight = r.real("train.tv_weight");
  c.train.background = r.vec3("train.background");
  c.scene.background = c.train.background;
  if (!(c.train.synthetic_stop_fraction >= 0.0 && c.train.synthetic_stop_fraction <= 1.0))
    throw ConfigError("train.synthetic_stop_fraction", "train.synthetic_stop_fraction must lie in [0,1]");
  if (!(c.train.tv_weight >= 0.0)) throw ConfigError("train.tv_weight", "train.tv_weight must be >= 0");

  c.uncertainty.lambda = r.real("uncertainty.lambda");
  if (!(c.uncertainty.lambda > 0.0)) throw ConfigError("uncertainty.lambda", "uncertainty.lambda must be positive");
  c.uncertainty.max_pool_rays = static_cast<std::size_t>(r.positive("uncertainty.max_pool_rays"));
  const std::string& rule = r.str("uncertainty.mask_rule");
  const double value = r.real("uncertainty.mask_value");
  if (rule == "quantile") {
    if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("uncertainty.mask_value", "quantile must lie in [0,1]");
    c.mask_rule = MaskRule::quantile(value);
  } else if (rule == "absolute") {
    c.mask_rule = MaskRule::absolute(value);
  } else {
    throw ConfigError("uncertainty.mask_rule", fmt::format("unknown mask rule '{}'", rule));
  }
  c.render_samples = r.positive("render.n_samples");

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config", e.what());
  }
  return c;
}

std::string format_config(const Settings& settings) {
  std::map<std::string, std::string> merged;
  for (const auto& [k, v] : default_settings()) merged[k] = v;
  for (const auto& [k, v] : settings.values()) merged[k] = v;

  std::string out;
  std::string current;
  // Top-level keys first, then sections in default order.
  for (const auto& [k, v] : default_settings()) {
    if (k.find('.') != std::string::npos) continue;
    out += fmt::format("{} = {}\n", k, merged[k]);
  }
  for (const auto& [k, v] : default_settings()) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string section = k.substr(0, dot);
    if (section != current) {
      out += fmt::format("\n[{}]\n", section);
      current = section;
    }
    out += fmt::format("{} = {}\n", k.substr(dot + 1), merged[k]);
  }
  return out;
}

}  // namespace renerf
