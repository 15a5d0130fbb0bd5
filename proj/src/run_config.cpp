#include "dnrl/run_config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <cmath>
#include <type_traits>

namespace dnrl {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string s = "invalid config";
  for (const auto& p : problems) s += "\n  " + p;
  return s;
}

// Walks one JSON object, either filling C++ fields from it (read) or
// serializing them into it (write). The field list is written once per
// struct in the visit_* functions below.
class Walker {
 public:
  Walker(const nlohmann::json* in, nlohmann::json* out, std::string path, std::vector<std::string>* problems)
      : in_(in), out_(out), path_(std::move(path)), problems_(problems) {
    if (in_ != nullptr && !in_->is_object()) {
      fail("", "expected an object");
      in_ = nullptr;
      bad_ = true;
    }
  }

  bool reading() const { return out_ == nullptr; }

  template <typename T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    if (!reading()) {
      (*out_)[key] = encode(value);
      return;
    }
    if (in_ == nullptr || !in_->contains(key)) return;
    decode((*in_)[key], value, key);
  }

  template <typename E>
  void enumeration(const char* key, E& value, const char* (*to_str)(E), E (*from_str)(const std::string&)) {
    seen_.insert(key);
    if (!reading()) {
      (*out_)[key] = to_str(value);
      return;
    }
    if (in_ == nullptr || !in_->contains(key)) return;
    const auto& v = (*in_)[key];
    if (!v.is_string()) return fail(key, "expected a string");
    try {
      value = from_str(v.get<std::string>());
    } catch (const std::invalid_argument& e) {
      fail(key, e.what());
    }
  }

  /// Nested object handled by `fn(Walker&)`.
  template <typename Fn>
  void object(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (!reading()) {
      nlohmann::json child = nlohmann::json::object();
      Walker w(nullptr, &child, sub(key), problems_);
      fn(w);
      (*out_)[key] = std::move(child);
      return;
    }
    const nlohmann::json* child = (in_ != nullptr && in_->contains(key)) ? &(*in_)[key] : nullptr;
    Walker w(child, nullptr, sub(key), problems_);
    fn(w);
    w.finish();
  }

  /// Reports keys that no field claimed.
  void finish() {
    if (!reading() || in_ == nullptr || bad_) return;
    for (auto it = in_->begin(); it != in_->end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "unknown key");
    }
  }

  void fail(const std::string& key, const std::string& msg) {
    const std::string where = key.empty() ? path_ : sub(key);
    problems_->push_back((where.empty() ? std::string("config") : where) + ": " + msg);
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <typename T>
  static nlohmann::json encode(const T& v) {
    return v;
  }

  template <typename T>
  void decode(const nlohmann::json& v, T& value, const char* key) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return fail(key, "expected true or false");
      value = v.get<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return fail(key, "expected a number");
      value = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) return fail(key, "integer out of range");
        value = static_cast<T>(u);
      } else if (v.is_number_integer()) {
        const auto s = v.get<std::int64_t>();
        if constexpr (std::is_unsigned_v<T>) {
          if (s < 0) return fail(key, "expected a non-negative integer");
        } else {
          if (s < std::numeric_limits<T>::min() || s > std::numeric_limits<T>::max())
            return fail(key, "integer out of range");
        }
        value = static_cast<T>(s);
      } else {
        return fail(key, "expected an integer");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return fail(key, "expected a string");
      value = v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

  const nlohmann::json* in_;
  nlohmann::json* out_;
  std::string path_;
  std::vector<std::string>* problems_;
  std::set<std::string> seen_;
  bool bad_ = false;
};

const char* spawn_to_string(DynamicSpawn s) { return s == DynamicSpawn::Edge ? "edge" : "interior"; }
DynamicSpawn spawn_from_string(const std::string& s) {
  if (s == "edge") return DynamicSpawn::Edge;
  if (s == "interior") return DynamicSpawn::Interior;
  throw std::invalid_argument("unknown spawn mode '" + s + "' (expected edge or interior)");
}

void visit_sim(Walker& w, SimConfig& s) {
  w("dt", s.dt);
  w("max_accel", s.max_accel);
  w("quad_radius", s.quad_radius);
  w("step_limit", s.step_limit);
  w("altitude", s.altitude);
  w("side_min", s.side_min);
  w("side_max", s.side_max);
  w("static_count_min", s.static_count_min);
  w("static_count_max", s.static_count_max);
  w("static_half_min", s.static_half_min);
  w("static_half_max", s.static_half_max);
  w("goal_clearance", s.goal_clearance);
  w("start_clearance", s.start_clearance);
  w("min_start_goal_distance", s.min_start_goal_distance);
  w("dynamic_count", s.dynamic_count);
  w("dynamic_radius_min", s.dynamic_radius_min);
  w("dynamic_radius_max", s.dynamic_radius_max);
  w("dynamic_speed_min", s.dynamic_speed_min);
  w("dynamic_speed_max", s.dynamic_speed_max);
  w("aim_probability", s.aim_probability);
  w.enumeration("dynamic_spawn", s.dynamic_spawn, &spawn_to_string, &spawn_from_string);
  w("retarget_period", s.retarget_period);
  w("lidar_wedge", s.lidar_wedge);
  w("lidar_range", s.lidar_range);
  w("ray_spacing", s.ray_spacing);
  w("walls_in_proximity", s.walls_in_proximity);
}

void visit_encoder(Walker& w, EncoderConfig& e) {
  w("sectors", e.sectors);
  w("max_range", e.max_range);
  w("altitude_band", e.altitude_band);
  w("window_frames", e.window_frames);
  w("history", e.history);
  w("tick_duration", e.tick_duration);
}

void visit_reward(Walker& w, RewardWeights& r, DynamicRewardMode& mode) {
  w("base", r.base);
  w("k_accel", r.k_accel);
  w("k_velocity", r.k_velocity);
  w("k_goal", r.k_goal);
  w("k_progress", r.k_progress);
  w("k_jerk", r.k_jerk);
  w("k_obstacle", r.k_obstacle);
  w("k_hover", r.k_hover);
  w("collision_penalty", r.collision_penalty);
  w("safety_distance", r.safety_distance);
  w("hover_radius", r.hover_radius);
  w("v_max", r.v_max);
  w("v_min", r.v_min);
  w.enumeration("dynamic_mode", mode, static_cast<const char* (*)(DynamicRewardMode)>(&to_string),
                &reward_mode_from_string);
}

void visit_network(Walker& w, NetConfig& n) {
  w("map_rows", n.map_rows);
  w("map_cols", n.map_cols);
  w("conv1_channels", n.conv1_channels);
  w("conv2_channels", n.conv2_channels);
  w("feature_dim", n.feature_dim);
  w("hidden1", n.hidden1);
  w("hidden2", n.hidden2);
  w("init_log_std", n.init_log_std);
}

void visit_train(Walker& w, TrainConfig& t) {
  w("gamma", t.gamma);
  w("lambda", t.lambda);
  w("clip", t.clip);
  w("epochs", t.epochs);
  w("minibatch", t.minibatch);
  w("learning_rate", t.learning_rate);
  w("entropy_coef", t.entropy_coef);
  w("value_coef", t.value_coef);
  w("max_grad_norm", t.max_grad_norm);
  w("horizon", t.horizon);
  w("num_envs", t.num_envs);
  w("total_steps", t.total_steps);
  w("normalize_advantages", t.normalize_advantages);
  w("adam_beta1", t.adam_beta1);
  w("adam_beta2", t.adam_beta2);
  w("adam_eps", t.adam_eps);
  w("eval_interval", t.eval_interval);
  w("eval_episodes", t.eval_episodes);
  w("eval_step_limit", t.eval_step_limit);
  w("checkpoint_interval", t.checkpoint_interval);
}

void visit_scenario(Walker& w, ScenarioSpec& s) {
  w("name", s.name);
  w("side", s.side);
  w("dynamic_count", s.dynamic_count);
  w("static_count", s.static_count);
  w("speed_min", s.speed_min);
  w("speed_max", s.speed_max);
  w("retarget_period", s.retarget_period);
  w("trials", s.trials);
  w("seed", s.seed);
  w("step_limit", s.step_limit);
  w("min_start_goal", s.min_start_goal);
  w("clearance", s.clearance);
}

std::vector<ScenarioSpec> read_suite(const nlohmann::json& j, const std::string& path,
                                     std::vector<std::string>& problems) {
  std::vector<ScenarioSpec> suite;
  if (!j.is_array()) {
    problems.push_back(path + ": expected an array of scenarios");
    return suite;
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    ScenarioSpec s;
    Walker w(&j[i], nullptr, path + "[" + std::to_string(i) + "]", &problems);
    visit_scenario(w, s);
    w.finish();
    if (s.name.empty()) w.fail("name", "required");
    suite.push_back(std::move(s));
  }
  return suite;
}

// Runs a section validator and records its message under the section name.
template <typename Fn>
void check(std::vector<std::string>& problems, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    problems.emplace_back(e.what());
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

EnvConfig RunConfig::env() const {
  EnvConfig e;
  e.sim = sim;
  e.encoder = encoder;
  e.reward = reward;
  e.reward_mode = reward_mode;
  e.input = input;
  return e;
}

NetConfig RunConfig::net() const {
  NetConfig n = network;
  n.max_accel = sim.max_accel;
  return n;
}

TrainConfig RunConfig::trainer() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  check(problems, [&] { sim.validate(); });
  check(problems, [&] { encoder.validate(); });
  check(problems, [&] { reward.validate(); });
  check(problems, [&] { net().validate(); });
  check(problems, [&] { train.validate(); });
  for (std::size_t i = 0; i < suite.size(); ++i) {
    check(problems, [&] {
      try {
        suite[i].validate();
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("suite[" + std::to_string(i) + "]: " + e.what());
      }
    });
  }
  if (network.map_rows != encoder.sectors) {
    problems.push_back("network.map_rows: " + std::to_string(network.map_rows) + " does not match encoder.sectors " +
                       std::to_string(encoder.sectors));
  }
  if (network.map_cols != encoder.history) {
    problems.push_back("network.map_cols: " + std::to_string(network.map_cols) + " does not match encoder.history " +
                       std::to_string(encoder.history));
  }
  if (std::abs(encoder.tick_duration - sim.dt) > 1e-12) {
    problems.push_back("encoder.tick_duration: must equal sim.dt");
  }
  if (!problems.empty()) throw ConfigError(problems);
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  std::vector<std::string> problems;
  Walker w(&j, nullptr, "", &problems);
  w.object("sim", [&](Walker& s) { visit_sim(s, c.sim); });
  w.object("encoder", [&](Walker& s) { visit_encoder(s, c.encoder); });
  w.object("reward", [&](Walker& s) { visit_reward(s, c.reward, c.reward_mode); });
  w.enumeration("input", c.input, static_cast<const char* (*)(InputMode)>(&to_string), &input_mode_from_string);
  w.object("network", [&](Walker& s) { visit_network(s, c.network); });
  w.object("train", [&](Walker& s) { visit_train(s, c.train); });
  w("out_dir", c.out_dir);
  w("seed", c.seed);
  // the suite is an array, handled outside the walker
  if (j.is_object() && j.contains("suite")) c.suite = read_suite(j["suite"], "suite", problems);
  if (j.is_object()) {
    static const std::set<std::string> known = {"sim",     "encoder", "reward", "input", "network",
                                                "train",   "out_dir", "seed",   "suite"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) problems.push_back(it.key() + ": unknown key");
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  c.validate();
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::vector<std::string> problems;
  nlohmann::json j = nlohmann::json::object();
  Walker w(nullptr, &j, "", &problems);
  w.object("sim", [&](Walker& s) { visit_sim(s, c.sim); });
  w.object("encoder", [&](Walker& s) { visit_encoder(s, c.encoder); });
  w.object("reward", [&](Walker& s) { visit_reward(s, c.reward, c.reward_mode); });
  w.enumeration("input", c.input, static_cast<const char* (*)(InputMode)>(&to_string), &input_mode_from_string);
  w.object("network", [&](Walker& s) { visit_network(s, c.network); });
  w.object("train", [&](Walker& s) { visit_train(s, c.train); });
  w("out_dir", c.out_dir);
  w("seed", c.seed);
  j["suite"] = suite_to_json(c.suite);
  return j;
}

std::vector<ScenarioSpec> suite_from_json(const nlohmann::json& j, const std::string& path) {
  std::vector<std::string> problems;
  auto suite = read_suite(j, path, problems);
  for (std::size_t i = 0; i < suite.size() && problems.empty(); ++i) {
    check(problems, [&] { suite[i].validate(); });
  }
  if (!problems.empty()) throw ConfigError(problems);
  return suite;
}

nlohmann::json suite_to_json(const std::vector<ScenarioSpec>& suite) {
  nlohmann::json arr = nlohmann::json::array();
  std::vector<std::string> problems;
  for (auto s : suite) {
    nlohmann::json o = nlohmann::json::object();
    Walker w(nullptr, &o, "", &problems);
    visit_scenario(w, s);
    arr.push_back(std::move(o));
  }
  return arr;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open config file"});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return run_config_from_json(j);
}

}  // namespace dnrl
