#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dnrl/eval_bench.hpp"

using namespace dnrl;

namespace {

class ZeroController : public Controller {
 public:
  std::string name() const override { return "zero"; }
  bool needs_observation() const override { return false; }
  Vec2 act(const NavEnv&) override { return {0.0, 0.0}; }
};

// Constant full acceleration along the initial start->goal line.
class StraightController : public Controller {
 public:
  std::string name() const override { return "straight"; }
  bool needs_observation() const override { return false; }
  void reset() override { dir_ = {}; }
  Vec2 act(const NavEnv& env) override {
    if (dir_.squared_norm() == 0.0) dir_ = normalized(env.state().arena.goal - env.state().quad.position);
    return dir_ * 2.0;
  }

 private:
  Vec2 dir_;
};

ScenarioSpec empty_scenario() {
  ScenarioSpec s;
  s.name = "empty";
  s.trials = 5;
  s.seed = 3;
  return s;
}

TrialResult synthetic_trial(bool success, double length, double time, Vec2 start, Vec2 end) {
  TrialResult t;
  t.success = success;
  t.path_length = length;
  t.flight_time = time;
  t.start = start;
  t.end = end;
  t.steps = static_cast<int>(std::lround(time / 0.05));
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("eval_bench") {

TEST_CASE("path ratio identities") {
  CHECK(path_ratio(7.0, {1, 1}, {8, 1}) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(path_ratio(0.0, {2, 3}, {2, 3}) == 10.0);

  // semicircle of radius 2 between its endpoints
  std::vector<Vec2> arc;
  const int n = 20000;
  for (int i = 0; i <= n; ++i) {
    const double t = kPi * i / n;
    arc.push_back({2.0 * std::cos(t), 2.0 * std::sin(t)});
  }
  const double l = polyline_length(arc);
  CHECK(std::abs(path_ratio(l, arc.front(), arc.back()) - 5.0 * kPi) < 1e-6);
  CHECK(std::abs(path_ratio(l, arc.front(), arc.back()) - 15.708) < 1e-3);
}

TEST_CASE("compute_metrics") {
  std::vector<TrialResult> trials;
  for (int i = 0; i < 7; ++i) trials.push_back(synthetic_trial(true, 2.0 * (3.0 + i), 3.0 + i, {0, 0}, {2.0 * (3.0 + i), 0}));
  for (int i = 0; i < 3; ++i) trials.push_back(synthetic_trial(false, 50.0, 5.0, {0, 0}, {1, 0}));
  const BenchResult b = compute_metrics(trials);
  CHECK(b.eta == 70.0);
  CHECK(b.successes == 7);
  REQUIRE(b.va.has_value());
  CHECK(std::abs(*b.va - 2.0) < 1e-9);
  REQUIRE(b.rl.has_value());
  CHECK(std::abs(*b.rl - 10.0) < 1e-9);
  CHECK_FALSE(b.tp_ms.has_value());

  const BenchResult none = compute_metrics({synthetic_trial(false, 5, 1, {0, 0}, {1, 0})});
  CHECK(none.eta == 0.0);
  CHECK_FALSE(none.va.has_value());
  CHECK_FALSE(none.rl.has_value());
  const std::string csv = report_csv({none});
  CHECK(csv.find(",/,/,/,") != std::string::npos);

  CHECK_THROWS_AS(compute_metrics({}), std::invalid_argument);
}

TEST_CASE("timing metric combines encode and inference") {
  TrialResult t = synthetic_trial(true, 1, 1, {0, 0}, {1, 0});
  t.encode_seconds = {0.001, 0.003};
  t.infer_seconds = {0.002, 0.002};
  const BenchResult b = compute_metrics({t});
  REQUIRE(b.tp_ms.has_value());
  CHECK(*b.tp_ms == doctest::Approx(4.0));
  CHECK(*b.encode_ms == doctest::Approx(2.0));
  CHECK(*b.infer_ms == doctest::Approx(2.0));
}

TEST_CASE("scripted trials") {
  EnvConfig env;
  const ScenarioSpec spec = empty_scenario();

  ZeroController zero;
  for (int k = 0; k < 3; ++k) {
    const TrialResult r = run_trial(zero, spec, k, env, {false, true});
    CHECK_FALSE(r.success);
    CHECK_FALSE(r.collided);
    CHECK(r.steps == spec.step_limit);
    CHECK((r.goal - r.start).norm() >= spec.min_start_goal);
  }

  StraightController straight;
  for (int k = 0; k < spec.trials; ++k) {
    const TrialResult r = run_trial(straight, spec, k, env, {false, true});
    REQUIRE(r.success);
    CHECK(std::abs(path_ratio(r.path_length, r.start, r.end) - 10.0) < 1e-6);
    CHECK(log_reached_goal(r.log, r.goal, env.reward.hover_radius));
    CHECK(r.log.size() == static_cast<std::size_t>(r.steps) + 1);
  }
}

TEST_CASE("constant-speed trajectory gives its speed") {
  EnvConfig env;
  const ScenarioSpec spec = empty_scenario();
  // a coasting quadrotor: every controller action is zero, so give it speed
  // through the first action only
  class Kick : public Controller {
   public:
    std::string name() const override { return "kick"; }
    bool needs_observation() const override { return false; }
    void reset() override { first_ = true; }
    Vec2 act(const NavEnv& e) override {
      if (!first_) return {0, 0};
      first_ = false;
      // 6 m/s^2 for one tick: 0.3 m/s, then constant
      return normalized(e.state().arena.goal - e.state().quad.position) * 6.0;
    }

   private:
    bool first_ = true;
  } kick;
  const TrialResult r = run_trial(kick, spec, 0, env, {false, true});
  REQUIRE(r.steps > 10);
  // drop the acceleration tick: the remainder moves at exactly 0.3 m/s
  const double coast_len = r.path_length - (r.log[1].position - r.log[0].position).norm();
  const double coast_time = (r.steps - 1) * env.sim.dt;
  TrialResult coast = synthetic_trial(true, coast_len, coast_time, r.start, r.end);
  CHECK(std::abs(*compute_metrics({coast}).va - 0.3) < 1e-9);
}

TEST_CASE("goal at the start is an immediate success") {
  EnvConfig env;
  NavEnv e(env);
  Arena a;
  a.side = 20.0;
  a.start = a.goal = {10, 10};
  e.reset(a, 1);
  CHECK(e.goal_reached());
  CHECK(path_ratio(0.0, a.start, a.start) == 10.0);
}

TEST_CASE("baseline geometry") {
  SimConfig sim;
  RewardWeights w;
  WorldState s;
  s.arena.side = 20.0;
  s.quad.position = {10, 10};
  s.arena.goal = {15, 12};
  const Vec2 a = baseline_action(s, sim, w);
  const Vec2 g = normalized(s.arena.goal - s.quad.position);
  CHECK(std::abs(cross(a, g)) < 1e-12);
  CHECK(dot(a, g) > 0.0);
  CHECK(a.norm() <= sim.max_accel + 1e-12);

  s.arena.goal = {16, 10};
  s.arena.statics.push_back({{11.2, 10.0}, {0.3, 0.3}, 0.0});
  const Vec2 b = baseline_action(s, sim, w);
  CHECK(std::abs(b.y) > 1e-3);

  // deterministic
  CHECK(baseline_action(s, sim, w) == b);
}

TEST_CASE("baseline dodges a head-on obstacle") {
  EnvConfig env;
  env.sim.dynamic_spawn = DynamicSpawn::Interior;
  env.sim.retarget_period = 0.0;
  env.sim.aim_probability = 0.0;
  env.sim.dynamic_count = 0;
  env.sim.step_limit = 600;
  int avoided = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Arena a;
    a.side = 20.0;
    a.start = {3.0, 10.0 + rng.uniform(-0.2, 0.2)};
    a.goal = {17.0, a.start.y};
    a.dynamics.push_back({{16.0, a.start.y + rng.uniform(-0.1, 0.1)}, rng.uniform(0.05, 0.5), {-4.0, 0.0}});
    NavEnv e(env);
    e.set_build_observations(false);
    e.reset(a, seed);
    BaselineController baseline;
    bool collided = false;
    while (!e.goal_reached()) {
      const EnvStep st = e.step(baseline.act(e));
      if (st.collided) collided = true;
      if (st.done()) break;
    }
    if (!collided && e.goal_reached()) ++avoided;
  }
  CHECK(avoided >= 8);
}

TEST_CASE("benchmark accounting and determinism") {
  EnvConfig env;
  BaselineController baseline;
  const auto suite = standard_suite(10, 0);
  REQUIRE(suite.size() == 5);
  const BenchReport r = run_benchmark({&baseline}, suite, env, {}, {false, true});
  REQUIRE(r.rows.size() == 5);
  int trials = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].policy == "baseline");
    CHECK(r.rows[i].scenario == suite[i].name);
    trials += static_cast<int>(r.trials[i].size());
    int from_logs = 0;
    for (const auto& t : r.trials[i]) {
      from_logs += log_reached_goal(t.log, t.goal, env.reward.hover_radius) ? 1 : 0;
    }
    CHECK(100.0 * from_logs / static_cast<double>(r.trials[i].size()) == r.rows[i].eta);
  }
  CHECK(trials == 50);

  const auto dir_a = std::filesystem::temp_directory_path() / "dnrl_unit_bench_a";
  const auto dir_b = std::filesystem::temp_directory_path() / "dnrl_unit_bench_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  const std::vector<ScenarioSpec> small{suite[0]};
  run_benchmark({&baseline}, {small}, env, dir_a, {false, true});
  run_benchmark({&baseline}, {small}, env, dir_b, {false, true});
  CHECK(slurp(dir_a / "report.csv") == slurp(dir_b / "report.csv"));
  CHECK(slurp(dir_a / "report.txt") == slurp(dir_b / "report.txt"));
  CHECK(slurp(dir_a / "report.csv").rfind("scenario,policy,eta,tp_ms,va,rl,trials,seed\n", 0) == 0);
  const auto traj = dir_a / "trajectories" / "10_10";
  CHECK(std::filesystem::exists(traj / "baseline_trial0.csv"));
  CHECK(std::filesystem::exists(traj / "baseline_trial0_arena.json"));
  const std::string svg = slurp(traj / "baseline_trial0.svg");
  CHECK(svg.find("id=\"path\"") != std::string::npos);
  CHECK(svg.find("id=\"goal\"") != std::string::npos);
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("trial arenas do not depend on the controller") {
  EnvConfig env;
  ZeroController zero;
  StraightController straight;
  const ScenarioSpec spec = standard_suite(2, 5)[2];
  const TrialResult a = run_trial(zero, spec, 1, env, {false, false});
  const TrialResult b = run_trial(straight, spec, 1, env, {false, false});
  CHECK(a.start == b.start);
  CHECK(a.goal == b.goal);
  CHECK(trial_seed(spec, 0) != trial_seed(standard_suite(2, 5)[1], 0));
}

TEST_CASE("collision svg and snapshot") {
  Arena a;
  a.side = 10;
  a.goal = {8, 8};
  std::vector<EpisodeLogRow> log(3);
  log[0].position = {1, 1};
  log[1].position = {2, 1};
  log[2].position = {3, 1};
  log[2].collided = true;
  const std::string svg = render_trajectory_svg(a, log, 5.0, 1.0);
  CHECK(svg.find("id=\"collision\"") != std::string::npos);
  const nlohmann::json snap = trial_snapshot_json(a, 42);
  CHECK(snap.at("tick") == 42);
  CHECK(arena_to_json(arena_from_json(snap.at("arena"))) == arena_to_json(a));
}

TEST_CASE("ablation plumbing") {
  const ScenarioSpec s = speed_scenario(standard_suite()[2], 2.0);
  CHECK(s.speed_min == 0.0);
  CHECK(s.speed_max == 4.0);
  CHECK(s.name != standard_suite()[2].name);
  EnvConfig base;
  CHECK(ablation_variant(base, AblationKind::Encoding, true).input == InputMode::RawLidar);
  CHECK(ablation_variant(base, AblationKind::Encoding, false).input == InputMode::EncodedMap);
  CHECK(ablation_variant(base, AblationKind::DynamicReward, true).reward_mode == DynamicRewardMode::StaticFormula);
  CHECK(ablation_variant(base, AblationKind::DynamicReward, false).reward_mode == DynamicRewardMode::Dilated);
  CHECK(ablation_kind_from_string(to_string(AblationKind::DynamicReward)) == AblationKind::DynamicReward);
  CHECK(AblationConfig{}.speeds == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("paired ablation runs share a step grid") {
  AblationConfig cfg;
  cfg.kind = AblationKind::Encoding;
  cfg.env.sim.static_count_min = cfg.env.sim.static_count_max = 1;
  cfg.env.sim.dynamic_count = 1;
  cfg.train.horizon = 16;
  cfg.train.num_envs = 2;
  cfg.train.minibatch = 16;
  cfg.train.total_steps = 64;
  cfg.train.eval_interval = 32;
  cfg.train.eval_episodes = 2;
  cfg.train.eval_step_limit = 10;
  cfg.seeds = {4};
  const AblationResult r = run_ablation(cfg, {});
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].seed == r.runs[1].seed);
  REQUIRE(r.runs[0].result.curve.size() == r.runs[1].result.curve.size());
  for (std::size_t i = 0; i < r.runs[0].result.curve.size(); ++i) {
    CHECK(r.runs[0].result.curve[i].steps == r.runs[1].result.curve[i].steps);
  }
  const std::string csv = ablation_curves_csv(r.runs);
  CHECK(csv.find("encoded_map") != std::string::npos);
  CHECK(csv.find("raw_lidar") != std::string::npos);
}

}  // TEST_SUITE
