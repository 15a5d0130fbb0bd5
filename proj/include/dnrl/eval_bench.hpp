#pragma once

// Benchmark scenarios, metrics (success rate, per-step processing time,
// average speed, path ratio), a scripted potential-field baseline, report
// writers and the paired ablation runs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnrl/episode_log.hpp"
#include "dnrl/nav_env.hpp"
#include "dnrl/policy_net.hpp"
#include "dnrl/ppo_trainer.hpp"

namespace dnrl {

struct ScenarioSpec {
  std::string name;
  double side = 20.0;
  int dynamic_count = 0;
  int static_count = 0;
  double speed_min = 0.0;
  double speed_max = 4.0;
  double retarget_period = 2.0;  // seconds between direction/speed changes
  int trials = 10;
  std::uint64_t seed = 0;
  int step_limit = 1200;
  double min_start_goal = 10.0;
  double clearance = 1.0;

  void validate() const;
};

/// The five obstacle mixes: 10+10, 20+20, 40+30 (dynamic+static), 10 and 40
/// dynamic only.
std::vector<ScenarioSpec> standard_suite(int trials = 10, std::uint64_t seed = 0);

/// Simulator settings for a scenario on top of `base` (dynamics, lidar and
/// quadrotor parameters are kept; arena layout fields are replaced).
SimConfig scenario_sim_config(const ScenarioSpec& spec, const SimConfig& base);

/// Arena of trial `trial`, independent of the controller under test.
std::uint64_t trial_seed(const ScenarioSpec& spec, int trial);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// False when the controller reads ground truth and the environment may
  /// skip building observations.
  virtual bool needs_observation() const = 0;
  virtual void reset() {}
  virtual Vec2 act(const NavEnv& env) = 0;
};

/// Mean action of a trained network.
class PolicyController : public Controller {
 public:
  explicit PolicyController(PolicyParams<float> params, std::string name = "policy");
  std::string name() const override { return name_; }
  bool needs_observation() const override { return true; }
  Vec2 act(const NavEnv& env) override;

 private:
  PolicyParams<float> params_;
  ForwardCache<float> cache_;
  std::string name_;
};

struct BaselineConfig {
  double cruise_speed = 2.5;
  double velocity_gain = 2.0;     // 1/s, attraction toward the desired velocity
  double repulsion_gain = 6.0;
  double tangential_gain = 0.6;   // fraction of repulsion turned sideways
  double dodge_gain = 8.0;
  double dodge_horizon = 2.0;     // seconds of closest-approach lookahead
  double dodge_margin = 0.6;      // meters added to the combined radii
};

/// Potential-field planner on ground truth: velocity-tracking attraction to
/// the goal, repulsion from statics and walls within 2 d_s with a sideways
/// component, and dodging of dynamic obstacles whose predicted closest
/// approach is too near. Deterministic.
Vec2 baseline_action(const WorldState& state, const SimConfig& sim, const RewardWeights& w,
                     const BaselineConfig& cfg = {});

class BaselineController : public Controller {
 public:
  explicit BaselineController(BaselineConfig cfg = {}) : cfg_(cfg) {}
  std::string name() const override { return "baseline"; }
  bool needs_observation() const override { return false; }
  Vec2 act(const NavEnv& env) override;

 private:
  BaselineConfig cfg_;
};

struct TrialResult {
  bool success = false;
  bool collided = false;
  int steps = 0;
  double path_length = 0.0;   // l, meters
  double flight_time = 0.0;   // seconds
  Vec2 start;
  Vec2 end;
  Vec2 goal;
  std::vector<EpisodeLogRow> log;  // includes the initial tick
  Arena final_arena;
  std::int64_t final_tick = 0;
  std::vector<double> encode_seconds;  // per tick, observation building
  std::vector<double> infer_seconds;   // per tick, controller decision
};

struct TrialOptions {
  bool measure_timing = true;
  bool keep_log = true;
};

/// One greedy trial. The episode ends on reaching the hover radius (success),
/// a collision or the scenario's step limit. Timing covers observation
/// building and the controller only, never the simulator step.
TrialResult run_trial(Controller& controller, const ScenarioSpec& spec, int trial, const EnvConfig& base,
                      const TrialOptions& opts = {});

struct BenchResult {
  std::string scenario;
  std::string policy;
  int trials = 0;
  int successes = 0;
  double eta = 0.0;                     // percent
  std::optional<double> tp_ms;          // absent when timing is off
  std::optional<double> encode_ms;
  std::optional<double> infer_ms;
  std::optional<double> va;             // absent without successes
  std::optional<double> rl;
  std::uint64_t seed = 0;
};

/// 10 l / |end - start|, or 10 when the trial ended where it began.
double path_ratio(double path_length, const Vec2& start, const Vec2& end);

double polyline_length(const std::vector<Vec2>& points);

BenchResult compute_metrics(const std::vector<TrialResult>& trials);

/// Success rate recomputed from a trial log: the last row lies within the
/// hover radius of the goal and no row is flagged as a collision.
bool log_reached_goal(const std::vector<EpisodeLogRow>& log, const Vec2& goal, double hover_radius);

struct BenchOptions {
  bool measure_timing = true;
  bool write_trajectories = true;  // keep per-trial logs (and write them when out_dir is set)
};

struct BenchReport {
  std::vector<BenchResult> rows;
  std::vector<std::vector<TrialResult>> trials;  // parallel to rows
};

/// Every controller on every scenario. When out_dir is non-empty, writes
/// report.csv, report.txt and per-trial logs, arena snapshots and SVGs.
BenchReport run_benchmark(const std::vector<Controller*>& controllers, const std::vector<ScenarioSpec>& suite,
                          const EnvConfig& base, const std::filesystem::path& out_dir, const BenchOptions& opts = {});

/// `scenario,policy,eta,tp_ms,va,rl,trials,seed`; absent values are "/".
std::string report_csv(const std::vector<BenchResult>& rows);
std::string report_table(const std::vector<BenchResult>& rows);

/// Arena outline, statics, dynamics at their last positions, start and goal
/// markers, and the path: one polyline with id "path" plus segments colored
/// by speed; a collision ends the path with a marker.
std::string render_trajectory_svg(const Arena& arena, const std::vector<EpisodeLogRow>& log, double v_max,
                                  double hover_radius);

/// Arena snapshot for replay: {"tick": final tick, "arena": {...}}.
nlohmann::json trial_snapshot_json(const Arena& arena, std::int64_t tick);

enum class AblationKind { Encoding, DynamicReward };

const char* to_string(AblationKind kind);
AblationKind ablation_kind_from_string(const std::string& s);

struct AblationConfig {
  AblationKind kind = AblationKind::Encoding;
  EnvConfig env;
  NetConfig net;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> speeds{1.0, 2.0, 3.0};  // mean obstacle speeds, dynamic_reward only
  ScenarioSpec eval_scenario;                 // dynamic_reward only
};

/// Paired training run: variant "a" is the full method, "b" the ablation.
struct AblationRun {
  std::uint64_t seed = 0;
  std::string variant;
  TrainResult result;
};

struct SpeedSuccess {
  std::uint64_t seed = 0;
  std::string variant;
  double speed = 0.0;
  double success_rate = 0.0;  // fraction
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<SpeedSuccess> speed_rows;
};

/// Scenario with obstacle speeds uniform in [0, 2 v], i.e. mean speed v.
ScenarioSpec speed_scenario(const ScenarioSpec& base, double mean_speed);

/// Variant names: encoding -> "encoded_map" / "raw_lidar"; dynamic_reward ->
/// "dilated" / "static_formula". Both variants of a seed train on the same
/// arena sequence. `pretrained` supplies an already-trained run for a
/// (seed, variant) to reuse instead of training it again.
AblationResult run_ablation(
    const AblationConfig& cfg, const std::filesystem::path& out_dir,
    const std::function<const TrainResult*(std::uint64_t seed, const std::string& variant)>& pretrained = {});

/// Variant configuration used by run_ablation.
EnvConfig ablation_variant(const EnvConfig& base, AblationKind kind, bool ablated);

/// Success rates of a trained policy at each mean obstacle speed.
std::vector<SpeedSuccess> speed_success(const PolicyParams<float>& params, const EnvConfig& env,
                                        const ScenarioSpec& scenario, const std::vector<double>& speeds,
                                        std::uint64_t seed, const std::string& variant);

std::string ablation_curves_csv(const std::vector<AblationRun>& runs);
std::string ablation_speed_csv(const std::vector<SpeedSuccess>& rows);

}  // namespace dnrl
