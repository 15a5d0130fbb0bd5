#pragma once

// PPO over a pool of navigation environments: rollout collection, GAE,
// clipped-surrogate updates with Adam, greedy evaluation and the training
// loop that writes learning curves and checkpoints.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnrl/nav_env.hpp"
#include "dnrl/policy_net.hpp"
#include "dnrl/rng.hpp"

namespace dnrl {

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 3;
  int minibatch = 256;
  double learning_rate = 3e-4;
  double entropy_coef = 0.005;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int horizon = 512;   // T, steps per environment per iteration
  int num_envs = 4;    // E
  std::int64_t total_steps = 200000;
  std::uint64_t seed = 0;
  bool normalize_advantages = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-5;

  std::int64_t eval_interval = 20480;  // environment steps between evaluations
  int eval_episodes = 50;
  int eval_step_limit = 600;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only

  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Transition {
  Observation obs;
  std::array<double, 2> raw{};  // pre-squash sample
  double log_prob = 0.0;        // squashed log-density under the behavior policy
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
};

struct RolloutBuffer {
  int horizon = 0;
  int num_envs = 0;
  std::vector<Transition> steps;  // index t * num_envs + e
  std::vector<double> bootstrap;  // V(s_T) per environment
  std::vector<double> advantages;
  std::vector<double> returns;
  bool has_advantages = false;

  void reset(int horizon, int num_envs);
  std::size_t size() const { return steps.size(); }
  Transition& at(int t, int e) { return steps[static_cast<std::size_t>(t) * num_envs + e]; }
  const Transition& at(int t, int e) const { return steps[static_cast<std::size_t>(t) * num_envs + e]; }
};

/// Deterministic arena seed for episode `episode` of environment `env` in
/// seed stream `stream`; paired runs with the same stream see the same arenas.
std::uint64_t arena_seed(std::uint64_t stream, int env, std::int64_t episode);

struct EpisodeRecord {
  double episode_return = 0.0;
  int steps = 0;
  bool success = false;
  bool collided = false;
};

/// E environments with their per-environment episode counters.
class EnvPool {
 public:
  EnvPool(const EnvConfig& cfg, int count, std::uint64_t stream);

  int size() const { return static_cast<int>(envs_.size()); }
  NavEnv& env(int e) { return envs_[static_cast<std::size_t>(e)]; }
  const NavEnv& env(int e) const { return envs_[static_cast<std::size_t>(e)]; }
  /// Starts the next episode of environment e on a fresh arena.
  void restart(int e);

 private:
  std::uint64_t stream_;
  std::vector<NavEnv> envs_;
  std::vector<std::int64_t> episodes_;
};

/// Steps every environment `cfg.horizon` times with sampled actions. Ended
/// episodes restart in place; a step-limit cut adds gamma * V(final obs) to
/// the last reward so truncation is not mistaken for failure. Finished
/// episodes are appended to `finished`.
void collect_rollouts(const PolicyParams<float>& params, EnvPool& pool, const TrainConfig& cfg, Rng& rng,
                      RolloutBuffer& buffer, std::vector<EpisodeRecord>& finished);

/// delta_t = r_t + gamma V(s_t+1)(1 - done_t) - V(s_t),
/// A_t = delta_t + gamma lambda (1 - done_t) A_t+1, returns = A + V; then
/// (optionally) advantages normalized to zero mean and unit variance.
void compute_gae(RolloutBuffer& buffer, const TrainConfig& cfg);

struct SurrogateTerm {
  double loss = 0.0;         // -min(rho A, clip(rho) A)
  double d_log_prob = 0.0;   // derivative of loss with respect to the new log-prob
  bool clipped = false;      // |rho - 1| > eps
};

SurrogateTerm clipped_surrogate(double log_ratio, double advantage, double clip);

struct MinibatchLoss {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
};

/// PPO loss on the given transitions (mean over the minibatch). When `grads`
/// is non-null it receives the exact gradient of `total`.
MinibatchLoss minibatch_loss(const PolicyParams<float>& params, const RolloutBuffer& buffer,
                             std::span<const int> indices, const TrainConfig& cfg, PolicyParams<float>* grads,
                             ForwardCache<float>& cache);

/// Adam first/second moments, one tensor set each.
struct AdamState {
  PolicyParams<float> m;
  PolicyParams<float> v;
  std::int64_t step = 0;

  explicit AdamState(const PolicyParams<float>& like);
};

/// Global-norm clipping followed by one Adam step; log_std is clamped to its
/// bounds afterwards. Returns the pre-clip gradient norm.
double apply_gradients(PolicyParams<float>& params, PolicyParams<float>& grads, AdamState& opt,
                       const TrainConfig& cfg);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
};

/// Epochs of shuffled minibatch updates. Throws TrainingError on a
/// non-finite loss or gradient.
UpdateStats ppo_update(PolicyParams<float>& params, AdamState& opt, const RolloutBuffer& buffer,
                       const TrainConfig& cfg, Rng& rng);

struct EvalSummary {
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<EpisodeRecord> episodes;
};

/// Greedy policy on `episodes` arenas from the evaluation seed stream; an
/// episode ends on collision or after `step_limit` steps. Success means the
/// goal's hover radius was reached before any collision.
EvalSummary evaluate_policy(const PolicyParams<float>& params, const EnvConfig& env_cfg, std::uint64_t stream,
                            int episodes, int step_limit);

struct CurvePoint {
  std::int64_t steps = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
};

struct TrainResult {
  PolicyParams<float> params;
  std::vector<CurvePoint> curve;
  std::int64_t steps = 0;
  int iterations = 0;
};

struct TrainIo {
  std::filesystem::path out_dir;  // empty: write nothing
  std::function<void(const CurvePoint&)> on_eval;
};

/// Seed streams derived from the training seed.
std::uint64_t training_arena_stream(std::uint64_t seed);
std::uint64_t evaluation_arena_stream(std::uint64_t seed);

TrainResult train(const EnvConfig& env_cfg, const NetConfig& net_cfg, const TrainConfig& cfg, const TrainIo& io = {});

void write_learning_curve(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

}  // namespace dnrl
