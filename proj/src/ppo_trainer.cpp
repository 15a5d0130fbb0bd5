#include "dnrl/ppo_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dnrl/parallel.hpp"

namespace dnrl {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  require(gamma > 0.0 && gamma <= 1.0, "train.gamma must be in (0, 1]");
  require(lambda > 0.0 && lambda <= 1.0, "train.lambda must be in (0, 1]");
  require(clip > 0.0, "train.clip must be > 0");
  require(epochs >= 1, "train.epochs must be >= 1");
  require(minibatch >= 1, "train.minibatch must be >= 1");
  require(learning_rate > 0.0, "train.learning_rate must be > 0");
  require(entropy_coef >= 0.0, "train.entropy_coef must be >= 0");
  require(value_coef >= 0.0, "train.value_coef must be >= 0");
  require(max_grad_norm > 0.0, "train.max_grad_norm must be > 0");
  require(horizon >= 1, "train.horizon must be >= 1");
  require(num_envs >= 1, "train.num_envs must be >= 1");
  require(total_steps >= 1, "train.total_steps must be >= 1");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "train.adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "train.adam_beta2 must be in [0, 1)");
  require(adam_eps > 0.0, "train.adam_eps must be > 0");
  require(eval_interval >= 1, "train.eval_interval must be >= 1");
  require(eval_episodes >= 0, "train.eval_episodes must be >= 0");
  require(eval_step_limit >= 1, "train.eval_step_limit must be >= 1");
  require(checkpoint_interval >= 0, "train.checkpoint_interval must be >= 0");
}

void RolloutBuffer::reset(int t, int e) {
  horizon = t;
  num_envs = e;
  steps.resize(static_cast<std::size_t>(t) * e);
  bootstrap.assign(static_cast<std::size_t>(e), 0.0);
  advantages.clear();
  returns.clear();
  has_advantages = false;
}

std::uint64_t arena_seed(std::uint64_t stream, int env, std::int64_t episode) {
  const std::uint64_t a = Rng::splitmix(stream + static_cast<std::uint64_t>(env));
  return Rng::splitmix(a + static_cast<std::uint64_t>(episode));
}

std::uint64_t training_arena_stream(std::uint64_t seed) { return Rng::splitmix(seed ^ 0x747261696e000000ULL); }
std::uint64_t evaluation_arena_stream(std::uint64_t seed) { return Rng::splitmix(seed ^ 0x6576616c00000000ULL); }

EnvPool::EnvPool(const EnvConfig& cfg, int count, std::uint64_t stream) : stream_(stream) {
  envs_.reserve(static_cast<std::size_t>(count));
  for (int e = 0; e < count; ++e) envs_.emplace_back(cfg);
  episodes_.assign(static_cast<std::size_t>(count), 0);
}

void EnvPool::restart(int e) {
  const auto k = static_cast<std::size_t>(e);
  envs_[k].reset(arena_seed(stream_, e, episodes_[k]));
  ++episodes_[k];
}

namespace {

std::vector<double> values_of(const PolicyParams<float>& params, std::span<const Observation* const> obs,
                              ForwardCache<float>& cache) {
  if (obs.empty()) return {};
  const auto batch = make_batch<float>(obs, params.config);
  ForwardOutput<float> out;
  forward(params, batch, cache, out);
  std::vector<double> v(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) v[i] = out.value(0, static_cast<Eigen::Index>(i));
  return v;
}

std::vector<Mat<float>*> tensors(PolicyParams<float>& p) {
  std::vector<Mat<float>*> out;
  p.for_each([&](const char*, Mat<float>& m) { out.push_back(&m); });
  return out;
}

}  // namespace

void collect_rollouts(const PolicyParams<float>& params, EnvPool& pool, const TrainConfig& cfg, Rng& rng,
                      RolloutBuffer& buffer, std::vector<EpisodeRecord>& finished) {
  const int E = pool.size();
  const int T = cfg.horizon;
  buffer.reset(T, E);
  WorkerPool workers(thread_budget(E));
  ForwardCache<float> cache;
  std::vector<Observation> current(static_cast<std::size_t>(E));
  std::vector<EnvStep> results(static_cast<std::size_t>(E));

  for (int t = 0; t < T; ++t) {
    for (int e = 0; e < E; ++e) current[static_cast<std::size_t>(e)] = pool.env(e).observation();
    const std::vector<ActionSample> samples = sample_actions(params, current, rng, cache);

    workers.run(E, [&](int e) {
      try {
        results[static_cast<std::size_t>(e)] = pool.env(e).step(samples[static_cast<std::size_t>(e)].action);
      } catch (const std::exception& ex) {
        throw TrainingError("environment " + std::to_string(e) + ": " + ex.what());
      }
    });

    std::vector<const Observation*> truncated_obs;
    std::vector<int> truncated_env;
    for (int e = 0; e < E; ++e) {
      const auto k = static_cast<std::size_t>(e);
      Transition& tr = buffer.at(t, e);
      tr.obs = std::move(current[k]);
      tr.raw = samples[k].raw;
      tr.log_prob = samples[k].log_prob;
      tr.value = samples[k].value;
      tr.reward = results[k].reward.total;
      tr.done = results[k].done();
      if (results[k].truncated) {
        truncated_obs.push_back(&pool.env(e).observation());
        truncated_env.push_back(e);
      }
    }
    const std::vector<double> tail = values_of(params, truncated_obs, cache);
    for (std::size_t q = 0; q < tail.size(); ++q) buffer.at(t, truncated_env[q]).reward += cfg.gamma * tail[q];

    for (int e = 0; e < E; ++e) {
      const auto& r = results[static_cast<std::size_t>(e)];
      if (!r.done()) continue;
      const NavEnv& env = pool.env(e);
      finished.push_back({env.episode_return(), env.episode_steps(), env.goal_reached(), r.collided});
      try {
        pool.restart(e);
      } catch (const std::exception& ex) {
        throw TrainingError("environment " + std::to_string(e) + ": " + ex.what());
      }
    }
  }

  std::vector<const Observation*> last(static_cast<std::size_t>(E));
  for (int e = 0; e < E; ++e) last[static_cast<std::size_t>(e)] = &pool.env(e).observation();
  buffer.bootstrap = values_of(params, last, cache);
}

void compute_gae(RolloutBuffer& buffer, const TrainConfig& cfg) {
  const int T = buffer.horizon;
  const int E = buffer.num_envs;
  const std::size_t N = buffer.size();
  buffer.advantages.assign(N, 0.0);
  buffer.returns.assign(N, 0.0);
  for (int e = 0; e < E; ++e) {
    double next_value = buffer.bootstrap[static_cast<std::size_t>(e)];
    double next_adv = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      const Transition& tr = buffer.at(t, e);
      const double live = tr.done ? 0.0 : 1.0;
      const double delta = tr.reward + cfg.gamma * next_value * live - tr.value;
      const double adv = delta + cfg.gamma * cfg.lambda * live * next_adv;
      const std::size_t k = static_cast<std::size_t>(t) * E + e;
      buffer.advantages[k] = adv;
      buffer.returns[k] = adv + tr.value;
      next_value = tr.value;
      next_adv = adv;
    }
  }
  if (cfg.normalize_advantages && N > 1) {
    const double mean = std::accumulate(buffer.advantages.begin(), buffer.advantages.end(), 0.0) / N;
    double var = 0.0;
    for (double a : buffer.advantages) var += (a - mean) * (a - mean);
    var /= N;
    const double sd = std::sqrt(var);
    if (sd > 0.0) {
      for (double& a : buffer.advantages) a = (a - mean) / sd;
    } else {
      for (double& a : buffer.advantages) a -= mean;
    }
  }
  buffer.has_advantages = true;
}

SurrogateTerm clipped_surrogate(double log_ratio, double advantage, double clip) {
  const double rho = std::exp(log_ratio);
  const double unclipped = rho * advantage;
  const double clipped = std::clamp(rho, 1.0 - clip, 1.0 + clip) * advantage;
  SurrogateTerm s;
  s.clipped = std::abs(rho - 1.0) > clip;
  if (unclipped <= clipped) {
    s.loss = -unclipped;
    s.d_log_prob = -unclipped;  // d(rho)/d(log rho) = rho
  } else {
    s.loss = -clipped;
    s.d_log_prob = 0.0;
  }
  return s;
}

MinibatchLoss minibatch_loss(const PolicyParams<float>& params, const RolloutBuffer& buffer,
                             std::span<const int> indices, const TrainConfig& cfg, PolicyParams<float>* grads,
                             ForwardCache<float>& cache) {
  if (!buffer.has_advantages) throw std::logic_error("minibatch_loss called before compute_gae");
  const int M = static_cast<int>(indices.size());
  std::vector<const Observation*> obs(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) obs[static_cast<std::size_t>(i)] = &buffer.steps[static_cast<std::size_t>(indices[i])].obs;
  const auto batch = make_batch<float>(obs, params.config);
  ForwardOutput<float> out;
  forward(params, batch, cache, out);

  const double max_accel = params.config.max_accel;
  const std::array<double, 2> log_std{params.log_std(0, 0), params.log_std(1, 0)};
  const std::array<double, 2> inv_var{std::exp(-2.0 * log_std[0]), std::exp(-2.0 * log_std[1])};

  OutputGrads<float> up;
  up.d_mu.setZero(2, M);
  up.d_value.setZero(1, M);
  up.d_log_std.setZero(2, 1);
  std::array<double, 2> d_log_std{0.0, 0.0};

  MinibatchLoss L;
  double clipped = 0.0;
  for (int i = 0; i < M; ++i) {
    const std::size_t k = static_cast<std::size_t>(indices[i]);
    const Transition& tr = buffer.steps[k];
    const std::array<double, 2> mu{out.mu(0, i), out.mu(1, i)};
    const double log_prob = squashed_log_prob(tr.raw, mu, log_std, max_accel);
    const double log_ratio = log_prob - tr.log_prob;
    const SurrogateTerm s = clipped_surrogate(log_ratio, buffer.advantages[k], cfg.clip);
    L.policy += s.loss;
    clipped += s.clipped ? 1.0 : 0.0;
    L.approx_kl += std::expm1(log_ratio) - log_ratio;
    const double err = out.value(0, i) - buffer.returns[k];
    L.value += err * err;

    const double g = s.d_log_prob / M;
    for (int j = 0; j < 2; ++j) {
      const double z = tr.raw[static_cast<std::size_t>(j)] - mu[static_cast<std::size_t>(j)];
      up.d_mu(j, i) = static_cast<float>(g * z * inv_var[static_cast<std::size_t>(j)]);
      d_log_std[static_cast<std::size_t>(j)] += g * (z * z * inv_var[static_cast<std::size_t>(j)] - 1.0);
    }
    up.d_value(0, i) = static_cast<float>(cfg.value_coef * 2.0 * err / M);
  }
  L.policy /= M;
  L.value /= M;
  L.approx_kl /= M;
  L.clip_frac = clipped / M;
  L.entropy = gaussian_entropy(log_std);
  L.total = L.policy + cfg.value_coef * L.value - cfg.entropy_coef * L.entropy;

  if (grads != nullptr) {
    for (int j = 0; j < 2; ++j) up.d_log_std(j, 0) = static_cast<float>(d_log_std[static_cast<std::size_t>(j)] - cfg.entropy_coef);
    backward(params, cache, up, *grads);
  }
  return L;
}

AdamState::AdamState(const PolicyParams<float>& like) : m(like.zeros_like()), v(like.zeros_like()) {}

double apply_gradients(PolicyParams<float>& params, PolicyParams<float>& grads, AdamState& opt,
                       const TrainConfig& cfg) {
  auto p = tensors(params);
  auto g = tensors(grads);
  auto m = tensors(opt.m);
  auto v = tensors(opt.v);
  double sq = 0.0;
  for (auto* t : g) sq += t->cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  const double scale = norm > cfg.max_grad_norm ? cfg.max_grad_norm / norm : 1.0;

  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(opt.step));
  const float b1 = static_cast<float>(cfg.adam_beta1);
  const float b2 = static_cast<float>(cfg.adam_beta2);
  const float step_size = static_cast<float>(cfg.learning_rate / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(cfg.adam_eps);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto gk = g[k]->array() * static_cast<float>(scale);
    m[k]->array() = b1 * m[k]->array() + (1.0f - b1) * gk;
    v[k]->array() = b2 * v[k]->array() + (1.0f - b2) * gk * gk;
    p[k]->array() -= step_size * m[k]->array() / (v[k]->array().sqrt() * inv_sqrt_bc2 + eps);
  }
  params.log_std = params.log_std.cwiseMax(static_cast<float>(NetConfig::kLogStdMin))
                       .cwiseMin(static_cast<float>(NetConfig::kLogStdMax));
  ++params.generation;
  return norm;
}

UpdateStats ppo_update(PolicyParams<float>& params, AdamState& opt, const RolloutBuffer& buffer,
                       const TrainConfig& cfg, Rng& rng) {
  const int N = static_cast<int>(buffer.size());
  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  PolicyParams<float> grads = params.zeros_like();
  ForwardCache<float> cache;
  UpdateStats stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = N - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng.uniform_int(0, i));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < N; start += cfg.minibatch) {
      const int len = std::min(cfg.minibatch, N - start);
      const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(len));
      const MinibatchLoss L = minibatch_loss(params, buffer, idx, cfg, &grads, cache);
      if (!std::isfinite(L.total)) {
        std::ostringstream msg;
        msg << "non-finite PPO loss at epoch " << epoch << ", minibatch offset " << start << ": policy " << L.policy
            << ", value " << L.value << ", entropy " << L.entropy;
        throw TrainingError(msg.str());
      }
      stats.grad_norm += apply_gradients(params, grads, opt, cfg);
      stats.policy_loss += L.policy;
      stats.value_loss += L.value;
      stats.entropy += L.entropy;
      stats.clip_frac += L.clip_frac;
      stats.approx_kl += L.approx_kl;
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double n = stats.minibatches;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_frac /= n;
    stats.approx_kl /= n;
    stats.grad_norm /= n;
  }
  return stats;
}

EvalSummary evaluate_policy(const PolicyParams<float>& params, const EnvConfig& env_cfg, std::uint64_t stream,
                            int episodes, int step_limit) {
  EvalSummary summary;
  if (episodes <= 0) return summary;
  EnvConfig cfg = env_cfg;
  cfg.sim.step_limit = step_limit;
  std::vector<NavEnv> envs;
  envs.reserve(static_cast<std::size_t>(episodes));
  for (int k = 0; k < episodes; ++k) {
    envs.emplace_back(cfg);
    envs.back().reset(arena_seed(stream, 0, k));
  }
  summary.episodes.resize(static_cast<std::size_t>(episodes));
  std::vector<int> active(static_cast<std::size_t>(episodes));
  std::iota(active.begin(), active.end(), 0);
  ForwardCache<float> cache;
  std::vector<Observation> obs;
  WorkerPool workers(thread_budget(episodes));
  std::vector<EnvStep> results;
  while (!active.empty()) {
    obs.resize(active.size());
    for (std::size_t q = 0; q < active.size(); ++q) obs[q] = envs[static_cast<std::size_t>(active[q])].observation();
    const std::vector<Vec2> actions = greedy_actions(params, obs, cache);
    results.resize(active.size());
    workers.run(static_cast<int>(active.size()), [&](int q) {
      results[static_cast<std::size_t>(q)] =
          envs[static_cast<std::size_t>(active[static_cast<std::size_t>(q)])].step(actions[static_cast<std::size_t>(q)]);
    });
    std::vector<int> still;
    for (std::size_t q = 0; q < active.size(); ++q) {
      const int k = active[q];
      if (!results[q].done()) {
        still.push_back(k);
        continue;
      }
      const NavEnv& env = envs[static_cast<std::size_t>(k)];
      summary.episodes[static_cast<std::size_t>(k)] = {env.episode_return(), env.episode_steps(), env.goal_reached(),
                                                       results[q].collided};
    }
    active.swap(still);
  }
  double total = 0.0;
  int wins = 0;
  for (const auto& ep : summary.episodes) {
    total += ep.episode_return;
    wins += ep.success ? 1 : 0;
  }
  summary.mean_return = total / episodes;
  summary.success_rate = static_cast<double>(wins) / episodes;
  return summary;
}

void write_learning_curve(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "steps,mean_reward,success_rate,clip_frac,approx_kl\n";
  char line[256];
  for (const auto& c : curve) {
    std::snprintf(line, sizeof line, "%lld,%.6f,%.4f,%.6f,%.8f\n", static_cast<long long>(c.steps), c.mean_reward,
                  c.success_rate, c.clip_frac, c.approx_kl);
    out << line;
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TrainResult train(const EnvConfig& env_cfg, const NetConfig& net_cfg, const TrainConfig& cfg, const TrainIo& io) {
  env_cfg.validate();
  net_cfg.validate();
  cfg.validate();
  if (net_cfg.map_rows != env_cfg.encoder.sectors || net_cfg.map_cols != env_cfg.encoder.history) {
    throw std::invalid_argument("network.map_rows/map_cols must equal encoder.sectors/history");
  }
  if (net_cfg.max_accel != env_cfg.sim.max_accel) {
    throw std::invalid_argument("network.max_accel must equal sim.max_accel");
  }

  Rng init_rng(Rng::splitmix(cfg.seed ^ 0x1111));
  Rng sample_rng(Rng::splitmix(cfg.seed ^ 0x2222));
  Rng shuffle_rng(Rng::splitmix(cfg.seed ^ 0x3333));

  TrainResult result;
  result.params = init_params<float>(net_cfg, init_rng);
  AdamState opt(result.params);
  EnvPool pool(env_cfg, cfg.num_envs, training_arena_stream(cfg.seed));
  for (int e = 0; e < cfg.num_envs; ++e) pool.restart(e);

  if (!io.out_dir.empty()) std::filesystem::create_directories(io.out_dir);

  RolloutBuffer buffer;
  std::vector<EpisodeRecord> finished;
  std::int64_t next_eval = cfg.eval_interval;
  std::int64_t next_ckpt = cfg.checkpoint_interval > 0 ? cfg.checkpoint_interval : -1;
  const std::int64_t per_iter = static_cast<std::int64_t>(cfg.horizon) * cfg.num_envs;
  while (result.steps < cfg.total_steps) {
    collect_rollouts(result.params, pool, cfg, sample_rng, buffer, finished);
    result.steps += per_iter;
    compute_gae(buffer, cfg);
    const UpdateStats stats = ppo_update(result.params, opt, buffer, cfg, shuffle_rng);
    ++result.iterations;

    const bool last = result.steps >= cfg.total_steps;
    if (result.steps >= next_eval || last) {
      while (next_eval <= result.steps) next_eval += cfg.eval_interval;
      const EvalSummary ev = evaluate_policy(result.params, env_cfg, evaluation_arena_stream(cfg.seed),
                                             cfg.eval_episodes, cfg.eval_step_limit);
      CurvePoint point{result.steps, ev.mean_return, ev.success_rate, stats.clip_frac, stats.approx_kl};
      result.curve.push_back(point);
      if (io.on_eval) io.on_eval(point);
    }
    if (!io.out_dir.empty() && next_ckpt > 0 && result.steps >= next_ckpt) {
      while (next_ckpt <= result.steps) next_ckpt += cfg.checkpoint_interval;
      save_checkpoint(result.params, io.out_dir / ("step_" + std::to_string(result.steps) + ".ckpt"));
    }
  }
  if (!io.out_dir.empty()) {
    write_learning_curve(result.curve, io.out_dir / "learning_curve.csv");
    save_checkpoint(result.params, io.out_dir / "final.ckpt");
  }
  return result;
}

}  // namespace dnrl
