#pragma once

// Central finite-difference check of policy_net::backward, shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dnrl/policy_net.hpp"

namespace dnrl::testing {

inline std::vector<Observation> random_observations(const NetConfig& cfg, int count, Rng& rng) {
  std::vector<Observation> obs(static_cast<std::size_t>(count));
  for (auto& o : obs) {
    o.map.resize(static_cast<std::size_t>(cfg.map_rows) * cfg.map_cols);
    for (auto& v : o.map) v = static_cast<float>(rng.uniform());
    for (auto& v : o.state) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : o.command) v = static_cast<float>(rng.uniform(-1, 1));
  }
  return obs;
}

/// conv, residual, linear or log_std.
inline std::string layer_type(const std::string& tensor) {
  if (tensor.rfind("conv", 0) == 0) return "conv";
  if (tensor.rfind("res", 0) == 0) return "residual";
  if (tensor == "log_std") return "log_std";
  return "linear";
}

struct GradCheckResult {
  std::map<std::string, int> checked;         // coordinates per layer type
  std::map<std::string, int> kinked;          // skipped: the +-eps step flipped a ReLU
  std::map<std::string, double> worst;        // worst relative error per layer type
  double worst_overall = 0.0;
};

/// Loss = sum_i c_i * squashed_log_prob(raw_i; mu_i, log_std) + sum_i d_i * value_i,
/// so the check covers the Gaussian log-prob path, the tanh squash correction,
/// both heads, and log_std. Samples `per_type` coordinates of each layer type
/// (every coordinate when a type has fewer). A coordinate whose +-eps step
/// moves any ReLU across its kink has no valid central difference at that
/// step size; it is counted in `kinked` and replaced by another draw.
inline GradCheckResult finite_difference_check(const NetConfig& cfg, std::uint64_t seed, int per_type,
                                               double eps = 1e-4, int batch = 3) {
  Rng rng(seed);
  PolicyParams<double> p = init_params<double>(cfg, rng);
  // nonzero biases so every ReLU sees both signs
  p.for_each([&](const char*, Mat<double>& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] += 0.05 * (rng.uniform() - 0.5);
  });
  const auto obs = random_observations(cfg, batch, rng);
  const auto input = make_batch<double>(std::span<const Observation>(obs), cfg);
  std::vector<std::array<double, 2>> raw(static_cast<std::size_t>(batch));
  std::vector<double> c(static_cast<std::size_t>(batch)), d(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    raw[static_cast<std::size_t>(i)] = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    c[static_cast<std::size_t>(i)] = rng.uniform(-1, 1);
    d[static_cast<std::size_t>(i)] = rng.uniform(-1, 1);
  }

  // ReLU on/off pattern of every activation in the cache
  auto pattern = [](const ForwardCache<double>& fc) {
    std::vector<bool> on;
    for (const Mat<double>* m : {&fc.a1, &fc.a2, &fc.a3, &fc.a4, &fc.a5, &fc.a6, &fc.feat, &fc.h1, &fc.h2}) {
      for (Eigen::Index k = 0; k < m->size(); ++k) on.push_back(m->data()[k] > 0.0);
    }
    return on;
  };
  std::vector<bool> last_pattern;
  auto loss = [&](const PolicyParams<double>& q) {
    ForwardCache<double> cache;
    ForwardOutput<double> out;
    forward(q, input, cache, out);
    last_pattern = pattern(cache);
    const std::array<double, 2> ls{q.log_std(0, 0), q.log_std(1, 0)};
    double total = 0.0;
    for (int i = 0; i < batch; ++i) {
      const std::array<double, 2> mu{out.mu(0, i), out.mu(1, i)};
      total += c[static_cast<std::size_t>(i)] * squashed_log_prob(raw[static_cast<std::size_t>(i)], mu, ls, cfg.max_accel);
      total += d[static_cast<std::size_t>(i)] * out.value(0, i);
    }
    return total;
  };

  // analytic upstream gradients of the loss above
  ForwardCache<double> cache;
  ForwardOutput<double> out;
  forward(p, input, cache, out);
  OutputGrads<double> up;
  up.d_mu.setZero(2, batch);
  up.d_value.setZero(1, batch);
  up.d_log_std.setZero(2, 1);
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double inv_var = std::exp(-2.0 * p.log_std(j, 0));
      const double z = raw[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - out.mu(j, i);
      up.d_mu(j, i) = c[static_cast<std::size_t>(i)] * z * inv_var;
      up.d_log_std(j, 0) += c[static_cast<std::size_t>(i)] * (z * z * inv_var - 1.0);
    }
    up.d_value(0, i) = d[static_cast<std::size_t>(i)];
  }
  PolicyParams<double> grads;
  backward(p, cache, up, grads);

  std::vector<std::pair<std::string, Mat<double>*>> analytic;
  grads.for_each([&](const char* name, Mat<double>& m) { analytic.emplace_back(name, &m); });
  std::vector<std::pair<std::string, Mat<double>*>> tensors;
  p.for_each([&](const char* name, Mat<double>& m) { tensors.emplace_back(name, &m); });

  std::map<std::string, std::vector<std::pair<std::size_t, Eigen::Index>>> coords;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (Eigen::Index k = 0; k < tensors[t].second->size(); ++k) coords[layer_type(tensors[t].first)].emplace_back(t, k);
  }

  GradCheckResult result;
  for (auto& [type, list] : coords) {
    const int want = std::min<int>(per_type, static_cast<int>(list.size()));
    int n = 0;
    int kinked = 0;
    double worst = 0.0;
    // partial Fisher-Yates: draws without replacement until `want` are valid
    for (std::size_t i = 0; i < list.size() && n < want; ++i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(list.size()) - 1));
      std::swap(list[i], list[j]);
      const auto [t, k] = list[i];
      double& w = tensors[t].second->data()[k];
      const double saved = w;
      w = saved + eps;
      ++p.generation;
      const double lp = loss(p);
      const std::vector<bool> plus = last_pattern;
      w = saved - eps;
      ++p.generation;
      const double lm = loss(p);
      w = saved;
      ++p.generation;
      if (plus != last_pattern) {
        ++kinked;
        continue;
      }
      ++n;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = analytic[t].second->data()[k];
      const double rel = std::abs(fd - an) / std::max(1e-7, std::abs(fd) + std::abs(an));
      worst = std::max(worst, rel);
    }
    result.checked[type] = n;
    result.kinked[type] = kinked;
    result.worst[type] = worst;
    result.worst_overall = std::max(result.worst_overall, worst);
  }
  return result;
}

}  // namespace dnrl::testing
