#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "../support/grad_check.hpp"
#include "dnrl/policy_net.hpp"

using namespace dnrl;
using dnrl::testing::random_observations;

namespace {

bool params_equal(const PolicyParams<float>& a, const PolicyParams<float>& b) {
  std::vector<const Mat<float>*> x, y;
  a.for_each([&](const char*, const Mat<float>& m) { x.push_back(&m); });
  b.for_each([&](const char*, const Mat<float>& m) { y.push_back(&m); });
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i]->rows() != y[i]->rows() || x[i]->cols() != y[i]->cols()) return false;
    if (std::memcmp(x[i]->data(), y[i]->data(), sizeof(float) * static_cast<std::size_t>(x[i]->size())) != 0) return false;
  }
  return true;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dnrl_unit_" + name);
}

NetConfig small_config() {
  NetConfig c;
  c.map_rows = 7;
  c.map_cols = 9;
  c.conv1_channels = 3;
  c.conv2_channels = 5;
  c.feature_dim = 6;
  c.hidden1 = 5;
  c.hidden2 = 4;
  return c;
}

}  // namespace

TEST_SUITE("policy_net") {

TEST_CASE("init is deterministic and finite") {
  NetConfig cfg;
  Rng a(5), b(5);
  const auto p = init_params<float>(cfg, a);
  const auto q = init_params<float>(cfg, b);
  CHECK(params_equal(p, q));
  CHECK(p.parameter_count() == q.parameter_count());
  CHECK(p.log_std(0, 0) == doctest::Approx(-0.5));
  CHECK(p.fc1_b.isZero());

  Rng rng(6);
  const auto obs = random_observations(cfg, 5, rng);
  ForwardCache<float> cache;
  ForwardOutput<float> out;
  forward(p, make_batch<float>(std::span<const Observation>(obs), cfg), cache, out);
  CHECK(out.mu.rows() == 2);
  CHECK(out.mu.cols() == 5);
  CHECK(out.value.rows() == 1);
  CHECK(out.value.cols() == 5);
  CHECK(out.mu.allFinite());
  CHECK(out.value.allFinite());
}

TEST_CASE("parameter count matches the layer shapes") {
  NetConfig cfg;
  const std::size_t conv = (9 * 1 * 8 + 8) + 2 * (9 * 8 * 8 + 8) + (9 * 8 * 16 + 16) + 2 * (9 * 16 * 16 + 16);
  const std::size_t linear = (16 * 9 * 9 * 128 + 128) + (134 * 128 + 128) + (128 * 64 + 64) + (64 * 2 + 2) + (64 + 1);
  Rng rng(0);
  CHECK(init_params<float>(cfg, rng).parameter_count() == conv + linear + 2);
}

TEST_CASE("zero init gives zero outputs") {
  NetConfig cfg;
  Rng rng(1);
  const auto p = init_params<float>(cfg, rng, InitScheme::Zero);
  Observation free_map;
  free_map.map.assign(36 * 36, 1.0f);
  auto obs = random_observations(cfg, 4, rng);
  obs.push_back(free_map);
  ForwardCache<float> cache;
  ForwardOutput<float> out;
  forward(p, make_batch<float>(std::span<const Observation>(obs), cfg), cache, out);
  CHECK(out.mu.isZero(0.0f));
  CHECK(out.value.isZero(0.0f));
}

TEST_CASE("forward is pure") {
  NetConfig cfg;
  Rng rng(2);
  const auto p = init_params<float>(cfg, rng);
  const auto obs = random_observations(cfg, 3, rng);
  const auto batch = make_batch<float>(std::span<const Observation>(obs), cfg);
  ForwardCache<float> c1, c2;
  ForwardOutput<float> o1, o2;
  forward(p, batch, c1, o1);
  forward(p, batch, c2, o2);
  CHECK(o1.mu == o2.mu);
  CHECK(o1.value == o2.value);

  // batch position does not matter
  std::vector<Observation> one{obs[1]};
  ForwardOutput<float> o3;
  forward(p, make_batch<float>(std::span<const Observation>(one), cfg), c1, o3);
  CHECK(std::abs(o3.mu(0, 0) - o1.mu(0, 1)) < 1e-5f);
  CHECK(std::abs(o3.value(0, 0) - o1.value(0, 1)) < 1e-5f);
}

TEST_CASE("map size mismatch is rejected") {
  NetConfig cfg;
  Observation bad;
  bad.map.assign(10, 0.0f);
  CHECK_THROWS_AS(make_batch<float>(std::span<const Observation>(&bad, 1), cfg), std::invalid_argument);
}

TEST_CASE("finite-difference gradient check") {
  SUBCASE("default shapes") {
    const auto r = dnrl::testing::finite_difference_check(NetConfig{}, 7, 100);
    for (const auto& [type, worst] : r.worst) {
      INFO(type);
      CHECK(worst < 1e-3);
    }
    CHECK(r.checked.at("conv") == 100);
    CHECK(r.checked.at("residual") == 100);
    CHECK(r.checked.at("linear") == 100);
    CHECK(r.checked.at("log_std") == 2);
  }
  SUBCASE("odd sizes exercise padding") {
    const auto r = dnrl::testing::finite_difference_check(small_config(), 8, 100);
    CHECK(r.worst_overall < 1e-3);
  }
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  NetConfig cfg;
  Rng rng(3);
  const auto p = init_params<float>(cfg, rng);
  const auto obs = random_observations(cfg, 2, rng);
  ForwardCache<float> cache;
  ForwardOutput<float> out;
  forward(p, make_batch<float>(std::span<const Observation>(obs), cfg), cache, out);
  OutputGrads<float> up{Mat<float>::Zero(2, 2), Mat<float>::Zero(1, 2), Mat<float>::Zero(2, 1)};
  PolicyParams<float> g;
  backward(p, cache, up, g);
  g.for_each([](const char* name, const Mat<float>& m) {
    INFO(name);
    CHECK(m.isZero(0.0f));
  });
}

TEST_CASE("value loss reaches the shared trunk but not the actor head") {
  NetConfig cfg;
  Rng rng(4);
  const auto p = init_params<float>(cfg, rng);
  const auto obs = random_observations(cfg, 4, rng);
  ForwardCache<float> cache;
  ForwardOutput<float> out;
  forward(p, make_batch<float>(std::span<const Observation>(obs), cfg), cache, out);
  OutputGrads<float> up{Mat<float>::Zero(2, 4), Mat<float>::Zero(1, 4), Mat<float>::Zero(2, 1)};
  // d/dV of sum (V - 1)^2
  up.d_value = 2.0f * (out.value.array() - 1.0f).matrix();
  PolicyParams<float> g;
  backward(p, cache, up, g);
  CHECK_FALSE(g.fc1_w.isZero(0.0f));
  CHECK_FALSE(g.fc2_w.isZero(0.0f));
  CHECK_FALSE(g.value_w.isZero(0.0f));
  CHECK(g.actor_w.isZero(0.0f));
  CHECK(g.actor_b.isZero(0.0f));
  CHECK(g.log_std.isZero(0.0f));
}

TEST_CASE("stale cache is rejected") {
  NetConfig cfg;
  Rng rng(5);
  auto p = init_params<float>(cfg, rng);
  const auto obs = random_observations(cfg, 2, rng);
  ForwardCache<float> cache;
  ForwardOutput<float> out;
  forward(p, make_batch<float>(std::span<const Observation>(obs), cfg), cache, out);
  OutputGrads<float> up{Mat<float>::Zero(2, 2), Mat<float>::Zero(1, 2), Mat<float>::Zero(2, 1)};
  PolicyParams<float> g;
  ++p.generation;
  CHECK_THROWS_AS(backward(p, cache, up, g), std::logic_error);
  --p.generation;
  OutputGrads<float> wrong{Mat<float>::Zero(2, 3), Mat<float>::Zero(1, 3), Mat<float>::Zero(2, 1)};
  CHECK_THROWS_AS(backward(p, cache, wrong, g), std::logic_error);
}

TEST_CASE("squashed Gaussian log-prob") {
  const std::array<double, 2> raw{0.3, -1.2}, mu{0.1, -0.4}, ls{-0.5, 0.2};
  const double a = 6.0;
  double expect = 0.0;
  for (int j = 0; j < 2; ++j) {
    const double s = std::exp(ls[j]);
    const double z = (raw[j] - mu[j]) / s;
    const double t = std::tanh(raw[j]);
    expect += -0.5 * z * z - ls[j] - 0.5 * std::log(2.0 * kPi) - std::log(a * (1.0 - t * t));
  }
  CHECK(std::abs(squashed_log_prob(raw, mu, ls, a) - expect) < 1e-9);
  CHECK(std::abs(gaussian_entropy(ls) - (ls[0] + ls[1] + std::log(2.0 * kPi * std::exp(1.0)))) < 1e-12);

  // far in the tail the Jacobian stays finite
  const std::array<double, 2> far{25.0, -30.0};
  CHECK(std::isfinite(squash_log_jacobian(far, a)));
}

TEST_CASE("squashed density integrates to one along a slice") {
  // integrate over action a_x with the second coordinate marginalized analytically:
  // p(a_x) = N(atanh(a_x / A); mu, s) / (A (1 - tanh^2))
  const double A = 6.0, mu = 0.4, ls = -0.3;
  const int n = 4000;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double ax = -A + (i + 0.5) * (2.0 * A / n);
    const double raw = std::atanh(ax / A);
    const std::array<double, 2> r{raw, 0.0}, m{mu, 0.0}, s{ls, 0.0};
    const double other = gaussian_log_prob(std::array<double, 1>{0.0}, std::array<double, 1>{0.0},
                                           std::array<double, 1>{0.0}) -
                         squash_log_jacobian(std::array<double, 1>{0.0}, A);
    total += std::exp(squashed_log_prob(r, m, s, A) - other) * (2.0 * A / n);
  }
  CHECK(std::abs(total - 1.0) < 0.05);
}

TEST_CASE("sampled actions") {
  NetConfig cfg;
  Rng rng(6);
  auto p = init_params<float>(cfg, rng);
  const Observation obs = random_observations(cfg, 1, rng)[0];
  Rng a(9), b(9);
  const ActionSample s1 = sample_action(p, obs, a);
  const ActionSample s2 = sample_action(p, obs, b);
  CHECK(s1.raw == s2.raw);
  CHECK(s1.log_prob == s2.log_prob);
  const std::array<double, 2> ls{p.log_std(0, 0), p.log_std(1, 0)};
  CHECK(std::abs(s1.log_prob - squashed_log_prob(s1.raw, s1.mean_raw, ls, cfg.max_accel)) < 1e-9);

  // Monte-Carlo mean of raw samples, in batches of 1000
  const int N = 100000;
  std::vector<Observation> many(1000, obs);
  ForwardCache<float> cache;
  std::vector<ActionSample> samples;
  for (int k = 0; k < N / 1000; ++k) {
    const auto chunk = sample_actions(p, many, rng, cache);
    samples.insert(samples.end(), chunk.begin(), chunk.end());
  }
  std::array<double, 2> mean{0, 0};
  for (const auto& s : samples) {
    mean[0] += s.raw[0] / N;
    mean[1] += s.raw[1] / N;
    CHECK(std::abs(s.action.x) <= cfg.max_accel);
    CHECK(std::abs(s.action.y) <= cfg.max_accel);
    CHECK(std::isfinite(s.log_prob));
  }
  for (int j = 0; j < 2; ++j) {
    const double sigma = std::exp(ls[static_cast<std::size_t>(j)]);
    CHECK(std::abs(mean[static_cast<std::size_t>(j)] - s1.mean_raw[static_cast<std::size_t>(j)]) <= 3.0 * sigma / std::sqrt(N));
  }

  // degenerate Gaussian collapses onto tanh(mean); compared on the unit
  // action scale and averaged, since single draws still spread by sigma
  p.log_std.setConstant(-5.0f);
  ForwardCache<float> c2;
  const Vec2 greedy = greedy_actions(p, std::span<const Observation>(&obs, 1), c2)[0];
  const auto tight = sample_actions(p, many, a, c2);
  double dev = 0.0;
  for (const auto& s : tight) {
    dev += (std::abs(s.action.x - greedy.x) + std::abs(s.action.y - greedy.y)) / (2.0 * cfg.max_accel * tight.size());
  }
  CHECK(dev < 1e-2);
  CHECK(std::abs(greedy.x / cfg.max_accel - std::tanh(static_cast<double>(s1.mean_raw[0]))) < 1e-6);
}

TEST_CASE("checkpoint round trip and errors") {
  NetConfig cfg;
  Rng rng(10);
  const auto p = init_params<float>(cfg, rng);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path, cfg);
  CHECK(params_equal(p, q));

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path, cfg), doctest::Contains("bad magic"), CheckpointError);

  const auto small = init_params<float>(small_config(), rng);
  save_checkpoint(small, path);
  try {
    (void)load_checkpoint(path, cfg);
    FAIL("expected a shape error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("conv1.weight") != std::string::npos);
  }

  save_checkpoint(p, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 7);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, cfg), doctest::Contains("truncated"), CheckpointError);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.ckpt"), cfg), CheckpointError);
}

}  // TEST_SUITE
