#pragma once

// Actor-critic network: residual convolutional encoder over the obstacle map,
// MLP trunk over [features, quad state, goal command], Gaussian actor head
// (tanh-squashed, scaled to the acceleration bound) and scalar value head.
// Forward and reverse passes are written by hand; Eigen supplies the dense
// matrix products. Templated on the scalar so gradients can be checked in
// double precision while training runs in float.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dnrl/lidar_encoding.hpp"
#include "dnrl/rng.hpp"
#include "dnrl/vec2.hpp"

namespace dnrl {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct NetConfig {
  int map_rows = 36;  // sectors
  int map_cols = 36;  // history
  int conv1_channels = 8;
  int conv2_channels = 16;
  int feature_dim = 128;
  int hidden1 = 128;
  int hidden2 = 64;
  double max_accel = 6.0;
  double init_log_std = -0.5;

  static constexpr int kStateDim = 4;
  static constexpr int kCommandDim = 2;
  static constexpr int kActionDim = 2;
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  int rows_after_conv1() const { return (map_rows - 1) / 2 + 1; }
  int cols_after_conv1() const { return (map_cols - 1) / 2 + 1; }
  int rows_after_conv2() const { return (rows_after_conv1() - 1) / 2 + 1; }
  int cols_after_conv2() const { return (cols_after_conv1() - 1) / 2 + 1; }
  int flat_dim() const { return conv2_channels * rows_after_conv2() * cols_after_conv2(); }
  int trunk_input() const { return feature_dim + kStateDim + kCommandDim; }

  /// FNV-1a over the layer-shape fields.
  std::uint64_t shape_hash() const;
  void validate() const;
};

/// Network input for one tick. `map` is row-major [sector][age].
struct Observation {
  std::vector<float> map;
  std::array<float, NetConfig::kStateDim> state{};
  std::array<float, NetConfig::kCommandDim> command{};
};

enum class InitScheme { FanInUniform, Zero };

template <typename T>
struct PolicyParams {
  NetConfig config;
  // conv weights are [out_channels, 9 * in_channels], column = tap * in + channel
  Mat<T> conv1_w, conv1_b;
  Mat<T> res1a_w, res1a_b, res1b_w, res1b_b;
  Mat<T> conv2_w, conv2_b;
  Mat<T> res2a_w, res2a_b, res2b_w, res2b_b;
  Mat<T> feat_w, feat_b;
  Mat<T> fc1_w, fc1_b, fc2_w, fc2_b;
  Mat<T> actor_w, actor_b;
  Mat<T> value_w, value_b;
  Mat<T> log_std;  // [2, 1]
  std::uint64_t generation = 0;  // bumped whenever values change in an update

  /// Visits every tensor in the fixed checkpoint order.
  template <typename F>
  void for_each(F&& f) {
    f("conv1.weight", conv1_w); f("conv1.bias", conv1_b);
    f("res1a.weight", res1a_w); f("res1a.bias", res1a_b);
    f("res1b.weight", res1b_w); f("res1b.bias", res1b_b);
    f("conv2.weight", conv2_w); f("conv2.bias", conv2_b);
    f("res2a.weight", res2a_w); f("res2a.bias", res2a_b);
    f("res2b.weight", res2b_w); f("res2b.bias", res2b_b);
    f("feature.weight", feat_w); f("feature.bias", feat_b);
    f("fc1.weight", fc1_w); f("fc1.bias", fc1_b);
    f("fc2.weight", fc2_w); f("fc2.bias", fc2_b);
    f("actor.weight", actor_w); f("actor.bias", actor_b);
    f("value.weight", value_w); f("value.bias", value_b);
    f("log_std", log_std);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<PolicyParams*>(this)->for_each([&](const char* name, Mat<T>& m) { f(name, static_cast<const Mat<T>&>(m)); });
  }

  /// Same shapes, all zeros.
  PolicyParams zeros_like() const;
  std::size_t parameter_count() const;
  void set_zero();

  template <typename U>
  PolicyParams<U> cast() const;
};

template <typename T>
PolicyParams<T> init_params(const NetConfig& cfg, Rng& rng, InitScheme scheme = InitScheme::FanInUniform);

template <typename T>
struct ObservationBatch {
  int size = 0;
  Mat<T> maps;     // [1, B * rows * cols]
  Mat<T> state;    // [4, B]
  Mat<T> command;  // [2, B]
};

/// Packs observations; throws std::invalid_argument on a map size mismatch.
template <typename T>
ObservationBatch<T> make_batch(std::span<const Observation* const> observations, const NetConfig& cfg);
template <typename T>
ObservationBatch<T> make_batch(std::span<const Observation> observations, const NetConfig& cfg);

template <typename T>
struct ForwardCache {
  int batch = 0;
  std::uint64_t generation = 0;
  const void* params = nullptr;
  Mat<T> maps;  // [1, B * rows * cols] input copy
  Mat<T> a1, a2, a3, a4, a5, a6;  // post-activation, [channels, B * pixels]
  Mat<T> feat, trunk_in, h1, h2;
};

template <typename T>
struct ForwardOutput {
  Mat<T> mu;     // [2, B] pre-squash Gaussian mean
  Mat<T> value;  // [1, B]
};

/// Gradients of some scalar loss with respect to the network outputs.
template <typename T>
struct OutputGrads {
  Mat<T> d_mu;                   // [2, B]
  Mat<T> d_value;                // [1, B]
  Mat<T> d_log_std;              // [2, 1]
};

template <typename T>
void forward(const PolicyParams<T>& params, const ObservationBatch<T>& batch, ForwardCache<T>& cache,
             ForwardOutput<T>& out);

/// Reverse pass; overwrites `grads`. Throws std::logic_error if `cache` was
/// produced by different parameters or a different batch size.
template <typename T>
void backward(const PolicyParams<T>& params, const ForwardCache<T>& cache, const OutputGrads<T>& upstream,
              PolicyParams<T>& grads);

// Tanh-squashed diagonal Gaussian helpers (per sample, 2-D).

/// log N(raw; mu, exp(log_std)) without the squash correction.
double gaussian_log_prob(std::span<const double> raw, std::span<const double> mu, std::span<const double> log_std);
/// sum_j log(max_accel * (1 - tanh(raw_j)^2)), computed stably.
double squash_log_jacobian(std::span<const double> raw, double max_accel);
/// Log-density of the squashed action max_accel * tanh(raw).
double squashed_log_prob(std::span<const double> raw, std::span<const double> mu, std::span<const double> log_std,
                         double max_accel);
/// Entropy of the pre-squash Gaussian.
double gaussian_entropy(std::span<const double> log_std);

struct ActionSample {
  Vec2 action;                     // max_accel * tanh(raw)
  std::array<double, 2> mean_raw{};
  std::array<double, 2> raw{};
  double log_prob = 0.0;           // squashed log-density
  double value = 0.0;
};

/// Samples one action per observation, in batch order.
std::vector<ActionSample> sample_actions(const PolicyParams<float>& params, std::span<const Observation> obs, Rng& rng,
                                         ForwardCache<float>& cache);
ActionSample sample_action(const PolicyParams<float>& params, const Observation& obs, Rng& rng);

/// Deterministic (mean) actions.
std::vector<Vec2> greedy_actions(const PolicyParams<float>& params, std::span<const Observation> obs,
                                 ForwardCache<float>& cache);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "DNRL", u32 version, u64 shape hash, then for each tensor in
/// for_each order: u32 name length, name bytes, u32 rank (2), u32 dims,
/// little-endian float32 data in column-major order.
void save_checkpoint(const PolicyParams<float>& params, const std::filesystem::path& path);
PolicyParams<float> load_checkpoint(const std::filesystem::path& path, const NetConfig& expected);

}  // namespace dnrl
