#include "dnrl/policy_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dnrl {

std::uint64_t NetConfig::shape_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const int fields[] = {map_rows, map_cols, conv1_channels, conv2_channels, feature_dim, hidden1, hidden2,
                        kStateDim, kCommandDim, kActionDim};
  for (int f : fields) {
    for (int byte = 0; byte < 4; ++byte) {
      h ^= static_cast<std::uint64_t>((static_cast<std::uint32_t>(f) >> (8 * byte)) & 0xffu);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void NetConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(map_rows >= 1 && map_cols >= 1, "network.map_rows/map_cols must be >= 1");
  require(conv1_channels >= 1 && conv2_channels >= 1, "network conv channels must be >= 1");
  require(feature_dim >= 1 && hidden1 >= 1 && hidden2 >= 1, "network layer widths must be >= 1");
  require(max_accel > 0.0, "network.max_accel must be > 0");
  require(init_log_std >= kLogStdMin && init_log_std <= kLogStdMax, "network.init_log_std must lie in [-5, 2]");
}

// ---------------------------------------------------------------- params

template <typename T>
PolicyParams<T> PolicyParams<T>::zeros_like() const {
  PolicyParams<T> z = *this;
  z.set_zero();
  z.generation = 0;
  return z;
}

template <typename T>
void PolicyParams<T>::set_zero() {
  for_each([](const char*, Mat<T>& m) { m.setZero(); });
}

template <typename T>
std::size_t PolicyParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const char*, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
template <typename U>
PolicyParams<U> PolicyParams<T>::cast() const {
  PolicyParams<U> out;
  out.config = config;
  std::vector<const Mat<T>*> src;
  for_each([&](const char*, const Mat<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.for_each([&](const char*, Mat<U>& m) { m = src[i++]->template cast<U>(); });
  return out;
}

namespace {

struct Shape {
  int rows;
  int cols;
  double bound_scale;  // multiplier on the fan-in bound
  double relu_gain;    // 6 for ReLU layers, 3 for tanh/linear
};

template <typename T>
std::vector<Shape> param_shapes(const NetConfig& c) {
  const int c1 = c.conv1_channels, c2 = c.conv2_channels;
  return {
      {c1, 9, 1.0, 6.0},          {c1, 1, 0, 0},
      {c1, 9 * c1, 1.0, 6.0},     {c1, 1, 0, 0},
      {c1, 9 * c1, 0.5, 6.0},     {c1, 1, 0, 0},
      {c2, 9 * c1, 1.0, 6.0},     {c2, 1, 0, 0},
      {c2, 9 * c2, 1.0, 6.0},     {c2, 1, 0, 0},
      {c2, 9 * c2, 0.5, 6.0},     {c2, 1, 0, 0},
      {c.feature_dim, c.flat_dim(), 1.0, 6.0}, {c.feature_dim, 1, 0, 0},
      {c.hidden1, c.trunk_input(), 1.0, 3.0},  {c.hidden1, 1, 0, 0},
      {c.hidden2, c.hidden1, 1.0, 3.0},        {c.hidden2, 1, 0, 0},
      {NetConfig::kActionDim, c.hidden2, 0.01, 3.0}, {NetConfig::kActionDim, 1, 0, 0},
      {1, c.hidden2, 1.0, 3.0},                {1, 1, 0, 0},
      {NetConfig::kActionDim, 1, 0, 0},
  };
}

}  // namespace

template <typename T>
PolicyParams<T> init_params(const NetConfig& cfg, Rng& rng, InitScheme scheme) {
  cfg.validate();
  PolicyParams<T> p;
  p.config = cfg;
  const auto shapes = param_shapes<T>(cfg);
  std::size_t i = 0;
  p.for_each([&](const char*, Mat<T>& m) {
    const Shape& s = shapes[i++];
    m.setZero(s.rows, s.cols);
    if (scheme == InitScheme::Zero || s.relu_gain == 0.0) return;
    const double bound = s.bound_scale * std::sqrt(s.relu_gain / s.cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<T>(rng.uniform(-bound, bound));
  });
  p.log_std.setConstant(static_cast<T>(cfg.init_log_std));
  return p;
}

// ---------------------------------------------------------------- batches

template <typename T>
ObservationBatch<T> make_batch(std::span<const Observation* const> observations, const NetConfig& cfg) {
  ObservationBatch<T> b;
  b.size = static_cast<int>(observations.size());
  const std::size_t cells = static_cast<std::size_t>(cfg.map_rows) * cfg.map_cols;
  b.maps.resize(1, static_cast<Eigen::Index>(cells * observations.size()));
  b.state.resize(NetConfig::kStateDim, b.size);
  b.command.resize(NetConfig::kCommandDim, b.size);
  for (int i = 0; i < b.size; ++i) {
    const Observation& o = *observations[static_cast<std::size_t>(i)];
    if (o.map.size() != cells) {
      throw std::invalid_argument("observation map has " + std::to_string(o.map.size()) + " cells, network expects " +
                                  std::to_string(cells));
    }
    T* dst = b.maps.data() + cells * static_cast<std::size_t>(i);
    for (std::size_t k = 0; k < cells; ++k) dst[k] = static_cast<T>(o.map[k]);
    for (int k = 0; k < NetConfig::kStateDim; ++k) b.state(k, i) = static_cast<T>(o.state[k]);
    for (int k = 0; k < NetConfig::kCommandDim; ++k) b.command(k, i) = static_cast<T>(o.command[k]);
  }
  return b;
}

template <typename T>
ObservationBatch<T> make_batch(std::span<const Observation> observations, const NetConfig& cfg) {
  std::vector<const Observation*> ptrs;
  ptrs.reserve(observations.size());
  for (const auto& o : observations) ptrs.push_back(&o);
  return make_batch<T>(std::span<const Observation* const>(ptrs), cfg);
}

// ---------------------------------------------------------------- conv kernels

namespace {

// Activations are stored [channels, batch * height * width] column-major, so
// one pixel's channels are contiguous (HWC per sample). Conv weights use
// w[tap][ci][co] with tap = ky * 3 + kx over a zero-padded 3x3 window.

constexpr int kMaxChannels = 256;

template <typename T>
void pad_image(const T* x, int H, int W, int C, std::vector<T>& out) {
  const int Wp = W + 2;
  out.assign(static_cast<std::size_t>(H + 2) * Wp * C, T(0));
  for (int y = 0; y < H; ++y) {
    std::copy_n(x + static_cast<std::size_t>(y) * W * C, static_cast<std::size_t>(W) * C,
                out.data() + (static_cast<std::size_t>(y + 1) * Wp + 1) * C);
  }
}

template <typename T>
void unpad_accumulate(const std::vector<T>& xpad, int H, int W, int C, T* out) {
  const int Wp = W + 2;
  for (int y = 0; y < H; ++y) {
    const T* src = xpad.data() + (static_cast<std::size_t>(y + 1) * Wp + 1) * C;
    T* dst = out + static_cast<std::size_t>(y) * W * C;
    for (int k = 0; k < W * C; ++k) dst[k] += src[k];
  }
}

// Channel vector of compile-time length N, or bounded dynamic length for N = 0.
template <typename T, int N>
using ChanVec = Eigen::Array<T, N ? N : Eigen::Dynamic, 1, 0, N ? N : kMaxChannels, 1>;

template <typename T, int N>
Eigen::Map<const ChanVec<T, N>> chan(const T* p, int n) {
  return Eigen::Map<const ChanVec<T, N>>(p, n);
}

template <typename T, int N>
Eigen::Map<ChanVec<T, N>> chan(T* p, int n) {
  return Eigen::Map<ChanVec<T, N>>(p, n);
}

// y = b + conv(xpad); CI_/CO_ of 0 means "use the runtime count".
template <typename T, int CI_, int CO_, int S>
void conv_forward_kernel(const T* xpad, int Wp, int ci_rt, int co_rt, const T* w, const T* b, T* y, int Ho, int Wo) {
  using V = ChanVec<T, CO_>;
  const int CI = CI_ ? CI_ : ci_rt;
  const int CO = CO_ ? CO_ : co_rt;
  // narrow outputs fill half a vector register, so block more pixels
  constexpr int NB = (CO_ != 0 && CO_ * sizeof(T) <= 32) ? 8 : 4;
  const V bias = chan<T, CO_>(b, CO);
  for (int oy = 0; oy < Ho; ++oy) {
    int ox = 0;
    for (; ox + NB <= Wo; ox += NB) {
      V acc[NB];
#pragma GCC unroll 8
      for (int q = 0; q < NB; ++q) acc[q] = bias;
      for (int ky = 0; ky < 3; ++ky) {
        const T* row = xpad + (static_cast<std::size_t>(oy * S + ky) * Wp + ox * S) * CI;
        for (int kx = 0; kx < 3; ++kx) {
          const T* wp = w + (ky * 3 + kx) * CI * CO;
          const T* xp = row + kx * CI;
          for (int ci = 0; ci < CI; ++ci) {
            const V wr = chan<T, CO_>(wp + ci * CO, CO);
#pragma GCC unroll 8
            for (int q = 0; q < NB; ++q) acc[q] += xp[q * S * CI + ci] * wr;
          }
        }
      }
      T* yp = y + (static_cast<std::size_t>(oy) * Wo + ox) * CO;
#pragma GCC unroll 8
      for (int q = 0; q < NB; ++q) chan<T, CO_>(yp + q * CO, CO) = acc[q];
    }
    for (; ox < Wo; ++ox) {
      V acc = bias;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T* wp = w + (ky * 3 + kx) * CI * CO;
          const T* xp = xpad + (static_cast<std::size_t>(oy * S + ky) * Wp + ox * S + kx) * CI;
          for (int ci = 0; ci < CI; ++ci) acc += xp[ci] * chan<T, CO_>(wp + ci * CO, CO);
        }
      }
      chan<T, CO_>(y + (static_cast<std::size_t>(oy) * Wo + ox) * CO, CO) = acc;
    }
  }
}

template <typename T, int S>
void conv_forward(const T* xpad, int Wp, int CI, int CO, const T* w, const T* b, T* y, int Ho, int Wo) {
#define DNRL_CONV_CASE(ci, co)                                                    \
  if (CI == ci && CO == co) {                                                     \
    conv_forward_kernel<T, ci, co, S>(xpad, Wp, CI, CO, w, b, y, Ho, Wo);         \
    return;                                                                       \
  }
  DNRL_CONV_CASE(1, 8)
  DNRL_CONV_CASE(8, 8)
  DNRL_CONV_CASE(8, 16)
  DNRL_CONV_CASE(16, 8)
  DNRL_CONV_CASE(16, 16)
#undef DNRL_CONV_CASE
  conv_forward_kernel<T, 0, 0, S>(xpad, Wp, CI, CO, w, b, y, Ho, Wo);
}

// dw[tap][ci][co] += sum_p x[p + tap][ci] * dy[p][co]; db[co] += sum_p dy[p][co]
template <typename T, int CI_, int CO_, int S>
void conv_weight_grad_kernel(const T* xpad, int Wp, int ci_rt, int co_rt, const T* dy, int Ho, int Wo, T* dw, T* db) {
  using V = ChanVec<T, CO_>;
  const int CI = CI_ ? CI_ : ci_rt;
  const int CO = CO_ ? CO_ : co_rt;
  V bias_acc = chan<T, CO_>(db, CO);
  for (int k = 0; k < Ho * Wo; ++k) bias_acc += chan<T, CO_>(dy + static_cast<std::size_t>(k) * CO, CO);
  chan<T, CO_>(db, CO) = bias_acc;

  if constexpr (CI_ != 0 && CO_ != 0) {
    // one tap at a time so the CI x CO block stays in registers
    for (int tap = 0; tap < 9; ++tap) {
      const int ky = tap / 3, kx = tap % 3;
      T* wp = dw + tap * CI * CO;
      V acc[CI_];
#pragma GCC unroll 16
      for (int ci = 0; ci < CI_; ++ci) acc[ci] = chan<T, CO_>(wp + ci * CO, CO);
      for (int oy = 0; oy < Ho; ++oy) {
        const T* xrow = xpad + (static_cast<std::size_t>(oy * S + ky) * Wp + kx) * CI;
        const T* grow = dy + static_cast<std::size_t>(oy) * Wo * CO;
        for (int ox = 0; ox < Wo; ++ox) {
          const V g = chan<T, CO_>(grow + ox * CO, CO);
          const T* xp = xrow + ox * S * CI;
#pragma GCC unroll 16
          for (int ci = 0; ci < CI_; ++ci) acc[ci] += xp[ci] * g;
        }
      }
#pragma GCC unroll 16
      for (int ci = 0; ci < CI_; ++ci) chan<T, CO_>(wp + ci * CO, CO) = acc[ci];
    }
  } else {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const V g = chan<T, CO_>(dy + (static_cast<std::size_t>(oy) * Wo + ox) * CO, CO);
        for (int tap = 0; tap < 9; ++tap) {
          const T* xp = xpad + (static_cast<std::size_t>(oy * S + tap / 3) * Wp + ox * S + tap % 3) * CI;
          T* wp = dw + tap * CI * CO;
          for (int ci = 0; ci < CI; ++ci) chan<T, CO_>(wp + ci * CO, CO) += xp[ci] * g;
        }
      }
    }
  }
}

template <typename T, int S>
void conv_weight_grad(const T* xpad, int Wp, int CI, int CO, const T* dy, int Ho, int Wo, T* dw, T* db) {
#define DNRL_CONV_CASE(ci, co)                                                     \
  if (CI == ci && CO == co) {                                                      \
    conv_weight_grad_kernel<T, ci, co, S>(xpad, Wp, CI, CO, dy, Ho, Wo, dw, db);   \
    return;                                                                        \
  }
  DNRL_CONV_CASE(1, 8)
  DNRL_CONV_CASE(8, 8)
  DNRL_CONV_CASE(8, 16)
  DNRL_CONV_CASE(16, 16)
#undef DNRL_CONV_CASE
  conv_weight_grad_kernel<T, 0, 0, S>(xpad, Wp, CI, CO, dy, Ho, Wo, dw, db);
}

// Input gradient of a strided conv by scattering each output gradient back
// over its receptive field (into a padded buffer). wt is the per-tap
// transpose, wt[tap][co][ci].
template <typename T, int CI_>
void conv_input_grad_scatter_kernel(const T* dy, int Ho, int Wo, int S, int ci_rt, int CO, const T* wt, T* dxpad,
                                    int Wp) {
  const int CI = CI_ ? CI_ : ci_rt;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      const T* g = dy + (static_cast<std::size_t>(oy) * Wo + ox) * CO;
      for (int tap = 0; tap < 9; ++tap) {
        const T* wp = wt + tap * CI * CO;
        ChanVec<T, CI_> s0 = ChanVec<T, CI_>::Zero(CI), s1 = ChanVec<T, CI_>::Zero(CI);
        int co = 0;
        for (; co + 2 <= CO; co += 2) {
          s0 += g[co] * chan<T, CI_>(wp + co * CI, CI);
          s1 += g[co + 1] * chan<T, CI_>(wp + (co + 1) * CI, CI);
        }
        if (co < CO) s0 += g[co] * chan<T, CI_>(wp + co * CI, CI);
        T* dxp = dxpad + (static_cast<std::size_t>(oy * S + tap / 3) * Wp + ox * S + tap % 3) * CI;
        chan<T, CI_>(dxp, CI) += s0 + s1;
      }
    }
  }
}

template <typename T>
void conv_input_grad_scatter(const T* dy, int Ho, int Wo, int S, int CI, int CO, const T* wt, T* dxpad, int Wp) {
  if (CI == 8) return conv_input_grad_scatter_kernel<T, 8>(dy, Ho, Wo, S, CI, CO, wt, dxpad, Wp);
  if (CI == 16) return conv_input_grad_scatter_kernel<T, 16>(dy, Ho, Wo, S, CI, CO, wt, dxpad, Wp);
  conv_input_grad_scatter_kernel<T, 0>(dy, Ho, Wo, S, CI, CO, wt, dxpad, Wp);
}

template <typename T>
void transpose_kernel(const Mat<T>& w, int CI, int CO, std::vector<T>& wt) {
  wt.assign(static_cast<std::size_t>(9) * CI * CO, T(0));
  for (int tap = 0; tap < 9; ++tap)
    for (int ci = 0; ci < CI; ++ci)
      for (int co = 0; co < CO; ++co)
        wt[(static_cast<std::size_t>(tap) * CO + co) * CI + ci] = w.data()[(tap * CI + ci) * CO + co];
}

// Kernel for the stride-1 input gradient expressed as a forward conv:
// flipped[8 - tap][co][ci] = w[tap][ci][co].
template <typename T>
void flip_kernel(const Mat<T>& w, int CI, int CO, std::vector<T>& flipped) {
  flipped.assign(static_cast<std::size_t>(9) * CI * CO, T(0));
  for (int tap = 0; tap < 9; ++tap)
    for (int ci = 0; ci < CI; ++ci)
      for (int co = 0; co < CO; ++co)
        flipped[(static_cast<std::size_t>(8 - tap) * CO + co) * CI + ci] = w.data()[(tap * CI + ci) * CO + co];
}

template <typename T>
void relu_inplace(Mat<T>& m) {
  m = m.cwiseMax(T(0));
}

// grad *= (activation > 0)
template <typename T>
void relu_mask(Mat<T>& grad, const Mat<T>& activation) {
  grad = (activation.array() > T(0)).select(grad, T(0));
}

template <typename T>
void relu_mask(T* grad, const T* activation, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) grad[k] = activation[k] > T(0) ? grad[k] : T(0);
}

template <typename T>
void affine(const Mat<T>& w, const Mat<T>& b, const Mat<T>& x, Mat<T>& out) {
  out.noalias() = w * x;
  out.colwise() += b.col(0);
}

template <typename T>
void linear_grads(const Mat<T>& d_out, const Mat<T>& input, Mat<T>& gw, Mat<T>& gb) {
  gw.noalias() = d_out * input.transpose();
  gb = d_out.rowwise().sum();
}

struct ConvDims {
  int H0, W0, H1, W1, H2, W2, C1, C2;
  explicit ConvDims(const NetConfig& cfg)
      : H0(cfg.map_rows), W0(cfg.map_cols), H1(cfg.rows_after_conv1()), W1(cfg.cols_after_conv1()),
        H2(cfg.rows_after_conv2()), W2(cfg.cols_after_conv2()), C1(cfg.conv1_channels), C2(cfg.conv2_channels) {}
};

}  // namespace

template <typename T>
void forward(const PolicyParams<T>& p, const ObservationBatch<T>& batch, ForwardCache<T>& c, ForwardOutput<T>& out) {
  const NetConfig& cfg = p.config;
  const int B = batch.size;
  if (batch.maps.size() != static_cast<Eigen::Index>(B) * cfg.map_rows * cfg.map_cols ||
      batch.state.rows() != NetConfig::kStateDim || batch.state.cols() != B ||
      batch.command.rows() != NetConfig::kCommandDim || batch.command.cols() != B) {
    throw std::invalid_argument("observation batch shape does not match network config");
  }
  const ConvDims d(cfg);
  c.batch = B;
  c.generation = p.generation;
  c.params = &p;
  c.maps = batch.maps;

  const Eigen::Index n1 = static_cast<Eigen::Index>(B) * d.H1 * d.W1;
  const Eigen::Index n2 = static_cast<Eigen::Index>(B) * d.H2 * d.W2;
  c.a1.resize(d.C1, n1);
  c.a2.resize(d.C1, n1);
  c.a3.resize(d.C1, n1);
  c.a4.resize(d.C2, n2);
  c.a5.resize(d.C2, n2);
  c.a6.resize(d.C2, n2);

  const std::size_t s1 = static_cast<std::size_t>(d.C1) * d.H1 * d.W1;
  const std::size_t s2 = static_cast<std::size_t>(d.C2) * d.H2 * d.W2;
  std::vector<T> pad;
  for (int b = 0; b < B; ++b) {
    const T* x0 = batch.maps.data() + static_cast<std::size_t>(b) * d.H0 * d.W0;
    T* a1 = c.a1.data() + b * s1;
    T* a2 = c.a2.data() + b * s1;
    T* a3 = c.a3.data() + b * s1;
    T* a4 = c.a4.data() + b * s2;
    T* a5 = c.a5.data() + b * s2;
    T* a6 = c.a6.data() + b * s2;

    pad_image(x0, d.H0, d.W0, 1, pad);
    conv_forward<T, 2>(pad.data(), d.W0 + 2, 1, d.C1, p.conv1_w.data(), p.conv1_b.data(), a1, d.H1, d.W1);
    for (std::size_t k = 0; k < s1; ++k) a1[k] = std::max(a1[k], T(0));

    pad_image(a1, d.H1, d.W1, d.C1, pad);
    conv_forward<T, 1>(pad.data(), d.W1 + 2, d.C1, d.C1, p.res1a_w.data(), p.res1a_b.data(), a2, d.H1, d.W1);
    for (std::size_t k = 0; k < s1; ++k) a2[k] = std::max(a2[k], T(0));
    pad_image(a2, d.H1, d.W1, d.C1, pad);
    conv_forward<T, 1>(pad.data(), d.W1 + 2, d.C1, d.C1, p.res1b_w.data(), p.res1b_b.data(), a3, d.H1, d.W1);
    for (std::size_t k = 0; k < s1; ++k) a3[k] = std::max(a3[k] + a1[k], T(0));

    pad_image(a3, d.H1, d.W1, d.C1, pad);
    conv_forward<T, 2>(pad.data(), d.W1 + 2, d.C1, d.C2, p.conv2_w.data(), p.conv2_b.data(), a4, d.H2, d.W2);
    for (std::size_t k = 0; k < s2; ++k) a4[k] = std::max(a4[k], T(0));

    pad_image(a4, d.H2, d.W2, d.C2, pad);
    conv_forward<T, 1>(pad.data(), d.W2 + 2, d.C2, d.C2, p.res2a_w.data(), p.res2a_b.data(), a5, d.H2, d.W2);
    for (std::size_t k = 0; k < s2; ++k) a5[k] = std::max(a5[k], T(0));
    pad_image(a5, d.H2, d.W2, d.C2, pad);
    conv_forward<T, 1>(pad.data(), d.W2 + 2, d.C2, d.C2, p.res2b_w.data(), p.res2b_b.data(), a6, d.H2, d.W2);
    for (std::size_t k = 0; k < s2; ++k) a6[k] = std::max(a6[k] + a4[k], T(0));
  }

  const Eigen::Map<const Mat<T>> flat(c.a6.data(), cfg.flat_dim(), B);
  c.feat.noalias() = p.feat_w * flat;
  c.feat.colwise() += p.feat_b.col(0);
  relu_inplace(c.feat);

  c.trunk_in.resize(cfg.trunk_input(), B);
  c.trunk_in.topRows(cfg.feature_dim) = c.feat;
  c.trunk_in.middleRows(cfg.feature_dim, NetConfig::kStateDim) = batch.state;
  c.trunk_in.bottomRows(NetConfig::kCommandDim) = batch.command;

  affine(p.fc1_w, p.fc1_b, c.trunk_in, c.h1);
  c.h1 = c.h1.array().tanh();
  affine(p.fc2_w, p.fc2_b, c.h1, c.h2);
  c.h2 = c.h2.array().tanh();

  affine(p.actor_w, p.actor_b, c.h2, out.mu);
  affine(p.value_w, p.value_b, c.h2, out.value);
}

template <typename T>
void backward(const PolicyParams<T>& p, const ForwardCache<T>& c, const OutputGrads<T>& up, PolicyParams<T>& g) {
  const NetConfig& cfg = p.config;
  const int B = c.batch;
  if (c.params != &p || c.generation != p.generation) {
    throw std::logic_error("forward cache is stale: parameters changed since the forward pass");
  }
  if (up.d_mu.rows() != NetConfig::kActionDim || up.d_mu.cols() != B || up.d_value.rows() != 1 ||
      up.d_value.cols() != B || up.d_log_std.size() != NetConfig::kActionDim) {
    throw std::logic_error("upstream gradient shape does not match the cached batch");
  }
  g.config = cfg;
  g.conv1_w.setZero(p.conv1_w.rows(), p.conv1_w.cols());
  g.conv1_b.setZero(p.conv1_b.rows(), 1);
  g.res1a_w.setZero(p.res1a_w.rows(), p.res1a_w.cols());
  g.res1a_b.setZero(p.res1a_b.rows(), 1);
  g.res1b_w.setZero(p.res1b_w.rows(), p.res1b_w.cols());
  g.res1b_b.setZero(p.res1b_b.rows(), 1);
  g.conv2_w.setZero(p.conv2_w.rows(), p.conv2_w.cols());
  g.conv2_b.setZero(p.conv2_b.rows(), 1);
  g.res2a_w.setZero(p.res2a_w.rows(), p.res2a_w.cols());
  g.res2a_b.setZero(p.res2a_b.rows(), 1);
  g.res2b_w.setZero(p.res2b_w.rows(), p.res2b_w.cols());
  g.res2b_b.setZero(p.res2b_b.rows(), 1);

  const ConvDims d(cfg);

  // heads
  linear_grads<T>(up.d_mu, c.h2, g.actor_w, g.actor_b);
  linear_grads<T>(up.d_value, c.h2, g.value_w, g.value_b);
  Mat<T> dh = p.actor_w.transpose() * up.d_mu;
  dh.noalias() += p.value_w.transpose() * up.d_value;

  // trunk
  dh.array() *= T(1) - c.h2.array().square();
  linear_grads<T>(dh, c.h1, g.fc2_w, g.fc2_b);
  Mat<T> d_h1 = p.fc2_w.transpose() * dh;
  d_h1.array() *= T(1) - c.h1.array().square();
  linear_grads<T>(d_h1, c.trunk_in, g.fc1_w, g.fc1_b);
  Mat<T> d_trunk = p.fc1_w.transpose() * d_h1;

  Mat<T> d_feat = d_trunk.topRows(cfg.feature_dim);
  relu_mask(d_feat, c.feat);
  const Eigen::Map<const Mat<T>> flat(c.a6.data(), cfg.flat_dim(), B);
  g.feat_w.noalias() = d_feat * flat.transpose();
  g.feat_b = d_feat.rowwise().sum();
  Mat<T> d_flat = p.feat_w.transpose() * d_feat;  // [flat_dim, B], same layout as a6

  std::vector<T> flip_r2b, flip_r2a, flip_r1b, flip_r1a;
  flip_kernel(p.res2b_w, d.C2, d.C2, flip_r2b);
  flip_kernel(p.res2a_w, d.C2, d.C2, flip_r2a);
  flip_kernel(p.res1b_w, d.C1, d.C1, flip_r1b);
  flip_kernel(p.res1a_w, d.C1, d.C1, flip_r1a);
  std::vector<T> conv2_t;
  transpose_kernel(p.conv2_w, d.C1, d.C2, conv2_t);
  const std::vector<T> zero_bias(static_cast<std::size_t>(std::max(d.C1, d.C2)), T(0));

  const std::size_t s1 = static_cast<std::size_t>(d.C1) * d.H1 * d.W1;
  const std::size_t s2 = static_cast<std::size_t>(d.C2) * d.H2 * d.W2;
  std::vector<T> pad, gpad, d_z6(s2), d_a5(s2), d_a4(s2), d_a3(s1), d_a2(s1), d_a1(s1);
  for (int b = 0; b < B; ++b) {
    const T* a1 = c.a1.data() + b * s1;
    const T* a2 = c.a2.data() + b * s1;
    const T* a3 = c.a3.data() + b * s1;
    const T* a4 = c.a4.data() + b * s2;
    const T* a5 = c.a5.data() + b * s2;
    const T* a6 = c.a6.data() + b * s2;

    // residual block 2: a6 = relu(conv_b(a5) + a4)
    std::copy_n(d_flat.data() + b * s2, s2, d_z6.data());
    relu_mask(d_z6.data(), a6, s2);
    pad_image(a5, d.H2, d.W2, d.C2, pad);
    conv_weight_grad<T, 1>(pad.data(), d.W2 + 2, d.C2, d.C2, d_z6.data(), d.H2, d.W2, g.res2b_w.data(),
                           g.res2b_b.data());
    pad_image(d_z6.data(), d.H2, d.W2, d.C2, gpad);
    conv_forward<T, 1>(gpad.data(), d.W2 + 2, d.C2, d.C2, flip_r2b.data(), zero_bias.data(), d_a5.data(), d.H2, d.W2);
    relu_mask(d_a5.data(), a5, s2);

    pad_image(a4, d.H2, d.W2, d.C2, pad);
    conv_weight_grad<T, 1>(pad.data(), d.W2 + 2, d.C2, d.C2, d_a5.data(), d.H2, d.W2, g.res2a_w.data(),
                           g.res2a_b.data());
    pad_image(d_a5.data(), d.H2, d.W2, d.C2, gpad);
    conv_forward<T, 1>(gpad.data(), d.W2 + 2, d.C2, d.C2, flip_r2a.data(), zero_bias.data(), d_a4.data(), d.H2, d.W2);
    for (std::size_t k = 0; k < s2; ++k) d_a4[k] += d_z6[k];
    relu_mask(d_a4.data(), a4, s2);

    // strided conv 2
    pad_image(a3, d.H1, d.W1, d.C1, pad);
    conv_weight_grad<T, 2>(pad.data(), d.W1 + 2, d.C1, d.C2, d_a4.data(), d.H2, d.W2, g.conv2_w.data(),
                           g.conv2_b.data());
    gpad.assign(static_cast<std::size_t>(d.H1 + 2) * (d.W1 + 2) * d.C1, T(0));
    conv_input_grad_scatter(d_a4.data(), d.H2, d.W2, 2, d.C1, d.C2, conv2_t.data(), gpad.data(), d.W1 + 2);
    std::fill(d_a3.begin(), d_a3.end(), T(0));
    unpad_accumulate(gpad, d.H1, d.W1, d.C1, d_a3.data());
    relu_mask(d_a3.data(), a3, s1);

    // residual block 1: a3 = relu(conv_b(a2) + a1)
    pad_image(a2, d.H1, d.W1, d.C1, pad);
    conv_weight_grad<T, 1>(pad.data(), d.W1 + 2, d.C1, d.C1, d_a3.data(), d.H1, d.W1, g.res1b_w.data(),
                           g.res1b_b.data());
    pad_image(d_a3.data(), d.H1, d.W1, d.C1, gpad);
    conv_forward<T, 1>(gpad.data(), d.W1 + 2, d.C1, d.C1, flip_r1b.data(), zero_bias.data(), d_a2.data(), d.H1, d.W1);
    relu_mask(d_a2.data(), a2, s1);

    pad_image(a1, d.H1, d.W1, d.C1, pad);
    conv_weight_grad<T, 1>(pad.data(), d.W1 + 2, d.C1, d.C1, d_a2.data(), d.H1, d.W1, g.res1a_w.data(),
                           g.res1a_b.data());
    pad_image(d_a2.data(), d.H1, d.W1, d.C1, gpad);
    conv_forward<T, 1>(gpad.data(), d.W1 + 2, d.C1, d.C1, flip_r1a.data(), zero_bias.data(), d_a1.data(), d.H1, d.W1);
    for (std::size_t k = 0; k < s1; ++k) d_a1[k] += d_a3[k];
    relu_mask(d_a1.data(), a1, s1);

    // first conv; the map itself needs no gradient
    pad_image(c.maps.data() + static_cast<std::size_t>(b) * d.H0 * d.W0, d.H0, d.W0, 1, pad);
    conv_weight_grad<T, 2>(pad.data(), d.W0 + 2, 1, d.C1, d_a1.data(), d.H1, d.W1, g.conv1_w.data(),
                           g.conv1_b.data());
  }

  g.log_std = up.d_log_std;
}

// ---------------------------------------------------------------- gaussian

double gaussian_log_prob(std::span<const double> raw, std::span<const double> mu, std::span<const double> log_std) {
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  double lp = 0.0;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const double z = (raw[j] - mu[j]) * std::exp(-log_std[j]);
    lp += -0.5 * z * z - log_std[j] - kHalfLog2Pi;
  }
  return lp;
}

double squash_log_jacobian(std::span<const double> raw, double max_accel) {
  constexpr double kLog2 = 0.69314718055994530942;
  double s = 0.0;
  for (double u : raw) {
    const double x = -2.0 * u;
    const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    s += std::log(max_accel) + 2.0 * (kLog2 - u - softplus);
  }
  return s;
}

double squashed_log_prob(std::span<const double> raw, std::span<const double> mu, std::span<const double> log_std,
                         double max_accel) {
  return gaussian_log_prob(raw, mu, log_std) - squash_log_jacobian(raw, max_accel);
}

double gaussian_entropy(std::span<const double> log_std) {
  constexpr double kHalfLog2PiE = 1.41893853320467274178;
  double h = 0.0;
  for (double s : log_std) h += s + kHalfLog2PiE;
  return h;
}

std::vector<ActionSample> sample_actions(const PolicyParams<float>& params, std::span<const Observation> obs, Rng& rng,
                                         ForwardCache<float>& cache) {
  const auto batch = make_batch<float>(obs, params.config);
  ForwardOutput<float> out;
  forward(params, batch, cache, out);
  const double a_max = params.config.max_accel;
  const std::array<double, 2> log_std{params.log_std(0, 0), params.log_std(1, 0)};
  std::vector<ActionSample> samples(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    ActionSample& s = samples[i];
    for (int j = 0; j < 2; ++j) {
      s.mean_raw[static_cast<std::size_t>(j)] = out.mu(j, static_cast<Eigen::Index>(i));
      s.raw[static_cast<std::size_t>(j)] = s.mean_raw[static_cast<std::size_t>(j)] +
                                           std::exp(log_std[static_cast<std::size_t>(j)]) * rng.normal();
    }
    s.action = {a_max * std::tanh(s.raw[0]), a_max * std::tanh(s.raw[1])};
    s.log_prob = squashed_log_prob(s.raw, s.mean_raw, log_std, a_max);
    s.value = out.value(0, static_cast<Eigen::Index>(i));
  }
  return samples;
}

ActionSample sample_action(const PolicyParams<float>& params, const Observation& obs, Rng& rng) {
  ForwardCache<float> cache;
  return sample_actions(params, std::span<const Observation>(&obs, 1), rng, cache).front();
}

std::vector<Vec2> greedy_actions(const PolicyParams<float>& params, std::span<const Observation> obs,
                                 ForwardCache<float>& cache) {
  const auto batch = make_batch<float>(obs, params.config);
  ForwardOutput<float> out;
  forward(params, batch, cache, out);
  const double a_max = params.config.max_accel;
  std::vector<Vec2> actions;
  actions.reserve(obs.size());
  for (Eigen::Index i = 0; i < out.mu.cols(); ++i) {
    actions.push_back({a_max * std::tanh(static_cast<double>(out.mu(0, i))),
                       a_max * std::tanh(static_cast<double>(out.mu(1, i)))});
  }
  return actions;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'D', 'N', 'R', 'L'};

template <typename U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

void put_f32(std::ostream& os, float f) { put_le(os, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <typename U>
  U get(const std::string& context) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const int ch = is_.get();
      if (ch == std::char_traits<char>::eof()) throw CheckpointError(what_ + ": truncated while reading " + context);
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
    }
    return static_cast<U>(v);
  }

  std::string bytes(std::size_t n, const std::string& context) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw CheckpointError(what_ + ": truncated while reading " + context);
    return s;
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace

void save_checkpoint(const PolicyParams<float>& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint64_t>(os, params.config.shape_hash());
  params.for_each([&](const char* name, const Mat<float>& m) {
    const std::uint32_t len = static_cast<std::uint32_t>(std::strlen(name));
    put_le(os, len);
    os.write(name, len);
    put_le<std::uint32_t>(os, 2);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) put_f32(os, m.data()[k]);
  });
  if (!os) throw CheckpointError("write failed for " + path.string());
}

PolicyParams<float> load_checkpoint(const std::filesystem::path& path, const NetConfig& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  const std::string magic = r.bytes(4, "magic");
  if (magic != std::string(kMagic, 4)) throw CheckpointError(path.string() + ": bad magic, not a DNRL checkpoint");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto hash = r.get<std::uint64_t>("config hash");

  Rng unused(0);
  PolicyParams<float> p = init_params<float>(expected, unused, InitScheme::Zero);
  p.for_each([&](const char* name, Mat<float>& m) {
    const std::string ctx = std::string("tensor '") + name + "'";
    const auto len = r.get<std::uint32_t>(ctx + " name length");
    if (len > 256) throw CheckpointError(path.string() + ": implausible name length before " + ctx);
    const std::string got = r.bytes(len, ctx + " name");
    if (got != name) throw CheckpointError(path.string() + ": expected " + ctx + ", found tensor '" + got + "'");
    const auto rank = r.get<std::uint32_t>(ctx + " rank");
    if (rank != 2) throw CheckpointError(path.string() + ": " + ctx + " has rank " + std::to_string(rank));
    const auto rows = r.get<std::uint32_t>(ctx + " dims");
    const auto cols = r.get<std::uint32_t>(ctx + " dims");
    if (rows != m.rows() || cols != m.cols()) {
      std::ostringstream msg;
      msg << path.string() << ": shape mismatch for " << ctx << ": checkpoint [" << rows << ", " << cols
          << "], network expects [" << m.rows() << ", " << m.cols() << "]";
      throw CheckpointError(msg.str());
    }
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::bit_cast<float>(r.get<std::uint32_t>(ctx + " data"));
  });
  if (!r.at_end()) throw CheckpointError(path.string() + ": trailing bytes after last tensor");
  if (hash != expected.shape_hash()) throw CheckpointError(path.string() + ": config hash mismatch");
  return p;
}

// ---------------------------------------------------------------- instantiations

template struct PolicyParams<float>;
template struct PolicyParams<double>;
template PolicyParams<double> PolicyParams<float>::cast<double>() const;
template PolicyParams<float> PolicyParams<double>::cast<float>() const;
template PolicyParams<float> PolicyParams<float>::cast<float>() const;
template PolicyParams<double> PolicyParams<double>::cast<double>() const;
template PolicyParams<float> init_params<float>(const NetConfig&, Rng&, InitScheme);
template PolicyParams<double> init_params<double>(const NetConfig&, Rng&, InitScheme);
template ObservationBatch<float> make_batch<float>(std::span<const Observation* const>, const NetConfig&);
template ObservationBatch<double> make_batch<double>(std::span<const Observation* const>, const NetConfig&);
template ObservationBatch<float> make_batch<float>(std::span<const Observation>, const NetConfig&);
template ObservationBatch<double> make_batch<double>(std::span<const Observation>, const NetConfig&);
template void forward<float>(const PolicyParams<float>&, const ObservationBatch<float>&, ForwardCache<float>&,
                             ForwardOutput<float>&);
template void forward<double>(const PolicyParams<double>&, const ObservationBatch<double>&, ForwardCache<double>&,
                              ForwardOutput<double>&);
template void backward<float>(const PolicyParams<float>&, const ForwardCache<float>&, const OutputGrads<float>&,
                              PolicyParams<float>&);
template void backward<double>(const PolicyParams<double>&, const ForwardCache<double>&, const OutputGrads<double>&,
                               PolicyParams<double>&);

}  // namespace dnrl
