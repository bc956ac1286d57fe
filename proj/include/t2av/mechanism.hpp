#pragma once

// Reference kernels for the generation model's math: parameter-free temporal
// self-attention and its multi-head stack, dual residual fusion of text and
// visual features, the visual-aligned contrastive (VCLAP) objective with an
// analytic logit gradient, and the DDPM forward process / noise objective.
//
// Everything here is a pure function of its inputs and runs in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"

namespace t2av {

/// T x D feature sequence (one row per timestep).
using FeatureSeq = Matrix;

/// B sequences of equal shape T x D.
using FeatureBatch = std::vector<FeatureSeq>;

inline void check_finite(const Matrix& m, const char* what) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw NonFiniteValue(std::string(what) + ": non-finite entry");
  }
}

// ---------------------------------------------------------------------------
// Temporal self-attention
// ---------------------------------------------------------------------------

namespace detail {

/// Key indices in lexicographic row order. Summing in this order makes the
/// output independent of how the keys were permuted on input.
inline std::vector<std::size_t> canonical_order(const Matrix& keys) {
  std::vector<std::size_t> order(keys.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = keys.row(a);
    const auto rb = keys.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// softmax(q K^T / scale) for every query row; row r, column j is the weight
/// query r puts on key j.
inline Matrix attention_weights(const Matrix& queries, const Matrix& keys, double scale) {
  if (queries.cols() != keys.cols()) throw ShapeMismatch("attention: query/key widths differ");
  if (keys.rows() == 0) throw InvalidArgument("attention: no keys");
  const auto order = detail::canonical_order(keys);
  Matrix w(queries.rows(), keys.rows());
  std::vector<double> logits(keys.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j : order) {
      logits[j] = detail::dot(queries.row(q), keys.row(j)) / scale;
      top = std::max(top, logits[j]);
    }
    double z = 0.0;
    for (std::size_t j : order) {
      logits[j] = std::exp(logits[j] - top);
      z += logits[j];
    }
    for (std::size_t j = 0; j < keys.rows(); ++j) w(q, j) = logits[j] / z;
  }
  return w;
}

/// phi(q, K, K) = softmax(q K^T / scale) K, keys doubling as values.
inline Matrix attend(const Matrix& queries, const Matrix& keys, double scale) {
  const Matrix w = attention_weights(queries, keys, scale);
  const auto order = detail::canonical_order(keys);
  Matrix out(queries.rows(), keys.cols());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    auto o = out.row(q);
    for (std::size_t j : order) {
      const double wj = w(q, j);
      const auto k = keys.row(j);
      for (std::size_t c = 0; c < o.size(); ++c) o[c] += wj * k[c];
    }
  }
  return out;
}

/// Each timestep attends over the whole sequence, scale sqrt(D), no learned
/// projections.
inline FeatureSeq temporal_self_attention(const FeatureSeq& seq) {
  check_finite(seq, "temporal_self_attention");
  return attend(seq, seq, std::sqrt(static_cast<double>(seq.cols())));
}

struct AttentionConfig {
  std::size_t heads = 8;
  std::size_t depth = 4;
  std::size_t dim = 768;
  bool residual = true;
};

/// `depth` layers; each splits channels into `heads` contiguous slices,
/// self-attends within every slice at scale sqrt(D / heads), concatenates, and
/// adds the layer input when `residual` is set.
inline FeatureSeq multi_head_stack(const FeatureSeq& seq, const AttentionConfig& cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw InvalidArgument("multi_head_stack: dim " + std::to_string(cfg.dim) +
                          " is not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  if (seq.cols() != cfg.dim) {
    throw ShapeMismatch("multi_head_stack: sequence width " + std::to_string(seq.cols()) +
                        " differs from configured dim " + std::to_string(cfg.dim));
  }
  check_finite(seq, "multi_head_stack");
  const std::size_t t = seq.rows();
  const std::size_t width = cfg.dim / cfg.heads;
  const double scale = std::sqrt(static_cast<double>(width));

  FeatureSeq x = seq;
  for (std::size_t layer = 0; layer < cfg.depth; ++layer) {
    FeatureSeq next(t, cfg.dim);
    Matrix slice(t, width);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < width; ++c) slice(r, c) = x(r, h * width + c);
      const Matrix head = attend(slice, slice, scale);
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < width; ++c) next(r, h * width + c) = head(r, c);
    }
    if (cfg.residual) next += x;
    x = std::move(next);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Dual residual fusion
// ---------------------------------------------------------------------------

/// g(x) = tanh(x W + b) per modality, W is D x D acting on row vectors.
struct FusionParams {
  Matrix text_weight;
  std::vector<double> text_bias;
  Matrix video_weight;
  std::vector<double> video_bias;

  static FusionParams zeros(std::size_t dim) {
    return {Matrix(dim, dim), std::vector<double>(dim, 0.0), Matrix(dim, dim), std::vector<double>(dim, 0.0)};
  }
};

/// (F_t + g_t(F_t)) + (F_v + g_v(F_v)), row by row.
inline FeatureSeq dual_residual_fusion(const FeatureSeq& text, const FeatureSeq& video,
                                       const FusionParams& p) {
  if (text.rows() != video.rows() || text.cols() != video.cols()) {
    throw ShapeMismatch("dual_residual_fusion: text is " + std::to_string(text.rows()) + "x" +
                        std::to_string(text.cols()) + ", video is " + std::to_string(video.rows()) +
                        "x" + std::to_string(video.cols()));
  }
  const std::size_t d = text.cols();
  auto check = [&](const Matrix& w, const std::vector<double>& b) {
    if (w.rows() != d || w.cols() != d || b.size() != d) {
      throw ShapeMismatch("dual_residual_fusion: parameters do not match feature dim " + std::to_string(d));
    }
  };
  check(p.text_weight, p.text_bias);
  check(p.video_weight, p.video_bias);

  auto branch = [&](const FeatureSeq& x, const Matrix& w, const std::vector<double>& b) {
    FeatureSeq g = x * w;
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) g(r, c) = x(r, c) + std::tanh(g(r, c) + b[c]);
    return g;
  };
  return branch(text, p.text_weight, p.text_bias) + branch(video, p.video_weight, p.video_bias);
}

// ---------------------------------------------------------------------------
// VCLAP contrastive objective
// ---------------------------------------------------------------------------

struct VClapConfig {
  std::size_t batch = 0;
  std::size_t timesteps = 0;
  std::size_t dim = 0;
  double temperature = 0.07;
};

namespace detail {

inline VClapConfig check_vclap_inputs(const FeatureBatch& audio, const FeatureBatch& text, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgument("vclap: temperature must be finite and positive");
  }
  if (audio.size() < 2) throw InvalidArgument("vclap: batch size must be at least 2");
  if (audio.size() != text.size()) throw ShapeMismatch("vclap: audio and text batch sizes differ");
  const std::size_t t = audio.front().rows();
  const std::size_t d = audio.front().cols();
  if (t == 0 || d == 0) throw InvalidArgument("vclap: empty sequences");
  for (std::size_t b = 0; b < audio.size(); ++b) {
    for (const auto* m : {&audio[b], &text[b]}) {
      if (m->rows() != t || m->cols() != d) throw ShapeMismatch("vclap: every item must be T x D");
      check_finite(*m, "vclap");
    }
  }
  return {audio.size(), t, d, temperature};
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace detail

/// Per timestep i, a B x B matrix with entry (b, m) = cos(a_{b,i}, t_{m,i}) / tau.
inline std::vector<Matrix> vclap_logits(const FeatureBatch& audio, const FeatureBatch& text,
                                        double temperature) {
  const auto cfg = detail::check_vclap_inputs(audio, text, temperature);
  std::vector<Matrix> logits(cfg.timesteps, Matrix(cfg.batch, cfg.batch));
  for (std::size_t i = 0; i < cfg.timesteps; ++i) {
    std::vector<double> tn(cfg.batch);
    for (std::size_t m = 0; m < cfg.batch; ++m) {
      tn[m] = detail::norm(text[m].row(i));
      if (tn[m] == 0.0) {
        throw ZeroNormVector("vclap: zero-norm text vector at batch " + std::to_string(m) + ", step " +
                             std::to_string(i));
      }
    }
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const double an = detail::norm(audio[b].row(i));
      if (an == 0.0) {
        throw ZeroNormVector("vclap: zero-norm audio vector at batch " + std::to_string(b) + ", step " +
                             std::to_string(i));
      }
      for (std::size_t m = 0; m < cfg.batch; ++m) {
        logits[i](b, m) = detail::dot(audio[b].row(i), text[m].row(i)) / (an * tn[m]) / temperature;
      }
    }
  }
  return logits;
}

/// -(1/B) sum_b sum_i log softmax_m(L_i[b, :])[b]. Normalized by B only.
inline double vclap_loss_from_logits(const std::vector<Matrix>& logits) {
  if (logits.empty()) throw InvalidArgument("vclap: no timesteps");
  const std::size_t batch = logits.front().rows();
  double total = 0.0;
  for (const auto& l : logits) {
    if (!l.square() || l.rows() != batch) throw ShapeMismatch("vclap: logits must be B x B per step");
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = l.row(b);
      const double top = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - top);
      total += (top + std::log(z)) - row[b];
    }
  }
  return total / static_cast<double>(batch);
}

inline double vclap_loss(const FeatureBatch& audio, const FeatureBatch& text, double temperature = 0.07) {
  return vclap_loss_from_logits(vclap_logits(audio, text, temperature));
}

/// d loss / d L_i[b, m] = (softmax(L_i[b, :])[m] - [m == b]) / B.
inline std::vector<Matrix> vclap_logit_gradient(const std::vector<Matrix>& logits) {
  if (logits.empty()) throw InvalidArgument("vclap: no timesteps");
  const std::size_t batch = logits.front().rows();
  std::vector<Matrix> grad;
  grad.reserve(logits.size());
  for (const auto& l : logits) {
    Matrix g(batch, batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = l.row(b);
      const double top = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - top);
      for (std::size_t m = 0; m < batch; ++m) {
        const double p = std::exp(row[m] - top) / z;
        g(b, m) = (p - (m == b ? 1.0 : 0.0)) / static_cast<double>(batch);
      }
    }
    grad.push_back(std::move(g));
  }
  return grad;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  double epsilon = 0.0;
};

/// Entries where both gradients are below this magnitude are compared
/// absolutely rather than relatively.
inline constexpr double kGradCheckFloor = 1e-6;

namespace detail {

// Loss evaluated in extended precision so that central differences of small
// softmax entries are not swamped by roundoff in the other terms.
inline long double vclap_loss_extended(const std::vector<Matrix>& logits) {
  const std::size_t batch = logits.front().rows();
  long double total = 0.0L;
  for (const auto& l : logits) {
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = l.row(b);
      const long double top = *std::max_element(row.begin(), row.end());
      long double z = 0.0L;
      for (double v : row) z += std::exp(static_cast<long double>(v) - top);
      total += (top + std::log(z)) - static_cast<long double>(row[b]);
    }
  }
  return total / static_cast<long double>(batch);
}

}  // namespace detail

/// Max relative error between the analytic logit gradient and central
/// differences of the loss.
inline GradCheckResult vclap_grad_check(const std::vector<Matrix>& logits, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw InvalidArgument("vclap_grad_check: epsilon must lie in [1e-7, 1e-3]");
  }
  const auto analytic = vclap_logit_gradient(logits);
  auto probe = logits;
  GradCheckResult result{0.0, epsilon};
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t b = 0; b < probe[i].rows(); ++b) {
      for (std::size_t m = 0; m < probe[i].cols(); ++m) {
        const double saved = probe[i](b, m);
        probe[i](b, m) = saved + epsilon;
        const long double up = detail::vclap_loss_extended(probe);
        probe[i](b, m) = saved - epsilon;
        const long double down = detail::vclap_loss_extended(probe);
        probe[i](b, m) = saved;
        // the actual step after rounding saved +/- epsilon to double
        const long double h = (static_cast<long double>(saved + epsilon) - static_cast<long double>(saved - epsilon));
        const double numeric = static_cast<double>((up - down) / h);
        const double a = analytic[i](b, m);
        const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
        result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / denom);
      }
    }
  }
  return result;
}

inline GradCheckResult vclap_grad_check(const FeatureBatch& audio, const FeatureBatch& text,
                                        double temperature, double epsilon) {
  return vclap_grad_check(vclap_logits(audio, text, temperature), epsilon);
}

// ---------------------------------------------------------------------------
// Diffusion forward process and noise objective
// ---------------------------------------------------------------------------

struct DiffusionSchedule {
  std::vector<double> betas;
  std::vector<double> alpha_bars;

  std::size_t steps() const noexcept { return betas.size(); }
};

/// Betas linear from beta_start to beta_end over `steps`; alpha_bar_n = prod_{k<=n} (1 - beta_k).
inline DiffusionSchedule linear_schedule(std::size_t steps = 1000, double beta_start = 1e-4,
                                         double beta_end = 0.02) {
  if (steps == 0) throw InvalidArgument("diffusion schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw InvalidArgument("diffusion schedule betas must satisfy 0 < start <= end < 1");
  }
  DiffusionSchedule s;
  s.betas.resize(steps);
  s.alpha_bars.resize(steps);
  double running = 1.0;
  for (std::size_t n = 0; n < steps; ++n) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(n) / static_cast<double>(steps - 1);
    s.betas[n] = beta_start + (beta_end - beta_start) * frac;
    running *= 1.0 - s.betas[n];
    s.alpha_bars[n] = running;
  }
  return s;
}

struct LatentSpec {
  std::size_t channels = 8;
  std::size_t time = 1024;
  std::size_t freq = 64;
  std::size_t compression = 4;

  /// C x T/r x F/r; T and F must divide exactly.
  std::array<std::size_t, 3> shape() const {
    if (!channels || !time || !freq || !compression) throw InvalidArgument("latent spec fields must be positive");
    if (time % compression || freq % compression) {
      throw InvalidArgument("latent spec: time " + std::to_string(time) + " and freq " + std::to_string(freq) +
                            " must be divisible by compression " + std::to_string(compression));
    }
    return {channels, time / compression, freq / compression};
  }
};

struct Latent {
  std::array<std::size_t, 3> shape{};
  std::vector<double> values;

  static Latent zeros(std::array<std::size_t, 3> shape) {
    return {shape, std::vector<double>(shape[0] * shape[1] * shape[2], 0.0)};
  }
  static Latent standard_normal(std::array<std::size_t, 3> shape, std::mt19937_64& rng) {
    Latent z = zeros(shape);
    std::normal_distribution<double> g;
    for (auto& v : z.values) v = g(rng);
    return z;
  }

  double norm() const { return std::sqrt(std::inner_product(values.begin(), values.end(), values.begin(), 0.0)); }

  friend bool operator==(const Latent&, const Latent&) = default;
};

/// z_n = sqrt(alpha_bar_n) z0 + sqrt(1 - alpha_bar_n) eps.
inline Latent ddpm_forward(const Latent& z0, const Latent& eps, std::size_t n, const DiffusionSchedule& sched) {
  if (n >= sched.steps()) {
    throw InvalidArgument("ddpm_forward: step " + std::to_string(n) + " out of range for " +
                          std::to_string(sched.steps()) + " steps");
  }
  if (z0.shape != eps.shape || z0.values.size() != eps.values.size()) {
    throw ShapeMismatch("ddpm_forward: noise shape differs from latent shape");
  }
  const double a = std::sqrt(sched.alpha_bars[n]);
  const double s = std::sqrt(1.0 - sched.alpha_bars[n]);
  Latent out{z0.shape, std::vector<double>(z0.values.size())};
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = a * z0.values[i] + s * eps.values[i];
  return out;
}

using NoisePredictor = std::function<Latent(const Latent& z_n, std::size_t n, const FeatureSeq& condition)>;

/// l2sq: mean over elements of (eps - pred)^2. l2: Euclidean norm of eps - pred.
enum class NoiseNorm { l2sq, l2 };

inline double ddpm_loss(const Latent& z0, const Latent& eps, std::size_t n, const DiffusionSchedule& sched,
                        const NoisePredictor& predictor, const FeatureSeq& condition,
                        NoiseNorm norm = NoiseNorm::l2sq) {
  const Latent zn = ddpm_forward(z0, eps, n, sched);
  const Latent pred = predictor(zn, n, condition);
  if (pred.shape != eps.shape || pred.values.size() != eps.values.size()) {
    throw ShapeMismatch("ddpm_loss: predictor output shape differs from the noise shape");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < eps.values.size(); ++i) {
    const double d = eps.values[i] - pred.values[i];
    sum += d * d;
  }
  if (norm == NoiseNorm::l2) return std::sqrt(sum);
  return eps.values.empty() ? 0.0 : sum / static_cast<double>(eps.values.size());
}

}  // namespace t2av
