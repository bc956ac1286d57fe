#pragma once

// Evaluation metrics over embedding sets: the Frechet family (FD, FAD, and the
// cross-modal FAVD / FATD / FA(VT)D), Inception Score and paired KL.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "embedset.hpp"
#include "error.hpp"
#include "gaussian_stats.hpp"
#include "report.hpp"

namespace t2av {

enum class MetricKind { FD, FAD, FAVD, FATD, FAVTD, IS, KL };

NLOHMANN_JSON_SERIALIZE_ENUM(MetricKind, {{MetricKind::FD, "FD"},
                                          {MetricKind::FAD, "FAD"},
                                          {MetricKind::FAVD, "FAVD"},
                                          {MetricKind::FATD, "FATD"},
                                          {MetricKind::FAVTD, "FAVTD"},
                                          {MetricKind::IS, "IS"},
                                          {MetricKind::KL, "KL"}})

inline std::string to_string(MetricKind k) { return nlohmann::json(k).get<std::string>(); }

struct MetricReport {
  MetricKind metric = MetricKind::FD;
  double value = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::optional<std::string> adapter;
  std::optional<std::uint64_t> seed;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"metric", r.metric}, {"value", r.value}, {"n_a", r.n_a}, {"n_b", r.n_b},
                     {"adapter", nullptr}, {"seed", nullptr}};
  if (r.adapter) j["adapter"] = *r.adapter;
  if (r.seed) j["seed"] = *r.seed;
}

inline void from_json(const nlohmann::json& j, MetricReport& r) {
  j.at("metric").get_to(r.metric);
  j.at("value").get_to(r.value);
  j.at("n_a").get_to(r.n_a);
  j.at("n_b").get_to(r.n_b);
  r.adapter = j.at("adapter").is_null() ? std::nullopt : std::optional(j.at("adapter").get<std::string>());
  r.seed = j.at("seed").is_null() ? std::nullopt : std::optional(j.at("seed").get<std::uint64_t>());
}

/// json: one object per line; csv: header + rows; table: aligned, values at 4 decimals.
inline std::string render_report(const std::vector<MetricReport>& reports, OutputFormat format) {
  std::string out;
  switch (format) {
    case OutputFormat::json:
      for (const auto& r : reports) out += nlohmann::json(r).dump() + '\n';
      return out;
    case OutputFormat::csv:
      out = "metric,value,n_a,n_b,adapter,seed\n";
      for (const auto& r : reports) {
        out += to_string(r.metric) + ',' + format_exact(r.value) + ',' + std::to_string(r.n_a) + ',' +
               std::to_string(r.n_b) + ',' + r.adapter.value_or("") + ',' +
               (r.seed ? std::to_string(*r.seed) : std::string()) + '\n';
      }
      return out;
    case OutputFormat::table: {
      std::vector<std::vector<std::string>> rows;
      for (const auto& r : reports) {
        rows.push_back({to_string(r.metric), format_fixed(r.value), std::to_string(r.n_a),
                        std::to_string(r.n_b), r.adapter.value_or("-"),
                        r.seed ? std::to_string(*r.seed) : std::string("-")});
      }
      return aligned_table({"metric", "value", "n_a", "n_b", "adapter", "seed"}, rows);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frechet family
// ---------------------------------------------------------------------------

/// Frechet distance between Gaussian fits of two sets of equal dim. FD and
/// FAD differ only in which embedder produced the rows; `kind` records it.
inline MetricReport frechet_sets(const EmbeddingSet& a, const EmbeddingSet& b,
                                 MetricKind kind = MetricKind::FD, unsigned threads = 1) {
  if (a.dim() != b.dim()) {
    throw ShapeMismatch("frechet_sets: dims differ (" + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()) + "); apply a projection adapter first");
  }
  if (a.count() < 2 || b.count() < 2) {
    throw InsufficientRows("frechet_sets: need at least 2 rows per set, have " +
                           std::to_string(a.count()) + " and " + std::to_string(b.count()));
  }
  MetricReport r;
  r.metric = kind;
  r.value = frechet(fit_parallel(a, threads), fit_parallel(b, threads));
  r.n_a = a.count();
  r.n_b = b.count();
  return r;
}

namespace detail {

inline std::string describe(const ProjectionSpec& spec) {
  return spec.kind == ProjectionSpec::Kind::matrix ? "matrix" : "pad_truncate";
}

/// Brings every set down to the narrowest dim among them. Sets already at
/// that dim are untouched; wider ones go through the adapter. Returns the
/// adapter descriptor recorded in reports.
inline std::string reconcile(std::vector<EmbeddingSet*> sets, const ProjectionSpec& adapter) {
  std::size_t target = sets.front()->dim();
  for (const auto* s : sets) target = std::min(target, s->dim());
  std::string desc = describe(adapter);
  for (auto* s : sets) {
    if (s->dim() == target) continue;
    const std::size_t from = s->dim();
    if (adapter.kind == ProjectionSpec::Kind::matrix) {
      if (!adapter.matrix) throw InvalidArgument("matrix adapter without a matrix");
      if (adapter.matrix->rows() != from || adapter.matrix->cols() != target) {
        throw ShapeMismatch("adapter matrix is " + std::to_string(adapter.matrix->rows()) + "x" +
                            std::to_string(adapter.matrix->cols()) + " but " +
                            std::string(to_string(s->modality())) + " needs " + std::to_string(from) +
                            "x" + std::to_string(target));
      }
      *s = project(*s, adapter);
    } else {
      *s = project(*s, ProjectionSpec::pad_truncate(target));
    }
    desc += ' ' + std::string(to_string(s->modality())) + ':' + std::to_string(from) + "->" +
            std::to_string(target);
  }
  return desc;
}

}  // namespace detail

inline MetricReport favd(EmbeddingSet audio, EmbeddingSet video, const ProjectionSpec& adapter,
                         unsigned threads = 1) {
  const std::string desc = detail::reconcile({&audio, &video}, adapter);
  auto r = frechet_sets(audio, video, MetricKind::FAVD, threads);
  r.adapter = desc;
  return r;
}

inline MetricReport fatd(EmbeddingSet audio, EmbeddingSet text, const ProjectionSpec& adapter,
                         unsigned threads = 1) {
  const std::string desc = detail::reconcile({&audio, &text}, adapter);
  auto r = frechet_sets(audio, text, MetricKind::FATD, threads);
  r.adapter = desc;
  return r;
}

/// Audio against the row-wise average of video and text embeddings.
inline MetricReport favtd(EmbeddingSet audio, EmbeddingSet video, EmbeddingSet text,
                          const ProjectionSpec& adapter, unsigned threads = 1) {
  if (video.count() != text.count() || video.segments_per_clip() != text.segments_per_clip()) {
    throw ShapeMismatch("favtd: video and text must pair row-for-row (" + std::to_string(video.count()) +
                        " vs " + std::to_string(text.count()) + " rows)");
  }
  const std::string desc = detail::reconcile({&audio, &video, &text}, adapter);
  auto r = frechet_sets(audio, average_sets(video, text), MetricKind::FAVTD, threads);
  r.adapter = desc;
  return r;
}

// ---------------------------------------------------------------------------
// Probability-based metrics
// ---------------------------------------------------------------------------

inline constexpr double kProbFloor = 1e-12;

namespace detail {

/// Row-normalized copy in double; rejects negative entries and zero-sum rows.
inline std::vector<double> normalized_rows(const EmbeddingSet& probs, const char* what) {
  const std::size_t c = probs.dim();
  std::vector<double> out(probs.count() * c);
  for (std::size_t r = 0; r < probs.count(); ++r) {
    const auto row = probs.row(r);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (row[k] < 0.0f) {
        throw InvalidDistribution(std::string(what) + ": negative probability at row " +
                                  std::to_string(r));
      }
      sum += row[k];
    }
    if (sum <= 0.0) throw InvalidDistribution(std::string(what) + ": row " + std::to_string(r) + " sums to zero");
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = row[k] / sum;
  }
  return out;
}

}  // namespace detail

/// Mean over contiguous splits of exp(mean_x KL(p(y|x) || p(y))), natural log.
inline MetricReport inception_score(const EmbeddingSet& probs, std::size_t splits = 1) {
  if (splits == 0) throw InvalidArgument("inception_score: splits must be positive");
  const std::size_t n = probs.count();
  if (n < splits) {
    throw InsufficientRows("inception_score: " + std::to_string(n) + " rows cannot fill " +
                           std::to_string(splits) + " splits");
  }
  const std::size_t c = probs.dim();
  const auto p = detail::normalized_rows(probs, "inception_score");

  double total = 0.0;
  std::vector<double> marginal(c);
  for (std::size_t s = 0; s < splits; ++s) {
    const std::size_t lo = n * s / splits;
    const std::size_t hi = n * (s + 1) / splits;
    std::fill(marginal.begin(), marginal.end(), 0.0);
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t k = 0; k < c; ++k) marginal[k] += p[r * c + k];
    for (auto& m : marginal) m /= static_cast<double>(hi - lo);
    double kl_sum = 0.0;
    for (std::size_t r = lo; r < hi; ++r) {
      for (std::size_t k = 0; k < c; ++k) {
        const double pk = p[r * c + k];
        if (pk > 0.0) kl_sum += pk * (std::log(pk) - std::log(marginal[k]));
      }
    }
    total += std::exp(kl_sum / static_cast<double>(hi - lo));
  }
  MetricReport r;
  r.metric = MetricKind::IS;
  r.value = total / static_cast<double>(splits);
  r.n_a = n;
  return r;
}

enum class KlDirection { ref_to_gen, gen_to_ref };

/// Mean over row pairs of KL(p || q); probabilities floored at 1e-12 inside logs.
inline MetricReport paired_kl(const EmbeddingSet& ref, const EmbeddingSet& gen,
                              KlDirection direction = KlDirection::ref_to_gen) {
  if (ref.count() != gen.count() || ref.dim() != gen.dim()) {
    throw ShapeMismatch("paired_kl: sets must have equal rows and classes (" + std::to_string(ref.count()) +
                        "x" + std::to_string(ref.dim()) + " vs " + std::to_string(gen.count()) + "x" +
                        std::to_string(gen.dim()) + ")");
  }
  if (ref.count() == 0) throw InsufficientRows("paired_kl: no pairs");
  const std::size_t c = ref.dim();
  const auto r = detail::normalized_rows(ref, "paired_kl (ref)");
  const auto g = detail::normalized_rows(gen, "paired_kl (gen)");
  const auto& p = direction == KlDirection::ref_to_gen ? r : g;
  const auto& q = direction == KlDirection::ref_to_gen ? g : r;

  double sum = 0.0;
  for (std::size_t i = 0; i < ref.count(); ++i) {
    double kl = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double pk = p[i * c + k];
      if (pk == 0.0) continue;
      kl += pk * (std::log(std::max(pk, kProbFloor)) - std::log(std::max(q[i * c + k], kProbFloor)));
    }
    sum += kl;
  }
  MetricReport out;
  out.metric = MetricKind::KL;
  out.value = sum / static_cast<double>(ref.count());
  out.n_a = ref.count();
  out.n_b = gen.count();
  return out;
}

}  // namespace t2av
