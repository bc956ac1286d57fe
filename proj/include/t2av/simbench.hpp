#pragma once

// Synthetic audio/video/text populations with known true and false pairs, and
// the visual-alignment and temporal-consistency validation protocols run on them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "embedset.hpp"
#include "error.hpp"
#include "linalg.hpp"
#include "metrics.hpp"
#include "report.hpp"

namespace t2av {

enum class MismatchMode { independent_latent, same_class_other_clip, temporal_shift_k };

NLOHMANN_JSON_SERIALIZE_ENUM(MismatchMode, {{MismatchMode::independent_latent, "independent_latent"},
                                            {MismatchMode::same_class_other_clip, "same_class_other_clip"},
                                            {MismatchMode::temporal_shift_k, "temporal_shift_k"}})

inline std::string to_string(MismatchMode m) { return nlohmann::json(m).get<std::string>(); }

/// Clip duration assumed when converting a segment shift to seconds.
inline constexpr double kClipSeconds = 10.0;

struct PopulationSpec {
  std::size_t n_clips = 1000;
  std::size_t n_false = 1000;     // false-pair audio clips appended after the true ones
  std::size_t segments = 4;       // T
  std::size_t dim = 16;           // D
  std::size_t latent_dim = 8;     // k
  double noise_scale = 0.1;       // sigma
  MismatchMode mismatch_mode = MismatchMode::independent_latent;
  std::uint64_t seed = 0;

  std::size_t n_classes = 10;
  double class_fraction = 0.5;    // share of latent variance carried by the class center
  double drift_scale = 0.5;       // per-segment drift, in units of the latent std
  double map_jitter = 0.3;        // 0 makes all modality maps identical
  double mismatch_offset = 3.0;   // norm of the latent offset of false-pair audio
  double embedding_mean = 3.0;    // norm of the common mean shared by all rows of a modality
  std::optional<std::size_t> fixed_shift;  // shift mode: use this k for every false pair

  void validate() const {
    auto bad = [](const std::string& m) { throw InvalidArgument("population spec: " + m); };
    if (n_clips == 0) bad("n_clips must be positive");
    if (n_false > n_clips) bad("n_false cannot exceed n_clips (false pair j reuses clip j's video)");
    if (segments == 0) bad("segments must be positive");
    if (dim == 0 || latent_dim == 0) bad("dim and latent_dim must be positive");
    if (latent_dim > dim) bad("latent_dim must not exceed dim");
    if (n_classes == 0) bad("n_classes must be positive");
    for (double v : {noise_scale, drift_scale, map_jitter, mismatch_offset, embedding_mean}) {
      if (!std::isfinite(v) || v < 0.0) bad("scales must be finite and non-negative");
    }
    if (!(class_fraction >= 0.0 && class_fraction <= 1.0)) bad("class_fraction must lie in [0, 1]");
    if (mismatch_mode == MismatchMode::temporal_shift_k) {
      if (segments < 2) bad("temporal shift needs segmented clips (T > 1)");
      if (fixed_shift && *fixed_shift >= segments) bad("fixed_shift must be below T");
    }
  }
};

inline void to_json(nlohmann::json& j, const PopulationSpec& s) {
  j = {{"n_clips", s.n_clips},           {"n_false", s.n_false},
       {"segments", s.segments},         {"dim", s.dim},
       {"latent_dim", s.latent_dim},     {"noise_scale", s.noise_scale},
       {"mismatch_mode", s.mismatch_mode}, {"seed", s.seed},
       {"n_classes", s.n_classes},       {"class_fraction", s.class_fraction},
       {"drift_scale", s.drift_scale},   {"map_jitter", s.map_jitter},
       {"mismatch_offset", s.mismatch_offset}, {"embedding_mean", s.embedding_mean},
       {"fixed_shift", nullptr}};
  if (s.fixed_shift) j["fixed_shift"] = *s.fixed_shift;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, PopulationSpec& s) {
  if (!j.is_object()) throw InvalidArgument("population spec must be a JSON object");
  nlohmann::json known;
  to_json(known, PopulationSpec{});
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw InvalidArgument("unknown population key '" + key + "'");
  }
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("n_clips", s.n_clips);
  take("n_false", s.n_false);
  take("segments", s.segments);
  take("dim", s.dim);
  take("latent_dim", s.latent_dim);
  take("noise_scale", s.noise_scale);
  if (j.contains("mismatch_mode")) {
    const auto name = j.at("mismatch_mode").get<std::string>();
    if (name != "independent_latent" && name != "same_class_other_clip" && name != "temporal_shift_k") {
      throw InvalidArgument("unknown mismatch_mode '" + name + "'");
    }
    j.at("mismatch_mode").get_to(s.mismatch_mode);
  }
  take("seed", s.seed);
  take("n_classes", s.n_classes);
  take("class_fraction", s.class_fraction);
  take("drift_scale", s.drift_scale);
  take("map_jitter", s.map_jitter);
  take("mismatch_offset", s.mismatch_offset);
  take("embedding_mean", s.embedding_mean);
  if (j.contains("fixed_shift")) {
    s.fixed_shift = j.at("fixed_shift").is_null() ? std::nullopt
                                                  : std::optional(j.at("fixed_shift").get<std::size_t>());
  }
}

struct Population {
  EmbeddingSet audio;   // n_clips true clips, then n_false false-pair clips
  EmbeddingSet video;   // n_clips clips
  EmbeddingSet text;    // n_clips clips, T rows each without drift
  PairManifest manifest;
  std::vector<std::size_t> classes;  // class of each true clip
};

namespace detail {

inline Matrix gaussian_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.data()) v = sd * g(rng);
  return m;
}

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t n, double sd) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = sd * g(rng);
  return v;
}

struct ModalityMap {
  Matrix map;                 // D x k
  std::vector<double> mean;   // D
};

// Appends T rows map * (latent + drift_t) + mean + sigma * noise; drift may be empty.
inline void emit_clip(std::vector<float>& out, const ModalityMap& m, const std::vector<double>& latent,
                      const std::vector<std::vector<double>>& drift, std::size_t segments, double sigma,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const Matrix& map = m.map;
  const std::size_t d = map.rows(), k = map.cols();
  std::vector<double> z(k);
  for (std::size_t t = 0; t < segments; ++t) {
    for (std::size_t j = 0; j < k; ++j) z[j] = latent[j] + (drift.empty() ? 0.0 : drift[t][j]);
    for (std::size_t i = 0; i < d; ++i) {
      double x = m.mean[i];
      for (std::size_t j = 0; j < k; ++j) x += map(i, j) * z[j];
      out.push_back(static_cast<float>(x + sigma * g(rng)));
    }
  }
}

}  // namespace detail

/// Clip c has latent u_c = class center + within-class part, u_c ~ N(0, I_k).
/// Each modality maps it through its own D x k matrix and adds its own mean
/// vector (a jittered copy of a common one); audio and video add a
/// per-segment drift d_t, and every row gets N(0, sigma^2) noise. False-pair
/// audio departs from the true distribution by a latent offset (independent or
/// same-class latents) or by a zero-padded segment shift of the paired audio.
inline Population gen_population(const PopulationSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t k = spec.latent_dim, d = spec.dim, tn = spec.segments;
  const double map_sd = 1.0 / std::sqrt(static_cast<double>(k));

  const Matrix base = detail::gaussian_matrix(rng, d, k, map_sd);
  auto base_mean = detail::gaussian_vector(rng, d, 1.0);
  double mean_norm = 0.0;
  for (double v : base_mean) mean_norm += v * v;
  for (double& v : base_mean) v *= spec.embedding_mean / std::sqrt(mean_norm);
  const double mean_jitter = spec.map_jitter * spec.embedding_mean / std::sqrt(static_cast<double>(d));
  std::vector<detail::ModalityMap> maps;
  for (int m = 0; m < 3; ++m) {
    detail::ModalityMap mm{base + detail::gaussian_matrix(rng, d, k, spec.map_jitter * map_sd), base_mean};
    const auto jitter = detail::gaussian_vector(rng, d, mean_jitter);
    for (std::size_t i = 0; i < d; ++i) mm.mean[i] += jitter[i];
    maps.push_back(std::move(mm));
  }
  const auto& audio_map = maps[0];
  const auto& video_map = maps[1];
  const auto& text_map = maps[2];

  std::vector<std::vector<double>> drift;
  for (std::size_t t = 0; t < tn; ++t) drift.push_back(detail::gaussian_vector(rng, k, spec.drift_scale));

  const double center_sd = std::sqrt(spec.class_fraction);
  const double within_sd = std::sqrt(1.0 - spec.class_fraction);
  std::vector<std::vector<double>> centers;
  for (std::size_t y = 0; y < spec.n_classes; ++y) centers.push_back(detail::gaussian_vector(rng, k, center_sd));

  std::vector<double> offset = detail::gaussian_vector(rng, k, 1.0);
  double norm = 0.0;
  for (double v : offset) norm += v * v;
  for (double& v : offset) v *= spec.mismatch_offset / std::sqrt(norm);

  Population pop;
  std::uniform_int_distribution<std::size_t> pick_class(0, spec.n_classes - 1);
  std::vector<float> audio, video, text;
  audio.reserve((spec.n_clips + spec.n_false) * tn * d);
  video.reserve(spec.n_clips * tn * d);
  text.reserve(spec.n_clips * tn * d);
  for (std::size_t c = 0; c < spec.n_clips; ++c) {
    const std::size_t y = pick_class(rng);
    pop.classes.push_back(y);
    auto u = detail::gaussian_vector(rng, k, within_sd);
    for (std::size_t j = 0; j < k; ++j) u[j] += centers[y][j];
    detail::emit_clip(audio, audio_map, u, drift, tn, spec.noise_scale, rng);
    detail::emit_clip(video, video_map, u, drift, tn, spec.noise_scale, rng);
    detail::emit_clip(text, text_map, u, {}, tn, spec.noise_scale, rng);
  }
  pop.video = {d, spec.n_clips * tn, tn, Modality::video, std::move(video)};
  pop.text = {d, spec.n_clips * tn, tn, Modality::text, std::move(text)};

  std::vector<double> shifts(spec.n_false, 0.0);
  if (spec.mismatch_mode == MismatchMode::temporal_shift_k) {
    const EmbeddingSet true_audio{d, spec.n_clips * tn, tn, Modality::audio, audio};
    std::uniform_int_distribution<std::size_t> pick_shift(1, tn - 1);
    for (std::size_t j = 0; j < spec.n_false; ++j) {
      const std::size_t s = spec.fixed_shift ? *spec.fixed_shift : pick_shift(rng);
      shifts[j] = static_cast<double>(s) * kClipSeconds / static_cast<double>(tn);
      const std::size_t unit[] = {j};
      const auto shifted = shift_segments(select_units(true_audio, unit), s, ShiftMode::pad_zero);
      audio.insert(audio.end(), shifted.data().begin(), shifted.data().end());
    }
  } else {
    for (std::size_t j = 0; j < spec.n_false; ++j) {
      std::vector<double> u;
      if (spec.mismatch_mode == MismatchMode::independent_latent) {
        u = detail::gaussian_vector(rng, k, 1.0);
        for (std::size_t i = 0; i < k; ++i) u[i] += offset[i];
      } else {
        // shares clip j's class center; only the within-class part is offset
        u = detail::gaussian_vector(rng, k, within_sd);
        for (std::size_t i = 0; i < k; ++i) u[i] += centers[pop.classes[j]][i] + within_sd * offset[i];
      }
      detail::emit_clip(audio, audio_map, u, drift, tn, spec.noise_scale, rng);
    }
  }
  pop.audio = {d, (spec.n_clips + spec.n_false) * tn, tn, Modality::audio, std::move(audio)};

  pop.manifest.pairs.reserve(spec.n_clips + spec.n_false);
  for (std::size_t c = 0; c < spec.n_clips; ++c) {
    pop.manifest.pairs.push_back({"true-" + std::to_string(c), c, c, c, PairLabel::true_pair, 0.0,
                                  "class-" + std::to_string(pop.classes[c])});
  }
  for (std::size_t j = 0; j < spec.n_false; ++j) {
    pop.manifest.pairs.push_back({"false-" + std::to_string(j), spec.n_clips + j, j, j, PairLabel::false_pair,
                                  shifts[j], "class-" + std::to_string(pop.classes[j])});
  }
  return pop;
}

// ---------------------------------------------------------------------------
// Validation protocols
// ---------------------------------------------------------------------------

using ValidationGrid = std::vector<std::pair<std::size_t, std::size_t>>;

inline ValidationGrid default_grid() { return {{500, 0}, {0, 500}, {500, 500}, {500, 1000}, {1000, 500}}; }

struct ValidationRow {
  std::size_t true_count = 0;
  std::size_t false_count = 0;
  MetricKind metric = MetricKind::FAVD;
  double value = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const ValidationRow&, const ValidationRow&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ValidationRow, true_count, false_count, metric, value, seed)

struct ValidationReport {
  std::vector<ValidationRow> rows;

  friend bool operator==(const ValidationReport&, const ValidationReport&) = default;

  /// Value for one (cell, metric, seed), or nullopt.
  std::optional<double> value(std::size_t t, std::size_t f, MetricKind m, std::uint64_t seed) const {
    for (const auto& r : rows) {
      if (r.true_count == t && r.false_count == f && r.metric == m && r.seed == seed) return r.value;
    }
    return std::nullopt;
  }

  std::string csv() const {
    std::string out = "true_count,false_count,metric,value,seed\n";
    for (const auto& r : rows) {
      out += std::to_string(r.true_count) + ',' + std::to_string(r.false_count) + ',' + to_string(r.metric) +
             ',' + format_exact(r.value) + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
  }

  std::string json() const {
    std::string out;
    for (const auto& r : rows) {
      const nlohmann::ordered_json j{{"true_count", r.true_count}, {"false_count", r.false_count},
                                     {"metric", r.metric}, {"value", r.value}, {"seed", r.seed}};
      out += j.dump() + '\n';
    }
    return out;
  }

  /// One line per grid cell, one column per metric, values averaged over seeds.
  std::string markdown() const {
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    std::vector<MetricKind> metrics;
    std::map<std::tuple<std::size_t, std::size_t, MetricKind>, std::pair<double, std::size_t>> acc;
    for (const auto& r : rows) {
      const std::pair cell{r.true_count, r.false_count};
      if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
      if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
      auto& [sum, n] = acc[{r.true_count, r.false_count, r.metric}];
      sum += r.value;
      ++n;
    }
    auto label = [](MetricKind m) { return m == MetricKind::FAVTD ? std::string("FA(VT)D") : to_string(m); };
    std::string out = "| True Pairs | False Pairs |";
    for (auto m : metrics) out += ' ' + label(m) + " |";
    out += "\n|---:|---:|";
    for (std::size_t i = 0; i < metrics.size(); ++i) out += "---:|";
    out += '\n';
    for (const auto& [t, f] : cells) {
      out += "| " + std::to_string(t) + " | " + std::to_string(f) + " |";
      for (auto m : metrics) {
        const auto it = acc.find({t, f, m});
        out += ' ' + (it == acc.end() ? std::string("-") : format_fixed(it->second.first / it->second.second, 2)) + " |";
      }
      out += '\n';
    }
    return out;
  }

  std::string render(OutputFormat format) const {
    switch (format) {
      case OutputFormat::json: return json();
      case OutputFormat::csv: return csv();
      case OutputFormat::table: return markdown();
    }
    return {};
  }
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the
/// exception of the lowest failing index.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Cell {
  EmbeddingSet audio, video, text;
};

/// First t true pairs plus the first f false pairs.
inline Cell make_cell(const Population& pop, std::size_t n_clips, std::size_t t, std::size_t f) {
  std::vector<std::size_t> audio_units, visual_units;
  for (std::size_t i = 0; i < t; ++i) {
    audio_units.push_back(i);
    visual_units.push_back(i);
  }
  for (std::size_t j = 0; j < f; ++j) {
    audio_units.push_back(n_clips + j);
    visual_units.push_back(j);
  }
  return {select_units(pop.audio, audio_units), select_units(pop.video, visual_units),
          select_units(pop.text, visual_units)};
}

inline void check_grid(const PopulationSpec& spec, const ValidationGrid& grid) {
  if (grid.empty()) throw InvalidArgument("validation grid is empty");
  for (const auto& [t, f] : grid) {
    if (t + f == 0) throw InvalidArgument("grid cell (0, 0) has no pairs");
    if (t > spec.n_clips || f > spec.n_false) {
      throw InsufficientRows("grid cell (" + std::to_string(t) + ", " + std::to_string(f) +
                             ") needs " + std::to_string(t) + " true and " + std::to_string(f) +
                             " false pairs; population has " + std::to_string(spec.n_clips) + " and " +
                             std::to_string(spec.n_false));
    }
  }
}

template <class CellFn>
ValidationReport run_validation(const PopulationSpec& spec, const ValidationGrid& grid,
                                std::vector<std::uint64_t> seeds, unsigned threads,
                                std::vector<MetricKind> metrics, CellFn&& cell_fn) {
  spec.validate();
  check_grid(spec, grid);
  if (seeds.empty()) seeds.push_back(spec.seed);
  // per seed: grid cells x metrics values
  std::vector<std::vector<double>> values(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t s) {
    PopulationSpec ps = spec;
    ps.seed = seeds[s];
    const Population pop = gen_population(ps);
    for (const auto& [t, f] : grid) {
      const auto vals = cell_fn(make_cell(pop, spec.n_clips, t, f));
      values[s].insert(values[s].end(), vals.begin(), vals.end());
    }
  });
  ValidationReport report;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        report.rows.push_back({grid[c].first, grid[c].second, metrics[m], values[s][c * metrics.size() + m],
                               seeds[s]});
      }
    }
  }
  return report;
}

}  // namespace detail

/// FAVD, FATD and FA(VT)D per grid cell and seed.
inline ValidationReport run_visual_validation(const PopulationSpec& spec,
                                              const ValidationGrid& grid = default_grid(),
                                              std::vector<std::uint64_t> seeds = {}, unsigned threads = 1) {
  const auto adapter = ProjectionSpec::pad_truncate(spec.dim);
  return detail::run_validation(spec, grid, std::move(seeds), threads,
                                {MetricKind::FAVD, MetricKind::FATD, MetricKind::FAVTD},
                                [&](const detail::Cell& c) {
                                  return std::vector<double>{favd(c.audio, c.video, adapter).value,
                                                             fatd(c.audio, c.text, adapter).value,
                                                             favtd(c.audio, c.video, c.text, adapter).value};
                                });
}

/// FAVD per grid cell and seed, with false pairs from segment shifts or
/// same-class audio.
inline ValidationReport run_temporal_validation(const PopulationSpec& spec,
                                                const ValidationGrid& grid = default_grid(),
                                                std::vector<std::uint64_t> seeds = {}, unsigned threads = 1) {
  if (spec.mismatch_mode == MismatchMode::independent_latent) {
    throw InvalidArgument("temporal validation needs mismatch mode temporal_shift_k or same_class_other_clip");
  }
  if (spec.mismatch_mode == MismatchMode::temporal_shift_k && spec.segments < 2) {
    throw InvalidArgument("temporal shift validation needs a segmented population (T > 1)");
  }
  const auto adapter = ProjectionSpec::pad_truncate(spec.dim);
  return detail::run_validation(spec, grid, std::move(seeds), threads, {MetricKind::FAVD},
                                [&](const detail::Cell& c) {
                                  return std::vector<double>{favd(c.audio, c.video, adapter).value};
                                });
}

}  // namespace t2av
