#pragma once

// Command-line front end. dispatch() parses arguments, runs one command and
// maps failures to exit codes: 1 usage, 2 data/format, 3 numerical.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "embedset.hpp"
#include "error.hpp"
#include "gaussian_stats.hpp"
#include "mechanism.hpp"
#include "metrics.hpp"
#include "report.hpp"
#include "simbench.hpp"

namespace t2av::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct RunConfig {
  std::string a, b, audio, video, text;
  std::string adapter = "pad";
  std::string format = "table";
  std::string out;
  std::string config;
  std::string kind = "fd";
  std::size_t splits = 1;
  std::string direction = "ref-gen";
  std::string grid;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::string norm = "l2sq";
  std::string mode;
  std::optional<std::size_t> shift;

  // mechanism kernels
  std::size_t heads = 1;
  std::size_t depth = 1;
  bool residual = false;
  std::size_t segments = 0;
  std::size_t batch = 4;
  std::size_t dim = 8;
  double temperature = 0.07;
  double epsilon = 1e-5;
  std::size_t steps = 1000;
  std::optional<std::size_t> step;
  LatentSpec latent{8, 256, 64, 4};

  nlohmann::json population = nlohmann::json::object();
};

namespace detail {

inline OutputFormat parse_format(const std::string& f) {
  if (f == "json") return OutputFormat::json;
  if (f == "csv") return OutputFormat::csv;
  return OutputFormat::table;
}

inline ValidationGrid parse_grid(const std::string& text) {
  if (text.empty()) return default_grid();
  ValidationGrid grid;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto colon = cell.find(':');
    std::size_t t = 0, f = 0, used_t = 0, used_f = 0;
    try {
      if (colon == std::string::npos) throw std::invalid_argument("no colon");
      const std::string ts = cell.substr(0, colon), fs = cell.substr(colon + 1);
      if (ts.empty() || fs.empty() || ts[0] == '-' || fs[0] == '-') throw std::invalid_argument("sign");
      t = std::stoull(ts, &used_t);
      f = std::stoull(fs, &used_f);
      if (used_t != ts.size() || used_f != fs.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InvalidArgument("bad grid cell '" + cell + "' (expected true:false, e.g. 500:500)");
    }
    grid.emplace_back(t, f);
  }
  if (grid.empty()) throw InvalidArgument("grid is empty");
  return grid;
}

inline ProjectionSpec parse_adapter(const std::string& text) {
  if (text == "pad") return ProjectionSpec::pad_truncate(0);
  if (text.rfind("matrix:", 0) == 0) {
    const std::string path = text.substr(7);
    if (path.empty()) throw InvalidArgument("--adapter matrix: needs a path");
    // one row per input dimension, one column per output dimension
    const EmbeddingSet m = read_embeddings(path);
    Matrix mat(m.count(), m.dim());
    for (std::size_t r = 0; r < m.count(); ++r)
      for (std::size_t c = 0; c < m.dim(); ++c) mat(r, c) = m.row(r)[c];
    return ProjectionSpec::linear(std::move(mat));
  }
  throw InvalidArgument("--adapter must be 'pad' or 'matrix:<path>', got '" + text + "'");
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InvalidArgument(std::string("missing required flag ") + flag);
}

/// Key/value record: one JSON object, a two-line CSV, or a two-column table.
inline std::string render_record(const nlohmann::ordered_json& rec, OutputFormat format) {
  auto cell = [](const nlohmann::ordered_json& v) {
    if (v.is_null()) return std::string();
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return format_exact(v.get<double>());
    return v.dump();
  };
  switch (format) {
    case OutputFormat::json:
      return rec.dump() + '\n';
    case OutputFormat::csv: {
      std::string head, row;
      for (auto it = rec.begin(); it != rec.end(); ++it) {
        if (it != rec.begin()) {
          head += ',';
          row += ',';
        }
        head += it.key();
        row += cell(it.value());
      }
      return head + '\n' + row + '\n';
    }
    case OutputFormat::table: {
      std::vector<std::vector<std::string>> rows;
      for (auto it = rec.begin(); it != rec.end(); ++it) {
        std::string v = it.value().is_number_float() ? format_fixed(it.value().get<double>(), 6) : cell(it.value());
        rows.push_back({it.key(), v.empty() ? "-" : v});
      }
      return aligned_table({"key", "value"}, rows);
    }
  }
  return {};
}

inline std::string render_rows(const EmbeddingSet& set, OutputFormat format) {
  std::string out;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < set.count(); ++r) {
    const auto row = set.row(r);
    std::vector<std::string> cells;
    for (float v : row) cells.push_back(format == OutputFormat::table ? format_fixed(v, 6) : format_exact(v));
    if (format == OutputFormat::json) {
      out += nlohmann::json(std::vector<double>(row.begin(), row.end())).dump() + '\n';
    } else if (format == OutputFormat::csv) {
      for (std::size_t c = 0; c < cells.size(); ++c) out += (c ? "," : "") + cells[c];
      out += '\n';
    } else {
      rows.push_back(std::move(cells));
    }
  }
  if (format == OutputFormat::table) {
    std::vector<std::string> header;
    for (std::size_t c = 0; c < set.dim(); ++c) header.push_back("d" + std::to_string(c));
    out = aligned_table(header, rows);
  }
  return out;
}

/// Splits an N x D set into B sequences of T rows each.
inline FeatureBatch to_batch(const EmbeddingSet& set, std::size_t segments, const char* what) {
  const std::size_t t = segments ? segments : set.rows_per_unit();
  if (t == 0 || set.count() % t != 0) {
    throw ShapeMismatch(std::string(what) + ": " + std::to_string(set.count()) + " rows do not split into sequences of " +
                        std::to_string(t));
  }
  FeatureBatch batch;
  for (std::size_t b = 0; b < set.count() / t; ++b) {
    Matrix m(t, set.dim());
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < set.dim(); ++c) m(i, c) = set.row(b * t + i)[c];
    batch.push_back(std::move(m));
  }
  return batch;
}

inline std::vector<std::uint64_t> seed_list(const RunConfig& c) {
  if (c.seeds == 0) throw InvalidArgument("--seeds must be positive");
  std::vector<std::uint64_t> s(c.seeds);
  for (std::size_t i = 0; i < c.seeds; ++i) s[i] = c.seed + i;
  return s;
}

inline MismatchMode parse_mode(const std::string& m) {
  if (m == "independent") return MismatchMode::independent_latent;
  if (m == "class") return MismatchMode::same_class_other_clip;
  if (m == "shift") return MismatchMode::temporal_shift_k;
  throw InvalidArgument("unknown mode '" + m + "'");
}

inline PopulationSpec population_from(const RunConfig& c, MismatchMode default_mode) {
  PopulationSpec spec;
  spec.mismatch_mode = default_mode;
  from_json(c.population, spec);
  if (!c.mode.empty()) spec.mismatch_mode = parse_mode(c.mode);
  if (c.shift) spec.fixed_shift = c.shift;
  spec.seed = c.seed;
  return spec;
}

// ---------------------------------------------------------------------------
// App construction
// ---------------------------------------------------------------------------

struct App {
  std::unique_ptr<CLI::App> root;
  RunConfig cfg;
};

inline std::unique_ptr<App> build_app() {
  auto app = std::make_unique<App>();
  auto& c = app->cfg;
  app->root = std::make_unique<CLI::App>("Evaluation metrics and reference kernels for video-aligned text-to-audio",
                                         "t2av");
  CLI::App& root = *app->root;
  root.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  root.require_subcommand(1);

  auto common = [&](CLI::App* s, bool with_format = true) {
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    s->add_option("--out", c.out, "Write results to this path instead of stdout");
    if (with_format) {
      s->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "csv", "table"}));
    }
    s->add_option("--config", c.config, "JSON file of flag values; flags given here override it");
  };
  auto threads = [&](CLI::App* s) {
    s->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto adapter = [&](CLI::App* s) {
    s->add_option("--adapter", c.adapter, "Dimension adapter: pad | matrix:<path>");
  };

  auto* stats = root.add_subcommand("stats", "Gaussian statistics (mean, covariance) of an embedding file");
  stats->add_option("--a", c.a, "Embedding file");
  common(stats);
  threads(stats);

  auto* frechet = root.add_subcommand("frechet", "Frechet distance between two embedding files");
  frechet->add_option("--a", c.a, "First embedding file");
  frechet->add_option("--b", c.b, "Second embedding file");
  frechet->add_option("--kind", c.kind, "Label the result as fd or fad")->check(CLI::IsMember({"fd", "fad"}));
  common(frechet);
  threads(frechet);

  auto* metric = root.add_subcommand("metric", "Cross-modal Frechet metrics");
  metric->require_subcommand(1);
  for (const char* name : {"favd", "fatd", "favtd"}) {
    auto* s = metric->add_subcommand(name, std::string("Compute ") + name);
    s->add_option("--audio", c.audio, "Audio embedding file");
    if (std::string(name) != "fatd") s->add_option("--video", c.video, "Video embedding file");
    if (std::string(name) != "favd") s->add_option("--text", c.text, "Text embedding file");
    adapter(s);
    common(s);
    threads(s);
  }

  auto* is = root.add_subcommand("is", "Inception Score of a class-probability file");
  is->add_option("--a", c.a, "Probability file (rows are distributions)");
  is->add_option("--splits", c.splits, "Number of contiguous splits");
  common(is);

  auto* kl = root.add_subcommand("kl", "Mean paired KL divergence between probability files");
  kl->add_option("--a", c.a, "Reference probabilities");
  kl->add_option("--b", c.b, "Generated probabilities");
  kl->add_option("--direction", c.direction, "ref-gen or gen-ref")->check(CLI::IsMember({"ref-gen", "gen-ref"}));
  common(kl);

  auto* mech = root.add_subcommand("mech", "Reference model kernels");
  mech->require_subcommand(1);
  auto* attn = mech->add_subcommand("attn", "Temporal self-attention over each clip's segments");
  attn->add_option("--a", c.a, "Embedding file; each clip is one sequence");
  attn->add_option("--segments", c.segments, "Sequence length T (default: the file's segments per clip)");
  attn->add_option("--heads", c.heads, "Attention heads")->check(CLI::PositiveNumber);
  attn->add_option("--depth", c.depth, "Stacked layers")->check(CLI::PositiveNumber);
  attn->add_flag("--residual", c.residual, "Add each layer's input to its output");
  common(attn);

  auto* vclap = mech->add_subcommand("vclap", "VCLAP contrastive loss and gradient check");
  vclap->add_option("--audio", c.audio, "Audio features (B*T rows)");
  vclap->add_option("--text", c.text, "Text features (B*T rows)");
  vclap->add_option("--segments", c.segments, "Timesteps T (default: the file's segments per clip)");
  vclap->add_option("--seed", c.seed, "Seed for random features when no files are given");
  vclap->add_option("--batch", c.batch, "Random features: batch size B");
  vclap->add_option("--dim", c.dim, "Random features: feature dim D");
  vclap->add_option("--temperature", c.temperature, "Softmax temperature");
  vclap->add_option("--epsilon", c.epsilon, "Finite-difference step");
  common(vclap);

  auto* ddpm = mech->add_subcommand("ddpm", "Diffusion forward process and noise-prediction loss");
  ddpm->add_option("--seed", c.seed, "Seed for the latent and noise draws");
  ddpm->add_option("--steps", c.steps, "Schedule length N");
  ddpm->add_option("--step", c.step, "Diffusion step n (default N/2)");
  ddpm->add_option("--channels", c.latent.channels, "Latent channels");
  ddpm->add_option("--time", c.latent.time, "Spectrogram frames");
  ddpm->add_option("--freq", c.latent.freq, "Spectrogram bins");
  ddpm->add_option("--compression", c.latent.compression, "Latent compression ratio");
  ddpm->add_option("--norm", c.norm, "l2sq (mean squared error) or l2")->check(CLI::IsMember({"l2", "l2sq"}));
  common(ddpm);

  auto* bench = root.add_subcommand("bench", "Metric validation on synthetic populations");
  bench->require_subcommand(1);
  for (const char* name : {"visual", "temporal"}) {
    auto* s = bench->add_subcommand(name, std::string(name) + " validation protocol");
    s->add_option("--seed", c.seed, "First seed");
    s->add_option("--seeds", c.seeds, "Number of consecutive seeds");
    s->add_option("--grid", c.grid, "Cells as true:false,... (default 500:0,0:500,500:500,500:1000,1000:500)");
    s->add_option("--mode", c.mode, "False pairs: independent | class | shift")
        ->check(CLI::IsMember({"independent", "class", "shift"}));
    s->add_option("--shift", c.shift, "Shift mode: fixed segment shift k");
    common(s);
    threads(s);
  }

  auto* synth = root.add_subcommand("synth", "Write a synthetic population as embedding files plus a pair manifest");
  synth->add_option("--seed", c.seed, "Population seed");
  synth->add_option("--mode", c.mode, "False pairs: independent | class | shift")
      ->check(CLI::IsMember({"independent", "class", "shift"}));
  synth->add_option("--shift", c.shift, "Shift mode: fixed segment shift k");
  common(synth);
  return app;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::string run_command(const std::vector<std::string>& path, const RunConfig& c) {
  const OutputFormat fmt = parse_format(c.format);
  const std::string& cmd = path[0];
  const std::string sub = path.size() > 1 ? path[1] : "";

  if (cmd == "stats") {
    require(c.a, "--a");
    const auto set = read_embeddings(c.a);
    const auto s = fit_parallel(set, c.threads);
    if (fmt == OutputFormat::json) return to_json(s) + '\n';
    const Matrix cov = s.cov();
    double mean_norm = 0.0;
    for (double v : s.mean()) mean_norm += v * v;
    nlohmann::ordered_json rec{{"dim", s.dim()}, {"count", s.count()}, {"segments_per_clip", set.segments_per_clip()},
                               {"mean_norm", std::sqrt(mean_norm)}, {"cov_trace", cov.trace()}};
    return render_record(rec, fmt);
  }

  if (cmd == "frechet") {
    require(c.a, "--a");
    require(c.b, "--b");
    const auto a = read_embeddings(c.a);
    const auto b = read_embeddings(c.b);
    return render_report({frechet_sets(a, b, c.kind == "fad" ? MetricKind::FAD : MetricKind::FD, c.threads)}, fmt);
  }

  if (cmd == "metric") {
    require(c.audio, "--audio");
    const auto spec = parse_adapter(c.adapter);
    const auto audio = read_embeddings(c.audio, Modality::audio);
    MetricReport r;
    if (sub == "favd") {
      require(c.video, "--video");
      r = favd(audio, read_embeddings(c.video, Modality::video), spec, c.threads);
    } else if (sub == "fatd") {
      require(c.text, "--text");
      r = fatd(audio, read_embeddings(c.text, Modality::text), spec, c.threads);
    } else {
      require(c.video, "--video");
      require(c.text, "--text");
      r = favtd(audio, read_embeddings(c.video, Modality::video), read_embeddings(c.text, Modality::text), spec,
                c.threads);
    }
    return render_report({r}, fmt);
  }

  if (cmd == "is") {
    require(c.a, "--a");
    return render_report({inception_score(read_embeddings(c.a, Modality::probs), c.splits)}, fmt);
  }

  if (cmd == "kl") {
    require(c.a, "--a");
    require(c.b, "--b");
    const auto dir = c.direction == "gen-ref" ? KlDirection::gen_to_ref : KlDirection::ref_to_gen;
    auto r = paired_kl(read_embeddings(c.a, Modality::probs), read_embeddings(c.b, Modality::probs), dir);
    return render_report({r}, fmt);
  }

  if (cmd == "mech" && sub == "attn") {
    require(c.a, "--a");
    const auto set = read_embeddings(c.a);
    const auto batch = to_batch(set, c.segments, "attn");
    const std::size_t t = batch.front().rows();
    const AttentionConfig acfg{c.heads, c.depth, set.dim(), c.residual};
    std::vector<float> data;
    data.reserve(set.data().size());
    for (const auto& seq : batch) {
      const Matrix y = multi_head_stack(seq, acfg);
      for (double v : y.data()) data.push_back(static_cast<float>(v));
    }
    EmbeddingSet result{set.dim(), set.count(), t, set.modality(), std::move(data)};
    if (!c.out.empty()) {
      write_embeddings(result, c.out);
      return {};
    }
    return render_rows(result, fmt);
  }

  if (cmd == "mech" && sub == "vclap") {
    FeatureBatch audio, text;
    nlohmann::ordered_json seed = nullptr;
    if (c.audio.empty() && c.text.empty()) {
      const std::size_t t = c.segments ? c.segments : 2;
      std::mt19937_64 rng(c.seed);
      std::normal_distribution<double> g;
      for (auto* side : {&audio, &text}) {
        for (std::size_t b = 0; b < c.batch; ++b) {
          Matrix m(t, c.dim);
          for (auto& v : m.data()) v = g(rng);
          side->push_back(std::move(m));
        }
      }
      seed = c.seed;
    } else {
      require(c.audio, "--audio");
      require(c.text, "--text");
      audio = to_batch(read_embeddings(c.audio, Modality::audio), c.segments, "vclap audio");
      text = to_batch(read_embeddings(c.text, Modality::text), c.segments, "vclap text");
    }
    const auto logits = vclap_logits(audio, text, c.temperature);
    const auto check = vclap_grad_check(logits, c.epsilon);
    nlohmann::ordered_json rec{{"loss", vclap_loss_from_logits(logits)},
                               {"max_rel_err", check.max_rel_err},
                               {"epsilon", check.epsilon},
                               {"seed", seed},
                               {"batch", audio.size()},
                               {"timesteps", audio.front().rows()},
                               {"dim", audio.front().cols()},
                               {"temperature", c.temperature}};
    return render_record(rec, fmt);
  }

  if (cmd == "mech" && sub == "ddpm") {
    const auto sched = linear_schedule(c.steps);
    const std::size_t n = c.step.value_or(c.steps / 2);
    if (n >= c.steps) throw InvalidArgument("--step must be below --steps");
    std::mt19937_64 rng(c.seed);
    const auto shape = c.latent.shape();
    const Latent z0 = Latent::standard_normal(shape, rng);
    const Latent eps = Latent::standard_normal(shape, rng);
    const Latent zn = ddpm_forward(z0, eps, n, sched);
    const NoiseNorm norm = c.norm == "l2" ? NoiseNorm::l2 : NoiseNorm::l2sq;
    const FeatureSeq cond(1, 1);
    const NoisePredictor zero = [](const Latent& z, std::size_t, const FeatureSeq&) { return Latent::zeros(z.shape); };
    const NoisePredictor oracle = [&](const Latent&, std::size_t, const FeatureSeq&) { return eps; };
    nlohmann::ordered_json rec{{"step", n},
                               {"alpha_bar", sched.alpha_bars[n]},
                               {"latent_shape", std::to_string(shape[0]) + "x" + std::to_string(shape[1]) + "x" +
                                                    std::to_string(shape[2])},
                               {"z0_norm", z0.norm()},
                               {"zn_norm", zn.norm()},
                               {"loss_zero_predictor", ddpm_loss(z0, eps, n, sched, zero, cond, norm)},
                               {"loss_oracle_predictor", ddpm_loss(z0, eps, n, sched, oracle, cond, norm)},
                               {"norm", c.norm},
                               {"seed", c.seed}};
    return render_record(rec, fmt);
  }

  if (cmd == "bench") {
    const auto grid = parse_grid(c.grid);
    if (sub == "visual") {
      const auto spec = population_from(c, MismatchMode::independent_latent);
      return run_visual_validation(spec, grid, seed_list(c), c.threads).render(fmt);
    }
    const auto spec = population_from(c, MismatchMode::temporal_shift_k);
    return run_temporal_validation(spec, grid, seed_list(c), c.threads).render(fmt);
  }

  if (cmd == "synth") {
    require(c.out, "--out");
    const auto spec = population_from(c, MismatchMode::independent_latent);
    const auto pop = gen_population(spec);
    const std::string prefix = c.out;
    write_embeddings(pop.audio, prefix + ".audio.emb");
    write_embeddings(pop.video, prefix + ".video.emb");
    write_embeddings(pop.text, prefix + ".text.emb");
    write_manifest(pop.manifest, manifest_path_for(prefix + ".emb"));
    nlohmann::ordered_json rec{{"audio", prefix + ".audio.emb"},
                               {"video", prefix + ".video.emb"},
                               {"text", prefix + ".text.emb"},
                               {"pairs", manifest_path_for(prefix + ".emb").string()},
                               {"n_pairs", pop.manifest.pairs.size()},
                               {"seed", spec.seed}};
    return render_record(rec, fmt);
  }
  throw InvalidArgument("unknown command");
}

inline std::vector<std::string> subcommand_path(const CLI::App& root) {
  std::vector<std::string> path;
  const CLI::App* at = &root;
  while (true) {
    const auto subs = at->get_subcommands();
    if (subs.empty()) break;
    at = subs.front();
    path.push_back(at->get_name());
  }
  return path;
}

inline CLI::App* leaf(CLI::App& root) {
  CLI::App* at = &root;
  while (!at->get_subcommands().empty()) at = at->get_subcommands().front();
  return at;
}

/// Converts config-file keys into flags for the selected command.
inline std::vector<std::string> config_args(const std::string& path, CLI::App& command, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw DataError("config " + path + ": expected a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (key == "population" && (command.get_parent()->get_name() == "bench" || command.get_name() == "synth")) {
      cfg.population = value;
      continue;
    }
    CLI::Option* opt = key == "config" ? nullptr : command.get_option_no_throw("--" + key);
    if (!opt) throw InvalidArgument("config " + path + ": unknown key '" + key + "' for this command");
    if (opt->get_type_size() == 0) {
      if (!value.is_boolean()) throw InvalidArgument("config " + path + ": '" + key + "' must be true or false");
      if (value.get<bool>()) args.push_back("--" + key);
      continue;
    }
    if (value.is_null() || value.is_object() || value.is_array()) {
      throw InvalidArgument("config " + path + ": '" + key + "' must be a scalar");
    }
    args.push_back("--" + key);
    args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
  }
  return args;
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    auto app = detail::build_app();
    auto parse = [](detail::App& a, std::vector<std::string> v) {
      std::reverse(v.begin(), v.end());
      a.root->parse(v);
    };
    try {
      parse(*app, args);
      if (!app->cfg.config.empty()) {
        // reparse with the file's values first so explicit flags take precedence
        const auto path = detail::subcommand_path(*app->root);
        const auto extra = detail::config_args(app->cfg.config, *detail::leaf(*app->root), app->cfg);
        const auto population = app->cfg.population;
        std::vector<std::string> merged(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(path.size()));
        merged.insert(merged.end(), extra.begin(), extra.end());
        merged.insert(merged.end(), args.begin() + static_cast<std::ptrdiff_t>(path.size()), args.end());
        app = detail::build_app();
        parse(*app, merged);
        app->cfg.population = population;
      }
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app->root->exit(e, out, err);
      err << "t2av: " << e.what() << "\n";
      return kUsage;
    }
    const auto path = detail::subcommand_path(*app->root);
    const std::string result = detail::run_command(path, app->cfg);
    if (!app->cfg.out.empty() && !(path[0] == "mech" && path[1] == "attn") && path[0] != "synth") {
      std::ofstream f(app->cfg.out, std::ios::binary);
      if (!f) throw IoError("cannot write " + app->cfg.out);
      f << result;
      if (!f) throw IoError("write failed: " + app->cfg.out);
    } else {
      out << result;
    }
    return kOk;
  } catch (const InvalidArgument& e) {
    err << "t2av: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "t2av: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    err << "t2av: " << e.what() << "\n";
    return kNumerical;
  } catch (const nlohmann::json::exception& e) {
    err << "t2av: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "t2av: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace t2av::cli
