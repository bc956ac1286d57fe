#include <catch_amalgamated.hpp>

#include <t2av/simbench.hpp>

#include <numeric>

using namespace t2av;

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// mean cosine between paired audio/video rows, over true and false pairs
std::pair<double, double> pair_cosines(const Population& pop) {
  const std::size_t t = pop.audio.segments_per_clip();
  double sum[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (const auto& p : pop.manifest.pairs) {
    const int k = p.label == PairLabel::true_pair ? 0 : 1;
    for (std::size_t s = 0; s < t; ++s) {
      sum[k] += cosine(pop.audio.row(p.audio_row * t + s), pop.video.row(p.visual_row * t + s));
      ++n[k];
    }
  }
  return {sum[0] / n[0], sum[1] / n[1]};
}

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> s(n);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

}  // namespace

TEST_CASE("population shape and manifest", "[simbench]") {
  PopulationSpec spec;
  spec.n_clips = 50;
  spec.n_false = 30;
  const auto pop = gen_population(spec);
  REQUIRE(pop.audio.count() == 80 * 4);
  REQUIRE(pop.video.count() == 50 * 4);
  REQUIRE(pop.text.count() == 50 * 4);
  REQUIRE(pop.audio.segments_per_clip() == 4);
  REQUIRE(pop.audio.dim() == 16);
  REQUIRE(pop.audio.modality() == Modality::audio);
  REQUIRE(pop.video.modality() == Modality::video);
  REQUIRE(pop.text.modality() == Modality::text);
  REQUIRE(pop.manifest.pairs.size() == 80);
  REQUIRE_NOTHROW(validate_manifest(pop.manifest, &pop.audio, &pop.video, &pop.text));

  const auto& f = pop.manifest.pairs[50];
  REQUIRE(f.label == PairLabel::false_pair);
  REQUIRE(f.audio_row == 50);
  REQUIRE(f.visual_row == 0);
  REQUIRE(f.text_row == 0);
  REQUIRE(pop.manifest.pairs[49].label == PairLabel::true_pair);
}

TEST_CASE("degenerate population: no noise, identical maps", "[simbench]") {
  PopulationSpec spec;
  spec.n_clips = 40;
  spec.n_false = 0;
  spec.noise_scale = 0.0;
  spec.map_jitter = 0.0;
  const auto pop = gen_population(spec);
  REQUIRE(pop.audio.bit_identical(pop.video));
}

TEST_CASE("population is deterministic in the seed", "[simbench]") {
  PopulationSpec spec;
  spec.n_clips = 60;
  spec.n_false = 60;
  for (auto mode : {MismatchMode::independent_latent, MismatchMode::same_class_other_clip,
                    MismatchMode::temporal_shift_k}) {
    spec.mismatch_mode = mode;
    spec.seed = 17;
    const auto a = gen_population(spec);
    const auto b = gen_population(spec);
    REQUIRE(a.audio.bit_identical(b.audio));
    REQUIRE(a.video.bit_identical(b.video));
    REQUIRE(a.text.bit_identical(b.text));
    REQUIRE(a.manifest == b.manifest);
    spec.seed = 18;
    REQUIRE_FALSE(gen_population(spec).audio.bit_identical(a.audio));
  }
}

TEST_CASE("true pairs are more similar than false pairs", "[simbench]") {
  PopulationSpec spec;
  spec.n_clips = 200;
  spec.n_false = 200;
  spec.noise_scale = 0.1;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    spec.seed = seed;
    const auto [t, f] = pair_cosines(gen_population(spec));
    REQUIRE(t > f);
  }
}

TEST_CASE("temporal shift false pairs", "[simbench][temporal]") {
  PopulationSpec spec;
  spec.n_clips = 30;
  spec.n_false = 30;
  spec.mismatch_mode = MismatchMode::temporal_shift_k;
  const auto pop = gen_population(spec);
  const std::size_t t = 4;
  for (std::size_t j = 0; j < 30; ++j) {
    const auto& p = pop.manifest.pairs[30 + j];
    const double k_real = p.shift_s / (kClipSeconds / t);
    const auto k = static_cast<std::size_t>(std::lround(k_real));
    REQUIRE(k_real == static_cast<double>(k));
    REQUIRE(k >= 1);
    REQUIRE(k <= 3);
    for (std::size_t s = 0; s < t; ++s) {
      const auto row = pop.audio.row((30 + j) * t + s);
      if (s < k) {
        REQUIRE(std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; }));
      } else {
        const auto src = pop.audio.row(j * t + s - k);
        REQUIRE(std::equal(row.begin(), row.end(), src.begin(), src.end()));
      }
    }
  }

  SECTION("shift zero copies the paired audio and reproduces the true-pair cell") {
    spec.fixed_shift = 0;
    const auto z = gen_population(spec);
    for (std::size_t j = 0; j < 30; ++j) REQUIRE(z.manifest.pairs[30 + j].shift_s == 0.0);
    std::vector<std::size_t> tru(30), fal(30);
    std::iota(tru.begin(), tru.end(), 0);
    std::iota(fal.begin(), fal.end(), 30);
    REQUIRE(select_units(z.audio, tru).bit_identical(select_units(z.audio, fal)));

    const auto report = run_temporal_validation(spec, {{20, 0}, {0, 20}}, seed_range(5));
    for (std::uint64_t s = 0; s < 5; ++s) {
      REQUIRE(*report.value(20, 0, MetricKind::FAVD, s) == *report.value(0, 20, MetricKind::FAVD, s));
    }
  }
}

TEST_CASE("same-class false pairs keep the class tag", "[simbench][temporal]") {
  PopulationSpec spec;
  spec.n_clips = 20;
  spec.n_false = 20;
  spec.mismatch_mode = MismatchMode::same_class_other_clip;
  const auto pop = gen_population(spec);
  for (std::size_t j = 0; j < 20; ++j) {
    REQUIRE(pop.manifest.pairs[20 + j].class_tag == pop.manifest.pairs[j].class_tag);
  }
}

TEST_CASE("spec and grid errors", "[simbench]") {
  PopulationSpec spec;
  spec.latent_dim = 17;
  REQUIRE_THROWS_AS(gen_population(spec), InvalidArgument);
  spec = {};
  spec.noise_scale = std::nan("");
  REQUIRE_THROWS_AS(gen_population(spec), InvalidArgument);
  spec = {};
  spec.n_false = 1001;
  REQUIRE_THROWS_AS(gen_population(spec), InvalidArgument);
  spec = {};
  spec.mismatch_mode = MismatchMode::temporal_shift_k;
  spec.segments = 1;
  REQUIRE_THROWS_AS(gen_population(spec), InvalidArgument);
  REQUIRE_THROWS_AS(run_temporal_validation(spec), InvalidArgument);

  spec = {};
  spec.n_clips = 100;
  spec.n_false = 100;
  REQUIRE_THROWS_AS(run_visual_validation(spec), InsufficientRows);
  REQUIRE_THROWS_AS(run_visual_validation(spec, {{0, 0}}), InvalidArgument);
  REQUIRE_THROWS_AS(run_temporal_validation(spec, {{10, 10}}), InvalidArgument);
}

TEST_CASE("report layout", "[simbench][report]") {
  PopulationSpec spec;
  spec.n_clips = 40;
  spec.n_false = 40;
  const ValidationGrid grid = {{40, 0}, {20, 20}};
  const auto report = run_visual_validation(spec, grid, {3, 1});
  REQUIRE(report.rows.size() == 2 * 2 * 3);
  // (cell, seed, metric) order
  REQUIRE(report.rows[0].true_count == 40);
  REQUIRE(report.rows[0].seed == 3);
  REQUIRE(report.rows[0].metric == MetricKind::FAVD);
  REQUIRE(report.rows[1].metric == MetricKind::FATD);
  REQUIRE(report.rows[2].metric == MetricKind::FAVTD);
  REQUIRE(report.rows[3].seed == 1);
  REQUIRE(report.rows[6].false_count == 20);
  for (const auto& r : report.rows) REQUIRE(std::isfinite(r.value));

  SECTION("thread count does not change the report") {
    REQUIRE(run_visual_validation(spec, grid, {3, 1, 4, 1, 5}, 1) ==
            run_visual_validation(spec, grid, {3, 1, 4, 1, 5}, 4));
  }
  SECTION("csv, json and markdown") {
    ValidationReport r;
    r.rows = {{500, 0, MetricKind::FAVD, 1.0, 0}, {500, 0, MetricKind::FAVD, 2.0, 1},
              {500, 0, MetricKind::FAVTD, 0.5, 0}, {0, 500, MetricKind::FAVD, 10.5, 0}};
    REQUIRE(r.csv() ==
            "true_count,false_count,metric,value,seed\n500,0,FAVD,1,0\n500,0,FAVD,2,1\n500,0,FAVTD,0.5,0\n"
            "0,500,FAVD,10.5,0\n");
    REQUIRE(r.markdown() ==
            "| True Pairs | False Pairs | FAVD | FA(VT)D |\n"
            "|---:|---:|---:|---:|\n"
            "| 500 | 0 | 1.50 | 0.50 |\n"
            "| 0 | 500 | 10.50 | - |\n");
    const auto first = nlohmann::json::parse(r.json().substr(0, r.json().find('\n')));
    REQUIRE(first.get<ValidationRow>() == r.rows[0]);
    REQUIRE(r.render(OutputFormat::csv) == r.csv());
  }
}

TEST_CASE("validation directions", "[simbench][direction]") {
  const auto seeds = seed_range(20);
  auto count = [&](const ValidationReport& r, MetricKind m, auto pred) {
    std::size_t n = 0;
    for (auto s : seeds) {
      auto v = [&](std::size_t t, std::size_t f) { return *r.value(t, f, m, s); };
      n += pred(v) ? 1 : 0;
    }
    return n;
  };

  SECTION("visual alignment") {
    const auto r = run_visual_validation({}, default_grid(), seeds, 0);
    for (auto m : {MetricKind::FAVD, MetricKind::FATD, MetricKind::FAVTD}) {
      INFO(to_string(m));
      REQUIRE(count(r, m, [](auto v) { return v(500, 500) > v(500, 0); }) >= 19);
      REQUIRE(count(r, m, [](auto v) { return v(500, 1000) > v(500, 500) && v(500, 500) > v(1000, 500); }) >= 19);
    }
  }
  SECTION("temporal shift and same-class swaps") {
    PopulationSpec shift;
    shift.mismatch_mode = MismatchMode::temporal_shift_k;
    const auto rs = run_temporal_validation(shift, default_grid(), seeds, 0);
    REQUIRE(count(rs, MetricKind::FAVD, [](auto v) { return v(500, 500) > v(500, 0); }) >= 19);
    REQUIRE(count(rs, MetricKind::FAVD, [](auto v) { return v(500, 1000) > v(500, 500); }) >= 19);
    REQUIRE(count(rs, MetricKind::FAVD, [](auto v) { return v(1000, 500) < v(500, 500); }) >= 19);

    PopulationSpec cls;
    cls.mismatch_mode = MismatchMode::same_class_other_clip;
    const auto rc = run_temporal_validation(cls, default_grid(), seeds, 0);
    const auto ri = run_visual_validation({}, default_grid(), seeds, 0);
    std::size_t between = 0;
    for (auto s : seeds) {
      const double matched = *ri.value(500, 0, MetricKind::FAVD, s);
      const double indep = *ri.value(500, 500, MetricKind::FAVD, s);
      const double same = *rc.value(500, 500, MetricKind::FAVD, s);
      between += matched < same && same < indep;
    }
    REQUIRE(between >= 19);
  }
}
