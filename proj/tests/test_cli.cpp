#include <catch_amalgamated.hpp>

#include <t2av/cli.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace t2av;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("t2av_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

EmbeddingSet gaussian_set(std::size_t n, std::size_t d, std::uint64_t seed, double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> data(n * d);
  for (auto& v : data) v = g(rng) + static_cast<float>(shift);
  return {d, n, 0, Modality::latent, std::move(data)};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("frechet command", "[cli]") {
  TempDir dir;
  const auto x = dir.file("x.emb");
  write_embeddings(gaussian_set(200, 4, 1), x);

  const auto r = run({"frechet", "--a", x, "--b", x});
  REQUIRE(r.code == 0);
  REQUIRE(r.err.empty());
  REQUIRE(r.out == "metric   value  n_a  n_b  adapter  seed\nFD      0.0000  200  200  -        -\n");

  const auto j = run({"frechet", "--a", x, "--b", x, "--format", "json", "--kind", "fad"});
  const auto rep = nlohmann::json::parse(j.out).get<MetricReport>();
  REQUIRE(rep.metric == MetricKind::FAD);
  REQUIRE(rep.value == 0.0);

  SECTION("missing file exits 2 naming the path") {
    const auto m = run({"frechet", "--a", dir.file("missing.emb"), "--b", x});
    REQUIRE(m.code == 2);
    REQUIRE(m.out.empty());
    REQUIRE(m.err.find("missing.emb") != std::string::npos);
  }
  SECTION("malformed file exits 2") {
    std::ofstream(dir.file("junk.emb")) << "not an embedding file at all, definitely";
    REQUIRE(run({"frechet", "--a", dir.file("junk.emb"), "--b", x}).code == 2);
  }
  SECTION("dimension mismatch exits 2") {
    write_embeddings(gaussian_set(50, 3, 2), dir.file("y.emb"));
    REQUIRE(run({"frechet", "--a", x, "--b", dir.file("y.emb")}).code == 2);
  }
  SECTION("--out writes the report instead of stdout") {
    const auto o = run({"frechet", "--a", x, "--b", x, "--format", "csv", "--out", dir.file("r.csv")});
    REQUIRE(o.code == 0);
    REQUIRE(o.out.empty());
    REQUIRE(slurp(dir.file("r.csv")) == "metric,value,n_a,n_b,adapter,seed\nFD,0,200,200,,\n");
  }
}

TEST_CASE("usage errors exit 1", "[cli]") {
  REQUIRE(run({}).code == 1);
  REQUIRE(run({"nonsense"}).code == 1);
  REQUIRE(run({"frechet", "--a", "x.emb"}).code == 1);
  REQUIRE(run({"frechet", "--a", "x", "--b", "y", "--format", "xml"}).code == 1);
  REQUIRE(run({"kl", "--a", "x", "--b", "y", "--direction", "sideways"}).code == 1);
  REQUIRE(run({"bench", "visual", "--grid", "500-0"}).code == 1);
  REQUIRE(run({"metric", "favd", "--audio", "a", "--video", "v", "--adapter", "cubic"}).code == 1);
  const auto help = run({"--help"});
  REQUIRE(help.code == 0);
  REQUIRE(help.out.find("frechet") != std::string::npos);
}

TEST_CASE("numerical failures exit 3", "[cli]") {
  TempDir dir;
  auto a = gaussian_set(4, 3, 5);
  write_embeddings(a, dir.file("a.emb"));
  std::vector<float> z(a.data().begin(), a.data().end());
  std::fill(z.begin(), z.begin() + 3, 0.0f);
  write_embeddings(EmbeddingSet{3, 4, 0, Modality::latent, z}, dir.file("z.emb"));
  const auto r = run({"mech", "vclap", "--audio", dir.file("z.emb"), "--text", dir.file("a.emb"), "--segments", "1"});
  REQUIRE(r.code == 3);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("stats command", "[cli]") {
  TempDir dir;
  const auto set = gaussian_set(300, 5, 9, 1.5);
  write_embeddings(set, dir.file("s.emb"));
  const auto r = run({"stats", "--a", dir.file("s.emb"), "--format", "json", "--threads", "3"});
  REQUIRE(r.code == 0);
  const auto parsed = stats_from_json(nlohmann::json::parse(r.out));
  const auto direct = fit(set);
  REQUIRE(parsed.count() == 300);
  REQUIRE(frechet(parsed, direct) < 1e-12);
  REQUIRE(run({"stats", "--a", dir.file("s.emb")}).out.find("cov_trace") != std::string::npos);
}

TEST_CASE("metric commands", "[cli]") {
  TempDir dir;
  auto audio = gaussian_set(400, 4, 1);
  audio.set_modality(Modality::audio);
  write_embeddings(audio, dir.file("a.emb"));
  write_embeddings(gaussian_set(400, 6, 2), dir.file("v.emb"));
  write_embeddings(gaussian_set(400, 6, 3), dir.file("t.emb"));

  SECTION("pad adapter truncates the wider set") {
    const auto r = run({"metric", "favd", "--audio", dir.file("a.emb"), "--video", dir.file("v.emb"), "--format", "json"});
    REQUIRE(r.code == 0);
    const auto rep = nlohmann::json::parse(r.out).get<MetricReport>();
    REQUIRE(rep.adapter == "pad_truncate video:6->4");
    const auto expected = favd(audio, read_embeddings(dir.file("v.emb"), Modality::video),
                               ProjectionSpec::pad_truncate(0));
    REQUIRE(rep.value == expected.value);
  }
  SECTION("matrix adapter from a file") {
    Matrix m(6, 4);
    for (std::size_t i = 0; i < 4; ++i) m(i, i) = 1.0;
    std::vector<float> md(m.data().begin(), m.data().end());
    write_embeddings(EmbeddingSet{4, 6, 0, Modality::latent, md}, dir.file("m.emb"));
    const auto r = run({"metric", "favtd", "--audio", dir.file("a.emb"), "--video", dir.file("v.emb"), "--text",
                        dir.file("t.emb"), "--adapter", "matrix:" + dir.file("m.emb"), "--format", "json"});
    REQUIRE(r.code == 0);
    const auto rep = nlohmann::json::parse(r.out).get<MetricReport>();
    REQUIRE(rep.metric == MetricKind::FAVTD);
    REQUIRE(rep.adapter->rfind("matrix", 0) == 0);
    const auto pad = run({"metric", "favtd", "--audio", dir.file("a.emb"), "--video", dir.file("v.emb"), "--text",
                          dir.file("t.emb"), "--format", "json"});
    // identity-block projection equals truncation
    REQUIRE(nlohmann::json::parse(pad.out).get<MetricReport>().value == rep.value);

    REQUIRE(run({"metric", "fatd", "--audio", dir.file("a.emb"), "--text", dir.file("t.emb"), "--adapter",
                 "matrix:" + dir.file("a.emb")})
                .code == 2);
  }
}

TEST_CASE("probability commands", "[cli]") {
  TempDir dir;
  write_embeddings(EmbeddingSet::from_rows({{0.25f, 0.25f, 0.25f, 0.25f}, {0.25f, 0.25f, 0.25f, 0.25f}}),
                   dir.file("u.emb"));
  write_embeddings(EmbeddingSet::from_rows({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}),
                   dir.file("h.emb"));
  auto value = [](const Run& r) { return nlohmann::json::parse(r.out).at("value").get<double>(); };
  REQUIRE_THAT(value(run({"is", "--a", dir.file("u.emb"), "--format", "json"})), Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(value(run({"is", "--a", dir.file("h.emb"), "--format", "json"})), Catch::Matchers::WithinAbs(4.0, 1e-9));
  REQUIRE_THAT(value(run({"is", "--a", dir.file("h.emb"), "--splits", "2", "--format", "json"})),
               Catch::Matchers::WithinAbs(2.0, 1e-9));
  REQUIRE(run({"is", "--a", dir.file("h.emb"), "--splits", "0"}).code == 1);
  REQUIRE(value(run({"kl", "--a", dir.file("u.emb"), "--b", dir.file("u.emb"), "--format", "json"})) == 0.0);
  REQUIRE(run({"kl", "--a", dir.file("u.emb"), "--b", dir.file("h.emb")}).code == 2);
}

TEST_CASE("mechanism commands", "[cli]") {
  TempDir dir;
  SECTION("attn writes an embedding file") {
    std::vector<float> d = {1, 0, 0, 1, 5, 5};
    write_embeddings(EmbeddingSet{2, 3, 0, Modality::latent, d}, dir.file("x.emb"));
    REQUIRE(run({"mech", "attn", "--a", dir.file("x.emb"), "--segments", "1", "--out", dir.file("y.emb")}).code == 0);
    // T=1 attention is the identity
    REQUIRE(read_embeddings(dir.file("y.emb")).bit_identical(EmbeddingSet{2, 3, 1, Modality::latent, d}));

    const auto r = run({"mech", "attn", "--a", dir.file("x.emb"), "--segments", "3", "--format", "csv"});
    REQUIRE(r.code == 0);
    REQUIRE(std::count(r.out.begin(), r.out.end(), '\n') == 3);
    REQUIRE(run({"mech", "attn", "--a", dir.file("x.emb"), "--segments", "2"}).code == 2);
  }
  SECTION("vclap prints the gradient check as JSON") {
    const auto r = run({"mech", "vclap", "--seed", "11", "--format", "json"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j.at("seed") == 11);
    REQUIRE(j.at("epsilon") == 1e-5);
    REQUIRE(j.at("max_rel_err").get<double>() < 1e-4);
    REQUIRE(run({"mech", "vclap", "--seed", "11", "--epsilon", "0.1"}).code == 1);
  }
  SECTION("ddpm") {
    const auto r = run({"mech", "ddpm", "--seed", "2", "--time", "64", "--freq", "16", "--format", "json"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j.at("loss_oracle_predictor") == 0.0);
    REQUIRE(j.at("step") == 500);
    REQUIRE(run({"mech", "ddpm", "--step", "1000"}).code == 1);
    REQUIRE(run({"mech", "ddpm", "--time", "63"}).code == 1);
  }
}

TEST_CASE("bench and synth", "[cli]") {
  TempDir dir;
  const std::vector<std::string> bench = {"bench", "visual", "--seed", "7", "--seeds", "3", "--grid",
                                          "100:0,50:50", "--format", "csv"};
  const auto a = run(bench);
  REQUIRE(a.code == 0);
  REQUIRE(a.out.rfind("true_count,false_count,metric,value,seed\n", 0) == 0);
  REQUIRE(std::count(a.out.begin(), a.out.end(), '\n') == 1 + 2 * 3 * 3);
  auto threaded = bench;
  threaded.insert(threaded.end(), {"--threads", "1"});
  REQUIRE(run(bench).out == a.out);
  REQUIRE(run(threaded).out == a.out);

  const auto t = run({"bench", "temporal", "--seeds", "2", "--grid", "100:0,0:100", "--shift", "0", "--format", "csv"});
  REQUIRE(t.code == 0);
  REQUIRE(run({"bench", "temporal", "--mode", "independent"}).code == 1);

  SECTION("config file with flag overrides and population keys") {
    std::ofstream(dir.file("c.json")) << R"({"seeds": 2, "format": "json", "grid": "40:0,20:20",
                                            "population": {"n_clips": 60, "n_false": 30}})";
    const auto c = run({"bench", "visual", "--config", dir.file("c.json"), "--format", "csv"});
    REQUIRE(c.code == 0);
    REQUIRE(c.out.rfind("true_count", 0) == 0);
    REQUIRE(std::count(c.out.begin(), c.out.end(), '\n') == 1 + 2 * 2 * 3);

    std::ofstream(dir.file("bad.json")) << R"({"seeds": 2, "colour": "blue"})";
    const auto b = run({"bench", "visual", "--config", dir.file("bad.json")});
    REQUIRE(b.code == 1);
    REQUIRE(b.err.find("colour") != std::string::npos);
    std::ofstream(dir.file("badpop.json")) << R"({"population": {"n_clip": 10}})";
    REQUIRE(run({"bench", "visual", "--config", dir.file("badpop.json")}).code == 1);
    REQUIRE(run({"bench", "visual", "--config", dir.file("nope.json")}).code == 2);
  }
  SECTION("synth writes files and a manifest that validates") {
    std::ofstream(dir.file("p.json")) << R"({"population": {"n_clips": 20, "n_false": 10}})";
    const auto prefix = dir.file("pop");
    const auto s = run({"synth", "--seed", "4", "--config", dir.file("p.json"), "--out", prefix, "--format", "json"});
    REQUIRE(s.code == 0);
    const auto audio = read_embeddings(prefix + ".audio.emb", Modality::audio);
    const auto video = read_embeddings(prefix + ".video.emb", Modality::video);
    const auto text = read_embeddings(prefix + ".text.emb", Modality::text);
    const auto manifest = read_manifest(prefix + ".pairs.json");
    REQUIRE(manifest.pairs.size() == 30);
    REQUIRE_NOTHROW(validate_manifest(manifest, &audio, &video, &text));
    PopulationSpec spec;
    spec.n_clips = 20;
    spec.n_false = 10;
    spec.seed = 4;
    REQUIRE(audio.bit_identical(gen_population(spec).audio));
  }
}

#ifdef T2AV_CLI_PATH
TEST_CASE("seeded commands are byte-identical across processes", "[cli][process]") {
  TempDir dir;
  auto capture = [&](const std::string& args, const std::string& name) {
    const std::string path = dir.file(name);
    const std::string cmd = std::string("\"") + T2AV_CLI_PATH + "\" " + args + " > \"" + path + "\"";
    REQUIRE(std::system(cmd.c_str()) == 0);
    return slurp(path);
  };
  for (const std::string args : {"bench visual --seed 7 --seeds 3 --grid 200:0,100:100 --format csv",
                                 "mech vclap --seed 5 --format json", "mech ddpm --seed 5 --time 64 --format json"}) {
    const auto first = capture(args, "1.txt");
    REQUIRE_FALSE(first.empty());
    REQUIRE(capture(args, "2.txt") == first);
  }
}
#endif
