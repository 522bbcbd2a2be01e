#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "isac/pipeline.hpp"

using namespace isac;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.seed = 5;
  cfg.features.seeds = 2;
  cfg.features.wall_ms = 300;
  cfg.embed.n_neighbors = 8;
  cfg.embed.epochs = 300;
  cfg.cluster.min_cluster_size = 5;
  cfg.cluster.min_samples = 3;
  cfg.tune.tpe.n_trials = 4;
  cfg.tune.tpe.n_startup_random = 2;
  cfg.tune.hard_k = 2;
  cfg.tune.probe_ms = 150;
  cfg.tune.trial_wall_ms = 150;
  cfg.gat_train.epochs = 30;
  cfg.gat_train.batch_size = 16;
  cfg.sampling.count = 8;
  cfg.sampling.rate = 0.15;
  return cfg;
}

/// Two planted families: dense QKP around n=30 and small TSP instances.
void write_tiny_corpus(const fs::path& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < 12; ++i) {
    auto inst = generate_qkp(28 + (i % 4), 1.0, 1000 + static_cast<uint64_t>(i),
                             "qkp_" + std::to_string(i));
    save_instance(inst, (dir / (inst.id + ".json")).string());
  }
  for (int i = 0; i < 12; ++i) {
    auto coords = generate_tsp(6, 2000 + static_cast<uint64_t>(i));
    auto inst = tsp_to_bqp(coords, default_tsp_penalty(coords), "tsp_" + std::to_string(i));
    save_instance(inst, (dir / (inst.id + ".json")).string());
  }
}

struct SharedBundle {
  fs::path root, corpus, bundle;
  TrainSummary summary;

  SharedBundle() {
    root = fs::temp_directory_path() / "isac_pipeline_test";
    fs::remove_all(root);
    corpus = root / "corpus";
    bundle = root / "bundle";
    write_tiny_corpus(corpus);
    summary = cmd_train(corpus.string(), tiny_config(), bundle.string());
  }
};

SharedBundle& shared() {
  static SharedBundle s;
  return s;
}

}  // namespace

TEST_CASE("compute_gap: identity and hand case") {
  CHECK(compute_gap(-100.0, -100.0) == 0.0);
  CHECK(compute_gap(-103.0, -100.0) == Catch::Approx(-3.0).margin(1e-9));
  CHECK(compute_gap(-103.0, -100.0) < 0.0);  // negative = improvement
  CHECK_THROWS_AS(compute_gap(1.0, 0.0), std::domain_error);
}

TEST_CASE("compute_delta_ttot: exact sums") {
  CHECK(compute_delta_ttot(-3160.0, 211.0) == -2949.0);
  CHECK(compute_delta_ttot(-25800.0, 145.0) == -25655.0);
  CHECK(compute_delta_ttot(-4321.0, 0.0) == -4321.0);
}

TEST_CASE("paper anchor rows agree at 3 significant figures") {
  CHECK(agrees_at_3sf(compute_delta_ttot(-3.16, 0.211), -2.95));
  CHECK(agrees_at_3sf(compute_delta_ttot(-25.8, 0.145), -25.6));
  CHECK(format_seconds_3sf(compute_delta_ttot(-3.16, 0.211)) == "-2.95");
  CHECK_FALSE(agrees_at_3sf(-2.97, -2.95));
}

TEST_CASE("effect marking rules") {
  CHECK(classify_effect(-1.0, 500.0) == Effect::improved);   // boundary: -1% or less
  CHECK(classify_effect(1.0, -5000.0) == Effect::worsened);  // gap decides first
  CHECK(classify_effect(-2.0, 5000.0) == Effect::improved);
  CHECK(classify_effect(0.0, -1000.0) == Effect::improved);
  CHECK(classify_effect(0.0, 999.0) == Effect::equivalent);
  CHECK(classify_effect(0.5, 1000.0) == Effect::worsened);
  CHECK(classify_effect(0.0, 0.0) == Effect::equivalent);
}

TEST_CASE("seconds format uses 3 significant figures") {
  CHECK(format_seconds_3sf(0.211) == "0.211");
  CHECK(format_seconds_3sf(-25.655) == "-25.7");
  CHECK(format_seconds_3sf(0.007) == "0.007");
}

TEST_CASE("pipeline config json round trips with defaults") {
  PipelineConfig defaults;
  auto back = pipeline_config_from_json(nlohmann::json::object());
  CHECK(back.seed == defaults.seed);
  CHECK(back.features.seeds == defaults.features.seeds);
  CHECK(back.tune.tpe.n_trials == 500);
  CHECK(back.tune.tpe.n_startup_random == 100);
  CHECK(back.tune.tpe.alpha == 0.001);
  CHECK(back.tune.tpe.n_candidates == 24);
  CHECK(back.embed.n_neighbors == 30);
  CHECK(back.embed.min_dist == 0.0);
  CHECK(back.embed.n_components == 3);
  CHECK(back.gat_train.epochs == 500);
  CHECK(back.gat_train.batch_size == 32);
  CHECK(back.gat_train.learning_rate == 0.01);
  CHECK(back.sampling.rate == 0.10);
  CHECK(back.sampling.count == 20);
  CHECK(back.sampling.balance_factor == 1.2);

  auto cfg = tiny_config();
  auto round = pipeline_config_from_json(to_json(cfg));
  CHECK(to_json(round).dump() == to_json(cfg).dump());
}

TEST_CASE("tiny corpus trains into a valid bundle") {
  auto& s = shared();
  CHECK(s.summary.L >= 2);
  CHECK(s.summary.n_instances == 24);
  for (const char* name : {"registry.json", "model.json", "features.csv", "embedding.csv",
                           "labels.csv", "standardization.json", "manifest.json"})
    CHECK(fs::exists(s.bundle / name));

  auto bundle = load_bundle(s.bundle.string());
  CHECK(static_cast<int>(bundle.registry.classes.size()) == s.summary.L);
  ParamSpace space;
  for (const auto& c : bundle.registry.classes) {
    CHECK(space.contains(c.params));
    CHECK(!c.members.empty());
    CHECK(c.medoid.size() == 3);
  }
  // The two planted families should dominate separate classes.
  std::map<int, std::map<char, int>> family_by_class;
  for (const auto& [id, label] : s.summary.labels) ++family_by_class[label][id[0]];
  CHECK(family_by_class.size() >= 2);
}

TEST_CASE("classification is deterministic and registry-backed") {
  auto& s = shared();
  auto inst_path = (s.corpus / "qkp_0.json").string();
  auto a = cmd_classify(inst_path, s.bundle.string());
  auto b = cmd_classify(inst_path, s.bundle.string());
  CHECK(a.predicted_class == b.predicted_class);
  CHECK(a.predicted_class >= 0);
  auto bundle = load_bundle(s.bundle.string());
  CHECK(a.predicted_class < static_cast<int>(bundle.registry.classes.size()));
  CHECK(a.params == bundle.registry.classes[static_cast<size_t>(a.predicted_class)].params);
  CHECK(a.t_tune_ms > 0.0);
}

TEST_CASE("registry and model round trip preserves predictions") {
  auto& s = shared();
  auto bundle = load_bundle(s.bundle.string());
  auto reg_json = to_json(bundle.registry);
  auto back = registry_from_json(reg_json);
  CHECK(to_json(back).dump() == reg_json.dump());

  auto model_back = gat_from_json(to_json(bundle.model));
  for (int i = 0; i < 4; ++i) {
    auto inst = load_instance((s.corpus / ("qkp_" + std::to_string(i) + ".json")).string());
    auto g = to_graph(inst);
    CHECK(predict_majority(bundle.model, g, 8, 0.15, 77) ==
          predict_majority(model_back, g, 8, 0.15, 77));
  }
}

TEST_CASE("tampered bundles are rejected") {
  auto& s = shared();
  auto tampered = s.root / "tampered";
  fs::remove_all(tampered);
  fs::copy(s.bundle, tampered, fs::copy_options::recursive);
  {
    std::ofstream f(tampered / "registry.json", std::ios::app);
    f << " ";
  }
  CHECK_THROWS_WITH(load_bundle(tampered.string()),
                    Catch::Matchers::ContainsSubstring("checksum"));
  fs::remove((tampered / "manifest.json"));
  CHECK_THROWS_WITH(load_bundle(tampered.string()),
                    Catch::Matchers::ContainsSubstring("manifest"));
}

TEST_CASE("training twice yields byte-identical artifacts") {
  auto& s = shared();
  auto again = s.root / "bundle2";
  cmd_train(s.corpus.string(), tiny_config(), again.string());
  CHECK(slurp((s.bundle / "registry.json").string()) ==
        slurp((again / "registry.json").string()));
  CHECK(slurp((s.bundle / "model.json").string()) == slurp((again / "model.json").string()));
  CHECK(slurp((s.bundle / "features.csv").string()) ==
        slurp((again / "features.csv").string()));
}

TEST_CASE("degenerate corpus aborts with a stage error and no bundle") {
  auto root = fs::temp_directory_path() / "isac_tiny_corpus";
  fs::remove_all(root);
  fs::create_directories(root / "corpus");
  save_instance(generate_qkp(10, 0.5, 1, "only"), (root / "corpus" / "only.json").string());
  CHECK_THROWS_WITH(cmd_train((root / "corpus").string(), tiny_config(), (root / "out").string()),
                    Catch::Matchers::ContainsSubstring("stage"));
  CHECK_FALSE(fs::exists(root / "out" / "manifest.json"));
}

TEST_CASE("self-comparison evaluation reports exact zeros") {
  auto& s = shared();
  // Rewrite the registry so every class carries the default parameters,
  // then compare against the default baseline with paired seeds.
  auto selfdir = s.root / "selfcmp";
  fs::remove_all(selfdir);
  fs::copy(s.bundle, selfdir, fs::copy_options::recursive);
  auto bundle = load_bundle(s.bundle.string());
  auto reg = bundle.registry;
  for (auto& c : reg.classes) c.params = SolverParams{};
  {
    std::ofstream f(selfdir / "registry.json", std::ios::binary);
    f << to_json(reg).dump(2) << '\n';
  }
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(selfdir))
    if (e.path().filename() != "manifest.json") files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  write_manifest(selfdir.string(), files, bundle.cfg);

  nlohmann::json manifest = nlohmann::json::array();
  manifest.push_back((s.corpus / "qkp_1.json").string());
  manifest.push_back({{"path", (s.corpus / "tsp_1.json").string()}, {"true_class", 0}});
  auto manifest_path = s.root / "eval_manifest.json";
  {
    std::ofstream f(manifest_path);
    f << manifest.dump();
  }
  EvalOptions opts;
  opts.seeds = 2;
  opts.wall_ms = 200;
  auto out_csv = (s.root / "report.csv").string();
  auto summary = cmd_evaluate(manifest_path.string(), selfdir.string(), opts, out_csv);
  REQUIRE(summary.records.size() == 2);
  for (const auto& rec : summary.records) {
    REQUIRE(rec.gap_percent.has_value());
    CHECK(*rec.gap_percent == 0.0);
    CHECK(*rec.delta_tts_ms == 0.0);
    CHECK(*rec.delta_ttot_ms == compute_delta_ttot(*rec.delta_tts_ms, rec.t_tune_ms));
    CHECK(rec.effect == Effect::equivalent);
  }
  CHECK(summary.records[1].true_class == 0);
  CHECK(summary.equivalent == 2);

  auto csv = slurp(out_csv);
  CHECK(csv.rfind("instance_id,true_class,pred_class,gap_percent,delta_tts_s,t_tune_s,"
                  "delta_ttot_s,effect\n", 0) == 0);
  CHECK(csv.find("qkp_1") != std::string::npos);
}

TEST_CASE("per-problem baseline registry and feature-derived true classes") {
  auto& s = shared();
  nlohmann::json baseline = {{"QKP", to_json(SolverParams{})}, {"TSP", to_json(SolverParams{})}};
  auto base_path = s.root / "problem_registry.json";
  {
    std::ofstream f(base_path);
    f << baseline.dump();
  }
  nlohmann::json manifest = nlohmann::json::array();
  manifest.push_back((s.corpus / "qkp_2.json").string());
  auto manifest_path = s.root / "eval_manifest2.json";
  {
    std::ofstream f(manifest_path);
    f << manifest.dump();
  }
  EvalOptions opts;
  opts.baseline = base_path.string();
  opts.seeds = 1;
  opts.wall_ms = 200;
  opts.true_class_by_features = true;
  auto summary = cmd_evaluate(manifest_path.string(), s.bundle.string(), opts,
                              (s.root / "report2.csv").string());
  REQUIRE(summary.records.size() == 1);
  const auto& rec = summary.records[0];
  REQUIRE(rec.true_class.has_value());
  // qkp_2 is a training instance: its feature-space nearest neighbor is
  // itself, so the derived true class must match the training label.
  int expected = -1;
  for (const auto& [id, label] : s.summary.labels)
    if (id == "qkp_2") expected = label;
  CHECK(*rec.true_class == expected);
}

TEST_CASE("cli generates instances and classifies them") {
  auto& s = shared();
  auto dir = s.root / "cli";
  fs::create_directories(dir);
  std::string cli = ISAC_CLI_PATH;
  auto qkp_path = (dir / "cli_qkp.json").string();
  std::string cmd = cli + " gen qkp --n 25 --density 0.5 --seed 3 --out " + qkp_path +
                    " > /dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  auto inst = load_instance(qkp_path);
  CHECK(inst.n == 25);
  CHECK(inst.tag == ProblemTag::QKP);

  auto tsp_path = (dir / "cli_tsp.json").string();
  cmd = cli + " gen tsp --cities 5 --seed 2 --out " + tsp_path + " > /dev/null 2>&1";
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(load_instance(tsp_path).n == 25);

  cmd = cli + " classify --instance " + (s.corpus / "tsp_3.json").string() + " --bundle " +
        s.bundle.string() + " --json > " + (dir / "cls.json").string() + " 2>/dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  std::ifstream f(dir / "cls.json");
  nlohmann::json j;
  f >> j;
  CHECK(j.contains("predicted_class"));
  CHECK(j.contains("t_tune_ms"));
  CHECK(j.at("params").contains("num_run"));
}
