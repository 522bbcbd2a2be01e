// Command-line front end: instance generation, the training step, and the
// execution/evaluation steps.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "isac/pipeline.hpp"

namespace {

uint64_t seed_override(uint64_t fallback) {
  const char* env = std::getenv("ISAC_SEED");
  if (!env || !*env) return fallback;
  return std::strtoull(env, nullptr, 10);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-specific solver parameter selection"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate benchmark instances");
  gen->require_subcommand(1);

  int qkp_n = 1000;
  double qkp_density = 0.25;
  uint64_t qkp_seed = 0;
  std::string qkp_out, qkp_id;
  auto* gen_qkp = gen->add_subcommand("qkp", "Quadratic knapsack instance");
  gen_qkp->add_option("--n", qkp_n, "Number of variables")->required();
  gen_qkp->add_option("--density", qkp_density, "Off-diagonal density in (0,1]")->required();
  gen_qkp->add_option("--seed", qkp_seed, "Generator seed");
  gen_qkp->add_option("--out", qkp_out, "Output instance JSON")->required();
  gen_qkp->add_option("--id", qkp_id, "Instance id (defaults to a derived name)");

  int tsp_cities = 20;
  uint64_t tsp_seed = 0;
  double tsp_penalty = 0.0;
  std::string tsp_out, tsp_coords_out, tsp_id;
  auto* gen_tsp = gen->add_subcommand("tsp", "Random TSP converted to a QUBO");
  gen_tsp->add_option("--cities", tsp_cities, "City count (>= 3)")->required();
  gen_tsp->add_option("--seed", tsp_seed, "Generator seed");
  gen_tsp->add_option("--penalty", tsp_penalty, "One-hot penalty (default 2*maxdist*cities)");
  gen_tsp->add_option("--out", tsp_out, "Output instance JSON");
  gen_tsp->add_option("--coords-out", tsp_coords_out, "Output coordinate JSON");
  gen_tsp->add_option("--id", tsp_id, "Instance id");

  std::string train_corpus, train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "Run the training step on a corpus");
  train_cmd->add_option("--corpus", train_corpus, "Directory of instance JSON files")->required();
  train_cmd->add_option("--config", train_config, "Pipeline config JSON")->required();
  train_cmd->add_option("--out", train_out, "Bundle output directory")->required();

  std::string cls_instance, cls_bundle;
  bool cls_json = false;
  auto* classify_cmd = app.add_subcommand("classify", "Select parameters for one instance");
  classify_cmd->add_option("--instance", cls_instance, "Instance JSON")->required();
  classify_cmd->add_option("--bundle", cls_bundle, "Trained bundle directory")->required();
  classify_cmd->add_flag("--json", cls_json, "Emit machine-readable JSON");

  std::string ev_manifest, ev_bundle, ev_baseline = "default", ev_out;
  int ev_seeds = 10;
  long long ev_wall = 30000;
  bool ev_true_by_features = false;
  uint64_t ev_seed = 99;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare selected vs baseline parameters");
  eval_cmd->add_option("--manifest", ev_manifest, "Test manifest JSON")->required();
  eval_cmd->add_option("--bundle", ev_bundle, "Trained bundle directory")->required();
  eval_cmd->add_option("--baseline", ev_baseline,
                       "'default' or a per-problem registry JSON path");
  eval_cmd->add_option("--seeds", ev_seeds, "Solver seeds per side");
  eval_cmd->add_option("--wall-ms", ev_wall, "Solver budget per run (ms)");
  eval_cmd->add_option("--out", ev_out, "Report CSV path")->required();
  eval_cmd->add_flag("--true-class-by-features", ev_true_by_features,
                     "Derive true classes from test-instance features");
  eval_cmd->add_option("--seed", ev_seed, "Evaluation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_qkp->parsed()) {
      auto inst = isac::generate_qkp(qkp_n, qkp_density, qkp_seed, qkp_id);
      isac::save_instance(inst, qkp_out);
      std::printf("wrote %s (n=%d, nnz=%zu)\n", qkp_out.c_str(), inst.n, inst.q.size());
    } else if (gen_tsp->parsed()) {
      auto coords = isac::generate_tsp(tsp_cities, tsp_seed);
      if (!tsp_coords_out.empty()) {
        isac::save_coords(coords, tsp_coords_out);
        std::printf("wrote %s (%d cities)\n", tsp_coords_out.c_str(), tsp_cities);
      }
      if (!tsp_out.empty()) {
        double penalty = tsp_penalty > 0.0 ? tsp_penalty : isac::default_tsp_penalty(coords);
        auto inst = isac::tsp_to_bqp(coords, penalty, tsp_id);
        isac::save_instance(inst, tsp_out);
        std::printf("wrote %s (n=%d, penalty=%g)\n", tsp_out.c_str(), inst.n, penalty);
      }
      if (tsp_out.empty() && tsp_coords_out.empty())
        throw std::runtime_error("gen tsp: pass --out and/or --coords-out");
    } else if (train_cmd->parsed()) {
      auto cfg = isac::load_pipeline_config(train_config);
      cfg.seed = seed_override(cfg.seed);
      auto summary = isac::cmd_train(train_corpus, cfg, train_out);
      std::printf("trained bundle at %s: %zu instances, L=%d classes\n",
                  summary.bundle_dir.c_str(), summary.n_instances, summary.L);
    } else if (classify_cmd->parsed()) {
      auto r = isac::cmd_classify(cls_instance, cls_bundle);
      if (cls_json) {
        nlohmann::json j = {{"predicted_class", r.predicted_class},
                            {"params", isac::to_json(r.params)},
                            {"t_tune_ms", r.t_tune_ms}};
        std::cout << j.dump(2) << '\n';
      } else {
        std::printf("class=%d num_run=%d gs_level=%d gs_cutoff=%d t_tune=%ss\n",
                    r.predicted_class, r.params.num_run, r.params.gs_level,
                    r.params.gs_cutoff,
                    isac::format_seconds_3sf(r.t_tune_ms / 1000.0).c_str());
      }
    } else if (eval_cmd->parsed()) {
      isac::EvalOptions opts;
      opts.baseline = ev_baseline;
      opts.seeds = ev_seeds;
      opts.wall_ms = ev_wall;
      opts.true_class_by_features = ev_true_by_features;
      opts.seed = seed_override(ev_seed);
      auto summary = isac::cmd_evaluate(ev_manifest, ev_bundle, opts, ev_out);
      std::printf("wrote %s: improved=%d equivalent=%d worsened=%d\n", ev_out.c_str(),
                  summary.improved, summary.equivalent, summary.worsened);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
