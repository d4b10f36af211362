// Command-line front end: synthetic data, retrieval, full runs, evaluation of
// saved states, gradient checks and the replay-size sweep.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "wkcl/config.hpp"
#include "wkcl/engine.hpp"
#include "wkcl/error.hpp"
#include "wkcl/gradcheck_suite.hpp"
#include "wkcl/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code(const wkcl::Error& e) {
  switch (wkcl::classify(e.kind())) {
    case wkcl::ErrorClass::Config:
      return 2;
    case wkcl::ErrorClass::Data:
      return 3;
    case wkcl::ErrorClass::Numerical:
      return 4;
  }
  return 3;
}

void write_json(const fs::path& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) wkcl::raise(wkcl::ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

wkcl::RunConfig make_config(const std::string& config_path, const std::string& data_dir, std::int64_t seed,
                            const std::string& out_dir) {
  wkcl::RunConfig cfg = config_path.empty() ? wkcl::RunConfig{} : wkcl::load_config(config_path);
  if (!data_dir.empty()) cfg.paths.data_dir = data_dir;
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annotation-free class-incremental learning over precomputed embeddings"};
  app.require_subcommand(1);

  // gen-synthetic
  wkcl::SyntheticConfig syn;
  std::string syn_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic data directory");
  gen->add_option("--out", syn_out, "output directory")->required();
  gen->add_option("--classes", syn.classes, "downstream classes")->capture_default_str();
  gen->add_option("--per-class", syn.per_class, "samples per downstream class")->capture_default_str();
  gen->add_option("--dim", syn.dim, "embedding dimension")->capture_default_str();
  gen->add_option("--views", syn.views, "stored views per image (view 0 = identity)")->capture_default_str();
  gen->add_option("--separation", syn.separation, "minimum mean angle in units of sigma")->capture_default_str();
  gen->add_option("--view-noise", syn.view_noise, "strong-view noise std")->capture_default_str();
  gen->add_option("--class-cosine", syn.class_cosine, "typical cosine between vision-language class means")
      ->capture_default_str();
  gen->add_option("--image-offset", syn.image_offset, "norm of the per-class image-only offset")->capture_default_str();
  gen->add_option("--tasks", syn.tasks, "tasks in the stream")->capture_default_str();
  gen->add_option("--descriptions", syn.descriptions, "descriptions per class")->capture_default_str();
  gen->add_option("--seed", syn.seed, "seed")->capture_default_str();

  // retrieve
  std::string ret_data, ret_out, ret_config;
  int ret_k = 0;
  auto* ret = app.add_subcommand("retrieve", "stage-1 retrieval only, as JSON");
  ret->add_option("--data", ret_data, "data directory");
  ret->add_option("--config", ret_config, "run config (paths and K)");
  ret->add_option("--k", ret_k, "retrieval K (default from config)");
  ret->add_option("--out", ret_out, "output file (stdout if omitted)");

  // run
  std::string run_config, run_data, run_out;
  std::int64_t run_seed = -1;
  auto* run = app.add_subcommand("run", "full pipeline over the task stream");
  run->add_option("--config", run_config, "run config JSON");
  run->add_option("--data", run_data, "data directory (overrides config data_dir)");
  run->add_option("--seed", run_seed, "seed (overrides config)");
  run->add_option("--out", run_out, "output directory (overrides config)");

  // eval
  std::string eval_state, eval_data, eval_config, eval_out;
  auto* eval = app.add_subcommand("eval", "re-evaluate a saved state");
  eval->add_option("--state", eval_state, "state directory written by run")->required();
  eval->add_option("--data", eval_data, "data directory");
  eval->add_option("--config", eval_config, "run config (paths)");
  eval->add_option("--out", eval_out, "output file (stdout if omitted)");

  // check-grad
  int grad_instances = 100;
  std::uint64_t grad_seed = 1;
  auto* grad = app.add_subcommand("check-grad", "finite-difference check of L_map and L_total");
  grad->add_option("--instances", grad_instances, "random instances per objective")->capture_default_str();
  grad->add_option("--seed", grad_seed, "first seed")->capture_default_str();

  // sweep-replay
  std::string sweep_config, sweep_data, sweep_out;
  std::int64_t sweep_seed = -1;
  std::vector<int> sweep_ks{0, 1, 2, 5, 10};
  auto* sweep = app.add_subcommand("sweep-replay", "paired runs over the replay size k");
  sweep->add_option("--config", sweep_config, "run config JSON");
  sweep->add_option("--data", sweep_data, "data directory");
  sweep->add_option("--seed", sweep_seed, "seed (overrides config)");
  sweep->add_option("--out", sweep_out, "output directory (overrides config)");
  sweep->add_option("--k", sweep_ks, "replay sizes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors count as config errors
  }

  try {
    if (*gen) {
      const wkcl::SyntheticData data = wkcl::gen_synthetic(syn);
      wkcl::write_synthetic(data, syn_out);
      std::cout << "wrote " << data.downstream_vl.count() << " downstream and " << data.world_vl.count()
                << " world samples, " << data.stream.num_tasks() << " tasks, to " << syn_out << "\n";
    } else if (*ret) {
      wkcl::RunConfig cfg = make_config(ret_config, ret_data, -1, "");
      if (ret_k > 0) cfg.retrieval_k = ret_k;
      const wkcl::Dataset data = wkcl::load_dataset(cfg.paths);
      const wkcl::MatF world = data.world_names.slot_matrix(0);
      json out = json::array();
      for (std::size_t t = 0; t < data.stream.tasks.size(); ++t) {
        const auto& classes = data.stream.tasks[t].classes;
        wkcl::MatF rows(static_cast<Eigen::Index>(classes.size()), data.downstream_names.dim());
        for (std::size_t i = 0; i < classes.size(); ++i) {
          rows.row(static_cast<Eigen::Index>(i)) = data.downstream_names.vector(classes[i]).transpose();
        }
        const auto retrieved = wkcl::retrieve_topk(wkcl::class_similarity<float>(rows, world), cfg.retrieval_k);
        out.push_back({{"task", t + 1},
                       {"retrieved", wkcl::retrieval_to_json(data.downstream_vl.manifest.class_names,
                                                             data.world_vl.manifest.class_names, classes, retrieved)}});
      }
      write_json(ret_out, out);
    } else if (*run) {
      const wkcl::RunConfig cfg = make_config(run_config, run_data, run_seed, run_out);
      const wkcl::Dataset data = wkcl::load_dataset(cfg.paths);
      const wkcl::RunResult result = wkcl::run_stream(cfg, data);
      wkcl::write_run_outputs(result, cfg.output_dir);
      std::cout << wkcl::format_report_table(result.report);
      std::cout << "outputs in " << cfg.output_dir.string() << "\n";
    } else if (*eval) {
      const wkcl::RunConfig cfg = make_config(eval_config, eval_data, -1, "");
      const wkcl::Dataset data = wkcl::load_dataset(cfg.paths);
      write_json(eval_out, wkcl::evaluate_state(data, wkcl::load_state(eval_state)));
    } else if (*grad) {
      const auto start = std::chrono::steady_clock::now();
      const wkcl::GradcheckSummary s = wkcl::run_gradcheck_suite(grad_instances, grad_seed);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("instances %d\nL_map max rel err   %.3e\nL_total max rel err %.3e\nL_total soft        %.3e\n",
                  s.instances, s.max_map, s.max_total, s.max_total_soft);
      std::printf("worst: %s at seed %llu\nelapsed %.2f s\n", s.worst_objective.c_str(),
                  static_cast<unsigned long long>(s.worst_seed), secs);
      if (s.max() > wkcl::kGradcheckTolerance) {
        std::printf("FAIL: tolerance %.0e exceeded\n", wkcl::kGradcheckTolerance);
        return 4;
      }
      std::printf("OK\n");
    } else if (*sweep) {
      const wkcl::RunConfig base = make_config(sweep_config, sweep_data, sweep_seed, sweep_out);
      const wkcl::Dataset data = wkcl::load_dataset(base.paths);
      json rows = json::array();
      // spreads over k > 0 of the Avg column and of the final cumulative accuracy
      double avg_lo = 1, avg_hi = 0, fin_lo = 1, fin_hi = 0, forget_k0 = 0, forget_k10 = 0;
      bool have_k0 = false, have_k10 = false;
      for (int k : sweep_ks) {
        wkcl::RunConfig cfg = base;
        cfg.replay_k = k;
        const wkcl::RunResult result = wkcl::run_stream(cfg, data);
        wkcl::write_run_outputs(result, base.output_dir / ("k" + std::to_string(k)));
        const json& fin = result.report.at("final");
        const double acc = fin.at("cumulative_accuracy").get<double>();
        const double avg = fin.at("mean_cumulative_accuracy").get<double>();
        const double forget = fin.at("mean_forgetting").get<double>();
        if (k > 0) {
          avg_lo = std::min(avg_lo, avg);
          avg_hi = std::max(avg_hi, avg);
          fin_lo = std::min(fin_lo, acc);
          fin_hi = std::max(fin_hi, acc);
        }
        if (k == 0) forget_k0 = forget, have_k0 = true;
        if (k == 10) forget_k10 = forget, have_k10 = true;
        rows.push_back({{"k", k},
                        {"cumulative_accuracy", acc},
                        {"mean_cumulative_accuracy", avg},
                        {"mean_forgetting", forget},
                        {"replay_size", result.report.at("replay").at("size")}});
        std::printf("k=%-3d Avg %6.2f%%  final cumulative %6.2f%%  mean forgetting %6.2f%%  |A_R| %zu\n", k,
                    100 * avg, 100 * acc, 100 * forget, result.memory.size());
      }
      json summary = {{"runs", rows},
                      {"spread_mean_cumulative", avg_hi >= avg_lo ? avg_hi - avg_lo : 0.0},
                      {"spread_final_cumulative", fin_hi >= fin_lo ? fin_hi - fin_lo : 0.0}};
      if (have_k0 && have_k10) summary["forgetting_k10_le_k0"] = forget_k10 <= forget_k0;
      write_json(base.output_dir / "sweep.json", summary);
      std::printf("spread over k>0: Avg %.2f points, final %.2f points\n",
                  100 * summary["spread_mean_cumulative"].get<double>(),
                  100 * summary["spread_final_cumulative"].get<double>());
    }
  } catch (const wkcl::Error& e) {
    std::cerr << "error [" << wkcl::to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
