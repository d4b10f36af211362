#pragma once

// Task-by-task orchestration of the five stages, task-id-free inference,
// evaluation and run reports.

#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "wkcl/bundle.hpp"
#include "wkcl/config.hpp"
#include "wkcl/cross_domain.hpp"
#include "wkcl/dual_alignment.hpp"
#include "wkcl/grounding.hpp"
#include "wkcl/metrics.hpp"
#include "wkcl/prompted_encoder.hpp"
#include "wkcl/replay.hpp"
#include "wkcl/task_stream.hpp"

namespace wkcl {

struct Dataset {
  EmbeddingBundle downstream_vl;
  EmbeddingBundle downstream_ss;
  EmbeddingBundle world_vl;
  EmbeddingBundle world_ss;
  EmbeddingBundle downstream_names;
  EmbeddingBundle downstream_descriptions;
  EmbeddingBundle world_names;
  TaskStream stream;

  /// Cross-bundle consistency: shapes, labels, class names and the stream.
  void validate() const;
};

Dataset load_dataset(const DataPaths& paths);

/// Everything needed for inference plus the frozen adapters.
struct ModelState {
  PromptedEncoder<float> encoder;
  PrototypeBank bank;
  Adapter phi_down;
  Adapter phi_world;
  int tasks_seen = 0;
};

/// Arg max cosine between the prompted features and the prototype rows over
/// the whole cumulative class space (ties to the lower row); returns class ids.
std::vector<ClassId> predict(const MatF& features, const PromptedEncoder<float>& encoder, const MatF& prototypes,
                             std::span<const ClassId> classes);

/// Accuracy of `state` on the given test ids of the downstream bundle.
double evaluate(const Dataset& data, const ModelState& state, const IdList& test_ids);

struct RunResult {
  nlohmann::json report;
  AccuracyMatrix matrix;
  ModelState state;
  ReplayMemory memory;
  std::vector<std::vector<EpochLoss>> stage4_curves;  // per task
};

/// Runs the whole stream. Errors carry task/stage context.
RunResult run_stream(const RunConfig& config, const Dataset& data);

/// Writes report.json, report.txt, loss_task{t}.csv, replay_memory.json,
/// retrieval.json and the model checkpoint under `directory`.
void write_run_outputs(const RunResult& result, const std::filesystem::path& directory);

/// Aligned-text table of the report (Avg, T1..Tn).
std::string format_report_table(const nlohmann::json& report);

void save_state(const ModelState& state, const std::filesystem::path& directory);
ModelState load_state(const std::filesystem::path& directory);

/// Re-evaluates a saved state on every task whose classes it has seen.
nlohmann::json evaluate_state(const Dataset& data, const ModelState& state);

}  // namespace wkcl
