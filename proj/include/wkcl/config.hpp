#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "wkcl/cross_domain.hpp"
#include "wkcl/optimizer.hpp"

namespace wkcl {

/// Paths of the inputs. Empty entries resolve against `data_dir` using the
/// synthetic directory layout.
struct DataPaths {
  std::filesystem::path data_dir;
  std::filesystem::path downstream_vl, downstream_ss, world_vl, world_ss;
  std::filesystem::path downstream_names, downstream_descriptions, world_names, task_stream;

  DataPaths resolved() const;
};

struct RunConfig {
  DataPaths paths;

  int retrieval_k = 3;
  int images_per_class = 10;
  int k_conf = 16;
  int replay_k = 10;
  int descriptions = 0;  // M; 0 uses every stored description

  AlignWeights weights;
  int rank = 16;
  int stage3_epochs = 20;
  int stage4_epochs = 30;
  int batch_downstream = 256;
  int batch_warmup = 32;
  int batch_aux = 64;
  int batch_replay = 64;

  AdamWConfig optimizer;
  std::vector<double> decay_fractions{0.6, 0.85};

  std::uint64_t seed = 42;
  bool soft_targets = false;
  bool stage3 = true;
  bool stage4 = true;
  bool stage5 = true;
  double adapter_init_scale = 0.01;
  double prompt_init_scale = 0.01;

  std::filesystem::path output_dir = "wkcl_run";

  /// Throws ConfigError on the first invalid field.
  void validate() const;
};

/// Every key is optional; unknown keys are a ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace wkcl
