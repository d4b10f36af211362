#include "wkcl/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>

#include "wkcl/error.hpp"
#include "wkcl/synthetic.hpp"

namespace wkcl {

namespace fs = std::filesystem;

DataPaths DataPaths::resolved() const {
  DataPaths p = *this;
  auto fill = [&](fs::path& field, const char* name) {
    if (field.empty()) field = data_dir / name;
  };
  fill(p.downstream_vl, layout::kDownstreamVl);
  fill(p.downstream_ss, layout::kDownstreamSs);
  fill(p.world_vl, layout::kWorldVl);
  fill(p.world_ss, layout::kWorldSs);
  fill(p.downstream_names, layout::kDownstreamNames);
  fill(p.downstream_descriptions, layout::kDownstreamDescriptions);
  fill(p.world_names, layout::kWorldNames);
  fill(p.task_stream, layout::kTaskStream);
  return p;
}

namespace {

[[noreturn]] void bad(const std::string& what) { raise(ErrorKind::ConfigError, what); }

void require_positive(int v, const char* name) {
  if (v < 1) bad(std::string(name) + " must be >= 1");
}

// Binds each JSON key to a config field, so reading, writing and the unknown
// key check share one table.
struct Binding {
  std::function<void(const nlohmann::json&)> read;
  std::function<nlohmann::json()> write;
};

template <typename T>
Binding bind(T& field) {
  return {[&field](const nlohmann::json& v) { field = v.get<T>(); }, [&field] { return nlohmann::json(field); }};
}

Binding bind_path(fs::path& field) {
  return {[&field](const nlohmann::json& v) { field = v.get<std::string>(); },
          [&field] { return nlohmann::json(field.generic_string()); }};
}

std::map<std::string, Binding> bindings(RunConfig& c) {
  return {
      {"data_dir", bind_path(c.paths.data_dir)},
      {"downstream_vl", bind_path(c.paths.downstream_vl)},
      {"downstream_ss", bind_path(c.paths.downstream_ss)},
      {"world_vl", bind_path(c.paths.world_vl)},
      {"world_ss", bind_path(c.paths.world_ss)},
      {"downstream_names", bind_path(c.paths.downstream_names)},
      {"downstream_descriptions", bind_path(c.paths.downstream_descriptions)},
      {"world_names", bind_path(c.paths.world_names)},
      {"task_stream", bind_path(c.paths.task_stream)},
      {"retrieval_k", bind(c.retrieval_k)},
      {"images_per_class", bind(c.images_per_class)},
      {"k_conf", bind(c.k_conf)},
      {"replay_k", bind(c.replay_k)},
      {"descriptions", bind(c.descriptions)},
      {"lambda1", bind(c.weights.lambda1)},
      {"lambda2", bind(c.weights.lambda2)},
      {"lambda3", bind(c.weights.lambda3)},
      {"lambda4", bind(c.weights.lambda4)},
      {"tau", bind(c.weights.tau)},
      {"logit_scale", bind(c.weights.logit_scale)},
      {"rank", bind(c.rank)},
      {"stage3_epochs", bind(c.stage3_epochs)},
      {"stage4_epochs", bind(c.stage4_epochs)},
      {"batch_downstream", bind(c.batch_downstream)},
      {"batch_warmup", bind(c.batch_warmup)},
      {"batch_aux", bind(c.batch_aux)},
      {"batch_replay", bind(c.batch_replay)},
      {"lr", bind(c.optimizer.lr)},
      {"beta1", bind(c.optimizer.beta1)},
      {"beta2", bind(c.optimizer.beta2)},
      {"weight_decay", bind(c.optimizer.weight_decay)},
      {"eps", bind(c.optimizer.eps)},
      {"decay_factor", bind(c.optimizer.decay_factor)},
      {"decay_fractions", bind(c.decay_fractions)},
      {"seed", bind(c.seed)},
      {"soft_targets", bind(c.soft_targets)},
      {"stage3", bind(c.stage3)},
      {"stage4", bind(c.stage4)},
      {"stage5", bind(c.stage5)},
      {"adapter_init_scale", bind(c.adapter_init_scale)},
      {"prompt_init_scale", bind(c.prompt_init_scale)},
      {"output_dir", bind_path(c.output_dir)},
  };
}

}  // namespace

void RunConfig::validate() const {
  require_positive(retrieval_k, "retrieval_k");
  require_positive(images_per_class, "images_per_class");
  require_positive(k_conf, "k_conf");
  if (replay_k < 0) bad("replay_k must be >= 0");
  if (descriptions < 0) bad("descriptions must be >= 0");
  if (weights.lambda1 < 0 || weights.lambda2 < 0 || weights.lambda3 < 0 || weights.lambda4 < 0) {
    bad("lambda weights must be >= 0");
  }
  if (!(weights.tau > 0)) bad("tau must be positive");
  if (!(weights.logit_scale > 0)) bad("logit_scale must be positive");
  if (rank < 0) bad("rank must be >= 0");
  require_positive(stage3_epochs, "stage3_epochs");
  require_positive(stage4_epochs, "stage4_epochs");
  require_positive(batch_downstream, "batch_downstream");
  require_positive(batch_warmup, "batch_warmup");
  require_positive(batch_aux, "batch_aux");
  require_positive(batch_replay, "batch_replay");
  if (!(optimizer.lr > 0)) bad("lr must be positive");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) {
    bad("betas must lie in [0, 1)");
  }
  if (!(optimizer.weight_decay >= 0)) bad("weight_decay must be >= 0");
  if (!(optimizer.eps > 0)) bad("eps must be positive");
  if (!(optimizer.decay_factor > 0)) bad("decay_factor must be positive");
  for (double f : decay_fractions) {
    if (!(f >= 0 && f <= 1)) bad("decay_fractions must lie in [0, 1]");
  }
  if (!(adapter_init_scale >= 0) || !(prompt_init_scale >= 0)) bad("init scales must be >= 0");
  if (stage4 && !stage3) bad("stage4 needs the stage-3 adapters");
  if (stage5 && !stage4) bad("stage5 needs the stage-4 encoder");
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) bad("run config must be a JSON object");
  RunConfig c;
  auto table = bindings(c);
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) bad("unknown config key '" + key + "'");
    try {
      it->second.read(value);
    } catch (const nlohmann::json::exception& e) {
      bad("config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

nlohmann::json config_to_json(const RunConfig& config) {
  RunConfig copy = config;
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, b] : bindings(copy)) out[key] = b.write();
  return out;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::ConfigError, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace wkcl
