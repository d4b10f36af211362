#include "wkcl/engine.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "wkcl/error.hpp"
#include "wkcl/synthetic.hpp"

namespace wkcl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) raise(ErrorKind::InvariantViolation, what);
}

void check_image_pair(const EmbeddingBundle& vl, const EmbeddingBundle& ss, const std::string& name) {
  require(vl.manifest.kind == BundleKind::Image && ss.manifest.kind == BundleKind::Image,
          name + " bundles must be image bundles");
  require(vl.manifest.has_labels && ss.manifest.has_labels, name + " bundles must carry labels");
  require(vl.count() == ss.count(), name + " vision-language and self-supervised bundles differ in count");
  require(vl.labels == ss.labels, name + " bundles disagree on labels");
  require(vl.manifest.class_names == ss.manifest.class_names, name + " bundles disagree on class names");
}

MatF text_rows(const EmbeddingBundle& text, std::span<const ClassId> classes, int slot = 0) {
  MatF out(static_cast<Eigen::Index>(classes.size()), text.dim());
  for (std::size_t i = 0; i < classes.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = text.vector(classes[i], slot).transpose();
  return out;
}

// Prototypes from the first `m` descriptions of each class (all when m = 0).
MatF description_prototypes(const EmbeddingBundle& desc, std::span<const ClassId> classes, int m) {
  const int use = m > 0 ? std::min(m, desc.width()) : desc.width();
  MatF out(static_cast<Eigen::Index>(classes.size()), desc.dim());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    MatF rows(use, desc.dim());
    for (int s = 0; s < use; ++s) rows.row(s) = desc.vector(classes[i], s).transpose();
    try {
      out.row(static_cast<Eigen::Index>(i)) = average_prototype(rows).transpose();
    } catch (const Error& e) {
      throw e.with_context("prototype of class " + std::to_string(classes[i]));
    }
  }
  return out;
}

MatF bank_rows(const MatF& bank, const std::vector<int>& rows) {
  MatF out(static_cast<Eigen::Index>(rows.size()), bank.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = bank.row(rows[i]);
  return out;
}

std::vector<int> downstream_rows(const PrototypeBank& bank, std::span<const ClassId> classes) {
  std::vector<int> rows;
  for (ClassId c : classes) rows.push_back(bank.downstream_row(c));
  return rows;
}

std::vector<ClassId> labels_of(const EmbeddingBundle& b, const IdList& ids) {
  std::vector<ClassId> out;
  out.reserve(ids.size());
  for (SampleId id : ids) out.push_back(b.label(id));
  return out;
}

double linf_drift(const MatF& snapshot, const MatF& current) {
  if (snapshot.rows() == 0) return 0.0;
  return static_cast<double>((current.topRows(snapshot.rows()) - snapshot).cwiseAbs().maxCoeff());
}

template <typename F>
auto in_stage(int task, const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    throw e.with_context("task " + std::to_string(task) + " " + stage);
  }
}

json loss_rows(const std::vector<EpochLoss>& curve) {
  json rows = json::array();
  for (const EpochLoss& e : curve) {
    rows.push_back({{"L_DD", e.terms.dd},
                    {"L_II", e.terms.ii},
                    {"L_ID", e.terms.id},
                    {"L_DI", e.terms.di},
                    {"L_KD", e.terms.kd},
                    {"L_replay", e.terms.replay},
                    {"L_total", e.terms.total},
                    {"lr", e.lr}});
  }
  return rows;
}

}  // namespace

void Dataset::validate() const {
  check_image_pair(downstream_vl, downstream_ss, "downstream");
  check_image_pair(world_vl, world_ss, "world");
  const auto classes = static_cast<std::int64_t>(downstream_vl.manifest.class_names.size());
  const auto world_classes = static_cast<std::int64_t>(world_vl.manifest.class_names.size());
  require(downstream_names.manifest.kind == BundleKind::TextClass, "downstream names must be a text-class bundle");
  require(world_names.manifest.kind == BundleKind::TextClass, "world names must be a text-class bundle");
  require(downstream_descriptions.manifest.kind != BundleKind::Image, "descriptions must be a text bundle");
  require(downstream_names.count() == classes && downstream_descriptions.count() == classes,
          "downstream text bundles need one record per downstream class");
  require(world_names.count() == world_classes, "world names need one record per world class");
  require(downstream_names.manifest.class_names == downstream_vl.manifest.class_names &&
              downstream_descriptions.manifest.class_names == downstream_vl.manifest.class_names,
          "downstream text bundles disagree with image class names");
  require(world_names.manifest.class_names == world_vl.manifest.class_names,
          "world names disagree with world image class names");
  const int d = downstream_vl.dim();
  require(world_vl.dim() == d && downstream_names.dim() == d && downstream_descriptions.dim() == d &&
              world_names.dim() == d,
          "vision-language image and text dims differ");
  require(world_ss.dim() == downstream_ss.dim(), "self-supervised dims differ between domains");
  require(stream.num_classes == classes, "task stream class count differs from the downstream bundle");
  stream.validate(downstream_vl.count(), downstream_vl.labels);
}

Dataset load_dataset(const DataPaths& raw) {
  const DataPaths p = raw.resolved();
  auto read = [](const fs::path& path) {
    try {
      return read_bundle(path);
    } catch (const Error& e) {
      throw e.with_context(path.string());
    }
  };
  Dataset d;
  d.downstream_vl = read(p.downstream_vl);
  d.downstream_ss = read(p.downstream_ss);
  d.world_vl = read(p.world_vl);
  d.world_ss = read(p.world_ss);
  d.downstream_names = read(p.downstream_names);
  d.downstream_descriptions = read(p.downstream_descriptions);
  d.world_names = read(p.world_names);
  d.stream = read_task_stream(p.task_stream);
  d.validate();
  return d;
}

std::vector<ClassId> predict(const MatF& features, const PromptedEncoder<float>& encoder, const MatF& prototypes,
                             std::span<const ClassId> classes) {
  if (prototypes.rows() == 0) raise(ErrorKind::EmptySplit, "no class has been seen yet");
  if (prototypes.rows() != static_cast<Eigen::Index>(classes.size())) {
    raise(ErrorKind::ShapeMismatch, "one class id per prototype row expected");
  }
  const MatF scores = encoder.forward(features) * normalize_rows(prototypes).transpose();
  std::vector<ClassId> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = classes[argmax(scores.row(i))];
  return out;
}

double evaluate(const Dataset& data, const ModelState& state, const IdList& test_ids) {
  if (test_ids.empty()) raise(ErrorKind::EmptySplit, "empty test split");
  const auto preds = predict(data.downstream_vl.gather(test_ids, 0), state.encoder, state.bank.downstream(),
                             state.bank.downstream_classes());
  return accuracy(preds, labels_of(data.downstream_vl, test_ids));
}

RunResult run_stream(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  data.validate();
  const int num_tasks = data.stream.num_tasks();
  if (num_tasks < 1) raise(ErrorKind::ConfigError, "task stream has no tasks");

  RunResult r{json::object(), AccuracyMatrix(num_tasks), ModelState{}, ReplayMemory(cfg.replay_k), {}};
  ModelState& st = r.state;
  {
    Rng init = Rng::derive(cfg.seed, "prompt-init");
    st.encoder = PromptedEncoder<float>::init(data.downstream_vl.dim(), cfg.rank, init, cfg.prompt_init_scale);
  }
  st.bank = PrototypeBank(data.downstream_vl.dim());
  st.phi_down = Adapter(data.downstream_ss.dim());
  st.phi_world = Adapter(data.world_ss.dim());

  Stage3Config s3;
  s3.epochs = cfg.stage3_epochs;
  s3.batch_downstream = cfg.batch_warmup;
  s3.batch_world = cfg.batch_aux;
  s3.optimizer = cfg.optimizer;
  s3.optimizer.decay_epochs = decay_epochs_for_budget(cfg.stage3_epochs, cfg.decay_fractions);

  Stage4Config s4;
  s4.epochs = cfg.stage4_epochs;
  s4.batch_downstream = cfg.batch_downstream;
  s4.batch_aux = cfg.batch_aux;
  s4.batch_replay = cfg.batch_replay;
  s4.soft_targets = cfg.soft_targets;
  s4.weights = cfg.weights;
  s4.optimizer = cfg.optimizer;
  s4.optimizer.decay_epochs = decay_epochs_for_budget(cfg.stage4_epochs, cfg.decay_fractions);

  const MatF world_text = data.world_names.slot_matrix(0);
  json tasks = json::array();
  json retrieval = json::array();

  for (int t = 0; t < num_tasks; ++t) {
    const int task_no = t + 1;
    const Task& task = data.stream.tasks[static_cast<std::size_t>(t)];
    const bool aux_active = t >= 1;
    json tr = json::object();
    tr["task"] = task_no;
    tr["classes"] = task.classes;
    tr["train_samples"] = task.train_ids.size();
    tr["test_samples"] = task.test_ids.size();

    // Stage 1: retrieve nearest world classes by class-name text similarity.
    const AuxiliaryPool pool = in_stage(task_no, "stage 1", [&] {
      const MatF sim = class_similarity<float>(text_rows(data.downstream_names, task.classes), world_text);
      return build_auxiliary_pool(task_no, task.classes, retrieve_topk(sim, cfg.retrieval_k), data.world_vl,
                                  cfg.images_per_class, cfg.retrieval_k);
    });
    const std::vector<ClassId> pool_classes = pool.world_classes();
    retrieval.push_back({{"task", task_no},
                         {"retrieved", retrieval_to_json(data.downstream_vl.manifest.class_names,
                                                         data.world_vl.manifest.class_names, task.classes,
                                                         pool.retrieved)}});
    tr["aux_pool_size"] = pool.samples.size();
    tr["aux_world_classes"] = pool_classes;
    tr["aux_active"] = aux_active;

    // Stage 2: text prototypes.
    in_stage(task_no, "stage 2", [&] {
      st.bank.add_downstream(task.classes, description_prototypes(data.downstream_descriptions, task.classes, cfg.descriptions));
      if (aux_active) st.bank.add_world(pool_classes, world_prototypes(data.world_names, pool_classes));
    });

    // Stage 3: pseudo-labels and adapters.
    if (cfg.stage3) {
      in_stage(task_no, "stage 3", [&] {
        Rng rng = Rng::derive(cfg.seed, "stage3", static_cast<std::uint64_t>(t));
        const MatF protos = bank_rows(st.bank.downstream(), downstream_rows(st.bank, task.classes));
        const PseudoLabelSet pl = select_topk_confident(
            pseudo_label(data.downstream_vl.gather(task.train_ids, 0), task.train_ids, protos, task.classes,
                         static_cast<float>(cfg.weights.logit_scale)),
            cfg.k_conf);
        IdList sel_ids;
        std::vector<ClassId> sel_labels;
        for (std::size_t i = 0; i < pl.size(); ++i) {
          if (!pl.selected[i]) continue;
          sel_ids.push_back(pl.ids[i]);
          sel_labels.push_back(pl.labels[i]);
        }
        st.phi_down.add_classes(task.classes, rng, static_cast<float>(cfg.adapter_init_scale));
        MatF f_world(0, data.world_ss.dim());
        std::vector<ClassId> y_world;
        if (aux_active) {
          st.phi_world.add_classes(pool_classes, rng, static_cast<float>(cfg.adapter_init_scale));
          f_world = data.world_ss.gather(pool.sample_ids(), 0);
          for (const AuxSample& s : pool.samples) y_world.push_back(s.world_label);
        }
        const Stage3Result res = train_dual_adapters(st.phi_down, data.downstream_ss.gather(sel_ids, 0), sel_labels,
                                                     st.phi_world, f_world, y_world, s3, rng);
        // Diagnostic only: pseudo-label precision needs the hidden labels.
        const auto truth = labels_of(data.downstream_vl, sel_ids);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == sel_labels[i];
        tr["pseudo_labels"] = {{"selected", sel_ids.size()},
                               {"precision", sel_ids.empty() ? 0.0 : double(correct) / double(sel_ids.size())}};
        tr["stage3_loss"] = res.epoch_loss;
        tr["stage3_warnings"] = res.warnings;
      });
    }

    // Stage 4: prompted encoder and prototypes.
    const bool kd_active = t >= 1 && st.bank.has_snapshot();
    if (cfg.stage4) {
      in_stage(task_no, "stage 4", [&] {
        Rng rng = Rng::derive(cfg.seed, "stage4", static_cast<std::uint64_t>(t));
        Stage4Inputs in;
        in.down_vl = &data.downstream_vl;
        in.down_ss = &data.downstream_ss;
        in.world_vl = &data.world_vl;
        in.world_ss = &data.world_ss;
        in.phi_down = &st.phi_down;
        in.phi_world = &st.phi_world;
        in.down_ids = task.train_ids;
        in.down_classes = task.classes;
        if (aux_active) {
          in.aux = pool.samples;
          in.world_classes = pool_classes;
        }
        in.replay_ids = r.memory.ids();
        in.replay_labels = r.memory.labels();
        const Stage4Result res = train_stage4(st.encoder, st.bank, in, s4, kd_active, rng);
        r.stage4_curves.push_back(res.epochs);
        tr["stage4_loss"] = loss_rows(res.epochs);
        tr["replay_consumed"] = in.replay_ids.size();
        if (kd_active) {
          tr["kd_drift_linf"] = {{"downstream", linf_drift(st.bank.downstream_snapshot(), st.bank.downstream())},
                                 {"world", linf_drift(st.bank.world_snapshot(), st.bank.world())}};
        }
      });
    } else {
      r.stage4_curves.emplace_back();
    }
    tr["kd_active"] = kd_active && cfg.stage4;
    tr["weights_used"] = {{"lambda1", aux_active ? cfg.weights.lambda1 : 0.0},
                          {"lambda2", aux_active ? cfg.weights.lambda2 : 0.0},
                          {"lambda3", aux_active ? cfg.weights.lambda3 : 0.0},
                          {"lambda4", kd_active ? cfg.weights.lambda4 : 0.0},
                          {"tau", cfg.weights.tau},
                          {"retrieval_k", cfg.retrieval_k},
                          {"k_conf", cfg.k_conf},
                          {"replay_k", cfg.stage5 ? cfg.replay_k : 0}};

    // Stage 5: class-balanced replay from the auxiliary pool.
    if (cfg.stage5 && cfg.replay_k > 0) {
      in_stage(task_no, "stage 5", [&] {
        const IdList ids = pool.sample_ids();
        const MatF protos = bank_rows(st.bank.downstream(), downstream_rows(st.bank, task.classes));
        const MatF scores = replay_scores(st.encoder.forward(data.world_vl.gather(ids, 0)), protos);
        const auto entries = select_replay(ids, scores, task.classes, cfg.replay_k, task_no);
        r.memory.merge(entries, task_no, data.world_vl.count());
        json empty_classes = json::array();
        for (ClassId c : task.classes) {
          if (r.memory.count_for(c) == 0) empty_classes.push_back(c);
        }
        tr["replay_added"] = entries.size();
        tr["replay_classes_without_entries"] = empty_classes;
      });
    }
    tr["replay_size"] = r.memory.size();
    st.bank.snapshot();
    st.tasks_seen = task_no;

    // Evaluation on every seen task split and on the cumulative test set.
    in_stage(task_no, "evaluation", [&] {
      IdList cumulative;
      for (int u = 0; u <= t; ++u) {
        const IdList& ids = data.stream.tasks[static_cast<std::size_t>(u)].test_ids;
        r.matrix.set(u, t, evaluate(data, st, ids));
        cumulative.insert(cumulative.end(), ids.begin(), ids.end());
      }
      r.matrix.set_cumulative(t, evaluate(data, st, cumulative));
    });
    tr["cumulative_accuracy"] = r.matrix.cumulative(t);
    tasks.push_back(tr);
  }

  const int last = num_tasks - 1;
  json per_task_final = json::array();
  json forget = json::array();
  json cumulative = json::array();
  double cumulative_mean = 0;
  for (int t = 0; t < num_tasks; ++t) {
    per_task_final.push_back(r.matrix.at(t, last));
    cumulative.push_back(r.matrix.cumulative(t));
    cumulative_mean += r.matrix.cumulative(t);
    if (t < last) forget.push_back(forgetting(r.matrix, t));
  }
  cumulative_mean /= num_tasks;

  json cfg_json = config_to_json(cfg);
  cfg_json.erase("output_dir");
  const auto prototype_rows = static_cast<std::int64_t>(st.bank.downstream().rows() + st.bank.world().rows());
  r.report = {
      {"format", "wkcl-run-report"},
      {"version", 1},
      {"config", cfg_json},
      {"num_tasks", num_tasks},
      {"tasks", tasks},
      {"accuracy_matrix", r.matrix.to_json()},
      {"accuracy_matrix_note", "row t: task t test split, column k: after training task k"},
      {"cumulative_accuracy", cumulative},
      {"final",
       {{"cumulative_accuracy", r.matrix.cumulative(last)},
        {"mean_cumulative_accuracy", cumulative_mean},
        {"per_task_accuracy", per_task_final},
        {"mean_task_accuracy", r.matrix.mean_over_tasks(last)},
        {"forgetting", forget},
        {"mean_forgetting", mean_forgetting(r.matrix)}}},
      {"replay", {{"size", r.memory.size()}, {"cap", cfg.replay_k}, {"bound", static_cast<std::int64_t>(st.bank.downstream().rows()) * cfg.replay_k}}},
      {"parameters",
       {{"full_scale_formula", count_trainable_params(cfg.rank, static_cast<std::int64_t>(st.bank.downstream().rows()))},
        {"surrogate", count_surrogate_params(st.encoder.dim(), st.encoder.rank(), prototype_rows)}}},
      {"retrieval", retrieval},
  };
  return r;
}

std::string format_report_table(const json& report) {
  const int n = report.at("num_tasks").get<int>();
  const auto& tasks = report.at("tasks");
  const auto& fin = report.at("final");
  std::ostringstream out;
  auto cell = [&](double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%7.2f", 100.0 * v);
    out << buf;
  };
  const int label_width = 34;
  out << std::left << std::setw(label_width) << "accuracy (%)" << std::right << std::setw(7) << "Avg";
  for (int t = 1; t <= n; ++t) out << std::setw(7) << ("T" + std::to_string(t));
  out << "\n";

  out << std::left << std::setw(label_width) << "cumulative test set after task k" << std::right;
  cell(fin.at("mean_cumulative_accuracy").get<double>());
  for (const auto& tr : tasks) cell(tr.at("cumulative_accuracy").get<double>());
  out << "\n";

  out << std::left << std::setw(label_width) << "task split after the final task" << std::right;
  cell(fin.at("mean_task_accuracy").get<double>());
  for (const auto& v : fin.at("per_task_accuracy")) cell(v.get<double>());
  out << "\n";

  out << std::left << std::setw(label_width) << "forgetting" << std::right;
  cell(fin.at("mean_forgetting").get<double>());
  for (const auto& v : fin.at("forgetting")) cell(v.get<double>());
  out << std::setw(7) << "-" << "\n";
  return out.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) raise(ErrorKind::IoError, "write failed for " + path.string());
}

std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_run_outputs(const RunResult& result, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "report.json", result.report.dump(2) + "\n");
  write_text(dir / "report.txt", format_report_table(result.report));
  write_text(dir / "replay_memory.json", result.memory.to_json().dump(2) + "\n");
  write_text(dir / "retrieval.json", result.report.at("retrieval").dump(2) + "\n");
  for (std::size_t t = 0; t < result.stage4_curves.size(); ++t) {
    std::string csv = "epoch,L_DD,L_II,L_ID,L_DI,L_KD,L_replay,L_total,lr\n";
    for (std::size_t e = 0; e < result.stage4_curves[t].size(); ++e) {
      const EpochLoss& row = result.stage4_curves[t][e];
      csv += std::to_string(e);
      for (double v : {row.terms.dd, row.terms.ii, row.terms.id, row.terms.di, row.terms.kd, row.terms.replay,
                       row.terms.total, row.lr}) {
        csv += "," + csv_number(v);
      }
      csv += "\n";
    }
    write_text(dir / ("loss_task" + std::to_string(t + 1) + ".csv"), csv);
  }
  save_state(result.state, dir / "state");
}

// Checkpoint: manifest.json naming float blocks stored back to back in
// state.bin (f32le, row-major), the same convention as embedding bundles.
namespace {

struct Block {
  std::string name;
  MatF value;
};

MatF as_row(const VecF& v) { return v.transpose(); }

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

float get_f32(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

json adapter_meta(const Adapter& a) {
  std::vector<int> trained(a.trained.begin(), a.trained.end());
  return {{"classes", a.classes}, {"trained", trained}};
}

Adapter adapter_from(const json& meta, const MatF& weight) {
  Adapter a(static_cast<int>(weight.rows()));
  const auto classes = meta.at("classes").get<std::vector<ClassId>>();
  const auto trained = meta.at("trained").get<std::vector<int>>();
  if (static_cast<Eigen::Index>(classes.size()) != weight.cols() || trained.size() != classes.size()) {
    raise(ErrorKind::BadManifest, "adapter metadata differs from its weight block");
  }
  Rng unused(0);
  a.add_classes(classes, unused, 0.0f);
  a.weight = weight;
  for (std::size_t i = 0; i < trained.size(); ++i) a.trained[i] = static_cast<char>(trained[i] != 0);
  return a;
}

}  // namespace

void save_state(const ModelState& s, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) raise(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  const std::vector<Block> blocks = {
      {"gamma", as_row(s.encoder.gamma)},
      {"beta", as_row(s.encoder.beta)},
      {"a", s.encoder.a},
      {"b", s.encoder.b},
      {"t_down", s.bank.downstream()},
      {"t_world", s.bank.world()},
      {"t_down_snapshot", s.bank.downstream_snapshot()},
      {"t_world_snapshot", s.bank.world_snapshot()},
      {"phi_down", s.phi_down.weight},
      {"phi_world", s.phi_world.weight},
  };
  json meta = json::array();
  std::string payload;
  for (const Block& b : blocks) {
    meta.push_back({{"name", b.name}, {"rows", b.value.rows()}, {"cols", b.value.cols()}});
    for (Eigen::Index i = 0; i < b.value.size(); ++i) put_f32(payload, b.value.data()[i]);
  }
  const json manifest = {{"version", 1},
                         {"kind", "model-state"},
                         {"dtype", "f32le"},
                         {"data_file", "state.bin"},
                         {"tasks_seen", s.tasks_seen},
                         {"has_snapshot", s.bank.has_snapshot()},
                         {"downstream_classes", s.bank.downstream_classes()},
                         {"world_classes", s.bank.world_classes()},
                         {"phi_down", adapter_meta(s.phi_down)},
                         {"phi_world", adapter_meta(s.phi_world)},
                         {"blocks", meta}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "state.bin", payload);
}

ModelState load_state(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) raise(ErrorKind::IoError, "cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    raise(ErrorKind::BadManifest, std::string("state manifest is not valid JSON: ") + e.what());
  }
  try {
    if (manifest.at("version").get<int>() != 1) raise(ErrorKind::BadVersion, "unsupported state version");
    if (manifest.at("kind").get<std::string>() != "model-state") raise(ErrorKind::BadManifest, "not a model state");
    std::ifstream bf(dir / "state.bin", std::ios::binary);
    if (!bf) raise(ErrorKind::IoError, "cannot open state payload");
    const std::string payload((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    std::map<std::string, MatF> blocks;
    std::size_t at = 0;
    for (const auto& b : manifest.at("blocks")) {
      const auto rows = b.at("rows").get<Eigen::Index>();
      const auto cols = b.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0 || rows > (1 << 24) || cols > (1 << 24)) raise(ErrorKind::BadManifest, "bad block shape");
      MatF m(rows, cols);
      if (payload.size() < at + 4 * static_cast<std::size_t>(m.size())) raise(ErrorKind::SizeMismatch, "state payload truncated");
      for (Eigen::Index i = 0; i < m.size(); ++i, at += 4) m.data()[i] = get_f32(payload, at);
      blocks[b.at("name").get<std::string>()] = m;
    }
    if (at != payload.size()) raise(ErrorKind::SizeMismatch, "state payload has trailing bytes");
    auto block = [&](const char* name) -> const MatF& {
      const auto it = blocks.find(name);
      if (it == blocks.end()) raise(ErrorKind::BadManifest, std::string("state block ") + name + " missing");
      return it->second;
    };

    ModelState s;
    s.tasks_seen = manifest.at("tasks_seen").get<int>();
    s.encoder.gamma = block("gamma").row(0).transpose();
    s.encoder.beta = block("beta").row(0).transpose();
    s.encoder.a = block("a");
    s.encoder.b = block("b");
    const auto down_classes = manifest.at("downstream_classes").get<std::vector<ClassId>>();
    const auto world_classes = manifest.at("world_classes").get<std::vector<ClassId>>();
    const MatF& t_down = block("t_down");
    const MatF& t_world = block("t_world");
    const MatF& snap_down = block("t_down_snapshot");
    const MatF& snap_world = block("t_world_snapshot");
    if (t_down.rows() != static_cast<Eigen::Index>(down_classes.size()) ||
        t_world.rows() != static_cast<Eigen::Index>(world_classes.size()) || snap_down.rows() > t_down.rows() ||
        snap_world.rows() > t_world.rows()) {
      raise(ErrorKind::BadManifest, "prototype blocks differ from their class lists");
    }
    s.bank = PrototypeBank(static_cast<int>(t_down.cols()));
    const std::span<const ClassId> dc(down_classes), wc(world_classes);
    s.bank.add_downstream(dc.first(static_cast<std::size_t>(snap_down.rows())), snap_down);
    if (snap_world.rows() > 0) s.bank.add_world(wc.first(static_cast<std::size_t>(snap_world.rows())), snap_world);
    if (manifest.at("has_snapshot").get<bool>()) s.bank.snapshot();
    s.bank.add_downstream(dc.subspan(static_cast<std::size_t>(snap_down.rows())), t_down.bottomRows(t_down.rows() - snap_down.rows()));
    if (t_world.rows() > snap_world.rows()) {
      s.bank.add_world(wc.subspan(static_cast<std::size_t>(snap_world.rows())), t_world.bottomRows(t_world.rows() - snap_world.rows()));
    }
    s.bank.downstream() = t_down;
    s.bank.world() = t_world;
    s.phi_down = adapter_from(manifest.at("phi_down"), block("phi_down"));
    s.phi_world = adapter_from(manifest.at("phi_world"), block("phi_world"));
    return s;
  } catch (const json::exception& e) {
    raise(ErrorKind::BadManifest, std::string("state manifest: ") + e.what());
  }
}

json evaluate_state(const Dataset& data, const ModelState& state) {
  const std::set<ClassId> seen(state.bank.downstream_classes().begin(), state.bank.downstream_classes().end());
  json tasks = json::array();
  IdList cumulative;
  for (std::size_t t = 0; t < data.stream.tasks.size(); ++t) {
    const Task& task = data.stream.tasks[t];
    const bool covered = std::all_of(task.classes.begin(), task.classes.end(), [&](ClassId c) { return seen.count(c) > 0; });
    if (!covered) continue;
    const double acc = evaluate(data, state, task.test_ids);
    tasks.push_back({{"task", t + 1}, {"accuracy", acc}, {"test_samples", task.test_ids.size()}});
    cumulative.insert(cumulative.end(), task.test_ids.begin(), task.test_ids.end());
  }
  if (cumulative.empty()) raise(ErrorKind::EmptySplit, "the saved state covers no complete task");
  return {{"tasks", tasks}, {"cumulative_accuracy", evaluate(data, state, cumulative)}, {"tasks_seen", state.tasks_seen}};
}

}  // namespace wkcl
