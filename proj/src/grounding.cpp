#include "wkcl/grounding.hpp"

#include <map>
#include <nlohmann/json.hpp>
#include <set>

namespace wkcl {

std::vector<ClassId> AuxiliaryPool::world_classes() const {
  std::set<ClassId> classes;
  for (const auto& list : retrieved) {
    for (const Retrieved& r : list) classes.insert(r.world_class);
  }
  return {classes.begin(), classes.end()};
}

IdList AuxiliaryPool::sample_ids() const {
  IdList ids;
  ids.reserve(samples.size());
  for (const AuxSample& s : samples) ids.push_back(s.id);
  return ids;
}

AuxiliaryPool build_auxiliary_pool(int task, std::span<const ClassId> downstream_classes,
                                   const std::vector<std::vector<Retrieved>>& retrieved,
                                   const EmbeddingBundle& world_images, int cap, int retrieval_k) {
  if (!world_images.manifest.has_labels) raise(ErrorKind::InvariantViolation, "world bundle must carry labels");
  if (cap < 1) raise(ErrorKind::ConfigError, "images-per-class cap must be >= 1");
  if (retrieved.size() != downstream_classes.size()) {
    raise(ErrorKind::ShapeMismatch, "one retrieval list per downstream class expected");
  }
  AuxiliaryPool pool;
  pool.task = task;
  pool.retrieval_k = retrieval_k;
  pool.cap = cap;
  pool.downstream_classes.assign(downstream_classes.begin(), downstream_classes.end());
  pool.retrieved = retrieved;

  std::set<ClassId> wanted;
  for (const auto& list : retrieved) {
    for (const Retrieved& r : list) wanted.insert(r.world_class);
  }
  // Records are scanned in id order, so the first `cap` hits are the lowest ids.
  std::map<ClassId, int> taken;
  for (SampleId id = 0; id < world_images.count(); ++id) {
    const ClassId y = world_images.labels[static_cast<std::size_t>(id)];
    if (!wanted.count(y)) continue;
    int& n = taken[y];
    if (n >= cap) continue;
    ++n;
    pool.samples.push_back({id, y});
  }
  if (pool.samples.empty()) {
    raise(ErrorKind::EmptyPool, "no world samples match the retrieved classes of task " + std::to_string(task));
  }
  return pool;
}

MatF average_prototypes(const EmbeddingBundle& descriptions, std::span<const ClassId> classes) {
  MatF out(static_cast<Eigen::Index>(classes.size()), descriptions.dim());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    MatF rows(descriptions.width(), descriptions.dim());
    for (int m = 0; m < descriptions.width(); ++m) rows.row(m) = descriptions.vector(classes[i], m).transpose();
    try {
      out.row(static_cast<Eigen::Index>(i)) = average_prototype(rows).transpose();
    } catch (const Error& e) {
      throw e.with_context("prototype of class " + std::to_string(classes[i]));
    }
  }
  return out;
}

MatF world_prototypes(const EmbeddingBundle& world_names, std::span<const ClassId> classes) {
  return average_prototypes(world_names, classes);
}

namespace {

void append_rows(MatF& matrix, std::vector<ClassId>& ids, std::unordered_map<ClassId, int>& index,
                 std::span<const ClassId> classes, const MatF& rows) {
  if (rows.rows() != static_cast<Eigen::Index>(classes.size())) {
    raise(ErrorKind::ShapeMismatch, "prototype rows differ from class count");
  }
  if (matrix.cols() == 0 && matrix.rows() == 0) matrix.resize(0, rows.cols());
  if (rows.cols() != matrix.cols()) raise(ErrorKind::ShapeMismatch, "prototype dim differs from bank");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (index.count(classes[i])) continue;
    const Eigen::Index r = matrix.rows();
    matrix.conservativeResize(r + 1, Eigen::NoChange);
    matrix.row(r) = rows.row(static_cast<Eigen::Index>(i));
    index[classes[i]] = static_cast<int>(r);
    ids.push_back(classes[i]);
  }
}

}  // namespace

void PrototypeBank::add_downstream(std::span<const ClassId> classes, const MatF& rows) {
  append_rows(downstream_, downstream_ids_, downstream_index_, classes, rows);
}

void PrototypeBank::add_world(std::span<const ClassId> classes, const MatF& rows) {
  append_rows(world_, world_ids_, world_index_, classes, rows);
}

int PrototypeBank::downstream_row(ClassId c) const {
  const auto it = downstream_index_.find(c);
  if (it == downstream_index_.end()) raise(ErrorKind::IndexOutOfRange, "downstream class " + std::to_string(c) + " has no prototype");
  return it->second;
}

int PrototypeBank::world_row(ClassId c) const {
  const auto it = world_index_.find(c);
  if (it == world_index_.end()) raise(ErrorKind::IndexOutOfRange, "world class " + std::to_string(c) + " has no prototype");
  return it->second;
}

void PrototypeBank::snapshot() {
  downstream_snapshot_ = downstream_;
  world_snapshot_ = world_;
  has_snapshot_ = true;
}

void PrototypeBank::renormalize() {
  if (downstream_.rows() > 0) downstream_ = normalize_rows(downstream_);
  if (world_.rows() > 0) world_ = normalize_rows(world_);
}

nlohmann::json retrieval_to_json(const std::vector<std::string>& downstream_names,
                                 const std::vector<std::string>& world_names,
                                 std::span<const ClassId> downstream_classes,
                                 const std::vector<std::vector<Retrieved>>& retrieved) {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t i = 0; i < downstream_classes.size(); ++i) {
    nlohmann::json list = nlohmann::json::array();
    for (const Retrieved& r : retrieved[i]) {
      list.push_back({{"name", world_names.at(static_cast<std::size_t>(r.world_class))},
                      {"world_class", r.world_class},
                      {"score", r.score}});
    }
    out[downstream_names.at(static_cast<std::size_t>(downstream_classes[i]))] = list;
  }
  return out;
}

}  // namespace wkcl
