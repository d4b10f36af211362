#include "wkcl/bundle.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "wkcl/error.hpp"

namespace wkcl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::int64_t kMaxDim = 1 << 20;
constexpr std::int64_t kMaxWidth = 1 << 16;
constexpr std::int64_t kMaxCount = std::int64_t{1} << 40;

void put_u32(std::string& out, std::uint32_t x) {
  out.push_back(static_cast<char>(x & 0xff));
  out.push_back(static_cast<char>((x >> 8) & 0xff));
  out.push_back(static_cast<char>((x >> 16) & 0xff));
  out.push_back(static_cast<char>((x >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorKind::IoError, "short write to " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::int64_t require_int(const json& j, const char* key, std::int64_t lo, std::int64_t hi) {
  if (!j.contains(key)) raise(ErrorKind::BadManifest, std::string("missing field '") + key + "'");
  const json& v = j.at(key);
  if (!v.is_number_integer()) {
    raise(ErrorKind::BadManifest, std::string("field '") + key + "' must be an integer");
  }
  std::int64_t x = 0;
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      raise(ErrorKind::BadManifest, std::string("field '") + key + "' out of range");
    }
    x = static_cast<std::int64_t>(u);
  } else {
    x = v.get<std::int64_t>();
  }
  if (x < lo || x > hi) {
    raise(ErrorKind::BadManifest, std::string("field '") + key + "' = " + std::to_string(x) +
                                      " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return x;
}

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    raise(ErrorKind::BadManifest, std::string("field '") + key + "' must be a string");
  }
  return j.at(key).get<std::string>();
}

json manifest_to_json(const BundleManifest& m) {
  json j;
  j["version"] = m.version;
  j["kind"] = to_string(m.kind);
  j["dim"] = m.dim;
  j["count"] = m.count;
  if (m.kind == BundleKind::Image) j["views"] = m.views;
  if (m.kind == BundleKind::TextDescription) j["descriptions"] = m.descriptions;
  j["labels"] = m.has_labels ? "present" : "absent";
  j["class_names"] = m.class_names;
  j["data_file"] = m.data_file;
  if (m.has_labels) j["label_file"] = m.label_file;
  j["dtype"] = m.dtype;
  return j;
}

BundleManifest manifest_from_json(const json& j) {
  if (!j.is_object()) raise(ErrorKind::BadManifest, "manifest is not a JSON object");
  static const std::set<std::string> known = {"version", "kind",   "dim",         "count",
                                              "views",   "descriptions", "labels", "class_names",
                                              "data_file", "label_file", "dtype"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) raise(ErrorKind::BadManifest, "unknown manifest field '" + item.key() + "'");
  }
  BundleManifest m;
  const std::int64_t version = require_int(j, "version", std::numeric_limits<std::int64_t>::min(),
                                           std::numeric_limits<std::int64_t>::max());
  if (version != kBundleVersion) {
    raise(ErrorKind::BadVersion, "bundle version " + std::to_string(version) + " (expected 1)");
  }
  m.version = static_cast<int>(version);
  try {
    m.kind = bundle_kind_from_string(require_string(j, "kind"));
  } catch (const Error& e) {
    raise(ErrorKind::BadManifest, e.what());
  }
  m.dim = static_cast<int>(require_int(j, "dim", 1, kMaxDim));
  m.count = require_int(j, "count", 0, kMaxCount);
  if (m.kind == BundleKind::Image) m.views = static_cast<int>(require_int(j, "views", 1, kMaxWidth));
  if (m.kind == BundleKind::TextDescription) {
    m.descriptions = static_cast<int>(require_int(j, "descriptions", 1, kMaxWidth));
  }
  const std::string labels = require_string(j, "labels");
  if (labels != "present" && labels != "absent") {
    raise(ErrorKind::BadManifest, "field 'labels' must be \"present\" or \"absent\"");
  }
  m.has_labels = labels == "present";
  if (!j.contains("class_names") || !j.at("class_names").is_array()) {
    raise(ErrorKind::BadManifest, "field 'class_names' must be an array");
  }
  for (const auto& name : j.at("class_names")) {
    if (!name.is_string()) raise(ErrorKind::BadManifest, "class_names entries must be strings");
    m.class_names.push_back(name.get<std::string>());
  }
  m.data_file = require_string(j, "data_file");
  if (m.has_labels) m.label_file = require_string(j, "label_file");
  m.dtype = require_string(j, "dtype");
  if (m.dtype != "f32le") raise(ErrorKind::BadManifest, "unsupported dtype '" + m.dtype + "'");
  return m;
}

void check_manifest(const BundleManifest& m) {
  if (m.version != kBundleVersion) raise(ErrorKind::BadVersion, "bundle version must be 1");
  if (m.dim <= 0) raise(ErrorKind::InvariantViolation, "dim must be positive");
  if (m.count < 0) raise(ErrorKind::InvariantViolation, "count must be nonnegative");
  if (m.width() <= 0) raise(ErrorKind::InvariantViolation, "views/descriptions must be positive");
  std::set<std::string> seen;
  for (const auto& name : m.class_names) {
    if (!seen.insert(name).second) raise(ErrorKind::InvariantViolation, "duplicate class name '" + name + "'");
  }
  if (m.kind != BundleKind::Image && m.count != static_cast<std::int64_t>(m.class_names.size())) {
    raise(ErrorKind::InvariantViolation, "text bundle count must equal the number of class names");
  }
}

}  // namespace

std::string to_string(BundleKind kind) {
  switch (kind) {
    case BundleKind::Image: return "image";
    case BundleKind::TextClass: return "text-class";
    case BundleKind::TextDescription: return "text-description";
  }
  return "image";
}

BundleKind bundle_kind_from_string(const std::string& name) {
  if (name == "image") return BundleKind::Image;
  if (name == "text-class") return BundleKind::TextClass;
  if (name == "text-description") return BundleKind::TextDescription;
  raise(ErrorKind::BadManifest, "unknown bundle kind '" + name + "'");
}

int BundleManifest::width() const {
  switch (kind) {
    case BundleKind::Image: return views;
    case BundleKind::TextDescription: return descriptions;
    case BundleKind::TextClass: return 1;
  }
  return 1;
}

std::uint64_t BundleManifest::payload_bytes() const {
  // Bounded by the manifest limits (2^40 * 2^16 * 2^20 * 4 overflows), so
  // compute in 128 bits and saturate.
  const unsigned __int128 bytes = static_cast<unsigned __int128>(count) * static_cast<unsigned>(width()) *
                                  static_cast<unsigned>(dim) * 4u;
  if (bytes > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(bytes);
}

Eigen::Map<const VecF> EmbeddingBundle::vector(SampleId id, int slot) const {
  if (id < 0 || id >= count() || slot < 0 || slot >= width()) {
    raise(ErrorKind::IndexOutOfRange, "record " + std::to_string(id) + " slot " + std::to_string(slot) +
                                          " outside bundle of " + std::to_string(count()) + " x " +
                                          std::to_string(width()));
  }
  const std::size_t offset = (static_cast<std::size_t>(id) * width() + slot) * dim();
  return Eigen::Map<const VecF>(data.data() + offset, dim());
}

MatF EmbeddingBundle::gather(const IdList& ids, int slot) const {
  MatF out(static_cast<Eigen::Index>(ids.size()), dim());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = vector(ids[i], slot).transpose();
  return out;
}

MatF EmbeddingBundle::slot_matrix(int slot) const {
  MatF out(count(), dim());
  for (SampleId i = 0; i < count(); ++i) out.row(i) = vector(i, slot).transpose();
  return out;
}

ClassId EmbeddingBundle::label(SampleId id) const {
  if (!manifest.has_labels) raise(ErrorKind::InvariantViolation, "bundle has no labels");
  if (id < 0 || id >= count()) raise(ErrorKind::IndexOutOfRange, "label index " + std::to_string(id));
  return labels[static_cast<std::size_t>(id)];
}

void EmbeddingBundle::validate() const {
  check_manifest(manifest);
  const std::uint64_t expected_floats = manifest.payload_bytes() / 4;
  if (data.size() != expected_floats) {
    raise(ErrorKind::SizeMismatch, "payload holds " + std::to_string(data.size()) + " floats, manifest implies " +
                                       std::to_string(expected_floats));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      raise(ErrorKind::NonFiniteEntry, "non-finite value at float offset " + std::to_string(i));
    }
  }
  if (manifest.has_labels) {
    if (labels.size() != static_cast<std::size_t>(count())) {
      raise(ErrorKind::SizeMismatch, "label count differs from record count");
    }
    const auto classes = static_cast<std::int64_t>(manifest.class_names.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= classes) {
        raise(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]) + " at record " + std::to_string(i) +
                                              " outside [0, " + std::to_string(classes) + ")");
      }
    }
  } else if (!labels.empty()) {
    raise(ErrorKind::InvariantViolation, "labels stored but manifest declares them absent");
  }
}

void write_bundle(const EmbeddingBundle& bundle, const fs::path& directory) {
  bundle.validate();
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) raise(ErrorKind::IoError, "cannot create " + directory.string() + ": " + ec.message());

  std::string payload;
  payload.reserve(bundle.data.size() * 4);
  for (float x : bundle.data) put_u32(payload, std::bit_cast<std::uint32_t>(x));
  write_file(directory / bundle.manifest.data_file, payload);

  if (bundle.manifest.has_labels) {
    std::string label_bytes;
    label_bytes.reserve(bundle.labels.size() * 4);
    for (std::int32_t y : bundle.labels) put_u32(label_bytes, std::bit_cast<std::uint32_t>(y));
    write_file(directory / bundle.manifest.label_file, label_bytes);
  } else {
    fs::remove(directory / bundle.manifest.label_file, ec);
  }
  write_file(directory / "manifest.json", manifest_to_json(bundle.manifest).dump(2) + "\n");
}

EmbeddingBundle read_bundle(const fs::path& directory) {
  const fs::path manifest_path = directory / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) raise(ErrorKind::IoError, "missing " + manifest_path.string());
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    raise(ErrorKind::BadManifest, std::string("manifest is not valid JSON: ") + e.what());
  }
  EmbeddingBundle bundle;
  bundle.manifest = manifest_from_json(j);
  check_manifest(bundle.manifest);

  const fs::path data_path = directory / bundle.manifest.data_file;
  if (!fs::is_regular_file(data_path)) raise(ErrorKind::IoError, "missing payload " + data_path.string());
  const std::uint64_t expected = bundle.manifest.payload_bytes();
  const std::uint64_t actual = fs::file_size(data_path);
  if (actual != expected) {
    raise(ErrorKind::SizeMismatch, data_path.filename().string() + " has " + std::to_string(actual) +
                                       " bytes, manifest implies " + std::to_string(expected));
  }
  const std::string payload = read_file(data_path);
  if (payload.size() != expected) raise(ErrorKind::IoError, "short read of " + data_path.string());
  bundle.data.resize(expected / 4);
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < bundle.data.size(); ++i) bundle.data[i] = std::bit_cast<float>(get_u32(bytes + 4 * i));

  const fs::path label_path = directory / bundle.manifest.label_file;
  if (bundle.manifest.has_labels) {
    if (!fs::is_regular_file(label_path)) raise(ErrorKind::IoError, "missing label file " + label_path.string());
    const std::uint64_t label_bytes = fs::file_size(label_path);
    if (label_bytes != static_cast<std::uint64_t>(bundle.manifest.count) * 4) {
      raise(ErrorKind::SizeMismatch, label_path.filename().string() + " has " + std::to_string(label_bytes) +
                                         " bytes, expected " + std::to_string(bundle.manifest.count * 4));
    }
    const std::string raw = read_file(label_path);
    bundle.labels.resize(static_cast<std::size_t>(bundle.manifest.count));
    const auto* lb = reinterpret_cast<const unsigned char*>(raw.data());
    for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
      bundle.labels[i] = std::bit_cast<std::int32_t>(get_u32(lb + 4 * i));
    }
  } else if (fs::exists(directory / "labels.bin")) {
    raise(ErrorKind::InvariantViolation, "labels.bin present but manifest declares labels absent");
  }
  bundle.validate();
  return bundle;
}

}  // namespace wkcl
