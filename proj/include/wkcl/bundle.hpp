#pragma once

// On-disk embedding bundles: a directory holding
//   manifest.json   - shape, kind and class names
//   embeddings.bin  - float32 little-endian, row-major [count x width x dim]
//   labels.bin      - optional int32 little-endian [count]
// where width is the view count for image bundles, the description count for
// text-description bundles and 1 for text-class bundles.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wkcl/types.hpp"

namespace wkcl {

enum class BundleKind { Image, TextClass, TextDescription };

std::string to_string(BundleKind kind);
BundleKind bundle_kind_from_string(const std::string& name);

inline constexpr int kBundleVersion = 1;

struct BundleManifest {
  int version = kBundleVersion;
  BundleKind kind = BundleKind::Image;
  int dim = 0;
  std::int64_t count = 0;
  int views = 1;         // image kind; view 0 is the identity transformation
  int descriptions = 1;  // text-description kind
  bool has_labels = false;
  std::vector<std::string> class_names;
  std::string data_file = "embeddings.bin";
  std::string label_file = "labels.bin";
  std::string dtype = "f32le";

  /// Number of stored vectors per record.
  int width() const;
  std::uint64_t payload_bytes() const;
};

class EmbeddingBundle {
 public:
  BundleManifest manifest;
  std::vector<float> data;
  std::vector<std::int32_t> labels;

  int dim() const { return manifest.dim; }
  std::int64_t count() const { return manifest.count; }
  int width() const { return manifest.width(); }

  /// Vector `slot` (view or description index) of record `id`.
  Eigen::Map<const VecF> vector(SampleId id, int slot = 0) const;

  /// Rows are records `ids` at the given slot.
  MatF gather(const IdList& ids, int slot = 0) const;

  /// Every record at one slot, as a [count x dim] matrix.
  MatF slot_matrix(int slot = 0) const;

  ClassId label(SampleId id) const;

  /// Throws a typed Error on the first violated invariant.
  void validate() const;
};

void write_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& directory);
EmbeddingBundle read_bundle(const std::filesystem::path& directory);

}  // namespace wkcl
