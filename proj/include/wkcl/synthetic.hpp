#pragma once

#include <cstdint>
#include <filesystem>

#include "wkcl/bundle.hpp"
#include "wkcl/task_stream.hpp"

namespace wkcl {

/// Desk-scale stand-in for frozen encoders applied to a downstream dataset and
/// a labeled world-knowledge dataset.
///
/// Every class has a latent mean on the unit sphere in each of two feature
/// spaces. In the vision-language space (shared with the text embeddings) the
/// means sit in a cone around a common direction, as image embeddings of one
/// dataset do, and image features carry a per-class offset that the text side
/// lacks, so zero-shot text prototypes are slightly misplaced. The
/// self-supervised space has spread-out means and no offset. World classes
/// are perturbed copies ("twins") of downstream means, sharing their image
/// offset, plus unrelated distractors, so retrieval by text similarity has
/// true nearest neighbours. Text rows are stored at unit length.
struct SyntheticConfig {
  int classes = 25;
  int per_class = 40;
  int dim = 64;
  int views = 2;
  double separation = 4.0;  // minimum pairwise mean angle, in units of sigma
  double view_noise = 0.1;  // per-coordinate std of the strong-augmentation surrogate
  std::uint64_t seed = 42;

  int tasks = 5;
  int descriptions = 5;
  int world_twins = 3;         // world classes planted near each downstream class
  int world_distractors = 15;  // unrelated world classes
  int world_per_class = 20;
  double test_fraction = 0.25;
  double class_cosine = 0.65;    // typical cosine between vision-language class means
  double twin_noise = 0.02;      // per-coordinate perturbation of twin means
  double image_offset = 0.6;     // norm of the per-class image-only offset
  double text_noise = 0.02;      // per-coordinate noise of class-name embeddings
  double description_noise = 0.05;
  double modality_gap = 0.4;     // norm of the offset shared by all vision-language image features

  static constexpr double kSigma = 0.1;  // intra-class per-coordinate noise
};

struct SyntheticData {
  EmbeddingBundle downstream_vl;     // vision-language image features, labels present
  EmbeddingBundle downstream_ss;     // self-supervised visual features, labels present
  EmbeddingBundle world_vl;
  EmbeddingBundle world_ss;
  EmbeddingBundle downstream_names;  // text-class
  EmbeddingBundle downstream_descriptions;  // text-description
  EmbeddingBundle world_names;       // text-class
  TaskStream stream;
  std::vector<ClassId> world_twin_of;  // downstream class of each world class, -1 for distractors
};

SyntheticData gen_synthetic(const SyntheticConfig& config);

/// Sub-directory names used for a synthetic (or exported) data directory.
namespace layout {
inline constexpr const char* kDownstreamVl = "downstream_vl";
inline constexpr const char* kDownstreamSs = "downstream_ss";
inline constexpr const char* kWorldVl = "world_vl";
inline constexpr const char* kWorldSs = "world_ss";
inline constexpr const char* kDownstreamNames = "downstream_names";
inline constexpr const char* kDownstreamDescriptions = "downstream_descriptions";
inline constexpr const char* kWorldNames = "world_names";
inline constexpr const char* kTaskStream = "task_stream.json";
}  // namespace layout

void write_synthetic(const SyntheticData& data, const std::filesystem::path& directory);

}  // namespace wkcl
