#include "wkcl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "wkcl/error.hpp"
#include "wkcl/rng.hpp"

namespace wkcl {

namespace {

VecD gaussian(Rng& rng, int dim, double stddev) {
  VecD v(dim);
  for (int i = 0; i < dim; ++i) v[i] = stddev * rng.normal();
  return v;
}

VecD random_unit(Rng& rng, int dim) {
  VecD v = gaussian(rng, dim, 1.0);
  return v / v.norm();
}

/// Unit vector with expected cosine `cosine` to `axis` (uniform on the sphere
/// when `axis` is null).
VecD cone_unit(Rng& rng, int dim, const VecD* axis, double cosine) {
  if (!axis) return random_unit(rng, dim);
  const VecD v = std::sqrt(cosine) * *axis + std::sqrt(1.0 - cosine) * random_unit(rng, dim);
  return v / v.norm();
}

/// Unit means pushed apart until every pairwise angle is at least `min_angle`.
std::vector<VecD> repelled_means(Rng& rng, int count, int dim, double min_angle, const VecD* axis, double cosine) {
  std::vector<VecD> means;
  means.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) means.push_back(cone_unit(rng, dim, axis, cosine));
  constexpr int kMaxIterations = 2000;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    std::vector<VecD> push(means.size(), VecD::Zero(dim));
    bool violated = false;
    for (std::size_t i = 0; i < means.size(); ++i) {
      for (std::size_t j = i + 1; j < means.size(); ++j) {
        const double angle = std::acos(std::clamp(means[i].dot(means[j]), -1.0, 1.0));
        if (angle < min_angle) {
          violated = true;
          VecD diff = means[i] - means[j];
          if (diff.norm() < 1e-9) diff = random_unit(rng, dim);
          push[i] += diff;
          push[j] -= diff;
        }
      }
    }
    if (!violated) return means;
    for (std::size_t i = 0; i < means.size(); ++i) {
      if (push[i].squaredNorm() > 0) {
        VecD moved = means[i] + 0.25 * push[i];
        means[i] = moved / moved.norm();
      }
    }
  }
  raise(ErrorKind::InfeasibleSeparation, "could not place " + std::to_string(count) +
                                             " class means with pairwise angle >= " + std::to_string(min_angle) +
                                             " rad in dimension " + std::to_string(dim));
}

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
  return buf;
}

EmbeddingBundle make_image_bundle(const std::vector<VecD>& means, const std::vector<std::int32_t>& labels,
                                  const std::vector<std::string>& names, const VecD& offset,
                                  const std::vector<VecD>& class_offsets, const SyntheticConfig& cfg, Rng& rng) {
  EmbeddingBundle b;
  b.manifest.kind = BundleKind::Image;
  b.manifest.dim = cfg.dim;
  b.manifest.count = static_cast<std::int64_t>(labels.size());
  b.manifest.views = cfg.views;
  b.manifest.has_labels = true;
  b.manifest.class_names = names;
  b.labels = labels;
  b.data.reserve(labels.size() * static_cast<std::size_t>(cfg.views * cfg.dim));
  for (std::int32_t y : labels) {
    const auto c = static_cast<std::size_t>(y);
    VecD identity = means[c] + offset + gaussian(rng, cfg.dim, SyntheticConfig::kSigma);
    if (!class_offsets.empty()) identity += class_offsets[c];
    for (int v = 0; v < cfg.views; ++v) {
      const VecD view = v == 0 ? identity : VecD(identity + gaussian(rng, cfg.dim, cfg.view_noise));
      for (int k = 0; k < cfg.dim; ++k) b.data.push_back(static_cast<float>(view[k]));
    }
  }
  return b;
}

EmbeddingBundle make_text_bundle(const std::vector<VecD>& rows, int width, const std::vector<std::string>& names,
                                 int dim) {
  EmbeddingBundle b;
  b.manifest.kind = width == 1 ? BundleKind::TextClass : BundleKind::TextDescription;
  b.manifest.dim = dim;
  b.manifest.count = static_cast<std::int64_t>(names.size());
  b.manifest.descriptions = width;
  b.manifest.class_names = names;
  for (const VecD& r : rows) {
    const VecD u = r / r.norm();
    for (int k = 0; k < dim; ++k) b.data.push_back(static_cast<float>(u[k]));
  }
  return b;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes < cfg.tasks || cfg.tasks < 1) raise(ErrorKind::ConfigError, "need classes >= tasks >= 1");
  if (cfg.dim < 8) raise(ErrorKind::ConfigError, "dim must be at least 8");
  if (!(cfg.separation > 0)) raise(ErrorKind::ConfigError, "separation must be positive");
  if (cfg.views < 1 || cfg.per_class < 2 || cfg.descriptions < 1 || cfg.world_per_class < 1 || cfg.world_twins < 0 ||
      cfg.world_distractors < 0 || cfg.world_twins + cfg.world_distractors < 1) {
    raise(ErrorKind::ConfigError, "invalid synthetic shape parameters");
  }

  if (!(cfg.class_cosine >= 0 && cfg.class_cosine < 1)) raise(ErrorKind::ConfigError, "class_cosine must lie in [0, 1)");

  const double min_angle = cfg.separation * SyntheticConfig::kSigma;
  Rng mean_rng = Rng::derive(cfg.seed, "synthetic-means");
  const VecD axis = random_unit(mean_rng, cfg.dim);
  const std::vector<VecD> vl_means = repelled_means(mean_rng, cfg.classes, cfg.dim, min_angle, &axis, cfg.class_cosine);
  const std::vector<VecD> ss_means = repelled_means(mean_rng, cfg.classes, cfg.dim, min_angle, nullptr, 0.0);

  // World classes: twins of every downstream class, then distractors, stored
  // in a shuffled order so that world indices carry no information.
  // Twins share their class's image-only offset; distractors draw their own.
  Rng gap_rng = Rng::derive(cfg.seed, "synthetic-gap");
  const VecD gap = cfg.modality_gap * random_unit(gap_rng, cfg.dim);
  std::vector<VecD> ds_offsets;
  for (int c = 0; c < cfg.classes; ++c) ds_offsets.push_back(cfg.image_offset * random_unit(gap_rng, cfg.dim));

  struct WorldClass {
    VecD vl, ss, offset;
    int twin_of;
  };
  std::vector<WorldClass> world;
  Rng world_rng = Rng::derive(cfg.seed, "synthetic-world");
  for (int c = 0; c < cfg.classes; ++c) {
    for (int k = 0; k < cfg.world_twins; ++k) {
      VecD vl = vl_means[c] + gaussian(world_rng, cfg.dim, cfg.twin_noise);
      VecD ss = ss_means[c] + gaussian(world_rng, cfg.dim, cfg.twin_noise);
      world.push_back({vl / vl.norm(), ss / ss.norm(), ds_offsets[c] + gaussian(world_rng, cfg.dim, cfg.twin_noise), c});
    }
  }
  for (int k = 0; k < cfg.world_distractors; ++k) {
    world.push_back({cone_unit(world_rng, cfg.dim, &axis, cfg.class_cosine), random_unit(world_rng, cfg.dim),
                     cfg.image_offset * random_unit(world_rng, cfg.dim), -1});
  }
  world_rng.shuffle(world);
  std::vector<VecD> world_vl_means, world_ss_means, world_offsets;
  for (const auto& w : world) {
    world_vl_means.push_back(w.vl);
    world_ss_means.push_back(w.ss);
    world_offsets.push_back(w.offset);
  }

  std::vector<std::string> class_names, world_names;
  for (int c = 0; c < cfg.classes; ++c) class_names.push_back(numbered("class_", c));
  for (std::size_t w = 0; w < world.size(); ++w) world_names.push_back(numbered("world_", static_cast<int>(w)));

  const VecD no_offset = VecD::Zero(cfg.dim);

  std::vector<std::int32_t> ds_labels, world_labels;
  for (int c = 0; c < cfg.classes; ++c) {
    for (int i = 0; i < cfg.per_class; ++i) ds_labels.push_back(c);
  }
  for (std::size_t w = 0; w < world.size(); ++w) {
    for (int i = 0; i < cfg.world_per_class; ++i) world_labels.push_back(static_cast<std::int32_t>(w));
  }

  SyntheticData out;
  for (const auto& w : world) out.world_twin_of.push_back(w.twin_of);
  {
    Rng rng = Rng::derive(cfg.seed, "synthetic-downstream-vl");
    out.downstream_vl = make_image_bundle(vl_means, ds_labels, class_names, gap, ds_offsets, cfg, rng);
  }
  {
    Rng rng = Rng::derive(cfg.seed, "synthetic-downstream-ss");
    out.downstream_ss = make_image_bundle(ss_means, ds_labels, class_names, no_offset, {}, cfg, rng);
  }
  {
    Rng rng = Rng::derive(cfg.seed, "synthetic-world-vl");
    out.world_vl = make_image_bundle(world_vl_means, world_labels, world_names, gap, world_offsets, cfg, rng);
  }
  {
    Rng rng = Rng::derive(cfg.seed, "synthetic-world-ss");
    out.world_ss = make_image_bundle(world_ss_means, world_labels, world_names, no_offset, {}, cfg, rng);
  }

  Rng text_rng = Rng::derive(cfg.seed, "synthetic-text");
  std::vector<VecD> names_rows, desc_rows, world_rows;
  for (int c = 0; c < cfg.classes; ++c) {
    const VecD name = vl_means[c] + gaussian(text_rng, cfg.dim, cfg.text_noise);
    names_rows.push_back(name);
    for (int m = 0; m < cfg.descriptions; ++m) {
      desc_rows.push_back(name + gaussian(text_rng, cfg.dim, cfg.description_noise));
    }
  }
  for (const VecD& w : world_vl_means) world_rows.push_back(w + gaussian(text_rng, cfg.dim, cfg.text_noise));
  out.downstream_names = make_text_bundle(names_rows, 1, class_names, cfg.dim);
  out.downstream_descriptions = make_text_bundle(desc_rows, cfg.descriptions, class_names, cfg.dim);
  if (cfg.descriptions == 1) out.downstream_descriptions.manifest.kind = BundleKind::TextDescription;
  out.world_names = make_text_bundle(world_rows, 1, world_names, cfg.dim);

  out.stream = make_task_stream(ds_labels, cfg.classes, cfg.tasks, cfg.test_fraction, cfg.seed);
  return out;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& directory) {
  write_bundle(data.downstream_vl, directory / layout::kDownstreamVl);
  write_bundle(data.downstream_ss, directory / layout::kDownstreamSs);
  write_bundle(data.world_vl, directory / layout::kWorldVl);
  write_bundle(data.world_ss, directory / layout::kWorldSs);
  write_bundle(data.downstream_names, directory / layout::kDownstreamNames);
  write_bundle(data.downstream_descriptions, directory / layout::kDownstreamDescriptions);
  write_bundle(data.world_names, directory / layout::kWorldNames);
  write_task_stream(data.stream, directory / layout::kTaskStream);
}

}  // namespace wkcl
