#include <doctest.h>

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "test_support.hpp"
#include "wkcl/grounding.hpp"

using namespace wkcl;
using wkcl::testing::random_matrix;

namespace {

// Full-sort oracle: every world class ordered by (score desc, index asc).
std::vector<ClassId> sort_oracle(const MatF& sim, Eigen::Index row, int k) {
  std::vector<ClassId> order(static_cast<std::size_t>(sim.cols()));
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<ClassId>(j);
  std::stable_sort(order.begin(), order.end(), [&](ClassId a, ClassId b) { return sim(row, a) > sim(row, b); });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
  return order;
}

EmbeddingBundle labeled_world(int classes, int per_class, int dim, Rng& rng, bool interleave) {
  EmbeddingBundle b;
  b.manifest.dim = dim;
  b.manifest.count = classes * per_class;
  b.manifest.has_labels = true;
  for (int c = 0; c < classes; ++c) b.manifest.class_names.push_back("w" + std::to_string(c));
  for (int i = 0; i < classes * per_class; ++i) {
    b.labels.push_back(interleave ? i % classes : i / per_class);
    for (int k = 0; k < dim; ++k) b.data.push_back(static_cast<float>(rng.normal()));
  }
  return b;
}

EmbeddingBundle description_bundle(const std::vector<MatF>& per_class) {
  EmbeddingBundle b;
  b.manifest.kind = BundleKind::TextDescription;
  b.manifest.dim = static_cast<int>(per_class[0].cols());
  b.manifest.count = static_cast<std::int64_t>(per_class.size());
  b.manifest.descriptions = static_cast<int>(per_class[0].rows());
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    b.manifest.class_names.push_back("c" + std::to_string(c));
    for (Eigen::Index i = 0; i < per_class[c].size(); ++i) b.data.push_back(per_class[c].data()[i]);
  }
  return b;
}

}  // namespace

TEST_CASE("class_similarity") {
  Rng rng(1);
  const MatF a = random_matrix<float>(rng, 5, 7);
  const MatF self = class_similarity<float>(a, a);
  for (int i = 0; i < 5; ++i) CHECK(self(i, i) == doctest::Approx(1.0f).epsilon(1e-6));

  MatF e1 = MatF::Zero(1, 3);
  e1(0, 0) = 1;
  MatF others = MatF::Zero(2, 3);
  others(0, 1) = 1;
  others(1, 2) = 2;
  const MatF zero = class_similarity<float>(e1, others);
  CHECK(zero.cwiseAbs().maxCoeff() == 0.0f);

  for (int trial = 0; trial < 50; ++trial) {
    const MatF d = random_matrix<float>(rng, 5, 6), w = random_matrix<float>(rng, 3, 6);
    const MatF s = class_similarity<float>(d, w);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 3; ++j) {
        double dot = 0, nd = 0, nw = 0;
        for (int k = 0; k < 6; ++k) {
          dot += double(d(i, k)) * w(j, k);
          nd += double(d(i, k)) * d(i, k);
          nw += double(w(j, k)) * w(j, k);
        }
        CHECK(std::abs(s(i, j) - dot / std::sqrt(nd * nw)) < 1e-6);
      }
    }
  }
  MatF bad = MatF::Zero(1, 3);
  CHECK_THROWS_AS(class_similarity<float>(bad, others), Error);
}

TEST_CASE("retrieve_topk") {
  Rng rng(2);
  SUBCASE("identical pair is retrieved at K = 1") {
    MatF down = random_matrix<float>(rng, 3, 8), world = random_matrix<float>(rng, 6, 8);
    world.row(4) = down.row(1);
    const auto r = retrieve_topk(class_similarity<float>(down, world), 1);
    CHECK(r[1].size() == 1);
    CHECK(r[1][0].world_class == 4);
  }
  SUBCASE("ties go to the lower index") {
    MatF sim(1, 4);
    sim << 0.5f, 0.9f, 0.9f, 0.9f;
    const auto r = retrieve_topk(sim, 2);
    CHECK(r[0][0].world_class == 1);
    CHECK(r[0][1].world_class == 2);
  }
  SUBCASE("fewer world classes than K") {
    const auto r = retrieve_topk(MatF(random_matrix<float>(rng, 2, 2)), 5);
    CHECK(r[0].size() == 2);
  }
  SUBCASE("K must be positive") { CHECK_THROWS_AS(retrieve_topk(MatF(MatF::Zero(1, 1)), 0), Error); }
  SUBCASE("random 10 x 50 matrices match the sort oracle") {
    for (int trial = 0; trial < 200; ++trial) {
      MatF sim = random_matrix<float>(rng, 10, 50);
      // quantize so that ties actually occur
      if (trial % 2) sim = (sim * 4).array().round().matrix() / 4;
      const int k = 1 + static_cast<int>(rng.below(6));
      const auto r = retrieve_topk(sim, k);
      for (int i = 0; i < 10; ++i) {
        const auto expect = sort_oracle(sim, i, k);
        REQUIRE(r[i].size() == expect.size());
        for (std::size_t j = 0; j < expect.size(); ++j) {
          CHECK(r[i][j].world_class == expect[j]);
          CHECK(r[i][j].score == sim(i, expect[j]));
        }
      }
    }
  }
}

TEST_CASE("retrieval is invariant to positive rescaling of text rows") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    MatF down = random_matrix<float>(rng, 4, 8), world = random_matrix<float>(rng, 12, 8);
    const auto before = retrieve_topk(class_similarity<float>(down, world), 3);
    for (Eigen::Index i = 0; i < world.rows(); ++i) world.row(i) *= float(0.01 + 100 * rng.uniform());
    for (Eigen::Index i = 0; i < down.rows(); ++i) down.row(i) *= float(0.01 + 100 * rng.uniform());
    const auto after = retrieve_topk(class_similarity<float>(down, world), 3);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(before[i][j].world_class == after[i][j].world_class);
    }
  }
}

TEST_CASE("build_auxiliary_pool cap and dedup") {
  Rng rng(4);
  SUBCASE("cap keeps the lowest ids") {
    const EmbeddingBundle world = labeled_world(3, 25, 4, rng, true);
    const std::vector<ClassId> classes{0};
    const AuxiliaryPool pool = build_auxiliary_pool(0, classes, {{{1, 0.9f}}}, world, 10, 1);
    REQUIRE(pool.samples.size() == 10);
    for (int i = 0; i < 10; ++i) {
      CHECK(pool.samples[i].id == 1 + 3 * i);
      CHECK(pool.samples[i].world_label == 1);
    }
  }
  SUBCASE("shared retrieved class appears once") {
    const EmbeddingBundle world = labeled_world(4, 5, 4, rng, false);
    const std::vector<ClassId> classes{0, 1};
    const AuxiliaryPool pool =
        build_auxiliary_pool(0, classes, {{{2, 0.9f}, {0, 0.5f}}, {{2, 0.8f}}}, world, 10, 2);
    CHECK(pool.samples.size() == 10);
    std::set<SampleId> ids;
    for (const auto& s : pool.samples) CHECK(ids.insert(s.id).second);
    CHECK(pool.world_classes() == std::vector<ClassId>{0, 2});
  }
  SUBCASE("no matching samples") {
    EmbeddingBundle world = labeled_world(3, 2, 4, rng, false);
    std::replace(world.labels.begin(), world.labels.end(), 2, 0);
    const std::vector<ClassId> classes{0};
    try {
      build_auxiliary_pool(0, classes, {{{2, 0.9f}}}, world, 10, 1);
      FAIL("expected EmptyPool");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmptyPool);
    }
  }
}

TEST_CASE("auxiliary pool equals the set-builder definition") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const EmbeddingBundle world = labeled_world(5, 20, 3, rng, trial % 2 == 0);
    const int k = 2, cap = 5;
    const std::vector<ClassId> classes{0, 1, 2};
    const MatF sim = random_matrix<float>(rng, 3, 5);
    const auto retrieved = retrieve_topk(sim, k);
    const AuxiliaryPool pool = build_auxiliary_pool(trial, classes, retrieved, world, cap, k);

    std::set<ClassId> wanted;
    for (const auto& list : retrieved) {
      for (const auto& r : list) wanted.insert(r.world_class);
    }
    std::vector<AuxSample> expect;
    for (ClassId w : wanted) {
      int taken = 0;
      for (SampleId id = 0; id < world.count() && taken < cap; ++id) {
        if (world.labels[id] == w) expect.push_back({id, w}), ++taken;
      }
    }
    std::sort(expect.begin(), expect.end(), [](const AuxSample& a, const AuxSample& b) { return a.id < b.id; });
    REQUIRE(pool.samples.size() == expect.size());
    CHECK(pool.samples.size() <= classes.size() * k * cap);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      CHECK(pool.samples[i].id == expect[i].id);
      CHECK(pool.samples[i].world_label == expect[i].world_label);
    }
  }
}

TEST_CASE("average_prototype") {
  Rng rng(6);
  const MatD one = random_matrix<double>(rng, 1, 5);
  const VecD a = average_prototype(one);
  CHECK((a - one.row(0).transpose() / one.norm()).norm() < 1e-12);

  MatD twice(2, 5);
  twice.row(0) = one.row(0);
  twice.row(1) = one.row(0);
  CHECK((average_prototype(twice) - a).norm() < 1e-12);

  for (int trial = 0; trial < 100; ++trial) {
    const MatF desc = random_matrix<float>(rng, 3, 16);
    std::vector<long double> mean(16, 0.0L);
    for (int m = 0; m < 3; ++m) {
      for (int k = 0; k < 16; ++k) mean[k] += desc(m, k) / 3.0L;
    }
    long double norm = 0;
    for (long double x : mean) norm += x * x;
    norm = std::sqrt(norm);
    const VecF p = average_prototype(desc);
    for (int k = 0; k < 16; ++k) CHECK(std::abs(static_cast<long double>(p[k]) - mean[k] / norm) < 1e-6L);

    MatF shuffled = desc;
    shuffled.row(0).swap(shuffled.row(2));
    CHECK((average_prototype(shuffled) - p).norm() < 1e-6f);
  }

  MatD opposite(2, 3);
  opposite << 1, 2, 3, -1, -2, -3;
  CHECK_THROWS_AS(average_prototype(opposite), Error);
}

TEST_CASE("average_prototypes over a description bundle") {
  Rng rng(7);
  std::vector<MatF> per_class;
  for (int c = 0; c < 4; ++c) per_class.push_back(random_matrix<float>(rng, 3, 8));
  const EmbeddingBundle b = description_bundle(per_class);
  const std::vector<ClassId> classes{3, 1};
  const MatF t = average_prototypes(b, classes);
  CHECK((t.row(0).transpose() - average_prototype(per_class[3])).norm() < 1e-6f);
  CHECK((t.row(1).transpose() - average_prototype(per_class[1])).norm() < 1e-6f);
}

TEST_CASE("prototype bank keeps rows in first-seen order") {
  Rng rng(8);
  PrototypeBank bank(4);
  const std::vector<ClassId> first{5, 2};
  bank.add_downstream(first, normalize_rows(random_matrix<float>(rng, 2, 4)));
  bank.snapshot();
  const std::vector<ClassId> second{2, 7};
  const MatF before = bank.downstream();
  bank.add_downstream(second, normalize_rows(random_matrix<float>(rng, 2, 4)));
  CHECK(bank.downstream().rows() == 3);
  CHECK(bank.downstream().topRows(2) == before);
  CHECK(bank.downstream_row(7) == 2);
  CHECK(bank.downstream_snapshot().rows() == 2);
  CHECK(bank.downstream_classes() == std::vector<ClassId>{5, 2, 7});
  CHECK_THROWS_AS(bank.downstream_row(9), Error);

  bank.downstream() *= 3.0f;
  bank.renormalize();
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(bank.downstream().row(i).norm() == doctest::Approx(1.0f));
}

TEST_CASE("retrieval json maps names to ordered neighbours") {
  const std::vector<std::string> down{"bottle"}, world{"water bottle", "beer bottle", "tree"};
  const std::vector<ClassId> classes{0};
  const nlohmann::json j = retrieval_to_json(down, world, classes, {{{1, 0.9f}, {0, 0.8f}}});
  REQUIRE(j.contains("bottle"));
  CHECK(j["bottle"][0]["name"] == "beer bottle");
  CHECK(j["bottle"][1]["name"] == "water bottle");
}

TEST_CASE("K=1 retrieval recovers the planted twins") {
  for (std::uint64_t seed : {42ULL, 5ULL}) {
    SyntheticConfig cfg;
    cfg.seed = seed;
    const SyntheticData d = gen_synthetic(cfg);
    const auto got = retrieve_topk(class_similarity<float>(d.downstream_names.slot_matrix(0), d.world_names.slot_matrix(0)), 1);
    int hits = 0;
    for (std::size_t c = 0; c < got.size(); ++c) hits += d.world_twin_of[static_cast<std::size_t>(got[c][0].world_class)] == static_cast<ClassId>(c);
    CHECK_MESSAGE(hits >= 24, "seed " << seed << ": " << hits << "/25");
  }
}
