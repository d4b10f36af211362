#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "wkcl/gradcheck.hpp"
#include "wkcl/numerics.hpp"
#include "wkcl/optimizer.hpp"

using namespace wkcl;
using wkcl::testing::random_matrix;
using wkcl::testing::random_vector;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::ConfigError;
}

VecD vec(std::initializer_list<double> xs) {
  VecD v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

VecD random_simplex(Rng& rng, int n) {
  VecD p(n);
  for (int i = 0; i < n; ++i) p[i] = -std::log(1.0 - rng.uniform());
  return p / p.sum();
}

}  // namespace

TEST_CASE("l2_normalize") {
  const VecD a = l2_normalize(vec({3, 4}));
  CHECK(a[0] == doctest::Approx(0.6));
  CHECK(a[1] == doctest::Approx(0.8));
  const VecD b = l2_normalize(vec({0, 5}));
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 1.0);
  CHECK(kind_of([] { l2_normalize(vec({1e-9, 0})); }) == ErrorKind::NearZeroNorm);

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const VecF v = random_vector<float>(rng, 1 + static_cast<int>(rng.below(64)), 10.0);
    const VecF u = l2_normalize(v);
    CHECK(std::abs(u.norm() - 1.0f) <= 1e-5f);
    CHECK(u.dot(v) > 0);
  }
}

TEST_CASE("normalize_rows reports the offending row") {
  MatD m(2, 2);
  m << 1, 1, 0, 0;
  CHECK(kind_of([&] { normalize_rows(m); }) == ErrorKind::NearZeroNorm);
}

TEST_CASE("cosine_sim") {
  CHECK(cosine_sim(vec({1, 2, 3}), vec({1, 2, 3})) == doctest::Approx(1.0));
  CHECK(cosine_sim(vec({1, 0}), vec({0, 1})) == 0.0);
  CHECK(cosine_sim(vec({1, 0}), vec({-1, 0})) == -1.0);
  CHECK(kind_of([] { cosine_sim(vec({0, 0}), vec({0, 1})); }) == ErrorKind::NearZeroNorm);
  CHECK(kind_of([] { cosine_sim(vec({1, 0}), vec({0, 1, 0})); }) == ErrorKind::ShapeMismatch);

  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const VecF u = random_vector<float>(rng, 16), v = random_vector<float>(rng, 16);
    const float c = cosine_sim(u, v);
    CHECK(c >= -1.0f);
    CHECK(c <= 1.0f);
  }
}

TEST_CASE("softmax") {
  const VecD a = softmax(vec({0, 0}));
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));
  const VecD b = softmax(vec({std::log(2.0), 0}));
  CHECK(b[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(b[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // sqrt(2)/(1+sqrt(2)) and 1/(1+sqrt(2)), 40-digit evaluation
  const VecD c = softmax(vec({std::log(2.0), 0}), 2.0);
  CHECK(c[0] == doctest::Approx(0.5857864376269049512).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(0.4142135623730950488).epsilon(1e-12));

  const VecD big = softmax(vec({1000, 999}));
  CHECK(big.allFinite());
  CHECK(big.sum() == doctest::Approx(1.0));
}

TEST_CASE("softmax sums to one for long and extreme inputs") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(10000));
    const VecF z = random_vector<float>(rng, n, trial % 2 ? 50.0 : 1.0);
    const VecF p = softmax(z);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      CHECK(p[i] >= 0.0f);
      sum += p[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6 * std::max(1.0, n / 1000.0));
  }
}

TEST_CASE("cross_entropy") {
  CHECK(cross_entropy(vec({0, 0}), 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // log(1 + e^-10), 40-digit evaluation
  CHECK(cross_entropy(vec({10, 0}), 0) == doctest::Approx(4.5398899216864646769e-5).epsilon(1e-9));
  CHECK(kind_of([] { cross_entropy(vec({0, 0}), 2); }) == ErrorKind::IndexOutOfRange);
  CHECK(kind_of([] { cross_entropy(vec({0, 0}), -1); }) == ErrorKind::IndexOutOfRange);

  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const VecD z = random_vector<double>(rng, 2 + static_cast<int>(rng.below(8)), 3.0);
    const VecD p = softmax(z);
    double entropy = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) entropy -= p[i] * std::log(p[i]);
    CHECK(cross_entropy(z, p) == doctest::Approx(entropy).epsilon(1e-10));
  }
}

TEST_CASE("cross_entropy is smallest at the arg max target") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const VecD z = random_vector<double>(rng, 2 + static_cast<int>(rng.below(20)), 5.0);
    const auto best = static_cast<ClassId>(argmax(z));
    const double at_best = cross_entropy(z, best);
    CHECK(at_best >= 0.0);
    for (Eigen::Index j = 0; j < z.size(); ++j) CHECK(at_best <= cross_entropy(z, static_cast<ClassId>(j)));
  }
}

TEST_CASE("kl_div") {
  CHECK(kl_div(vec({0.3, 0.7}), vec({0.3, 0.7})) == 0.0);
  CHECK(kl_div(vec({1, 0}), vec({0.5, 0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1), 40-digit evaluation
  CHECK(kl_div(vec({0.5, 0.5}), vec({0.9, 0.1})) == doctest::Approx(0.51082562376599068321).epsilon(1e-12));
  CHECK(std::isfinite(kl_div(vec({0.5, 0.5}), vec({1.0, 0.0}))));

  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(30));
    const VecD p = random_simplex(rng, n), q = random_simplex(rng, n);
    CHECK(kl_div(p, q) >= 0.0);
    CHECK(kl_div(p, p) <= 1e-9);
  }
}

TEST_CASE("softened_kl gradient matches central differences") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const VecD old_row = random_vector<double>(rng, 6);
    const VecD start = random_vector<double>(rng, 6);
    const double tau = 0.5 + 2 * rng.uniform();
    const FlatLoss f = [&](const VecD& x, VecD* g) { return softened_kl<double>(old_row, x, tau, g); };
    CHECK(fd_gradcheck(f, start, 1e-5) < 1e-6);
  }
}

TEST_CASE("mean_cross_entropy matches per-row cross_entropy") {
  Rng rng(8);
  const MatD logits = random_matrix<double>(rng, 7, 4, 2.0);
  const std::vector<ClassId> targets{0, 1, 2, 3, 0, 1, 2};
  double expected = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) expected += cross_entropy(logits.row(i).transpose(), targets[i]);
  CHECK(mean_cross_entropy<double>(logits, std::span<const ClassId>(targets), nullptr) ==
        doctest::Approx(expected / 7).epsilon(1e-14));
  const MatD empty(0, 4);
  CHECK(mean_cross_entropy<double>(empty, std::span<const ClassId>(), nullptr) == 0.0);
}

TEST_CASE("argmax breaks ties to the lowest index") {
  CHECK(argmax(vec({1, 3, 3, 2})) == 1);
  CHECK(argmax(vec({0, 0, 0})) == 0);
}

TEST_CASE("adamw first step and decoupled decay") {
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  VecD theta = vec({0});
  AdamW<double> opt(cfg, 1);
  opt.step(theta, vec({1}), 0.004);
  CHECK(theta[0] == doctest::Approx(-0.004).epsilon(1e-6));
  CHECK(opt.steps() == 1);

  AdamWConfig decay;
  decay.weight_decay = 0.01;
  VecD one = vec({1});
  AdamW<double> opt2(decay, 1);
  opt2.step(one, vec({0}), 0.004);
  CHECK(one[0] == doctest::Approx(0.99996).epsilon(1e-12));
}

TEST_CASE("adamw two-step trace on a quadratic") {
  // f = theta^2 from theta = 1, lr 0.004, betas 0.9/0.999, wd 0.01, eps 1e-8;
  // reference values from a separate double-precision evaluation of the update.
  AdamWConfig cfg;
  VecD theta = vec({1});
  AdamW<double> opt(cfg, 1);
  opt.step(theta, 2 * theta, 0.004);
  CHECK(std::abs(theta[0] - 0.9959601600199992) < 1e-6);
  opt.step(theta, 2 * theta, 0.004);
  CHECK(std::abs(theta[0] - 0.9919209118661716) < 1e-6);
  CHECK(opt.steps() == 2);
}

TEST_CASE("adamw rejects mismatched shapes and non-positive lr") {
  AdamWConfig cfg;
  AdamW<double> opt(cfg, 2);
  VecD p = vec({1, 2});
  CHECK(kind_of([&] { opt.step(p, vec({1}), 0.004); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { opt.step(p, vec({1, 1}), 0.0); }) == ErrorKind::ConfigError);
}

TEST_CASE("adamw moves monotonically against a constant gradient") {
  Rng rng(9);
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  const VecD g = random_vector<double>(rng, 8);
  VecD p = VecD::Zero(8);
  AdamW<double> opt(cfg, 8);
  for (int step = 0; step < 100; ++step) {
    const VecD before = p;
    opt.step(p, g, 0.004);
    for (int i = 0; i < 8; ++i) {
      if (g[i] > 0) CHECK(p[i] < before[i]);
      if (g[i] < 0) CHECK(p[i] > before[i]);
    }
  }
  CHECK(opt.steps() == 100);
}

TEST_CASE("adamw on a float matrix block") {
  AdamWConfig cfg;
  MatF w = MatF::Ones(3, 2);
  AdamW<float> opt(cfg, w.size());
  opt.step(w, MatF::Ones(3, 2), 0.004);
  CHECK(w(2, 1) == doctest::Approx((1.0 - 0.004) * (1.0 - 0.004 * 0.01)).epsilon(1e-6));
}

TEST_CASE("step decay schedule") {
  AdamWConfig cfg;
  cfg.decay_epochs = {18, 26};
  CHECK(step_decay_lr(0, cfg) == doctest::Approx(0.004));
  CHECK(step_decay_lr(17, cfg) == doctest::Approx(0.004));
  CHECK(step_decay_lr(18, cfg) == doctest::Approx(0.0008));
  CHECK(step_decay_lr(30, cfg) == doctest::Approx(0.00016));
  CHECK(decay_epochs_for_budget(30) == std::vector<int>{18, 26});
  CHECK(decay_epochs_for_budget(20) == std::vector<int>{12, 17});
}

TEST_CASE("fd_gradcheck on closed-form functions") {
  Rng rng(10);
  const VecD theta = random_vector<double>(rng, 12);
  const FlatLoss square = [](const VecD& x, VecD* g) {
    if (g) *g = 2 * x;
    return x.squaredNorm();
  };
  CHECK(fd_gradcheck(square, theta, 1e-5) < 1e-8);

  const VecD c = random_vector<double>(rng, 12);
  const FlatLoss linear = [&](const VecD& x, VecD* g) {
    if (g) *g = c;
    return c.dot(x);
  };
  CHECK(fd_gradcheck(linear, theta, 1e-3) < 1e-10);

  const FlatLoss nan_loss = [](const VecD&, VecD* g) {
    if (g) g->setZero(1);
    return std::nan("");
  };
  CHECK(kind_of([&] { fd_gradcheck(nan_loss, VecD::Zero(1), 1e-5); }) == ErrorKind::NonFiniteLoss);
  CHECK(kind_of([&] { fd_gradcheck(square, theta, 1e-7); }) == ErrorKind::ConfigError);
}

TEST_CASE("fd_gradcheck on cross-entropy over cosine logits") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 5, classes = 4;
    const MatD protos = normalize_rows(random_matrix<double>(rng, classes, d));
    const auto target = static_cast<ClassId>(rng.below(classes));
    const double scale = 10.0;
    const FlatLoss f = [&](const VecD& x, VecD* g) {
      const double n = x.norm();
      const VecD u = x / n;
      const VecD logits = scale * protos * u;
      if (g) {
        VecD dl = softmax(logits);
        dl[target] -= 1;
        const VecD du = scale * protos.transpose() * dl;
        *g = (du - u * u.dot(du)) / n;
      }
      return cross_entropy(logits, target);
    };
    CHECK(fd_gradcheck(f, random_vector<double>(rng, d), 1e-5) < 1e-5);
  }
}

TEST_CASE("reductions are bit-reproducible") {
  Rng rng(12);
  const MatF logits = random_matrix<float>(rng, 64, 10, 4.0);
  std::vector<ClassId> targets;
  for (int i = 0; i < 64; ++i) targets.push_back(static_cast<ClassId>(rng.below(10)));
  MatF g1, g2;
  const float a = mean_cross_entropy<float>(logits, std::span<const ClassId>(targets), &g1);
  const float b = mean_cross_entropy<float>(logits, std::span<const ClassId>(targets), &g2);
  CHECK(a == b);
  CHECK(g1 == g2);
}

TEST_CASE("rng streams are reproducible and derived streams differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng::derive(42, "x"), d = Rng::derive(42, "x"), e = Rng::derive(42, "y"), f = Rng::derive(42, "x", 1);
  const auto first = c.next_u64();
  CHECK(first == d.next_u64());
  CHECK(first != e.next_u64());
  CHECK(first != f.next_u64());
  // std::mt19937_64 with the default seed has a fixed 10000th output.
  Rng std_seed(5489);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = std_seed.next_u64();
  CHECK(x == 9981545732273789042ULL);

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  const auto perm = r.permutation(20);
  std::vector<char> seen(20, 0);
  for (auto p : perm) seen[p] = 1;
  CHECK(std::count(seen.begin(), seen.end(), 1) == 20);
}
