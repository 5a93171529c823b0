#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "distillery/core_math.hpp"

using namespace distillery;

namespace {

Vector random_logits(RngStream& rng, std::size_t c, double scale) {
  Vector z(static_cast<Eigen::Index>(c));
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = scale * rng.normal();
  return z;
}

SimplexVector random_simplex(RngStream& rng, std::size_t c) {
  Vector p(static_cast<Eigen::Index>(c));
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    // Occasional exact zeros exercise the 0 log 0 convention.
    p[k] = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
  }
  if (p.sum() == 0.0) p[0] = 1.0;
  p /= p.sum();
  return SimplexVector(p);
}

}  // namespace

TEST_CASE("softmax examples") {
  const SimplexVector u = softmax(Vector::Zero(3), 1.0);
  for (std::size_t k = 0; k < 3; ++k) CHECK(u[k] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  const Vector z{{std::log(2.0), 0.0}};
  const SimplexVector p = softmax(z, 1.0);
  CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));

  const SimplexVector hot = softmax(Vector{{5.0, -3.0, 1.0}}, 1e6);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(hot[k] - 1.0 / 3) <= 1e-5);
}

TEST_CASE("softmax rejects bad temperature and non-finite logits") {
  const Vector z{{1.0, 2.0}};
  CHECK_THROWS_AS(softmax(z, 0.0), DomainError);
  CHECK_THROWS_AS(softmax(z, -1.0), DomainError);
  CHECK_THROWS_AS(softmax(z, std::nan("")), DomainError);
  CHECK_THROWS_AS(softmax(Vector{{1.0, INFINITY}}, 1.0), DomainError);
  CHECK_THROWS_AS(softmax(Vector{{std::nan(""), 0.0}}, 1.0), DomainError);
}

TEST_CASE("softmax does not overflow near the exp limit") {
  const SimplexVector p = softmax(Vector{{700.0, -700.0, 699.0}}, 1.0);
  CHECK(p.values().allFinite());
  CHECK(p.values().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[0] > p[2]);
}

TEST_CASE("softmax temperature, shift and normalization identities") {
  RngStream rng(11, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t c = 2 + rng.uniform_index(9);
    const Vector z = random_logits(rng, c, 5.0);
    const double t = 0.05 + 20.0 * rng.uniform();
    const double shift = -100.0 + 200.0 * rng.uniform();

    const SimplexVector a = softmax(z, t);
    const SimplexVector b = softmax(Vector(z / t), 1.0);
    CHECK(a == b);

    const SimplexVector shifted = softmax(Vector(z.array() + shift), t);
    CHECK((shifted.values() - a.values()).cwiseAbs().maxCoeff() <= 1e-12);

    CHECK(std::abs(a.values().sum() - 1.0) <= 1e-9);
    // exp underflows to 0 once the logit range exceeds ~745 temperatures.
    if ((z.maxCoeff() - z.minCoeff()) / t < 700.0) CHECK(a.values().minCoeff() > 0.0);
    CHECK(argmax(a.values()) == argmax(z));

    const double t2 = t * (1.0 + 4.0 * rng.uniform());
    CHECK(a.values().maxCoeff() >= softmax(z, t2).values().maxCoeff());
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(Vector{{0.5, 0.5}}) == 0);
  CHECK(argmax(Vector{{0.1, 0.9, 0.9}}) == 1);
  CHECK(argmax(softmax(Vector{{2.0, 2.0, 1.0}}, 3.0).values()) == 0);
}

TEST_CASE("cross_entropy examples") {
  CHECK(cross_entropy(SimplexVector::one_hot(2, 0), Vector{{1000.0, -1000.0}}, 1.0) <= 1e-9);
  CHECK(cross_entropy(SimplexVector{0.5, 0.5}, Vector::Zero(2), 1.0) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-14));
  const Vector z{{std::log(0.3), std::log(0.7)}};
  // -sum y log y for y = (0.3, 0.7), evaluated independently in Python.
  CHECK(cross_entropy(SimplexVector{0.3, 0.7}, z, 1.0) ==
        doctest::Approx(0.6108643020548935).epsilon(1e-13));
}

TEST_CASE("cross_entropy stays finite for extreme logits") {
  const double ce = cross_entropy(SimplexVector::one_hot(2, 1), Vector{{1e4, -1e4}}, 1.0);
  CHECK(std::isfinite(ce));
  CHECK(ce == doctest::Approx(2e4));
}

TEST_CASE("cross_entropy input validation") {
  CHECK_THROWS_AS(SimplexVector({0.5, 0.6}), DomainError);
  CHECK_THROWS_AS(SimplexVector({-0.1, 1.1}), DomainError);
  CHECK_THROWS_AS(cross_entropy(SimplexVector::uniform(3), Vector::Zero(2), 1.0), DomainError);
  CHECK_THROWS_AS(cross_entropy(SimplexVector::uniform(2), Vector::Zero(2), 0.0), DomainError);
}

TEST_CASE("Gibbs inequality on random cases") {
  RngStream rng(2024, 7);
  int violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = 2 + rng.uniform_index(8);
    const SimplexVector y = random_simplex(rng, c);
    const Vector z = random_logits(rng, c, 10.0);
    if (cross_entropy(y, z, 1.0) < entropy(y) - 1e-9) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("log_sum_exp") {
  CHECK(log_sum_exp(std::vector<double>{0.0}) == 0.0);
  CHECK(log_sum_exp(std::vector<double>{0.0, 0.0}) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(log_sum_exp(std::vector<double>{1000.0, 1000.0}) ==
        doctest::Approx(1000.0 + std::numbers::ln2).epsilon(1e-15));
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), DomainError);
}

TEST_CASE("standard normal moments over 10^6 draws") {
  RngStream rng(42, 3);
  const auto draws = sample_standard_normal(rng, 1'000'000);
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(draws.size());
  double var = 0.0;
  for (double v : draws) var += (v - mean) * (v - mean);
  var /= static_cast<double>(draws.size() - 1);
  CHECK(mean > -0.01);
  CHECK(mean < 0.01);
  CHECK(var > 0.99);
  CHECK(var < 1.01);
}

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(5, 9), b(5, 9), c(5, 10);
  const auto va = sample_standard_normal(a, 1000);
  const auto vb = sample_standard_normal(b, 1000);
  const auto vc = sample_standard_normal(c, 1000);
  CHECK(va == vb);
  CHECK(va != vc);

  RngStream d(5, 9);
  d.normal();
  RngStream clone = d;
  CHECK(d.normal() == clone.normal());
  CHECK(d.fork(3).next_u64() == RngStream(5, 9).fork(3).next_u64());
  CHECK(d.fork(3).next_u64() != d.fork(4).next_u64());
}

TEST_CASE("uniform draws stay in range") {
  RngStream rng(1, 1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.uniform_index(7) < 7);
  }
}

TEST_CASE("sample_without_replacement returns distinct indices") {
  RngStream rng(3, 3);
  for (int i = 0; i < 200; ++i) {
    auto s = sample_without_replacement(rng, 50, 3);
    REQUIRE(s.size() == 3);
    CHECK(s[0] != s[1]);
    CHECK(s[0] != s[2]);
    CHECK(s[1] != s[2]);
    for (auto v : s) CHECK(v < 50);
  }
  CHECK_THROWS_AS(sample_without_replacement(rng, 2, 3), DomainError);
}
