#include "distillery/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace distillery {

namespace {

void require_finite(std::span<const double> z, const char* what) {
  for (double v : z) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite input");
  }
}

void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be a finite positive number, got " +
                      std::to_string(temperature));
  }
}

}  // namespace

SimplexVector::SimplexVector(Vector p) : p_(std::move(p)) {
  if (!valid(as_span(p_))) throw DomainError("not a probability vector");
}

SimplexVector::SimplexVector(std::initializer_list<double> p)
    : SimplexVector(Vector(Eigen::Map<const Vector>(p.begin(), static_cast<Eigen::Index>(p.size())))) {}

SimplexVector SimplexVector::one_hot(std::size_t classes, std::size_t k) {
  if (k >= classes) throw DomainError("one_hot: class index out of range");
  Vector p = Vector::Zero(static_cast<Eigen::Index>(classes));
  p[static_cast<Eigen::Index>(k)] = 1.0;
  return SimplexVector(std::move(p), Unchecked{});
}

SimplexVector SimplexVector::uniform(std::size_t classes) {
  if (classes == 0) throw DomainError("uniform: zero classes");
  return SimplexVector(Vector::Constant(static_cast<Eigen::Index>(classes), 1.0 / classes),
                       Unchecked{});
}

bool SimplexVector::valid(std::span<const double> p) {
  if (p.empty()) return false;
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= kSumTolerance;
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DomainError("log_sum_exp: empty input");
  require_finite(z, "log_sum_exp");
  const double m = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

namespace detail {

void softmax_into(std::span<const double> z, double temperature, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = z[k] / temperature;
    m = std::max(m, out[k]);
  }
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : out) v /= sum;
}

double cross_entropy_unchecked(std::span<const double> y, std::span<const double> logits,
                               double temperature) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v / temperature);
  double acc = 0.0;
  for (double v : logits) acc += std::exp(v / temperature - m);
  const double lse = m + std::log(acc);
  double loss = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] != 0.0) loss -= y[k] * (logits[k] / temperature - lse);
  }
  return loss;
}

}  // namespace detail

SimplexVector softmax(std::span<const double> z, double temperature) {
  require_temperature(temperature);
  if (z.empty()) throw DomainError("softmax: empty input");
  require_finite(z, "softmax");
  Vector out(static_cast<Eigen::Index>(z.size()));
  detail::softmax_into(z, temperature, {out.data(), z.size()});
  return SimplexVector(std::move(out), SimplexVector::Unchecked{});
}

double cross_entropy(const SimplexVector& y, std::span<const double> logits,
                     double temperature) {
  require_temperature(temperature);
  if (logits.size() != y.size()) throw DomainError("cross_entropy: dimension mismatch");
  require_finite(logits, "cross_entropy");
  // Rounding can leave -0 or a few ulps below zero for a perfect match.
  return std::max(0.0, detail::cross_entropy_unchecked(as_span(y.values()), logits, temperature));
}

double entropy(const SimplexVector& p) {
  double h = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::size_t argmax(std::span<const double> z) {
  if (z.empty()) throw DomainError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t k = 1; k < z.size(); ++k) {
    if (z[k] > z[best]) best = k;
  }
  return best;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed),
      stream_id_(stream_id),
      engine_(mix64(seed) ^ mix64(stream_id + 0x9e3779b97f4a7c15ULL)) {}

RngStream RngStream::fork(std::uint64_t child) const {
  return RngStream(seed_, mix64(stream_id_ ^ mix64(child + 1)));
}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_index(std::uint64_t bound) {
  if (bound == 0) throw DomainError("uniform_index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % bound;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::vector<double> sample_standard_normal(RngStream& rng, std::size_t n) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

Vector sample_standard_normal_vector(RngStream& rng, std::size_t n) {
  Vector out(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.normal();
  return out;
}

std::vector<std::size_t> sample_without_replacement(RngStream& rng, std::size_t n,
                                                    std::size_t k) {
  if (k > n) throw DomainError("sample_without_replacement: k > n");
  // Partial Fisher-Yates over an index table.
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace distillery
