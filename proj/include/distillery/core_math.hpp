#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace distillery {

using Vector = Eigen::VectorXd;

/// Raised when a numerical primitive is called outside its domain
/// (non-positive temperature, non-finite input, invalid probability vector).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

/// A point of the probability simplex: non-negative entries summing to one.
///
/// Construction validates the invariant (tolerance 1e-9 on the sum), so any
/// SimplexVector in hand is safe to feed to cross_entropy.
class SimplexVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit SimplexVector(Vector p);
  SimplexVector(std::initializer_list<double> p);

  static SimplexVector one_hot(std::size_t classes, std::size_t k);
  static SimplexVector uniform(std::size_t classes);

  std::size_t size() const { return static_cast<std::size_t>(p_.size()); }
  double operator[](std::size_t k) const { return p_[static_cast<Eigen::Index>(k)]; }
  const Vector& values() const { return p_; }

  /// True when `p` satisfies the simplex invariant.
  static bool valid(std::span<const double> p);

  friend bool operator==(const SimplexVector& a, const SimplexVector& b) {
    return a.p_ == b.p_;
  }

 private:
  struct Unchecked {};
  SimplexVector(Vector p, Unchecked) : p_(std::move(p)) {}
  friend SimplexVector softmax(std::span<const double> z, double temperature);

  Vector p_;
};

/// log(sum_k exp(z_k)), evaluated as m + log(sum_k exp(z_k - m)) with m = max z.
double log_sum_exp(std::span<const double> z);

/// Temperature softmax sigma(z / T). Throws DomainError for T <= 0 or
/// non-finite logits.
SimplexVector softmax(std::span<const double> z, double temperature = 1.0);
inline SimplexVector softmax(const Vector& z, double temperature = 1.0) {
  return softmax(as_span(z), temperature);
}

/// -sum_k y_k log softmax(z / T)_k, fused from logits so log(0) never occurs.
double cross_entropy(const SimplexVector& y, std::span<const double> logits,
                     double temperature = 1.0);
inline double cross_entropy(const SimplexVector& y, const Vector& logits,
                            double temperature = 1.0) {
  return cross_entropy(y, as_span(logits), temperature);
}

/// Shannon entropy in nats; 0 log 0 = 0.
double entropy(const SimplexVector& p);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> z);
inline std::size_t argmax(const Vector& z) { return argmax(as_span(z)); }

namespace detail {
// Hot-loop variants used by the models module. Callers guarantee shapes,
// finiteness and (for targets) the simplex invariant.
double cross_entropy_unchecked(std::span<const double> y, std::span<const double> logits,
                               double temperature);
void softmax_into(std::span<const double> z, double temperature, std::span<double> out);
}  // namespace detail

/// SplitMix64 finalizer, used to derive engine seeds and stable hash keys.
std::uint64_t mix64(std::uint64_t x);

/// Deterministic random stream identified by (seed, stream-id).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard, seeded with mix64(seed) ^ mix64(stream-id + golden ratio).
/// Uniform and normal variates are produced here rather than through the
/// implementation-defined std distributions, so draws are identical on every
/// conforming platform. Copying a stream forks an identical sequence.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Independent child stream; depends only on (seed, stream-id, child).
  RngStream fork(std::uint64_t child) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random mantissa bits.
  double uniform();
  /// Uniform integer on [0, bound) by rejection (no modulo bias).
  std::uint64_t uniform_index(std::uint64_t bound);
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// n i.i.d. standard normal draws from `rng`.
std::vector<double> sample_standard_normal(RngStream& rng, std::size_t n);
Vector sample_standard_normal_vector(RngStream& rng, std::size_t n);

/// k distinct indices from [0, n), uniformly over subsets, in draw order.
std::vector<std::size_t> sample_without_replacement(RngStream& rng, std::size_t n,
                                                    std::size_t k);

}  // namespace distillery
