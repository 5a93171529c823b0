#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "distillery/core_math.hpp"
#include "distillery/distillation.hpp"

namespace distillery {

/// Generators for the four privileged-information simulations:
///   1. clean labels:     x ~ N(0, I), x* = <alpha, x>, y = 1[x* + eps > 0]
///   2. clean features:   x* ~ N(0, I), x = x* + eps, y = 1[<alpha, x*> > 0]
///   3. relevant features: x ~ N(0, I), x* = x_J (J shared), y = 1[<alpha_J, x*> > 0]
///   4. per-sample relevant features: as 3 with J_i drawn per example.
///
/// Labels are one-hot over two classes, class 1 meaning "positive side".
struct SyntheticSpec {
  int experiment = 1;
  std::size_t d = 50;
  std::size_t n_train = 200;
  std::size_t n_test = 10000;
  std::size_t relevant = 3;
  /// When false, the label noise of experiment 1 is forced to zero.
  bool label_noise = true;

  void validate() const;
};

/// Per-repetition problem: the hyperplane alpha ~ N(0, I_d) and, for
/// experiment 3, the shared relevant index set J.
struct SyntheticProblem {
  Vector alpha;
  std::vector<std::size_t> relevant;
};

struct SyntheticData {
  Dataset dataset;
  /// Relevant index set per example (experiments 3 and 4), else empty.
  std::vector<std::vector<std::size_t>> subsets;
};

SyntheticProblem draw_problem(const SyntheticSpec& spec, RngStream& rng);

SyntheticData gen_exp1(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng);
SyntheticData gen_exp2(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng);
SyntheticData gen_exp3(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng);
/// x* is stored as a d-vector equal to x on J_i and zero elsewhere, so the
/// label is linear in x*: y = 1[<alpha, x*> > 0].
SyntheticData gen_exp4(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng);

/// Dispatches on spec.experiment.
SyntheticData generate(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng);

/// Label the generating process assigns to (x, x*) without noise; used to
/// replay labels from stored quantities.
std::size_t replay_label(const SyntheticSpec& spec, const SyntheticProblem& problem,
                         const Triplet& t, const std::vector<std::size_t>& subset);

/// Text dump: a header line "d,d_star,c,n,task", then one line per example
/// "id;x;x*;y" with comma-separated values and `_` for a missing field.
void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in);

}  // namespace distillery
