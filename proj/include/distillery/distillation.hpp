#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "distillery/core_math.hpp"
#include "distillery/models.hpp"

namespace distillery {

class DistillationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One training example (x, x*, y). Any field may be missing.
///
/// For classification `y` is a one-hot probability vector over c classes; for
/// regression it is the real-valued target vector of length c.
struct Triplet {
  std::uint64_t id = 0;
  std::optional<Vector> x;
  std::optional<Vector> x_star;
  std::optional<Vector> y;
};

struct DatasetHeader {
  std::size_t d = 0;       // regular features
  std::size_t d_star = 0;  // privileged features
  std::size_t c = 0;       // classes, or regression outputs
  Task task = Task::classification;

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Triplet> examples;

  std::size_t size() const { return examples.size(); }
  /// Throws DistillationError when a present field disagrees with the header
  /// or a triplet has no field at all.
  void validate() const;
};

enum Field : unsigned {
  kRegular = 1u << 0,
  kPrivileged = 1u << 1,
  kLabel = 1u << 2,
};
using FieldMask = unsigned;

/// Elements whose `required` fields are all present, in input order.
std::vector<Triplet> clean_subset(std::span<const Triplet> examples, FieldMask required);
Dataset clean_subset(const Dataset& data, FieldMask required);

/// (n x width) matrix of one feature field; every example must carry it.
RowMatrix stack_features(const Dataset& data, Field field);
/// Class indices of one-hot labels; every example must be labeled.
std::vector<std::size_t> class_labels(const Dataset& data);
/// (n x c) matrix of labels; every example must be labeled.
RowMatrix stack_labels(const Dataset& data);

struct ArchitectureSpec {
  Architecture kind = Architecture::linear;
  std::size_t hidden1 = 20;
  std::size_t hidden2 = 20;

  ModelShape shape(std::size_t input, std::size_t output, Task task) const;
};

struct DistillConfig {
  double temperature = 1.0;
  /// Imitation weight: hard labels get 1 - lambda, soft labels lambda.
  double lambda = 1.0;
  /// Extra factor on the soft term of examples that have no hard label.
  double unlabeled_weight = 1.0;
  /// Evaluate the student's cross-entropy at the teacher temperature instead
  /// of at T = 1.
  bool match_temperature = false;
  ArchitectureSpec teacher_arch;
  ArchitectureSpec student_arch;
  TrainConfig teacher;
  TrainConfig student;

  void validate() const;
  double student_temperature() const { return match_temperature ? temperature : 1.0; }
};

struct SoftLabel {
  std::uint64_t id = 0;
  Vector p;
};

/// Step 1: fit the teacher on the (x*, y) clean subset with hard labels only.
Model train_teacher(const Dataset& data, const DistillConfig& config);

/// Step 2: s_i = softmax(teacher(x*_i) / T) for every example carrying x*,
/// labeled or not. Regression teachers return their raw predictions.
std::vector<SoftLabel> soft_labels(const Model& teacher, const Dataset& data, double temperature);

/// Step 3: fit the student on regular features. Labeled examples contribute
/// (1 - lambda) on the hard label and lambda on their soft label; unlabeled
/// examples contribute lambda * unlabeled_weight on their soft label. Terms
/// with zero weight are dropped, so lambda = 1 never reads a hard label and
/// lambda = 0 reproduces the plain student exactly.
Model distill_student(const Dataset& data, std::span<const SoftLabel> soft,
                      const DistillConfig& config);

/// Student trained on (x, y) alone; identical to distill_student at lambda = 0.
Model train_regular(const Dataset& data, const DistillConfig& config);

/// Teacher probabilities restricted to `classes` and renormalized. The result
/// is indexed by position in `classes`.
std::vector<SoftLabel> universum_soft_labels(const Model& teacher, const Dataset& data,
                                             double temperature,
                                             std::span<const std::size_t> classes);

/// Shared inputs with several regression outputs per row.
struct MultitaskData {
  RowMatrix inputs;
  RowMatrix outputs;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t tasks() const { return static_cast<std::size_t>(outputs.cols()); }
};

/// View for target task j: x = inputs, x* = the other task outputs (in task
/// order), y = output j. Example ids are row indices.
Dataset multitask_views(const MultitaskData& data, std::size_t target_task);

}  // namespace distillery
