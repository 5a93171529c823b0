#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "distillery/core_math.hpp"

namespace distillery {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Task { classification, regression };
enum class Architecture { linear, mlp };

std::string to_string(Task task);
std::string to_string(Architecture arch);
Task task_from_string(const std::string& s);
Architecture architecture_from_string(const std::string& s);

/// Raised for shape mismatches and misuse of a model (e.g. class prediction
/// on a regression model).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite training loss. Carries the (1-based) epoch where it was seen.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t epoch);
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct ModelShape {
  Architecture architecture = Architecture::linear;
  Task task = Task::classification;
  std::size_t input = 0;
  std::size_t hidden1 = 0;  // mlp only
  std::size_t hidden2 = 0;  // mlp only
  std::size_t output = 0;

  static ModelShape linear(std::size_t input, std::size_t output,
                           Task task = Task::classification);
  static ModelShape mlp(std::size_t input, std::size_t hidden1, std::size_t hidden2,
                        std::size_t output, Task task = Task::classification);

  /// (out, in) for every affine layer, input side first.
  std::vector<std::pair<std::size_t, std::size_t>> layer_dims() const;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// One affine layer: weights are (out x in), applied as W x + b.
struct Layer {
  Eigen::MatrixXd weights;
  Vector bias;

  friend bool operator==(const Layer& a, const Layer& b) {
    return a.weights == b.weights && a.bias == b.bias;
  }
};

/// Layer-structured parameter set. Used both for model parameters and for
/// gradients, which mirror the parameter shapes.
struct Parameters {
  std::vector<Layer> layers;

  std::size_t count() const;
  /// Concatenation of each layer's row-major weights followed by its bias.
  Vector flatten() const;
  void assign(std::span<const double> flat);
  /// Sum of squared weight entries; biases excluded.
  double weight_sq_norm() const;
  double norm() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

class Model {
 public:
  /// All parameters zero.
  explicit Model(ModelShape shape);
  Model(ModelShape shape, Parameters params);

  const ModelShape& shape() const { return shape_; }
  Task task() const { return shape_.task; }
  std::size_t input_dim() const { return shape_.input; }
  std::size_t output_dim() const { return shape_.output; }

  const Parameters& parameters() const { return params_; }
  Parameters& parameters() { return params_; }

  friend bool operator==(const Model&, const Model&) = default;

 private:
  ModelShape shape_;
  Parameters params_;
};

enum class InitScheme {
  /// N(0, 2/fan-in) for layers followed by ReLU, N(0, 1/fan-in) otherwise;
  /// biases zero.
  scaled_normal,
  zeros,
};

Model init_model(const ModelShape& shape, InitScheme scheme, RngStream& rng);

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double l2 = 1e-4;
  InitScheme init = InitScheme::scaled_normal;
  /// Initialization and per-epoch shuffling both derive from this stream.
  RngStream rng{0, 0};

  void validate() const;
};

/// Training target for one example: an optional hard target and an optional
/// soft target, each with its own mixing weight. For classification both
/// targets are probability vectors; for regression they are real vectors.
struct WeightedTarget {
  std::optional<Vector> hard;
  std::optional<Vector> soft;
  double hard_weight = 0.0;
  double soft_weight = 0.0;

  /// Hard label with weight 1-lambda plus soft label with weight lambda.
  static WeightedTarget mix(Vector hard, Vector soft, double lambda);
  static WeightedTarget hard_only(Vector hard);
  static WeightedTarget soft_only(Vector soft, double weight);
};

struct Example {
  Vector x;
  WeightedTarget target;
  std::uint64_t id = 0;
};

/// Column-oriented training data. Absent targets are zero rows with weight 0.
struct TrainingSet {
  RowMatrix features;
  RowMatrix hard;
  RowMatrix soft;
  Vector hard_weight;
  Vector soft_weight;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return ids.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(hard.cols()); }

  /// Validates shapes, weight ranges and (for classification) that every
  /// present target is a probability vector.
  static TrainingSet from_examples(std::span<const Example> examples, std::size_t output_dim,
                                   Task task);

  /// n zero rows, filled with set_row; avoids materializing Example copies
  /// of large feature vectors.
  static TrainingSet allocate(std::size_t n, std::size_t input_dim, std::size_t output_dim);
  /// Same validation as from_examples, for a single row.
  void set_row(std::size_t row, const Vector& x, const WeightedTarget& target, std::uint64_t id,
               Task task);
};

/// Logits (classification) or predictions (regression) for a single input.
Vector forward(const Model& model, const Vector& x);
/// Row-wise forward pass over an (n x d) matrix.
RowMatrix forward_batch(const Model& model, const RowMatrix& x);

/// Mean over `rows` of hard_weight * l(hard, z) + soft_weight * l(soft, z),
/// plus l2 * sum of squared weights. l is cross-entropy at temperature
/// `student_temperature` for classification and squared error for regression.
/// An empty `rows` span means the whole set.
double loss(const Model& model, const TrainingSet& data, double student_temperature, double l2,
            std::span<const std::size_t> rows = {});

Parameters gradient(const Model& model, const TrainingSet& data, double student_temperature,
                    double l2, std::span<const std::size_t> rows = {});

struct LossAndGradient {
  double loss;
  Parameters gradient;
};
LossAndGradient loss_and_gradient(const Model& model, const TrainingSet& data,
                                  double student_temperature, double l2,
                                  std::span<const std::size_t> rows = {});

/// Visiting order for one epoch. Examples are sorted by a hash of
/// (shuffle seed, epoch, example id), so the order depends on ids and not on
/// the position of examples in the input.
std::vector<std::size_t> epoch_order(std::span<const std::uint64_t> ids, const RngStream& rng,
                                     std::size_t epoch);

/// Mini-batch gradient descent with a constant learning rate, starting from
/// `initial`. When `loss_history` is given it receives the mean mini-batch
/// loss of each epoch. Throws TrainingDiverged on a non-finite loss.
Model train(const Model& initial, const TrainingSet& data, const TrainConfig& config,
            double student_temperature = 1.0, std::vector<double>* loss_history = nullptr);

/// argmax of the logits, lowest index on ties.
std::size_t predict_class(const Model& model, const Vector& x);

/// Fraction of rows whose predicted class equals `labels[i]`.
double accuracy(const Model& model, const RowMatrix& x, std::span<const std::size_t> labels);
/// Mean over rows and outputs of the squared prediction error.
double mean_squared_error(const Model& model, const RowMatrix& x, const RowMatrix& targets);

/// Versioned text record; see docs/formats.md.
void save_model(const Model& model, std::ostream& out);
Model load_model(std::istream& in);

}  // namespace distillery
