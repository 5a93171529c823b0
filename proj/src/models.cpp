#include "distillery/models.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace distillery {

namespace {

constexpr const char* kModelMagic = "distillery-model";
constexpr int kModelVersion = 1;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

bool all_finite(const Parameters& p) {
  for (const auto& layer : p.layers) {
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

// Activations kept for the backward pass: acts[0] is the input batch,
// acts[i] the post-ReLU output of hidden layer i, and the last entry the
// raw output-layer values.
std::vector<RowMatrix> forward_keep(const Model& model, const RowMatrix& x) {
  const auto& layers = model.parameters().layers;
  std::vector<RowMatrix> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(x);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    RowMatrix z = acts.back() * layers[i].weights.transpose();
    z.rowwise() += layers[i].bias.transpose();
    if (i + 1 < layers.size()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  return acts;
}

RowMatrix gather(const RowMatrix& m, std::span<const std::size_t> rows) {
  RowMatrix out(idx(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(idx(i)) = m.row(idx(rows[i]));
  return out;
}

void check_compatible(const Model& model, const TrainingSet& data) {
  if (data.size() == 0) throw ModelError("empty batch");
  if (data.input_dim() != model.input_dim() || data.output_dim() != model.output_dim()) {
    throw ModelError("training set shape (" + std::to_string(data.input_dim()) + " -> " +
                     std::to_string(data.output_dim()) + ") does not match model (" +
                     std::to_string(model.input_dim()) + " -> " +
                     std::to_string(model.output_dim()) + ")");
  }
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

// Data term of the loss plus, when `dz` is non-null, its derivative with
// respect to the output layer values (already divided by the batch size).
double data_term(const Model& model, const RowMatrix& out, const TrainingSet& data,
                 std::span<const std::size_t> rows, double temperature, RowMatrix* dz) {
  const std::size_t b = rows.size();
  const std::size_t c = model.output_dim();
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  if (dz) dz->resize(idx(b), idx(c));
  std::vector<double> p(c);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t r = rows[i];
    const double hw = data.hard_weight[idx(r)];
    const double sw = data.soft_weight[idx(r)];
    const std::span<const double> z{out.row(idx(i)).data(), c};
    const std::span<const double> hard{data.hard.row(idx(r)).data(), c};
    const std::span<const double> soft{data.soft.row(idx(r)).data(), c};
    if (model.task() == Task::classification) {
      if (hw != 0.0) total += hw * detail::cross_entropy_unchecked(hard, z, temperature);
      if (sw != 0.0) total += sw * detail::cross_entropy_unchecked(soft, z, temperature);
      if (dz) {
        detail::softmax_into(z, temperature, p);
        for (std::size_t k = 0; k < c; ++k) {
          (*dz)(idx(i), idx(k)) =
              ((hw + sw) * p[k] - hw * hard[k] - sw * soft[k]) / temperature * inv_b;
        }
      }
    } else {
      for (std::size_t k = 0; k < c; ++k) {
        const double eh = z[k] - hard[k];
        const double es = z[k] - soft[k];
        total += hw * eh * eh + sw * es * es;
        if (dz) (*dz)(idx(i), idx(k)) = 2.0 * (hw * eh + sw * es) * inv_b;
      }
    }
  }
  return total * inv_b;
}

}  // namespace

std::string to_string(Task task) {
  return task == Task::classification ? "classification" : "regression";
}

std::string to_string(Architecture arch) { return arch == Architecture::linear ? "linear" : "mlp"; }

Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw ModelError("unknown task '" + s + "'");
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "linear") return Architecture::linear;
  if (s == "mlp") return Architecture::mlp;
  throw ModelError("unknown architecture '" + s + "'");
}

TrainingDiverged::TrainingDiverged(std::size_t epoch)
    : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
      epoch_(epoch) {}

ModelShape ModelShape::linear(std::size_t input, std::size_t output, Task task) {
  return {Architecture::linear, task, input, 0, 0, output};
}

ModelShape ModelShape::mlp(std::size_t input, std::size_t hidden1, std::size_t hidden2,
                           std::size_t output, Task task) {
  return {Architecture::mlp, task, input, hidden1, hidden2, output};
}

std::vector<std::pair<std::size_t, std::size_t>> ModelShape::layer_dims() const {
  if (architecture == Architecture::linear) return {{output, input}};
  return {{hidden1, input}, {hidden2, hidden1}, {output, hidden2}};
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

Vector Parameters::flatten() const {
  Vector flat(idx(count()));
  Eigen::Index pos = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) flat[pos++] = l.weights(r, c);
    }
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) flat[pos++] = l.bias[k];
  }
  return flat;
}

void Parameters::assign(std::span<const double> flat) {
  if (flat.size() != count()) throw ModelError("parameter vector has the wrong length");
  std::size_t pos = 0;
  for (auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = flat[pos++];
    }
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = flat[pos++];
  }
}

double Parameters::weight_sq_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weights.squaredNorm();
  return s;
}

double Parameters::norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weights.squaredNorm() + l.bias.squaredNorm();
  return std::sqrt(s);
}

Model::Model(ModelShape shape) : shape_(shape) {
  if (shape_.input == 0 || shape_.output == 0) throw ModelError("model dimensions must be >= 1");
  if (shape_.architecture == Architecture::mlp && (shape_.hidden1 == 0 || shape_.hidden2 == 0)) {
    throw ModelError("mlp hidden widths must be >= 1");
  }
  for (auto [out, in] : shape_.layer_dims()) {
    params_.layers.push_back({Eigen::MatrixXd::Zero(idx(out), idx(in)), Vector::Zero(idx(out))});
  }
}

Model::Model(ModelShape shape, Parameters params) : Model(shape) {
  const auto dims = shape_.layer_dims();
  if (params.layers.size() != dims.size()) throw ModelError("layer count does not match shape");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& l = params.layers[i];
    if (static_cast<std::size_t>(l.weights.rows()) != dims[i].first ||
        static_cast<std::size_t>(l.weights.cols()) != dims[i].second ||
        static_cast<std::size_t>(l.bias.size()) != dims[i].first) {
      throw ModelError("layer " + std::to_string(i) + " dimensions do not match shape");
    }
  }
  if (!all_finite(params)) throw ModelError("non-finite parameter");
  params_ = std::move(params);
}

Model init_model(const ModelShape& shape, InitScheme scheme, RngStream& rng) {
  Model model(shape);
  if (scheme == InitScheme::zeros) return model;
  auto& layers = model.parameters().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& w = layers[i].weights;
    const bool feeds_relu = i + 1 < layers.size();
    const double scale = std::sqrt((feeds_relu ? 2.0 : 1.0) / static_cast<double>(w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * rng.normal();
    }
  }
  return model;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ModelError("learning rate must be positive");
  }
  if (epochs < 1) throw ModelError("epochs must be >= 1");
  if (batch_size < 1) throw ModelError("batch size must be >= 1");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ModelError("l2 strength must be non-negative");
}

WeightedTarget WeightedTarget::mix(Vector hard, Vector soft, double lambda) {
  return {std::move(hard), std::move(soft), 1.0 - lambda, lambda};
}

WeightedTarget WeightedTarget::hard_only(Vector hard) {
  return {std::move(hard), std::nullopt, 1.0, 0.0};
}

WeightedTarget WeightedTarget::soft_only(Vector soft, double weight) {
  return {std::nullopt, std::move(soft), 0.0, weight};
}

TrainingSet TrainingSet::allocate(std::size_t n, std::size_t input_dim, std::size_t output_dim) {
  TrainingSet set;
  set.features = RowMatrix::Zero(idx(n), idx(input_dim));
  set.hard = RowMatrix::Zero(idx(n), idx(output_dim));
  set.soft = RowMatrix::Zero(idx(n), idx(output_dim));
  set.hard_weight = Vector::Zero(idx(n));
  set.soft_weight = Vector::Zero(idx(n));
  set.ids.assign(n, 0);
  return set;
}

void TrainingSet::set_row(std::size_t row, const Vector& x, const WeightedTarget& t,
                          std::uint64_t id, Task task) {
  const std::string where = "example " + std::to_string(row);
  if (row >= size()) throw ModelError(where + ": row out of range");
  if (static_cast<std::size_t>(x.size()) != input_dim()) {
    throw ModelError(where + ": feature dimension mismatch");
  }
  if (!t.hard && !t.soft) throw ModelError(where + ": no target");
  auto check_target = [&](const Vector& v) {
    if (static_cast<std::size_t>(v.size()) != output_dim()) {
      throw ModelError(where + ": target has the wrong dimension");
    }
    if (task == Task::classification && !SimplexVector::valid(as_span(v))) {
      throw ModelError(where + ": target is not a probability vector");
    }
  };
  for (double w : {t.hard_weight, t.soft_weight}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ModelError(where + ": negative or non-finite weight");
  }
  if (t.hard) {
    check_target(*t.hard);
    hard.row(idx(row)) = t.hard->transpose();
    hard_weight[idx(row)] = t.hard_weight;
  } else if (t.hard_weight != 0.0) {
    throw ModelError(where + ": weight on an absent hard target");
  }
  if (t.soft) {
    check_target(*t.soft);
    soft.row(idx(row)) = t.soft->transpose();
    soft_weight[idx(row)] = t.soft_weight;
  } else if (t.soft_weight != 0.0) {
    throw ModelError(where + ": weight on an absent soft target");
  }
  features.row(idx(row)) = x.transpose();
  ids[row] = id;
}

TrainingSet TrainingSet::from_examples(std::span<const Example> examples, std::size_t output_dim,
                                       Task task) {
  if (examples.empty()) throw ModelError("empty training set");
  TrainingSet set = allocate(examples.size(), static_cast<std::size_t>(examples.front().x.size()),
                             output_dim);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    set.set_row(i, examples[i].x, examples[i].target, examples[i].id, task);
  }
  return set;
}

Vector forward(const Model& model, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim()) {
    throw ModelError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.input_dim()));
  }
  const auto& layers = model.parameters().layers;
  Vector a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    a = layers[i].weights * a + layers[i].bias;
    if (i + 1 < layers.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

RowMatrix forward_batch(const Model& model, const RowMatrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw ModelError("input has dimension " + std::to_string(x.cols()) + ", model expects " +
                     std::to_string(model.input_dim()));
  }
  return forward_keep(model, x).back();
}

double loss(const Model& model, const TrainingSet& data, double student_temperature, double l2,
            std::span<const std::size_t> rows) {
  check_compatible(model, data);
  if (!(student_temperature > 0.0)) throw DomainError("student temperature must be positive");
  std::vector<std::size_t> every;
  const bool whole = rows.empty();
  if (whole) rows = every = all_rows(data.size());
  const RowMatrix out =
      forward_batch(model, whole ? data.features : gather(data.features, rows));
  return data_term(model, out, data, rows, student_temperature, nullptr) +
         l2 * model.parameters().weight_sq_norm();
}

LossAndGradient loss_and_gradient(const Model& model, const TrainingSet& data,
                                  double student_temperature, double l2,
                                  std::span<const std::size_t> rows) {
  check_compatible(model, data);
  if (!(student_temperature > 0.0)) throw DomainError("student temperature must be positive");
  std::vector<std::size_t> every;
  if (rows.empty()) rows = every = all_rows(data.size());

  const auto& layers = model.parameters().layers;
  std::vector<RowMatrix> acts = forward_keep(model, gather(data.features, rows));
  RowMatrix delta;
  double value = data_term(model, acts.back(), data, rows, student_temperature, &delta);
  value += l2 * model.parameters().weight_sq_norm();

  Parameters grad;
  grad.layers.resize(layers.size());
  for (std::size_t i = layers.size(); i-- > 0;) {
    const RowMatrix& input = acts[i];
    grad.layers[i].weights = delta.transpose() * input + 2.0 * l2 * layers[i].weights;
    grad.layers[i].bias = delta.colwise().sum().transpose();
    if (i > 0) {
      RowMatrix back = delta * layers[i].weights;
      // ReLU derivative, taken as 0 at the kink.
      delta = back.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
    }
  }
  return {value, std::move(grad)};
}

Parameters gradient(const Model& model, const TrainingSet& data, double student_temperature,
                    double l2, std::span<const std::size_t> rows) {
  return loss_and_gradient(model, data, student_temperature, l2, rows).gradient;
}

std::vector<std::size_t> epoch_order(std::span<const std::uint64_t> ids, const RngStream& rng,
                                     std::size_t epoch) {
  const std::uint64_t epoch_key =
      mix64(mix64(mix64(rng.seed()) ^ rng.stream_id()) + static_cast<std::uint64_t>(epoch));
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) keyed[i] = {mix64(epoch_key ^ mix64(ids[i])), i};
  std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return ids[a.second] < ids[b.second];
  });
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < keyed.size(); ++i) order[i] = keyed[i].second;
  return order;
}

Model train(const Model& initial, const TrainingSet& data, const TrainConfig& config,
            double student_temperature, std::vector<double>* loss_history) {
  config.validate();
  check_compatible(initial, data);
  Model model = initial;
  const std::size_t n = data.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const RngStream shuffle = config.rng.fork(1);
  if (loss_history) loss_history->clear();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(data.ids, shuffle, epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::size_t> rows{order.data() + start, len};
      auto [value, grad] =
          loss_and_gradient(model, data, student_temperature, config.l2, rows);
      if (!std::isfinite(value)) throw TrainingDiverged(epoch);
      epoch_loss += value * static_cast<double>(len);
      auto& layers = model.parameters().layers;
      for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weights -= config.learning_rate * grad.layers[i].weights;
        layers[i].bias -= config.learning_rate * grad.layers[i].bias;
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss) || !all_finite(model.parameters())) {
      throw TrainingDiverged(epoch);
    }
    if (loss_history) loss_history->push_back(epoch_loss);
  }
  return model;
}

std::size_t predict_class(const Model& model, const Vector& x) {
  if (model.task() != Task::classification) {
    throw ModelError("predict_class called on a regression model");
  }
  return argmax(forward(model, x));
}

double accuracy(const Model& model, const RowMatrix& x, std::span<const std::size_t> labels) {
  if (model.task() != Task::classification) throw ModelError("accuracy of a regression model");
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw ModelError("accuracy: row/label count mismatch");
  }
  if (labels.empty()) throw ModelError("accuracy: empty evaluation set");
  const RowMatrix out = forward_batch(model, x);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const std::span<const double> z{out.row(i).data(), static_cast<std::size_t>(out.cols())};
    if (argmax(z) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean_squared_error(const Model& model, const RowMatrix& x, const RowMatrix& targets) {
  const RowMatrix out = forward_batch(model, x);
  if (out.rows() != targets.rows() || out.cols() != targets.cols()) {
    throw ModelError("mean_squared_error: target shape mismatch");
  }
  if (out.size() == 0) throw ModelError("mean_squared_error: empty evaluation set");
  return (out - targets).squaredNorm() / static_cast<double>(out.size());
}

void save_model(const Model& model, std::ostream& out) {
  const ModelShape& s = model.shape();
  out << kModelMagic << ' ' << kModelVersion << '\n'
      << "architecture " << to_string(s.architecture) << '\n'
      << "task " << to_string(s.task) << '\n'
      << "shape " << s.input << ' ' << s.hidden1 << ' ' << s.hidden2 << ' ' << s.output << '\n';
  out << std::setprecision(17);
  for (const auto& l : model.parameters().layers) {
    out << "layer " << l.weights.rows() << ' ' << l.weights.cols() << '\n';
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        out << (c ? " " : "") << l.weights(r, c);
      }
      out << '\n';
    }
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) out << (k ? " " : "") << l.bias[k];
    out << '\n';
  }
  out << "end\n";
  if (!out) throw ModelError("failed to write model");
}

Model load_model(std::istream& in) {
  auto expect = [&](const std::string& word) {
    std::string got;
    if (!(in >> got) || got != word) {
      throw ModelError("model record: expected '" + word + "', got '" + got + "'");
    }
  };
  expect(kModelMagic);
  int version = 0;
  if (!(in >> version) || version != kModelVersion) {
    throw ModelError("model record: unsupported version " + std::to_string(version));
  }
  std::string arch, task;
  expect("architecture");
  in >> arch;
  expect("task");
  in >> task;
  ModelShape shape;
  shape.architecture = architecture_from_string(arch);
  shape.task = task_from_string(task);
  expect("shape");
  if (!(in >> shape.input >> shape.hidden1 >> shape.hidden2 >> shape.output)) {
    throw ModelError("model record: malformed shape line");
  }
  Model model(shape);
  Parameters params = model.parameters();
  for (auto& l : params.layers) {
    expect("layer");
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows != l.weights.rows() || cols != l.weights.cols()) {
      throw ModelError("model record: layer dimensions disagree with shape");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!(in >> l.weights(r, c))) throw ModelError("model record: truncated weights");
      }
    }
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) {
      if (!(in >> l.bias[k])) throw ModelError("model record: truncated bias");
    }
  }
  expect("end");
  return Model(shape, std::move(params));
}

}  // namespace distillery
