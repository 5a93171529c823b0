#include "distillery/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace distillery {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

bool has(const Triplet& t, Field f) {
  switch (f) {
    case kRegular: return t.x.has_value();
    case kPrivileged: return t.x_star.has_value();
    case kLabel: return t.y.has_value();
  }
  return false;
}

bool has_all(const Triplet& t, FieldMask mask) {
  for (Field f : {kRegular, kPrivileged, kLabel}) {
    if ((mask & f) && !has(t, f)) return false;
  }
  return true;
}

void check_dim(const std::optional<Vector>& v, std::size_t want, const char* name,
               std::uint64_t id) {
  if (v && static_cast<std::size_t>(v->size()) != want) {
    throw DistillationError("example " + std::to_string(id) + ": " + name + " has dimension " +
                            std::to_string(v->size()) + ", header says " + std::to_string(want));
  }
}

}  // namespace

void Dataset::validate() const {
  for (const Triplet& t : examples) {
    if (!t.x && !t.x_star && !t.y) {
      throw DistillationError("example " + std::to_string(t.id) + " has no fields");
    }
    check_dim(t.x, header.d, "x", t.id);
    check_dim(t.x_star, header.d_star, "x*", t.id);
    check_dim(t.y, header.c, "y", t.id);
    if (t.y && header.task == Task::classification && !SimplexVector::valid(as_span(*t.y))) {
      throw DistillationError("example " + std::to_string(t.id) + ": label is not a simplex");
    }
  }
}

std::vector<Triplet> clean_subset(std::span<const Triplet> examples, FieldMask required) {
  std::vector<Triplet> out;
  for (const Triplet& t : examples) {
    if (has_all(t, required)) out.push_back(t);
  }
  return out;
}

Dataset clean_subset(const Dataset& data, FieldMask required) {
  return {data.header, clean_subset(data.examples, required)};
}

RowMatrix stack_features(const Dataset& data, Field field) {
  const std::size_t width = field == kRegular ? data.header.d
                            : field == kPrivileged ? data.header.d_star
                                                   : data.header.c;
  RowMatrix out(idx(data.size()), idx(width));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Triplet& t = data.examples[i];
    const auto& v = field == kRegular ? t.x : field == kPrivileged ? t.x_star : t.y;
    if (!v) throw DistillationError("example " + std::to_string(t.id) + " lacks a required field");
    out.row(idx(i)) = v->transpose();
  }
  return out;
}

std::vector<std::size_t> class_labels(const Dataset& data) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const Triplet& t : data.examples) {
    if (!t.y) throw DistillationError("example " + std::to_string(t.id) + " is unlabeled");
    out.push_back(argmax(*t.y));
  }
  return out;
}

RowMatrix stack_labels(const Dataset& data) { return stack_features(data, kLabel); }

ModelShape ArchitectureSpec::shape(std::size_t input, std::size_t output, Task task) const {
  if (kind == Architecture::linear) return ModelShape::linear(input, output, task);
  return ModelShape::mlp(input, hidden1, hidden2, output, task);
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DistillationError("temperature must be positive");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DistillationError("lambda must lie in [0, 1]");
  if (!(unlabeled_weight >= 0.0) || !std::isfinite(unlabeled_weight)) {
    throw DistillationError("unlabeled weight must be non-negative");
  }
  teacher.validate();
  student.validate();
}

Model train_teacher(const Dataset& data, const DistillConfig& config) {
  config.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (has_all(data.examples[i], kPrivileged | kLabel)) usable.push_back(i);
  }
  if (usable.empty()) {
    throw DistillationError("no example carries both privileged features and a label");
  }
  TrainingSet set = TrainingSet::allocate(usable.size(), data.header.d_star, data.header.c);
  for (std::size_t row = 0; row < usable.size(); ++row) {
    const Triplet& t = data.examples[usable[row]];
    set.set_row(row, *t.x_star, WeightedTarget::hard_only(*t.y), t.id, data.header.task);
  }
  const ModelShape shape =
      config.teacher_arch.shape(data.header.d_star, data.header.c, data.header.task);
  RngStream init_rng = config.teacher.rng.fork(0);
  const Model initial = init_model(shape, config.teacher.init, init_rng);
  return train(initial, set, config.teacher, 1.0);
}

std::vector<SoftLabel> soft_labels(const Model& teacher, const Dataset& data, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.examples[i].x_star) usable.push_back(i);
  }
  std::vector<SoftLabel> out;
  out.reserve(usable.size());
  const std::size_t c = teacher.output_dim();
  constexpr std::size_t kChunk = 2048;
  for (std::size_t start = 0; start < usable.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, usable.size() - start);
    RowMatrix xs(idx(len), idx(teacher.input_dim()));
    for (std::size_t i = 0; i < len; ++i) {
      const Vector& v = *data.examples[usable[start + i]].x_star;
      if (static_cast<std::size_t>(v.size()) != teacher.input_dim()) {
        throw DistillationError("privileged features do not match the teacher input dimension");
      }
      xs.row(idx(i)) = v.transpose();
    }
    const RowMatrix logits = forward_batch(teacher, xs);
    for (std::size_t i = 0; i < len; ++i) {
      const std::span<const double> z{logits.row(idx(i)).data(), c};
      Vector s = teacher.task() == Task::classification ? softmax(z, temperature).values()
                                                        : Vector(logits.row(idx(i)).transpose());
      out.push_back({data.examples[usable[start + i]].id, std::move(s)});
    }
  }
  return out;
}

Model distill_student(const Dataset& data, std::span<const SoftLabel> soft,
                      const DistillConfig& config) {
  config.validate();
  std::unordered_map<std::uint64_t, const SoftLabel*> by_id;
  for (const SoftLabel& s : soft) {
    if (!by_id.emplace(s.id, &s).second) {
      throw DistillationError("duplicate soft label for example " + std::to_string(s.id));
    }
  }

  const double hard_weight = 1.0 - config.lambda;
  std::vector<std::pair<std::size_t, WeightedTarget>> rows;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Triplet& t = data.examples[i];
    const auto it = by_id.find(t.id);
    const SoftLabel* s = it == by_id.end() ? nullptr : it->second;
    if (s) ++matched;
    if (!t.x) continue;
    WeightedTarget target;
    if (t.y && hard_weight > 0.0) {
      target.hard = *t.y;
      target.hard_weight = hard_weight;
    }
    const double soft_weight = t.y ? config.lambda : config.lambda * config.unlabeled_weight;
    if (s && soft_weight > 0.0) {
      target.soft = s->p;
      target.soft_weight = soft_weight;
    }
    if (target.hard || target.soft) rows.emplace_back(i, std::move(target));
  }
  if (matched != by_id.size()) {
    throw DistillationError("soft labels reference examples that are not in the dataset");
  }
  if (rows.empty()) throw DistillationError("no usable examples for the student");

  TrainingSet set = TrainingSet::allocate(rows.size(), data.header.d, data.header.c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Triplet& t = data.examples[rows[r].first];
    set.set_row(r, *t.x, rows[r].second, t.id, data.header.task);
  }
  const ModelShape shape =
      config.student_arch.shape(data.header.d, data.header.c, data.header.task);
  RngStream init_rng = config.student.rng.fork(0);
  const Model initial = init_model(shape, config.student.init, init_rng);
  const double t_student =
      data.header.task == Task::classification ? config.student_temperature() : 1.0;
  return train(initial, set, config.student, t_student);
}

Model train_regular(const Dataset& data, const DistillConfig& config) {
  DistillConfig plain = config;
  plain.lambda = 0.0;
  return distill_student(data, {}, plain);
}

std::vector<SoftLabel> universum_soft_labels(const Model& teacher, const Dataset& data,
                                             double temperature,
                                             std::span<const std::size_t> classes) {
  if (teacher.task() != Task::classification) {
    throw DistillationError("universum soft labels need a classification teacher");
  }
  if (classes.empty()) throw DistillationError("empty set of classes of interest");
  for (std::size_t k : classes) {
    if (k >= teacher.output_dim()) {
      throw DistillationError("class of interest " + std::to_string(k) + " out of range");
    }
  }
  std::vector<SoftLabel> full = soft_labels(teacher, data, temperature);
  std::vector<SoftLabel> out;
  out.reserve(full.size());
  for (const SoftLabel& s : full) {
    Vector r(idx(classes.size()));
    double mass = 0.0;
    for (std::size_t j = 0; j < classes.size(); ++j) {
      r[idx(j)] = s.p[idx(classes[j])];
      mass += r[idx(j)];
    }
    if (!(mass >= 1e-300)) {
      throw DistillationError("example " + std::to_string(s.id) +
                              ": no probability mass on the classes of interest");
    }
    out.push_back({s.id, r / mass});
  }
  return out;
}

Dataset multitask_views(const MultitaskData& data, std::size_t target_task) {
  const std::size_t tasks = data.tasks();
  if (target_task >= tasks) {
    throw DistillationError("target task " + std::to_string(target_task) + " out of range (" +
                            std::to_string(tasks) + " tasks)");
  }
  if (data.inputs.rows() != data.outputs.rows()) {
    throw DistillationError("multitask inputs and outputs disagree on the row count");
  }
  Dataset out;
  out.header = {static_cast<std::size_t>(data.inputs.cols()), tasks - 1, 1, Task::regression};
  out.examples.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Triplet t;
    t.id = i;
    t.x = data.inputs.row(idx(i)).transpose();
    Vector other(idx(tasks - 1));
    for (std::size_t j = 0, k = 0; j < tasks; ++j) {
      if (j != target_task) other[idx(k++)] = data.outputs(idx(i), idx(j));
    }
    t.x_star = std::move(other);
    t.y = Vector::Constant(1, data.outputs(idx(i), idx(target_task)));
    out.examples.push_back(std::move(t));
  }
  return out;
}

}  // namespace distillery
