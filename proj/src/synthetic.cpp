#include "distillery/synthetic.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace distillery {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

Vector one_hot_label(bool positive) {
  return SimplexVector::one_hot(2, positive ? 1 : 0).values();
}

double dot_on(const Vector& alpha, const Vector& x, const std::vector<std::size_t>& subset) {
  double s = 0.0;
  for (std::size_t j : subset) s += alpha[idx(j)] * x[idx(j)];
  return s;
}

void require_experiment(const SyntheticSpec& spec, int which) {
  spec.validate();
  if (spec.experiment != which) {
    throw DistillationError("generator for experiment " + std::to_string(which) +
                            " called with experiment " + std::to_string(spec.experiment));
  }
}

void require_problem(const SyntheticSpec& spec, const SyntheticProblem& problem) {
  if (static_cast<std::size_t>(problem.alpha.size()) != spec.d) {
    throw DistillationError("hyperplane dimension does not match d");
  }
  if (spec.experiment == 3 && problem.relevant.size() != spec.relevant) {
    throw DistillationError("experiment 3 needs the shared relevant index set");
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (experiment < 1 || experiment > 4) {
    throw DistillationError("synthetic experiment must be 1..4, got " + std::to_string(experiment));
  }
  if (relevant < 1 || relevant > d) throw DistillationError("need 1 <= |J| <= d");
  if (n_train < 1 || n_test < 1) throw DistillationError("sample sizes must be >= 1");
}

SyntheticProblem draw_problem(const SyntheticSpec& spec, RngStream& rng) {
  spec.validate();
  SyntheticProblem p;
  p.alpha = sample_standard_normal_vector(rng, spec.d);
  if (spec.experiment == 3) p.relevant = sample_without_replacement(rng, spec.d, spec.relevant);
  return p;
}

SyntheticData gen_exp1(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng) {
  require_experiment(spec, 1);
  require_problem(spec, problem);
  SyntheticData out;
  out.dataset.header = {spec.d, 1, 2, Task::classification};
  out.dataset.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Triplet t;
    t.id = i;
    t.x = sample_standard_normal_vector(rng, spec.d);
    const double distance = problem.alpha.dot(*t.x);
    const double noise = rng.normal();
    t.x_star = Vector::Constant(1, distance);
    t.y = one_hot_label(distance + (spec.label_noise ? noise : 0.0) > 0.0);
    out.dataset.examples.push_back(std::move(t));
  }
  return out;
}

SyntheticData gen_exp2(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng) {
  require_experiment(spec, 2);
  require_problem(spec, problem);
  SyntheticData out;
  out.dataset.header = {spec.d, spec.d, 2, Task::classification};
  out.dataset.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Triplet t;
    t.id = i;
    Vector clean = sample_standard_normal_vector(rng, spec.d);
    const Vector noise = sample_standard_normal_vector(rng, spec.d);
    t.x = clean + noise;
    t.y = one_hot_label(problem.alpha.dot(clean) > 0.0);
    t.x_star = std::move(clean);
    out.dataset.examples.push_back(std::move(t));
  }
  return out;
}

SyntheticData gen_exp3(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng) {
  require_experiment(spec, 3);
  require_problem(spec, problem);
  const auto& subset = problem.relevant;
  SyntheticData out;
  out.dataset.header = {spec.d, subset.size(), 2, Task::classification};
  out.dataset.examples.reserve(n);
  out.subsets.assign(n, subset);
  for (std::size_t i = 0; i < n; ++i) {
    Triplet t;
    t.id = i;
    t.x = sample_standard_normal_vector(rng, spec.d);
    Vector xs(idx(subset.size()));
    for (std::size_t k = 0; k < subset.size(); ++k) xs[idx(k)] = (*t.x)[idx(subset[k])];
    t.y = one_hot_label(dot_on(problem.alpha, *t.x, subset) > 0.0);
    t.x_star = std::move(xs);
    out.dataset.examples.push_back(std::move(t));
  }
  return out;
}

SyntheticData gen_exp4(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng) {
  require_experiment(spec, 4);
  require_problem(spec, problem);
  SyntheticData out;
  out.dataset.header = {spec.d, spec.d, 2, Task::classification};
  out.dataset.examples.reserve(n);
  out.subsets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Triplet t;
    t.id = i;
    t.x = sample_standard_normal_vector(rng, spec.d);
    auto subset = sample_without_replacement(rng, spec.d, spec.relevant);
    Vector xs = Vector::Zero(idx(spec.d));
    for (std::size_t j : subset) xs[idx(j)] = (*t.x)[idx(j)];
    t.y = one_hot_label(dot_on(problem.alpha, *t.x, subset) > 0.0);
    t.x_star = std::move(xs);
    out.dataset.examples.push_back(std::move(t));
    out.subsets.push_back(std::move(subset));
  }
  return out;
}

SyntheticData generate(const SyntheticSpec& spec, const SyntheticProblem& problem, std::size_t n,
                       RngStream& rng) {
  switch (spec.experiment) {
    case 1: return gen_exp1(spec, problem, n, rng);
    case 2: return gen_exp2(spec, problem, n, rng);
    case 3: return gen_exp3(spec, problem, n, rng);
    case 4: return gen_exp4(spec, problem, n, rng);
  }
  spec.validate();
  return {};
}

std::size_t replay_label(const SyntheticSpec& spec, const SyntheticProblem& problem,
                         const Triplet& t, const std::vector<std::size_t>& subset) {
  switch (spec.experiment) {
    case 1: return problem.alpha.dot(t.x.value()) > 0.0 ? 1 : 0;
    case 2: return problem.alpha.dot(t.x_star.value()) > 0.0 ? 1 : 0;
    case 3:
    case 4: return dot_on(problem.alpha, t.x.value(), subset) > 0.0 ? 1 : 0;
  }
  throw DistillationError("unknown synthetic experiment");
}

namespace {

void write_field(std::ostream& out, const std::optional<Vector>& v) {
  if (!v) {
    out << '_';
    return;
  }
  for (Eigen::Index k = 0; k < v->size(); ++k) out << (k ? "," : "") << (*v)[k];
}

std::optional<Vector> parse_field(const std::string& text, std::size_t want, std::size_t line) {
  if (text == "_") return std::nullopt;
  std::vector<double> values;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size()) {
      throw DistillationError("dataset line " + std::to_string(line) + ": bad number '" + cell +
                              "'");
    }
    values.push_back(v);
  }
  if (values.size() != want) {
    throw DistillationError("dataset line " + std::to_string(line) + ": expected " +
                            std::to_string(want) + " values, got " +
                            std::to_string(values.size()));
  }
  return Vector(Eigen::Map<const Vector>(values.data(), idx(values.size())));
}

}  // namespace

void write_dataset(const Dataset& data, std::ostream& out) {
  const auto& h = data.header;
  out << h.d << ',' << h.d_star << ',' << h.c << ',' << data.size() << ',' << to_string(h.task)
      << '\n';
  out << std::setprecision(17);
  for (const Triplet& t : data.examples) {
    out << t.id << ';';
    write_field(out, t.x);
    out << ';';
    write_field(out, t.x_star);
    out << ';';
    write_field(out, t.y);
    out << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DistillationError("dataset: missing header line");
  Dataset data;
  std::size_t n = 0;
  {
    std::stringstream ss(line);
    std::string task;
    char comma = 0;
    if (!(ss >> data.header.d >> comma >> data.header.d_star >> comma >> data.header.c >> comma >>
          n >> comma) ||
        !std::getline(ss, task)) {
      throw DistillationError("dataset: malformed header '" + line + "'");
    }
    data.header.task = task_from_string(task);
  }
  data.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) {
      throw DistillationError("dataset: expected " + std::to_string(n) + " records, got " +
                              std::to_string(i));
    }
    std::stringstream ss(line);
    std::string id, x, xs, y;
    if (!std::getline(ss, id, ';') || !std::getline(ss, x, ';') || !std::getline(ss, xs, ';') ||
        !std::getline(ss, y)) {
      throw DistillationError("dataset line " + std::to_string(i + 2) + ": expected 4 fields");
    }
    Triplet t;
    t.id = std::stoull(id);
    t.x = parse_field(x, data.header.d, i + 2);
    t.x_star = parse_field(xs, data.header.d_star, i + 2);
    t.y = parse_field(y, data.header.c, i + 2);
    data.examples.push_back(std::move(t));
  }
  data.validate();
  return data;
}

}  // namespace distillery
