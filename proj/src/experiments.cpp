#include "distillery/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

#include "distillery/datasets.hpp"

namespace distillery {

using nlohmann::json;

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

/// Runs fn(0..n-1) on up to `threads` workers. fn must not throw.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct CellKey {
  std::string arm;
  std::string task;
  std::optional<double> temperature;
  std::optional<double> lambda;
  std::size_t n_train = 0;
};

/// Per-repetition outcome slots for every cell of a report. Each repetition
/// writes only its own slots, so workers need no locking.
class CellTable {
 public:
  explicit CellTable(std::size_t reps) : reps_(reps) {}

  std::size_t add(CellKey key) {
    keys_.push_back(std::move(key));
    values_.emplace_back(reps_);
    errors_.emplace_back(reps_);
    return keys_.size() - 1;
  }

  void set(std::size_t cell, std::size_t rep, double v) { values_[cell][rep] = v; }
  void fail(std::size_t cell, std::size_t rep, const std::string& why) {
    values_[cell][rep].reset();
    errors_[cell][rep] = "rep " + std::to_string(rep) + ": " + why;
  }

  void append_to(ExperimentReport& report, const std::string& metric) const {
    for (std::size_t c = 0; c < keys_.size(); ++c) {
      std::vector<std::string> errs;
      for (const auto& e : errors_[c]) {
        if (!e.empty()) errs.push_back(e);
      }
      const CellKey& k = keys_[c];
      report.cells.push_back(make_cell(k.arm, k.task, k.temperature, k.lambda, k.n_train, metric,
                                       values_[c], std::move(errs)));
    }
  }

 private:
  std::size_t reps_;
  std::vector<CellKey> keys_;
  std::vector<std::vector<std::optional<double>>> values_;
  std::vector<std::vector<std::string>> errors_;
};

/// Cell indices of the distilled arm, [temperature][lambda].
using GridIds = std::vector<std::vector<std::size_t>>;

GridIds add_grid(CellTable& table, const std::string& arm, const std::string& task,
                 const std::vector<double>& temperatures, const std::vector<double>& lambdas,
                 std::size_t n_train) {
  GridIds ids(temperatures.size());
  for (std::size_t t = 0; t < temperatures.size(); ++t) {
    for (double l : lambdas) ids[t].push_back(table.add({arm, task, temperatures[t], l, n_train}));
  }
  return ids;
}

void fail_grid(CellTable& table, const GridIds& ids, std::size_t rep, const std::string& why) {
  for (const auto& row : ids) {
    for (std::size_t c : row) table.fail(c, rep, why);
  }
}

void check_grid(const std::vector<double>& temperatures, const std::vector<double>& lambdas) {
  if (temperatures.empty() || lambdas.empty()) {
    throw DistillationError("temperature and lambda grids must be non-empty");
  }
  for (double t : temperatures) {
    if (!(t > 0.0) || !std::isfinite(t)) throw DistillationError("temperatures must be positive");
  }
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw DistillationError("lambda values must lie in [0, 1]");
  }
}

void check_reps(std::size_t reps) {
  if (reps == 0) throw DistillationError("at least one repetition is required");
}

DistillConfig base_config(const Hyper& hyper, Architecture arch, const RngStream& rep_rng) {
  DistillConfig cfg;
  cfg.teacher_arch.kind = arch;
  cfg.student_arch.kind = arch;
  cfg.teacher = hyper.train_config(rep_rng.fork(1));
  cfg.student = hyper.train_config(rep_rng.fork(2));
  return cfg;
}

Vector one_hot(std::size_t k, std::size_t c) {
  Vector v = Vector::Zero(idx(c));
  v[idx(k)] = 1.0;
  return v;
}

ExperimentReport new_report(std::string experiment, std::uint64_t seed, json config) {
  ExperimentReport r;
  r.experiment = std::move(experiment);
  r.master_seed = seed;
  r.version = artifact_version();
  r.config = std::move(config);
  return r;
}

// ---- config (de)serialization ----

json hyper_json(const Hyper& h) {
  return {{"learning_rate", h.learning_rate},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"l2", h.l2}};
}

Hyper hyper_from(const json& j) {
  Hyper h;
  h.learning_rate = j.at("learning_rate").get<double>();
  h.epochs = j.at("epochs").get<std::size_t>();
  h.batch_size = j.at("batch_size").get<std::size_t>();
  h.l2 = j.at("l2").get<double>();
  return h;
}

template <typename F>
auto parse_config(const json& j, const char* kind, F&& body) {
  try {
    if (j.at("kind").get<std::string>() != kind) {
      throw ReportError(std::string("config is not a ") + kind + " run");
    }
    return body();
  } catch (const json::exception& e) {
    throw ReportError(std::string("malformed ") + kind + " config: " + e.what());
  }
}

const json kSharedDecisions = {
    {"loss_regularizer", "l2 * sum of squared weights, biases excluded"},
    {"student_temperature", "cross-entropy of the student evaluated at T = 1"},
    {"optimizer", "mini-batch gradient descent, constant learning rate"},
    {"shuffle", "per-epoch order by hash of (stream, epoch, example id)"},
    {"std", "sample standard deviation over repetitions"},
};

json with_decisions(json extra) {
  json d = kSharedDecisions;
  for (auto& [k, v] : extra.items()) d[k] = v;
  return d;
}

}  // namespace

const char* artifact_version() { return DISTILLERY_VERSION; }

TrainConfig Hyper::train_config(RngStream rng) const {
  TrainConfig c;
  c.learning_rate = learning_rate;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.l2 = l2;
  c.init = InitScheme::scaled_normal;
  c.rng = rng;
  return c;
}

json to_json(const SyntheticRun& run) {
  return {{"kind", "synthetic"},
          {"experiment", run.spec.experiment},
          {"d", run.spec.d},
          {"n_train", run.spec.n_train},
          {"n_test", run.spec.n_test},
          {"relevant", run.spec.relevant},
          {"label_noise", run.spec.label_noise},
          {"reps", run.reps},
          {"seed", run.seed},
          {"temperatures", run.temperatures},
          {"lambdas", run.lambdas},
          {"hyper", hyper_json(run.hyper)},
          {"threads", run.threads},
          {"architecture", "linear (softmax regression) for teacher and student"},
          {"decisions",
           with_decisions({{"alpha", "redrawn for every repetition"},
                           {"exp4_privileged_encoding",
                            "d-vector equal to x on the per-example subset, zero elsewhere"}})}};
}

SyntheticRun synthetic_run_from_json(const json& j) {
  return parse_config(j, "synthetic", [&] {
    SyntheticRun r;
    r.spec.experiment = j.at("experiment").get<int>();
    r.spec.d = j.at("d").get<std::size_t>();
    r.spec.n_train = j.at("n_train").get<std::size_t>();
    r.spec.n_test = j.at("n_test").get<std::size_t>();
    r.spec.relevant = j.at("relevant").get<std::size_t>();
    r.spec.label_noise = j.at("label_noise").get<bool>();
    r.reps = j.at("reps").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.temperatures = j.at("temperatures").get<std::vector<double>>();
    r.lambdas = j.at("lambdas").get<std::vector<double>>();
    r.hyper = hyper_from(j.at("hyper"));
    r.threads = j.at("threads").get<std::size_t>();
    return r;
  });
}

json to_json(const MnistRun& run) {
  return {{"kind", "mnist"},
          {"data_dir", run.data_dir.string()},
          {"n_train", run.n_train},
          {"temperatures", run.temperatures},
          {"lambdas", run.lambdas},
          {"reps", run.reps},
          {"seed", run.seed},
          {"hyper", hyper_json(run.hyper)},
          {"threads", run.threads},
          {"architecture", "two hidden ReLU layers of 20 units for teacher and student"},
          {"decisions",
           with_decisions({{"downscale", "4x4 block mean of [0,1]-scaled pixels (28x28 -> 7x7)"},
                           {"training_subset", "drawn without replacement per repetition"},
                           {"test_set", "full 10000-image test set"}})}};
}

MnistRun mnist_run_from_json(const json& j) {
  return parse_config(j, "mnist", [&] {
    MnistRun r;
    r.data_dir = j.at("data_dir").get<std::string>();
    r.n_train = j.at("n_train").get<std::vector<std::size_t>>();
    r.temperatures = j.at("temperatures").get<std::vector<double>>();
    r.lambdas = j.at("lambdas").get<std::vector<double>>();
    r.reps = j.at("reps").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.hyper = hyper_from(j.at("hyper"));
    r.threads = j.at("threads").get<std::size_t>();
    return r;
  });
}

json to_json(const CifarRun& run) {
  return {{"kind", "cifar"},
          {"data_dir", run.data_dir.string()},
          {"n_labeled", run.n_labeled},
          {"max_unlabeled", run.max_unlabeled},
          {"max_test", run.max_test},
          {"sigma", run.sigma},
          {"temperatures", run.temperatures},
          {"lambdas", run.lambdas},
          {"unlabeled_weight", run.unlabeled_weight},
          {"reps", run.reps},
          {"seed", run.seed},
          {"hyper", hyper_json(run.hyper)},
          {"threads", run.threads},
          {"architecture", "two hidden ReLU layers of 20 units for teacher and student"},
          {"decisions",
           with_decisions({{"pixels", "scaled to [0,1], channel-planar"},
                           {"noise", "i.i.d. Gaussian with the given sigma, no clipping"},
                           {"unlabeled_pool", "training images not in the labeled subset"}})}};
}

CifarRun cifar_run_from_json(const json& j) {
  return parse_config(j, "cifar", [&] {
    CifarRun r;
    r.data_dir = j.at("data_dir").get<std::string>();
    r.n_labeled = j.at("n_labeled").get<std::size_t>();
    r.max_unlabeled = j.at("max_unlabeled").get<std::size_t>();
    r.max_test = j.at("max_test").get<std::size_t>();
    r.sigma = j.at("sigma").get<double>();
    r.temperatures = j.at("temperatures").get<std::vector<double>>();
    r.lambdas = j.at("lambdas").get<std::vector<double>>();
    r.unlabeled_weight = j.at("unlabeled_weight").get<double>();
    r.reps = j.at("reps").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.hyper = hyper_from(j.at("hyper"));
    r.threads = j.at("threads").get<std::size_t>();
    return r;
  });
}

json to_json(const MultitaskRun& run) {
  return {{"kind", "multitask"},
          {"train_path", run.train_path.string()},
          {"test_path", run.test_path.string()},
          {"delimiter", std::string(1, run.delimiter)},
          {"n_train", run.n_train},
          {"temperatures", run.temperatures},
          {"lambdas", run.lambdas},
          {"reps", run.reps},
          {"seed", run.seed},
          {"hyper", hyper_json(run.hyper)},
          {"threads", run.threads},
          {"architecture", "two hidden ReLU layers of 20 units for teacher and student"},
          {"decisions",
           with_decisions({{"standardization",
                            "inputs and outputs standardized per column on the training rows"},
                           {"temperature", "no effect on regression soft labels"},
                           {"columns", "21 inputs followed by 7 torques"}})}};
}

MultitaskRun multitask_run_from_json(const json& j) {
  return parse_config(j, "multitask", [&] {
    MultitaskRun r;
    r.train_path = j.at("train_path").get<std::string>();
    r.test_path = j.at("test_path").get<std::string>();
    const auto delim = j.at("delimiter").get<std::string>();
    if (delim.size() != 1) throw ReportError("delimiter must be a single character");
    r.delimiter = delim[0];
    r.n_train = j.at("n_train").get<std::size_t>();
    r.temperatures = j.at("temperatures").get<std::vector<double>>();
    r.lambdas = j.at("lambdas").get<std::vector<double>>();
    r.reps = j.at("reps").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.hyper = hyper_from(j.at("hyper"));
    r.threads = j.at("threads").get<std::size_t>();
    return r;
  });
}

// ---- synthetic ----

ExperimentReport run_synthetic(const SyntheticRun& run) {
  run.spec.validate();
  check_reps(run.reps);
  check_grid(run.temperatures, run.lambdas);

  CellTable table(run.reps);
  const std::size_t n = run.spec.n_train;
  const std::size_t privileged = table.add({"privileged", "", {}, {}, n});
  const std::size_t regular = table.add({"regular", "", {}, {}, n});
  const GridIds distilled = add_grid(table, "distilled", "", run.temperatures, run.lambdas, n);

  const RngStream root(run.seed, 0);
  parallel_for(run.reps, run.threads, [&](std::size_t rep) {
    const RngStream rep_rng = root.fork(rep);
    SyntheticData train, test;
    try {
      RngStream data_rng = rep_rng.fork(0);
      const SyntheticProblem problem = draw_problem(run.spec, data_rng);
      train = generate(run.spec, problem, run.spec.n_train, data_rng);
      test = generate(run.spec, problem, run.spec.n_test, data_rng);
    } catch (const std::exception& e) {
      table.fail(privileged, rep, e.what());
      table.fail(regular, rep, e.what());
      fail_grid(table, distilled, rep, e.what());
      return;
    }
    const RowMatrix x_test = stack_features(test.dataset, kRegular);
    const std::vector<std::size_t> y_test = class_labels(test.dataset);
    DistillConfig cfg = base_config(run.hyper, Architecture::linear, rep_rng);

    try {
      table.set(regular, rep, accuracy(train_regular(train.dataset, cfg), x_test, y_test));
    } catch (const std::exception& e) {
      table.fail(regular, rep, e.what());
    }

    std::optional<Model> teacher;
    try {
      teacher = train_teacher(train.dataset, cfg);
      table.set(privileged, rep,
                accuracy(*teacher, stack_features(test.dataset, kPrivileged), y_test));
    } catch (const std::exception& e) {
      table.fail(privileged, rep, e.what());
      fail_grid(table, distilled, rep, std::string("teacher failed: ") + e.what());
      return;
    }
    for (std::size_t t = 0; t < run.temperatures.size(); ++t) {
      const auto soft = soft_labels(*teacher, train.dataset, run.temperatures[t]);
      for (std::size_t l = 0; l < run.lambdas.size(); ++l) {
        cfg.temperature = run.temperatures[t];
        cfg.lambda = run.lambdas[l];
        try {
          table.set(distilled[t][l], rep,
                    accuracy(distill_student(train.dataset, soft, cfg), x_test, y_test));
        } catch (const std::exception& e) {
          table.fail(distilled[t][l], rep, e.what());
        }
      }
    }
  });

  ExperimentReport report =
      new_report("synthetic-" + std::to_string(run.spec.experiment), run.seed, to_json(run));
  table.append_to(report, "accuracy");
  return report;
}

// ---- MNIST ----

ExperimentReport run_mnist(const MnistRun& run) {
  check_reps(run.reps);
  check_grid(run.temperatures, run.lambdas);
  const ImageSet train_set = load_idx(run.data_dir / "train-images-idx3-ubyte",
                                      run.data_dir / "train-labels-idx1-ubyte");
  const ImageSet test_set = load_idx(run.data_dir / "t10k-images-idx3-ubyte",
                                     run.data_dir / "t10k-labels-idx1-ubyte");
  for (const ImageSet* s : {&train_set, &test_set}) {
    if (s->height != 28 || s->width != 28) {
      throw ParseError(ParseError::Kind::bad_size, "MNIST images must be 28x28");
    }
  }
  for (std::size_t n : run.n_train) {
    if (n == 0 || n > train_set.n) {
      throw DistillationError("n_train " + std::to_string(n) + " outside [1, " +
                              std::to_string(train_set.n) + "]");
    }
  }

  RowMatrix test_full(idx(test_set.n), 784);
  RowMatrix test_small(idx(test_set.n), 49);
  std::vector<std::size_t> test_labels(test_set.n);
  for (std::size_t i = 0; i < test_set.n; ++i) {
    test_full.row(idx(i)) = image_features(test_set, i).transpose();
    test_small.row(idx(i)) = downscale(test_set.image(i)).transpose();
    test_labels[i] = test_set.labels[i];
  }

  CellTable table(run.reps);
  struct Ids {
    std::size_t privileged, regular;
    GridIds distilled;
  };
  std::vector<Ids> ids;
  for (std::size_t n : run.n_train) {
    const std::size_t p = table.add({"privileged", "", {}, {}, n});
    const std::size_t r = table.add({"regular", "", {}, {}, n});
    ids.push_back({p, r, add_grid(table, "distilled", "", run.temperatures, run.lambdas, n)});
  }

  const RngStream root(run.seed, 0);
  // Repetition slots are shared across n_train values, so run one size at a
  // time; each size writes disjoint cells.
  for (std::size_t k = 0; k < run.n_train.size(); ++k) {
    const std::size_t n = run.n_train[k];
    const Ids& id = ids[k];
    parallel_for(run.reps, run.threads, [&](std::size_t rep) {
      const RngStream rep_rng = root.fork(n).fork(rep);
      RngStream pick = rep_rng.fork(0);
      const auto chosen = sample_without_replacement(pick, train_set.n, n);
      Dataset train;
      train.header = {49, 784, 10, Task::classification};
      for (std::size_t i : chosen) {
        Triplet t;
        t.id = i;
        t.x = downscale(train_set.image(i));
        t.x_star = image_features(train_set, i);
        t.y = one_hot(train_set.labels[i], 10);
        train.examples.push_back(std::move(t));
      }
      DistillConfig cfg = base_config(run.hyper, Architecture::mlp, rep_rng);
      try {
        table.set(id.regular, rep, accuracy(train_regular(train, cfg), test_small, test_labels));
      } catch (const std::exception& e) {
        table.fail(id.regular, rep, e.what());
      }
      std::optional<Model> teacher;
      try {
        teacher = train_teacher(train, cfg);
        table.set(id.privileged, rep, accuracy(*teacher, test_full, test_labels));
      } catch (const std::exception& e) {
        table.fail(id.privileged, rep, e.what());
        fail_grid(table, id.distilled, rep, std::string("teacher failed: ") + e.what());
        return;
      }
      for (std::size_t t = 0; t < run.temperatures.size(); ++t) {
        const auto soft = soft_labels(*teacher, train, run.temperatures[t]);
        for (std::size_t l = 0; l < run.lambdas.size(); ++l) {
          cfg.temperature = run.temperatures[t];
          cfg.lambda = run.lambdas[l];
          try {
            table.set(id.distilled[t][l], rep,
                      accuracy(distill_student(train, soft, cfg), test_small, test_labels));
          } catch (const std::exception& e) {
            table.fail(id.distilled[t][l], rep, e.what());
          }
        }
      }
    });
  }

  ExperimentReport report = new_report("mnist", run.seed, to_json(run));
  table.append_to(report, "accuracy");
  return report;
}

// ---- CIFAR-10 semi-supervised ----

namespace {

/// Soft labels of the clean images `which`, computed in chunks so the full
/// privileged feature matrix never needs to exist at once.
std::vector<SoftLabel> image_soft_labels(const Model& teacher, const ImageSet& images,
                                         const std::vector<std::size_t>& which, double temperature) {
  std::vector<SoftLabel> out;
  out.reserve(which.size());
  constexpr std::size_t kChunk = 2048;
  for (std::size_t start = 0; start < which.size(); start += kChunk) {
    Dataset chunk;
    chunk.header = {images.image_size(), images.image_size(), images.classes,
                    Task::classification};
    for (std::size_t i = start; i < std::min(which.size(), start + kChunk); ++i) {
      Triplet t;
      t.id = which[i];
      t.x_star = image_features(images, which[i]);
      chunk.examples.push_back(std::move(t));
    }
    for (auto& s : soft_labels(teacher, chunk, temperature)) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

ExperimentReport run_cifar_semisup(const CifarRun& run) {
  check_reps(run.reps);
  check_grid(run.temperatures, run.lambdas);
  if (!(run.sigma >= 0.0) || !std::isfinite(run.sigma)) {
    throw DistillationError("sigma must be non-negative");
  }
  if (!(run.unlabeled_weight >= 0.0)) {
    throw DistillationError("unlabeled weight must be non-negative");
  }
  std::vector<std::filesystem::path> batches;
  for (int b = 1; b <= 5; ++b) {
    batches.push_back(run.data_dir / ("data_batch_" + std::to_string(b) + ".bin"));
  }
  const std::filesystem::path test_path[] = {run.data_dir / "test_batch.bin"};
  const ImageSet train_set = load_cifar(batches);
  const ImageSet test_set = load_cifar(test_path);
  if (run.n_labeled == 0 || run.n_labeled > train_set.n) {
    throw DistillationError("n_labeled outside the training set");
  }
  const std::size_t n_test =
      run.max_test == 0 ? test_set.n : std::min(run.max_test, test_set.n);
  const std::size_t dim = train_set.image_size();

  RowMatrix test_clean(idx(n_test), idx(dim));
  std::vector<std::size_t> test_labels(n_test);
  for (std::size_t i = 0; i < n_test; ++i) {
    test_clean.row(idx(i)) = image_features(test_set, i).transpose();
    test_labels[i] = test_set.labels[i];
  }

  CellTable table(run.reps);
  const std::size_t n = run.n_labeled;
  const std::size_t privileged = table.add({"privileged", "", {}, {}, n});
  const std::size_t supervised = table.add({"supervised", "", {}, {}, n});
  const GridIds labeled_only =
      add_grid(table, "distilled_labeled", "", run.temperatures, run.lambdas, n);
  const GridIds semisup =
      add_grid(table, "distilled_semisup", "", run.temperatures, run.lambdas, n);

  const RngStream root(run.seed, 0);
  parallel_for(run.reps, run.threads, [&](std::size_t rep) {
    const RngStream rep_rng = root.fork(rep);
    RngStream pick = rep_rng.fork(0);
    std::vector<std::size_t> labeled = sample_without_replacement(pick, train_set.n, n);
    std::sort(labeled.begin(), labeled.end());
    std::vector<std::size_t> pool;
    pool.reserve(train_set.n - n);
    for (std::size_t i = 0, k = 0; i < train_set.n; ++i) {
      if (k < labeled.size() && labeled[k] == i) {
        ++k;
      } else {
        pool.push_back(i);
      }
    }
    if (run.max_unlabeled != 0 && run.max_unlabeled < pool.size()) {
      RngStream sub = rep_rng.fork(1);
      auto keep = sample_without_replacement(sub, pool.size(), run.max_unlabeled);
      std::sort(keep.begin(), keep.end());
      std::vector<std::size_t> kept;
      kept.reserve(keep.size());
      for (std::size_t k : keep) kept.push_back(pool[k]);
      pool = std::move(kept);
    }
    const RngStream train_noise = rep_rng.fork(2);
    const RngStream test_noise = rep_rng.fork(3);
    auto noisy = [&](const ImageSet& set, std::size_t i, const RngStream& s) {
      RngStream r = s.fork(i);
      return pollute(image_features(set, i), run.sigma, r);
    };

    // Students: labeled images first, then the unlabeled pool; x only.
    Dataset students;
    students.header = {dim, dim, train_set.classes, Task::classification};
    students.examples.reserve(labeled.size() + pool.size());
    for (std::size_t i : labeled) {
      Triplet t;
      t.id = i;
      t.x = noisy(train_set, i, train_noise);
      t.y = one_hot(train_set.labels[i], train_set.classes);
      students.examples.push_back(std::move(t));
    }
    Dataset labeled_set{students.header, students.examples};
    for (std::size_t i : pool) {
      Triplet t;
      t.id = i;
      t.x = noisy(train_set, i, train_noise);
      students.examples.push_back(std::move(t));
    }
    RowMatrix test_noisy(idx(n_test), idx(dim));
    for (std::size_t i = 0; i < n_test; ++i) {
      test_noisy.row(idx(i)) = noisy(test_set, i, test_noise).transpose();
    }

    DistillConfig cfg = base_config(run.hyper, Architecture::mlp, rep_rng);
    cfg.unlabeled_weight = run.unlabeled_weight;
    try {
      table.set(supervised, rep,
                accuracy(train_regular(labeled_set, cfg), test_noisy, test_labels));
    } catch (const std::exception& e) {
      table.fail(supervised, rep, e.what());
    }

    std::optional<Model> teacher;
    try {
      Dataset teacher_set;
      teacher_set.header = students.header;
      for (std::size_t i : labeled) {
        Triplet t;
        t.id = i;
        t.x_star = image_features(train_set, i);
        t.y = one_hot(train_set.labels[i], train_set.classes);
        teacher_set.examples.push_back(std::move(t));
      }
      teacher = train_teacher(teacher_set, cfg);
      table.set(privileged, rep, accuracy(*teacher, test_clean, test_labels));
    } catch (const std::exception& e) {
      const std::string why = std::string("teacher failed: ") + e.what();
      table.fail(privileged, rep, e.what());
      fail_grid(table, labeled_only, rep, why);
      fail_grid(table, semisup, rep, why);
      return;
    }

    for (std::size_t t = 0; t < run.temperatures.size(); ++t) {
      const double temp = run.temperatures[t];
      std::vector<SoftLabel> soft = image_soft_labels(*teacher, train_set, labeled, temp);
      const std::size_t n_lab_soft = soft.size();
      for (auto& s : image_soft_labels(*teacher, train_set, pool, temp)) {
        soft.push_back(std::move(s));
      }
      const std::span<const SoftLabel> lab_soft{soft.data(), n_lab_soft};
      for (std::size_t l = 0; l < run.lambdas.size(); ++l) {
        cfg.temperature = temp;
        cfg.lambda = run.lambdas[l];
        try {
          table.set(labeled_only[t][l], rep,
                    accuracy(distill_student(labeled_set, lab_soft, cfg), test_noisy,
                             test_labels));
        } catch (const std::exception& e) {
          table.fail(labeled_only[t][l], rep, e.what());
        }
        try {
          table.set(semisup[t][l], rep,
                    accuracy(distill_student(students, soft, cfg), test_noisy, test_labels));
        } catch (const std::exception& e) {
          table.fail(semisup[t][l], rep, e.what());
        }
      }
    }
  });

  ExperimentReport report = new_report("cifar", run.seed, to_json(run));
  table.append_to(report, "accuracy");
  return report;
}

// ---- multitask regression ----

namespace {

MultitaskData select_rows(const MultitaskData& data, const std::vector<std::size_t>& rows) {
  MultitaskData out;
  out.inputs.resize(idx(rows.size()), data.inputs.cols());
  out.outputs.resize(idx(rows.size()), data.outputs.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.inputs.row(idx(r)) = data.inputs.row(idx(rows[r]));
    out.outputs.row(idx(r)) = data.outputs.row(idx(rows[r]));
  }
  return out;
}

}  // namespace

ExperimentReport run_multitask(const MultitaskRun& run) {
  check_reps(run.reps);
  check_grid(run.temperatures, run.lambdas);
  const MultitaskData table_train = load_multitask_csv(run.train_path, run.delimiter);
  std::optional<MultitaskData> table_test;
  if (!run.test_path.empty()) table_test = load_multitask_csv(run.test_path, run.delimiter);
  if (run.n_train == 0 || run.n_train > table_train.size()) {
    throw DistillationError("n_train outside the training table");
  }
  if (!table_test && run.n_train == table_train.size()) {
    throw DistillationError("no rows left for testing; pass a test table");
  }
  const std::size_t tasks = table_train.tasks();

  CellTable table(run.reps);
  struct Ids {
    std::size_t teacher, regular;
    GridIds distilled;
  };
  std::vector<Ids> ids;  // one per task, then the cross-task mean
  for (std::size_t j = 0; j <= tasks; ++j) {
    const std::string task = j == tasks ? "mean" : std::to_string(j);
    const std::size_t te = table.add({"teacher", task, {}, {}, run.n_train});
    const std::size_t re = table.add({"regular", task, {}, {}, run.n_train});
    ids.push_back({te, re,
                   add_grid(table, "distilled", task, run.temperatures, run.lambdas,
                            run.n_train)});
  }

  const RngStream root(run.seed, 0);
  parallel_for(run.reps, run.threads, [&](std::size_t rep) {
    const RngStream rep_rng = root.fork(rep);
    RngStream pick = rep_rng.fork(0);
    std::vector<std::size_t> chosen =
        sample_without_replacement(pick, table_train.size(), run.n_train);
    std::sort(chosen.begin(), chosen.end());
    MultitaskData train = select_rows(table_train, chosen);
    MultitaskData test;
    if (table_test) {
      test = *table_test;
    } else {
      std::vector<std::size_t> rest;
      for (std::size_t i = 0, k = 0; i < table_train.size(); ++i) {
        if (k < chosen.size() && chosen[k] == i) {
          ++k;
        } else {
          rest.push_back(i);
        }
      }
      test = select_rows(table_train, rest);
    }
    const ColumnScaler in_scale = ColumnScaler::fit(train.inputs);
    const ColumnScaler out_scale = ColumnScaler::fit(train.outputs);
    train.inputs = in_scale.apply(train.inputs);
    train.outputs = out_scale.apply(train.outputs);
    test.inputs = in_scale.apply(test.inputs);
    test.outputs = out_scale.apply(test.outputs);

    // Per task results so the mean row can be filled once all tasks finish.
    struct TaskResult {
      std::optional<double> teacher, regular;
      std::vector<std::vector<std::optional<double>>> distilled;
    };
    std::vector<TaskResult> results(tasks);
    for (std::size_t j = 0; j < tasks; ++j) {
      TaskResult& res = results[j];
      res.distilled.assign(run.temperatures.size(),
                           std::vector<std::optional<double>>(run.lambdas.size()));
      const Dataset view = multitask_views(train, j);
      const Dataset test_view = multitask_views(test, j);
      const RowMatrix x_test = stack_features(test_view, kRegular);
      const RowMatrix xs_test = stack_features(test_view, kPrivileged);
      const RowMatrix y_test = stack_labels(test_view);
      DistillConfig cfg;
      cfg.teacher_arch.kind = Architecture::mlp;
      cfg.student_arch.kind = Architecture::mlp;
      cfg.teacher = run.hyper.train_config(rep_rng.fork(1).fork(j));
      cfg.student = run.hyper.train_config(rep_rng.fork(2).fork(j));
      const Ids& id = ids[j];
      try {
        res.regular = mean_squared_error(train_regular(view, cfg), x_test, y_test);
        table.set(id.regular, rep, *res.regular);
      } catch (const std::exception& e) {
        table.fail(id.regular, rep, e.what());
      }
      std::optional<Model> teacher;
      try {
        teacher = train_teacher(view, cfg);
        res.teacher = mean_squared_error(*teacher, xs_test, y_test);
        table.set(id.teacher, rep, *res.teacher);
      } catch (const std::exception& e) {
        table.fail(id.teacher, rep, e.what());
        fail_grid(table, id.distilled, rep, std::string("teacher failed: ") + e.what());
        continue;
      }
      for (std::size_t t = 0; t < run.temperatures.size(); ++t) {
        const auto soft = soft_labels(*teacher, view, run.temperatures[t]);
        for (std::size_t l = 0; l < run.lambdas.size(); ++l) {
          cfg.temperature = run.temperatures[t];
          cfg.lambda = run.lambdas[l];
          try {
            res.distilled[t][l] =
                mean_squared_error(distill_student(view, soft, cfg), x_test, y_test);
            table.set(id.distilled[t][l], rep, *res.distilled[t][l]);
          } catch (const std::exception& e) {
            table.fail(id.distilled[t][l], rep, e.what());
          }
        }
      }
    }

    const Ids& mean_id = ids[tasks];
    auto average = [&](std::size_t cell, auto get) {
      double sum = 0.0;
      for (std::size_t j = 0; j < tasks; ++j) {
        const std::optional<double> v = get(results[j]);
        if (!v) {
          table.fail(cell, rep, "task " + std::to_string(j) + " failed");
          return;
        }
        sum += *v;
      }
      table.set(cell, rep, sum / static_cast<double>(tasks));
    };
    average(mean_id.teacher, [](const TaskResult& r) { return r.teacher; });
    average(mean_id.regular, [](const TaskResult& r) { return r.regular; });
    for (std::size_t t = 0; t < run.temperatures.size(); ++t) {
      for (std::size_t l = 0; l < run.lambdas.size(); ++l) {
        average(mean_id.distilled[t][l],
                [&](const TaskResult& r) { return r.distilled[t][l]; });
      }
    }
  });

  ExperimentReport report = new_report("multitask", run.seed, to_json(run));
  table.append_to(report, "mse");
  return report;
}

ExperimentReport rerun(const ExperimentReport& report) {
  std::string kind;
  try {
    kind = report.config.at("kind").get<std::string>();
  } catch (const json::exception&) {
    throw ReportError("report config has no experiment kind");
  }
  if (kind == "synthetic") return run_synthetic(synthetic_run_from_json(report.config));
  if (kind == "mnist") return run_mnist(mnist_run_from_json(report.config));
  if (kind == "cifar") return run_cifar_semisup(cifar_run_from_json(report.config));
  if (kind == "multitask") return run_multitask(multitask_run_from_json(report.config));
  throw ReportError("unknown experiment kind '" + kind + "'");
}

std::optional<std::filesystem::path> data_dir_from_env() {
  const char* v = std::getenv("DISTILLERY_DATA_DIR");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::filesystem::path(v);
}

}  // namespace distillery
