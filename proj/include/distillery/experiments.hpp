#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "distillery/distillation.hpp"
#include "distillery/report.hpp"
#include "distillery/synthetic.hpp"

namespace distillery {

const char* artifact_version();

/// Optimizer settings shared by teacher and student of one experiment.
struct Hyper {
  double learning_rate = 0.1;
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  double l2 = 1e-4;

  TrainConfig train_config(RngStream rng) const;
  friend bool operator==(const Hyper&, const Hyper&) = default;
};

inline const std::vector<double> kDefaultTemperatures{1, 2, 5, 10, 20, 50};
inline const std::vector<double> kDefaultLambdas{0, 0.25, 0.5, 0.75, 1};

/// Arms share the per-repetition data. The regular and distilled students
/// also share their initialization and shuffling stream, so lambda = 0
/// reproduces the regular arm exactly and every grid cell depends only on
/// (repetition, T, lambda).
struct SyntheticRun {
  SyntheticSpec spec;
  std::size_t reps = 100;
  std::uint64_t seed = 1;
  std::vector<double> temperatures{1.0};
  std::vector<double> lambdas{1.0};
  Hyper hyper;
  std::size_t threads = 1;
};

struct MnistRun {
  std::filesystem::path data_dir;  // holds the four IDX files
  std::vector<std::size_t> n_train{300, 500};
  std::vector<double> temperatures = kDefaultTemperatures;
  std::vector<double> lambdas = kDefaultLambdas;
  std::size_t reps = 1;
  std::uint64_t seed = 1;
  Hyper hyper{0.05, 500, 32, 1e-4};
  std::size_t threads = 1;
};

struct CifarRun {
  std::filesystem::path data_dir;  // holds data_batch_{1..5}.bin and test_batch.bin
  std::size_t n_labeled = 300;
  /// Cap on the unlabeled soft-labeled pool; 0 means the whole training set.
  std::size_t max_unlabeled = 0;
  /// Cap on evaluated test images; 0 means the full test set.
  std::size_t max_test = 0;
  double sigma = 0.5;
  std::vector<double> temperatures = kDefaultTemperatures;
  std::vector<double> lambdas = kDefaultLambdas;
  double unlabeled_weight = 1.0;
  std::size_t reps = 1;
  std::uint64_t seed = 1;
  Hyper hyper{0.01, 100, 32, 1e-4};
  std::size_t threads = 1;
};

struct MultitaskRun {
  std::filesystem::path train_path;
  /// Held-out rows; when empty, the rows of train_path not drawn for training.
  std::filesystem::path test_path;
  char delimiter = ',';
  std::size_t n_train = 300;
  std::vector<double> temperatures{1.0};
  std::vector<double> lambdas = kDefaultLambdas;
  std::size_t reps = 1;
  std::uint64_t seed = 1;
  Hyper hyper{0.01, 100, 32, 1e-4};
  std::size_t threads = 1;
};

nlohmann::json to_json(const SyntheticRun& run);
nlohmann::json to_json(const MnistRun& run);
nlohmann::json to_json(const CifarRun& run);
nlohmann::json to_json(const MultitaskRun& run);
SyntheticRun synthetic_run_from_json(const nlohmann::json& j);
MnistRun mnist_run_from_json(const nlohmann::json& j);
CifarRun cifar_run_from_json(const nlohmann::json& j);
MultitaskRun multitask_run_from_json(const nlohmann::json& j);

/// Arms "privileged" (teacher on x*), "regular" (student on x) and
/// "distilled" per (T, lambda) cell; metric is test accuracy.
ExperimentReport run_synthetic(const SyntheticRun& run);

/// Teacher on 28x28 pixels, students on 7x7 block means, both 2x20 ReLU MLPs.
/// Arms per n_train: "privileged", "regular", "distilled" per cell.
ExperimentReport run_mnist(const MnistRun& run);

/// Teacher on 300 labeled clean images; soft labels for the unlabeled pool;
/// students see noisy images. Arms: "privileged", "supervised",
/// "distilled_labeled" (300 labeled only) and "distilled_semisup" per cell.
ExperimentReport run_cifar_semisup(const CifarRun& run);

/// Per task j: "teacher" (other 6 outputs -> output j), "regular" and
/// "distilled" (21 inputs -> output j), test MSE on standardized targets.
/// Task "mean" averages over tasks.
ExperimentReport run_multitask(const MultitaskRun& run);

/// Runs the experiment described by a report's config snapshot.
ExperimentReport rerun(const ExperimentReport& report);

/// Directory from DISTILLERY_DATA_DIR, if set.
std::optional<std::filesystem::path> data_dir_from_env();

}  // namespace distillery
