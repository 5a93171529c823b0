// Command-line front end for the experiment harness.
//
//   distillery synthetic --experiment 1 --reps 100 --out exp1.csv
//   distillery mnist --data-dir data --T 1,2,5 --lambda 0,0.5,1 --format json --out mnist.json
//   distillery rerun --report mnist.json
//
// On failure a single line "error: <kind>: <message>" goes to stderr and the
// exit status is nonzero (2 for usage errors, 1 otherwise).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distillery/datasets.hpp"
#include "distillery/experiments.hpp"
#include "distillery/report.hpp"
#include "distillery/synthetic.hpp"

namespace fs = std::filesystem;
using namespace distillery;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::optional<std::size_t> reps;
  std::vector<double> temperatures;
  std::vector<double> lambdas;
  std::string out;
  std::string format = "csv";
  std::size_t threads = 1;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> l2;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--reps", c.reps, "repetitions");
  cmd->add_option("--T", c.temperatures, "temperature grid, comma separated")->delimiter(',');
  cmd->add_option("--lambda", c.lambdas, "imitation weight grid, comma separated")
      ->delimiter(',');
  cmd->add_option("--out", c.out, "report path (stdout when omitted)");
  cmd->add_option("--format", c.format, "report format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--threads", c.threads, "worker threads (results do not depend on it)");
  cmd->add_option("--lr", c.lr, "learning rate");
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--batch", c.batch, "mini-batch size");
  cmd->add_option("--l2", c.l2, "weight decay coefficient");
}

template <typename Run>
void apply_common(const Common& c, Run& run) {
  run.seed = c.seed;
  if (c.reps) run.reps = *c.reps;
  if (!c.temperatures.empty()) run.temperatures = c.temperatures;
  if (!c.lambdas.empty()) run.lambdas = c.lambdas;
  run.threads = c.threads;
  if (c.lr) run.hyper.learning_rate = *c.lr;
  if (c.epochs) run.hyper.epochs = *c.epochs;
  if (c.batch) run.hyper.batch_size = *c.batch;
  if (c.l2) run.hyper.l2 = *c.l2;
}

fs::path data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (auto env = data_dir_from_env()) return *env;
  throw ReportError("no data directory: pass --data-dir or set DISTILLERY_DATA_DIR");
}

/// `root/sub` when it exists, else `root` itself.
fs::path data_subdir(const fs::path& root, const char* sub) {
  const fs::path p = root / sub;
  return fs::is_directory(p) ? p : root;
}

void write(const ExperimentReport& report, const Common& c) {
  const ReportFormat format = report_format_from_string(c.format);
  if (!c.out.empty()) {
    emit_report(report, format, c.out);
    return;
  }
  if (format == ReportFormat::csv) {
    write_csv(report, std::cout);
  } else {
    std::cout << to_json(report).dump(2) << '\n';
  }
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int fail(const char* kind, const std::string& what, int code = 1) {
  std::cerr << "error: " << kind << ": " << one_line(what) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized distillation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(artifact_version()));

  Common syn_c, mnist_c, cifar_c, multi_c;
  std::string data_dir_flag;

  SyntheticRun syn;
  auto* syn_cmd = app.add_subcommand("synthetic", "synthetic privileged-information problems");
  add_common(syn_cmd, syn_c);
  syn_cmd->add_option("--experiment", syn.spec.experiment, "generator 1..4")
      ->check(CLI::Range(1, 4));
  syn_cmd->add_option("--d", syn.spec.d, "regular feature dimension");
  syn_cmd->add_option("--n-train", syn.spec.n_train, "training examples");
  syn_cmd->add_option("--n-test", syn.spec.n_test, "test examples");
  syn_cmd->add_option("--relevant", syn.spec.relevant, "relevant features (experiments 3, 4)");
  std::string dump_path;
  syn_cmd->add_option("--dump", dump_path,
                      "write the first repetition's training set instead of running");

  MnistRun mnist;
  auto* mnist_cmd = app.add_subcommand("mnist", "28x28 teacher, 7x7 student");
  add_common(mnist_cmd, mnist_c);
  mnist_cmd->add_option("--data-dir", data_dir_flag, "data root (or DISTILLERY_DATA_DIR)");
  mnist_cmd->add_option("--n-train", mnist.n_train, "training set sizes")->delimiter(',');

  CifarRun cifar;
  auto* cifar_cmd = app.add_subcommand("cifar", "semi-supervised distillation onto noisy images");
  add_common(cifar_cmd, cifar_c);
  cifar_cmd->add_option("--data-dir", data_dir_flag, "data root (or DISTILLERY_DATA_DIR)");
  cifar_cmd->add_option("--n-labeled", cifar.n_labeled, "labeled training images");
  cifar_cmd->add_option("--max-unlabeled", cifar.max_unlabeled,
                        "cap on the soft-labeled pool, 0 = all");
  cifar_cmd->add_option("--max-test", cifar.max_test, "cap on test images, 0 = all");
  cifar_cmd->add_option("--sigma", cifar.sigma, "noise standard deviation on [0,1] pixels");
  cifar_cmd->add_option("--unlabeled-weight", cifar.unlabeled_weight,
                        "extra weight on soft labels of unlabeled images");

  MultitaskRun multi;
  std::string train_csv, test_csv, delimiter = ",";
  auto* multi_cmd = app.add_subcommand("multitask", "privileged outputs for multitask regression");
  add_common(multi_cmd, multi_c);
  multi_cmd->add_option("--data-dir", data_dir_flag, "data root (or DISTILLERY_DATA_DIR)");
  multi_cmd->add_option("--train", train_csv, "training table (21 inputs, 7 outputs per row)");
  multi_cmd->add_option("--test", test_csv, "held-out table");
  multi_cmd->add_option("--delimiter", delimiter, "column delimiter");
  multi_cmd->add_option("--n-train", multi.n_train, "training rows per repetition");

  std::string rerun_path, rerun_out, rerun_format = "csv";
  auto* rerun_cmd = app.add_subcommand("rerun", "rerun from a JSON report's config snapshot");
  rerun_cmd->add_option("--report", rerun_path, "JSON report")->required();
  rerun_cmd->add_option("--out", rerun_out, "report path (stdout when omitted)");
  rerun_cmd->add_option("--format", rerun_format, "report format")
      ->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (syn_cmd->parsed()) {
      apply_common(syn_c, syn);
      if (!dump_path.empty()) {
        syn.spec.validate();
        RngStream data_rng = RngStream(syn.seed, 0).fork(0).fork(0);
        const SyntheticProblem problem = draw_problem(syn.spec, data_rng);
        const SyntheticData d = generate(syn.spec, problem, syn.spec.n_train, data_rng);
        std::ofstream out(dump_path);
        if (!out) throw ReportError("cannot write " + dump_path);
        write_dataset(d.dataset, out);
        return 0;
      }
      write(run_synthetic(syn), syn_c);
    } else if (mnist_cmd->parsed()) {
      apply_common(mnist_c, mnist);
      mnist.data_dir = data_subdir(data_root(data_dir_flag), "mnist");
      write(run_mnist(mnist), mnist_c);
    } else if (cifar_cmd->parsed()) {
      apply_common(cifar_c, cifar);
      cifar.data_dir = data_subdir(data_root(data_dir_flag), "cifar-10-batches-bin");
      write(run_cifar_semisup(cifar), cifar_c);
    } else if (multi_cmd->parsed()) {
      apply_common(multi_c, multi);
      if (delimiter.size() != 1) return fail("usage", "--delimiter takes one character", 2);
      multi.delimiter = delimiter[0];
      if (train_csv.empty()) {
        const fs::path dir = data_subdir(data_root(data_dir_flag), "sarcos");
        multi.train_path = dir / "sarcos_inv.csv";
        if (test_csv.empty() && fs::exists(dir / "sarcos_inv_test.csv")) {
          multi.test_path = dir / "sarcos_inv_test.csv";
        }
      } else {
        multi.train_path = train_csv;
      }
      if (!test_csv.empty()) multi.test_path = test_csv;
      write(run_multitask(multi), multi_c);
    } else if (rerun_cmd->parsed()) {
      Common c;
      c.out = rerun_out;
      c.format = rerun_format;
      write(rerun(load_json_report(rerun_path)), c);
    }
  } catch (const ParseError& e) {
    return fail("data", e.what());
  } catch (const ReportError& e) {
    return fail("report", e.what());
  } catch (const DistillationError& e) {
    return fail("config", e.what());
  } catch (const ModelError& e) {
    return fail("model", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
