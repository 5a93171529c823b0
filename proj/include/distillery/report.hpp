#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace distillery {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Aggregate of one arm (privileged / regular / distilled / ...) at one grid
/// cell across repetitions.
struct CellStats {
  std::string arm;
  std::string task;                  // empty unless the experiment has several tasks
  std::optional<double> temperature;  // unset for arms that do not distill
  std::optional<double> lambda;
  std::size_t n_train = 0;
  std::string metric;  // "accuracy" or "mse"
  double mean = 0.0;
  double std = 0.0;
  std::size_t reps = 0;       // successful repetitions
  std::size_t requested = 0;  // repetitions asked for
  std::vector<double> values;  // per successful repetition, in repetition order
  std::vector<std::string> errors;

  bool complete() const { return reps == requested && errors.empty(); }
  std::string status() const { return complete() ? "complete" : "incomplete"; }

  friend bool operator==(const CellStats&, const CellStats&) = default;
};

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& values);

/// Builds a cell from per-repetition outcomes; a missing value marks a
/// failed repetition and `errors` should say why.
CellStats make_cell(std::string arm, std::string task, std::optional<double> temperature,
                    std::optional<double> lambda, std::size_t n_train, std::string metric,
                    const std::vector<std::optional<double>>& per_rep,
                    std::vector<std::string> errors);

struct ExperimentReport {
  static constexpr int kSchemaVersion = 1;

  std::string experiment;
  std::uint64_t master_seed = 0;
  std::string version;
  /// Every setting needed to rerun the experiment, including decided defaults.
  nlohmann::json config;
  std::vector<CellStats> cells;

  bool complete() const;
  /// First cell matching the keys, or nullptr.
  const CellStats* find(const std::string& arm, std::optional<double> temperature = std::nullopt,
                        std::optional<double> lambda = std::nullopt, std::size_t n_train = 0,
                        const std::string& task = "") const;

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);

/// CSV columns, in order.
inline constexpr const char* kCsvHeader =
    "experiment,arm,T,lambda,mean,std,reps,status,metric,n_train,task,requested";

/// One parsed CSV row.
struct CsvRow {
  std::string experiment;
  CellStats cell;  // values/errors are not carried by CSV
  std::string status;
};

void write_csv(const ExperimentReport& report, std::ostream& out);
std::vector<CsvRow> read_csv(std::istream& in);

enum class ReportFormat { csv, json };
ReportFormat report_format_from_string(const std::string& s);

/// Writes the report to `path`; throws ReportError when the file cannot be written.
void emit_report(const ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& path);
ExperimentReport load_json_report(const std::filesystem::path& path);

}  // namespace distillery
