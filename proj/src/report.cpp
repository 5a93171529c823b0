#include "distillery/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace distillery {

using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ReportError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ReportError("csv line " + std::to_string(line) + ": bad count '" + s + "'");
  }
  return v;
}

}  // namespace

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

CellStats make_cell(std::string arm, std::string task, std::optional<double> temperature,
                    std::optional<double> lambda, std::size_t n_train, std::string metric,
                    const std::vector<std::optional<double>>& per_rep,
                    std::vector<std::string> errors) {
  CellStats cell;
  cell.arm = std::move(arm);
  cell.task = std::move(task);
  cell.temperature = temperature;
  cell.lambda = lambda;
  cell.n_train = n_train;
  cell.metric = std::move(metric);
  cell.requested = per_rep.size();
  for (const auto& v : per_rep) {
    if (v) cell.values.push_back(*v);
  }
  cell.reps = cell.values.size();
  std::tie(cell.mean, cell.std) = mean_std(cell.values);
  cell.errors = std::move(errors);
  return cell;
}

bool ExperimentReport::complete() const {
  for (const auto& c : cells) {
    if (!c.complete()) return false;
  }
  return true;
}

const CellStats* ExperimentReport::find(const std::string& arm, std::optional<double> temperature,
                                        std::optional<double> lambda, std::size_t n_train,
                                        const std::string& task) const {
  for (const auto& c : cells) {
    if (c.arm == arm && c.temperature == temperature && c.lambda == lambda &&
        (n_train == 0 || c.n_train == n_train) && c.task == task) {
      return &c;
    }
  }
  return nullptr;
}

json to_json(const ExperimentReport& report) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"arm", c.arm},
                     {"task", c.task},
                     {"T", optional_number(c.temperature)},
                     {"lambda", optional_number(c.lambda)},
                     {"n_train", c.n_train},
                     {"metric", c.metric},
                     {"mean", c.mean},
                     {"std", c.std},
                     {"reps", c.reps},
                     {"requested", c.requested},
                     {"status", c.status()},
                     {"values", c.values},
                     {"errors", c.errors}});
  }
  return {{"schema_version", ExperimentReport::kSchemaVersion},
          {"experiment", report.experiment},
          {"master_seed", report.master_seed},
          {"version", report.version},
          {"config", report.config},
          {"cells", cells}};
}

ExperimentReport report_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != ExperimentReport::kSchemaVersion) {
      throw ReportError("unsupported report schema version");
    }
    ExperimentReport r;
    r.experiment = j.at("experiment").get<std::string>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    r.version = j.at("version").get<std::string>();
    r.config = j.at("config");
    for (const auto& c : j.at("cells")) {
      CellStats cell;
      cell.arm = c.at("arm").get<std::string>();
      cell.task = c.at("task").get<std::string>();
      cell.temperature = optional_from(c.at("T"));
      cell.lambda = optional_from(c.at("lambda"));
      cell.n_train = c.at("n_train").get<std::size_t>();
      cell.metric = c.at("metric").get<std::string>();
      cell.mean = c.at("mean").get<double>();
      cell.std = c.at("std").get<double>();
      cell.reps = c.at("reps").get<std::size_t>();
      cell.requested = c.at("requested").get<std::size_t>();
      cell.values = c.at("values").get<std::vector<double>>();
      cell.errors = c.at("errors").get<std::vector<std::string>>();
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const json::exception& e) {
    throw ReportError(std::string("malformed report: ") + e.what());
  }
}

void write_csv(const ExperimentReport& report, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& c : report.cells) {
    out << csv_escape(report.experiment) << ',' << csv_escape(c.arm) << ','
        << format_optional(c.temperature) << ',' << format_optional(c.lambda) << ','
        << format_double(c.mean) << ',' << format_double(c.std) << ',' << c.reps << ','
        << c.status() << ',' << csv_escape(c.metric) << ',' << c.n_train << ','
        << csv_escape(c.task) << ',' << c.requested << '\n';
  }
}

std::vector<CsvRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw ReportError("csv: unexpected header");
  }
  std::vector<CsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) {
      throw ReportError("csv line " + std::to_string(line_no) + ": expected 12 fields");
    }
    CsvRow row;
    row.experiment = f[0];
    row.cell.arm = f[1];
    if (!f[2].empty()) row.cell.temperature = parse_double(f[2], line_no);
    if (!f[3].empty()) row.cell.lambda = parse_double(f[3], line_no);
    row.cell.mean = parse_double(f[4], line_no);
    row.cell.std = parse_double(f[5], line_no);
    row.cell.reps = parse_count(f[6], line_no);
    row.status = f[7];
    row.cell.metric = f[8];
    row.cell.n_train = parse_count(f[9], line_no);
    row.cell.task = f[10];
    row.cell.requested = parse_count(f[11], line_no);
    rows.push_back(std::move(row));
  }
  return rows;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ReportError("unknown report format '" + s + "'");
}

void emit_report(const ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write report to " + path.string());
  if (format == ReportFormat::csv) {
    write_csv(report, out);
  } else {
    out << to_json(report).dump(2) << '\n';
  }
  out.flush();
  if (!out) throw ReportError("failed while writing report to " + path.string());
}

ExperimentReport load_json_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot read report " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ReportError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace distillery
