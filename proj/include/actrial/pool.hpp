#pragma once

#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "actrial/csv.hpp"
#include "actrial/dataset.hpp"

namespace actrial {

struct MalformedRow : std::runtime_error {
  long line;
  MalformedRow(long line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

struct UnknownArmValue : std::runtime_error {
  long line;
  UnknownArmValue(long line_no, const std::string& value)
      : std::runtime_error("line " + std::to_string(line_no) + ": unknown arm value '" + value +
                           "' (expected -1 or 1)"),
        line(line_no) {}
};

struct EmptyPool : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PoolSchema {
  std::string arm_column = "arm";
  std::string outcome_column = "outcome";
};

// Pool CSV: optional leading "# key=value" metadata lines
// (outcome_direction, propensity), then a header naming the arm and outcome
// columns; every other column is a covariate. Row order is preserved because
// replay examines subjects in file order.
inline Dataset parse_pool(std::istream& in, const PoolSchema& schema = {}) {
  Dataset data;
  std::string line;
  long line_no = 0;

  // metadata + header
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      std::string body = trim(line.substr(1));
      auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      std::string key = trim(body.substr(0, eq));
      std::string value = trim(body.substr(eq + 1));
      if (key == "outcome_direction") {
        if (value == "minimize") data.direction = OutcomeDirection::minimize;
        else if (value == "maximize") data.direction = OutcomeDirection::maximize;
        else throw MalformedRow(line_no, "outcome_direction must be maximize|minimize");
      } else if (key == "propensity") {
        auto p = parse_double(value);
        if (!p || !(*p > 0.0 && *p < 1.0)) {
          throw MalformedRow(line_no, "propensity must be a real in (0,1)");
        }
        data.propensity = *p;
      }
      continue;
    }
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw EmptyPool("pool has no header row");

  int arm_col = -1, outcome_col = -1;
  std::vector<int> cov_cols;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    std::string name = trim(header[i]);
    if (name == schema.arm_column) arm_col = i;
    else if (name == schema.outcome_column) outcome_col = i;
    else cov_cols.push_back(i);
  }
  if (arm_col < 0) throw MalformedRow(line_no, "missing column '" + schema.arm_column + "'");
  if (outcome_col < 0) throw MalformedRow(line_no, "missing column '" + schema.outcome_column + "'");
  if (cov_cols.empty()) throw MalformedRow(line_no, "no covariate columns");
  data.dim = static_cast<int>(cov_cols.size());

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw MalformedRow(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                      std::to_string(fields.size()));
    }
    Observation o;
    o.x.resize(data.dim);
    for (int j = 0; j < data.dim; ++j) {
      auto v = parse_double(fields[cov_cols[j]]);
      if (!v) throw MalformedRow(line_no, "bad covariate '" + fields[cov_cols[j]] + "'");
      o.x(j) = *v;
    }
    auto arm_raw = parse_double(fields[arm_col]);
    if (!arm_raw) throw MalformedRow(line_no, "bad arm '" + fields[arm_col] + "'");
    if (*arm_raw == 1.0) o.arm = Arm::plus;
    else if (*arm_raw == -1.0) o.arm = Arm::minus;
    else throw UnknownArmValue(line_no, trim(fields[arm_col]));
    auto r = parse_double(fields[outcome_col]);
    if (!r) throw MalformedRow(line_no, "bad outcome '" + fields[outcome_col] + "'");
    o.outcome = *r;
    data.obs.push_back(std::move(o));
  }

  if (data.obs.empty()) throw EmptyPool("pool has a header but no data rows");
  return data;
}

inline Dataset load_pool(const std::string& path, const PoolSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pool file: " + path);
  return parse_pool(in, schema);
}

inline void save_pool(const Dataset& data, std::ostream& out) {
  if (data.direction == OutcomeDirection::minimize) out << "# outcome_direction=minimize\n";
  if (data.propensity != 0.5) out << "# propensity=" << format_double(data.propensity) << "\n";
  for (int j = 1; j <= data.dim; ++j) out << "x" << j << ",";
  out << "arm,outcome\n";
  for (const auto& o : data.obs) {
    for (int j = 0; j < data.dim; ++j) out << format_double(o.x(j)) << ",";
    out << arm_value(o.arm) << "," << format_double(o.outcome) << "\n";
  }
}

inline void save_pool(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pool file: " + path);
  save_pool(data, out);
}

}  // namespace actrial
