#include "vcboot/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace vcboot {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

double parse_number(const std::string& field, int line_no,
                    const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    std::ostringstream msg;
    msg << "csv line " << line_no << ": cannot parse '" << field
        << "' in column " << column;
    throw ConfigError(msg.str());
  }
}

// Fixed formatting so identical results always produce identical bytes.
std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 2 || header[0] != "id" || header[1] != "y") {
    throw ConfigError("csv: header must start with 'id,y'");
  }
  const int k = static_cast<int>(header.size()) - 2;
  for (int c = 0; c < k; ++c) {
    const std::string expect = "x" + std::to_string(c + 1);
    if (header[c + 2] != expect) {
      throw ConfigError("csv: expected column '" + expect + "', found '" +
                        header[c + 2] + "'");
    }
  }

  // Collect rows grouped by id, keeping first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::vector<double>>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (static_cast<int>(fields.size()) != k + 2) {
      std::ostringstream msg;
      msg << "csv line " << line_no << ": expected " << (k + 2)
          << " fields, found " << fields.size();
      throw ConfigError(msg.str());
    }
    if (fields[0].empty()) {
      std::ostringstream msg;
      msg << "csv line " << line_no << ": empty id";
      throw ConfigError(msg.str());
    }
    std::vector<double> numbers(k + 1);
    numbers[0] = parse_number(fields[1], line_no, "y");
    for (int c = 0; c < k; ++c) {
      numbers[c + 1] =
          parse_number(fields[c + 2], line_no, header[c + 2]);
    }
    auto it = rows.find(fields[0]);
    if (it == rows.end()) {
      order.push_back(fields[0]);
      it = rows.emplace(fields[0], std::vector<std::vector<double>>{}).first;
    }
    it->second.push_back(std::move(numbers));
  }

  Dataset data;
  for (const std::string& id : order) {
    const auto& obs = rows[id];
    Individual ind;
    ind.id = id;
    ind.y.resize(static_cast<Eigen::Index>(obs.size()));
    ind.x.resize(static_cast<Eigen::Index>(obs.size()), k);
    for (std::size_t j = 0; j < obs.size(); ++j) {
      ind.y[static_cast<Eigen::Index>(j)] = obs[j][0];
      for (int c = 0; c < k; ++c) {
        ind.x(static_cast<Eigen::Index>(j), c) = obs[j][c + 1];
      }
    }
    data.individuals.push_back(std::move(ind));
  }
  validate(data);
  return data;
}

Dataset read_dataset_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("csv: cannot open '" + path + "'");
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  validate(data);
  const int k = data.individuals.empty()
                    ? 0
                    : static_cast<int>(data.individuals.front().x.cols());
  out << "id,y";
  for (int c = 0; c < k; ++c) out << ",x" << (c + 1);
  out << "\n";
  for (const auto& ind : data.individuals) {
    for (Eigen::Index j = 0; j < ind.y.size(); ++j) {
      out << ind.id << "," << format_number(ind.y[j]);
      for (int c = 0; c < k; ++c) out << "," << format_number(ind.x(j, c));
      out << "\n";
    }
  }
}

void write_dataset_csv_file(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("csv: cannot open '" + path + "' for writing");
  write_dataset_csv(out, data);
}

void write_scenario_csv(std::ostream& out, const ScenarioResult& result,
                        bool power_columns) {
  out << "procedure,alpha,c_n,s";
  if (power_columns) out << ",tested_value,rho";
  out << ",rate,stderr,k_effective\n";
  for (const auto& row : result.rows) {
    out << row.procedure << "," << format_number(row.alpha) << ",";
    if (!std::isnan(row.c_n)) out << format_number(row.c_n);
    out << "," << row.n_nuisance;
    if (power_columns) {
      out << "," << format_number(row.tested_value) << ","
          << format_number(row.rho);
    }
    out << "," << format_number(row.rate) << ","
        << format_number(row.stderr_rate) << "," << row.k_effective << "\n";
  }
}

void write_scenario_csv_file(const std::string& path,
                             const ScenarioResult& result,
                             bool power_columns) {
  std::ofstream out(path);
  if (!out) throw ConfigError("csv: cannot open '" + path + "' for writing");
  write_scenario_csv(out, result, power_columns);
}

}  // namespace vcboot
