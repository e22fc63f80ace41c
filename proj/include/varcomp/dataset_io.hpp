#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "varcomp/core.hpp"

namespace varcomp {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace and a possible trailing CR
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_number(const std::string& s, const std::string& column, std::size_t row) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty())
    throw Error("load_dataset: non-numeric value '" + s + "' in column '" + column + "', data row " +
                std::to_string(row));
  return v;
}

}  // namespace detail

// Long CSV with header `id,x,y` (extra columns allowed and ignored).
// Rows are grouped by id in order of first appearance and sorted by x
// within each individual; duplicate (id, x) rows are kept.
inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_dataset: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error("load_dataset: empty file '" + path + "'");
  const auto header = detail::split_csv_line(line);
  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error("load_dataset: missing column '" + name + "' in '" + path + "'");
  };
  const int id_col = find_col("id");
  const int x_col = find_col("x");
  const int y_col = find_col("y");

  struct Row {
    double x, y;
    std::size_t order;
  };
  std::vector<std::string> id_order;
  std::map<std::string, std::vector<Row>> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    const int needed = std::max({id_col, x_col, y_col});
    if (static_cast<int>(fields.size()) <= needed)
      throw Error("load_dataset: data row " + std::to_string(row_no) + " has too few columns");
    const std::string& id = fields[static_cast<std::size_t>(id_col)];
    Row r{detail::parse_number(fields[static_cast<std::size_t>(x_col)], "x", row_no),
          detail::parse_number(fields[static_cast<std::size_t>(y_col)], "y", row_no), row_no};
    if (rows.find(id) == rows.end()) id_order.push_back(id);
    rows[id].push_back(r);
  }
  if (rows.empty()) throw Error("load_dataset: no data rows in '" + path + "'");

  Dataset data;
  for (const auto& id : id_order) {
    auto& rs = rows[id];
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.x < b.x; });
    Individual ind;
    ind.id = id;
    ind.x.resize(static_cast<Eigen::Index>(rs.size()));
    ind.y.resize(static_cast<Eigen::Index>(rs.size()));
    for (std::size_t k = 0; k < rs.size(); ++k) {
      ind.x[static_cast<Eigen::Index>(k)] = rs[k].x;
      ind.y[static_cast<Eigen::Index>(k)] = rs[k].y;
    }
    data.individuals.push_back(std::move(ind));
  }
  validate_dataset(data);
  return data;
}

inline void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("save_dataset: cannot open '" + path + "' for writing");
  out << "id,x,y\n";
  for (const auto& ind : data.individuals)
    for (Eigen::Index j = 0; j < ind.y.size(); ++j)
      out << ind.id << ',' << ind.x[j] << ',' << ind.y[j] << '\n';
}

}  // namespace varcomp
