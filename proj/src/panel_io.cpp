#include "dynlate/panel_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace dynlate {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, long row, const std::string& column) {
  try {
    size_t pos = 0;
    const double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing characters");
    if (std::isnan(v))
      throw ParseError("NaN cell at row " + std::to_string(row) + ", column " + column);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("unparsable cell '" + cell + "' at row " + std::to_string(row) +
                     ", column " + column);
  }
}

int parse_bit(const std::string& cell, long row, const std::string& column, const char* what) {
  const double v = parse_cell(cell, row, column);
  if (v == 0.0) return 0;
  if (v == 1.0) return 1;
  throw ParseError(std::string("non-binary ") + what + " at row " + std::to_string(row) +
                   ", column " + column);
}

}  // namespace

std::string panel_csv_header(int T, int p) {
  std::ostringstream out;
  for (int j = 0; j < p; ++j) {
    if (j) out << ",";
    out << "s0_" << j;
  }
  for (int t = 1; t < T; ++t) {
    out << ",z" << t << ",d" << t;
    for (int j = 0; j < p; ++j) out << ",s" << t << "_" << j;
  }
  out << ",z" << T << ",d" << T << ",y";
  return out.str();
}

void write_panel(const PanelDataset& ds, std::ostream& out) {
  out << panel_csv_header(ds.T, ds.p) << "\n";
  for (const Trajectory& tr : ds.rows) {
    std::ostringstream line;
    for (int j = 0; j < ds.p; ++j) {
      if (j) line << ",";
      line << format_double(tr.states[0][j]);
    }
    for (int t = 1; t < ds.T; ++t) {
      line << "," << tr.z[t - 1] << "," << tr.d[t - 1];
      for (int j = 0; j < ds.p; ++j) line << "," << format_double(tr.states[t][j]);
    }
    line << "," << tr.z[ds.T - 1] << "," << tr.d[ds.T - 1] << "," << format_double(tr.y);
    out << line.str() << "\n";
  }
}

void write_panel(const PanelDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  write_panel(ds, out);
}

PanelDataset read_panel(std::istream& in) {
  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError("empty file: missing header");
  if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();
  const std::vector<std::string> header = split_csv_line(header_line);

  // Recover (T, p) from the header, then demand an exact schema match.
  int p = 0;
  while (p < static_cast<int>(header.size()) && header[p] == "s0_" + std::to_string(p)) ++p;
  if (p == 0) throw ParseError("missing column s0_0 in header");
  const int remaining = static_cast<int>(header.size()) - p;
  if (remaining < 3 || (remaining - 3) % (2 + p) != 0)
    throw ParseError("header does not match the panel schema");
  const int T = (remaining - 3) / (2 + p) + 1;

  PanelDataset ds;
  ds.T = T;
  ds.p = p;
  if (header_line != panel_csv_header(T, p))
    throw ParseError("header does not match the panel schema for T=" + std::to_string(T) +
                     ", p=" + std::to_string(p));

  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    Trajectory tr;
    tr.states.assign(T, Eigen::VectorXd(p));
    tr.z.assign(T, 0);
    tr.d.assign(T, 0);
    int k = 0;
    for (int j = 0; j < p; ++j, ++k) tr.states[0][j] = parse_cell(cells[k], row, header[k]);
    for (int t = 1; t < T; ++t) {
      tr.z[t - 1] = parse_bit(cells[k], row, header[k], "instrument");
      ++k;
      tr.d[t - 1] = parse_bit(cells[k], row, header[k], "treatment");
      ++k;
      for (int j = 0; j < p; ++j, ++k) tr.states[t][j] = parse_cell(cells[k], row, header[k]);
    }
    tr.z[T - 1] = parse_bit(cells[k], row, header[k], "instrument");
    ++k;
    tr.d[T - 1] = parse_bit(cells[k], row, header[k], "treatment");
    ++k;
    tr.y = parse_cell(cells[k], row, header[k]);
    ds.rows.push_back(std::move(tr));
  }
  return ds;
}

PanelDataset read_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path);
  return read_panel(in);
}

}  // namespace dynlate
