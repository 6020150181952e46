#include "spinshelve/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace spinshelve {

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("rename to '" + path + "' failed: " + ec.message());
  }
}

std::string format_double(double v) {
  char buf[40];
  // shortest representation that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return std::string(buf);
}

std::string format_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& columns) {
  if (header.size() != columns.size()) {
    throw IoError("csv header/column count mismatch");
  }
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& col : columns) {
    if (col.size() != rows) throw IoError("csv columns differ in length");
  }
  std::ostringstream os;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) os << ",";
    os << header[c];
  }
  os << "\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) os << ",";
      os << format_double(columns[c][r]);
    }
    os << "\n";
  }
  return os.str();
}

void write_csv_atomic(const std::string& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
  write_text_atomic(path, format_csv(header, columns));
}

XyData read_xy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  XyData data;
  std::string line;
  int row = 0;
  bool saw_three = false, saw_two = false;
  while (std::getline(in, line)) {
    ++row;
    // strip comments and whitespace-only lines
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;

    std::vector<double> fields;
    std::istringstream ls(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      while (used < cell.size() &&
             std::isspace(static_cast<unsigned char>(cell[used]))) {
        ++used;
      }
      if (used != cell.size()) {
        numeric = false;
        break;
      }
      fields.push_back(v);
    }
    if (!numeric) {
      if (row == 1) continue;  // header row
      throw IoError(path + ": malformed row " + std::to_string(row) + ": '" +
                    line + "'");
    }
    if (fields.size() != 2 && fields.size() != 3) {
      throw IoError(path + ": row " + std::to_string(row) +
                    " must have 2 or 3 columns, has " +
                    std::to_string(fields.size()));
    }
    if (fields.size() == 3) {
      saw_three = true;
    } else {
      saw_two = true;
    }
    if (saw_two && saw_three) {
      throw IoError(path + ": row " + std::to_string(row) +
                    " mixes 2- and 3-column layouts");
    }
    data.x.push_back(fields[0]);
    data.y.push_back(fields[1]);
    if (fields.size() == 3) data.sigma.push_back(fields[2]);
  }
  if (data.x.empty()) throw IoError(path + ": no data rows");
  return data;
}

}  // namespace spinshelve
