#pragma once

// File output with write-temp-then-rename semantics (no partial files on
// failure) and the CSV reader used by the fit command.

#include <string>
#include <vector>

#include "spinshelve/types.hpp"

namespace spinshelve {

void write_text_atomic(const std::string& path, const std::string& content);

// Column-oriented CSV; all columns must share a length.
std::string format_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<double>>& columns);

void write_csv_atomic(const std::string& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns);

struct XyData {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> sigma;  // empty when the file has two columns
};

// Reads 2- or 3-column numeric CSV; a non-numeric first row is treated as a
// header. Malformed rows raise IoError naming the row number.
XyData read_xy_csv(const std::string& path);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace spinshelve
