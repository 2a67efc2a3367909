#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fragility/error.hpp"

namespace fragility {

/// Line-oriented CSV writer with full-precision doubles; the emitted files
/// are byte-stable across reruns.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header);
  void write_row(const std::string& row);

 private:
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;
  double number(size_t row, int col) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace fragility
