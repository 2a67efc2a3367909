#include "fragility/csv.hpp"

#include <sstream>

namespace fragility {

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& header) {
  std::filesystem::create_directories(path.parent_path());
  out_.open(path);
  if (!out_) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  out_ << header << '\n';
}

void CsvWriter::write_row(const std::string& row) { out_ << row << '\n'; }

int CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw Error(ErrorCode::IoError, "csv column not found: " + name);
}

double CsvTable::number(size_t row, int col) const {
  return std::stod(rows[row][col]);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

}  // namespace fragility
