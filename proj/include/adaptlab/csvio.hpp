#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace adaptlab {

// %.17g, enough digits that reading the text back recovers the double
// exactly; NaN always spells "nan"
std::string csv_double(double v);

// plain comma-separated numeric tables, LF line endings, no quoting
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void flush();

 private:
  std::ofstream out_;
  size_t width_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  double value(size_t row, int col) const;
};

CsvTable read_csv(const std::string& path);

}  // namespace adaptlab
