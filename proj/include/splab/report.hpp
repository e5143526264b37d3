#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

namespace splab {

// Reported values: 12 significant digits ("%.12g").
std::string format_number(double value);
// Dumped intermediates: 17 significant digits, which round-trip exactly.
std::string format_exact(double value);
// Parses a number written by either formatter; throws FormatError otherwise.
double parse_number(const std::string& text);
// Value of format_number(value) read back as a double.
double round_reported(double value);

// RFC-4180 CSV with LF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws FormatError if absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace splab
