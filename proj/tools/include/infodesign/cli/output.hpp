#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "infodesign/designopt/sequential.hpp"
#include "infodesign/inference/diagnostics.hpp"

namespace infodesign::cli {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

// Numbered column names: prefix_0, prefix_1, ...
std::vector<std::string> indexed(const std::string& prefix, std::size_t count);

std::vector<std::string> metrics_header(std::size_t design_dim);
std::vector<std::string> metrics_cells(const designopt::StepRow& row);

void write_posterior_samples(CsvWriter& out, std::size_t round, const inference::PosteriorSampleSet& set);
void write_coverage(const std::filesystem::path& path, const inference::CoverageCurve& curve);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace infodesign::cli
