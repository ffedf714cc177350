#include "infodesign/cli/output.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace infodesign::cli {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::runtime_error("not a number: '" + s + "'");
  return v;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw std::logic_error("csv row has the wrong number of cells");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw std::runtime_error("missing csv column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split(line));
  }
  return t;
}

std::vector<std::string> indexed(const std::string& prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(fmt::format("{}_{}", prefix, i));
  return out;
}

std::vector<std::string> metrics_header(std::size_t design_dim) {
  std::vector<std::string> h{"round", "step", "loss", "eig", "eig_se", "anchor_loglik", "sigma"};
  for (auto& c : indexed("mu", design_dim)) h.push_back(c);
  for (const char* c : {"lr_flow", "lr_design", "grad_norm_flow", "grad_norm_design", "checkpoint", "best_row"}) {
    h.push_back(c);
  }
  return h;
}

std::vector<std::string> metrics_cells(const designopt::StepRow& r) {
  std::vector<std::string> c{std::to_string(r.round),       std::to_string(r.step),      format_double(r.loss),
                             format_double(r.eig),          format_double(r.eig_se),     format_double(r.anchor_loglik),
                             format_double(r.sigma)};
  for (double m : r.mu) c.push_back(format_double(m));
  c.push_back(format_double(r.lr_flow));
  c.push_back(format_double(r.lr_design));
  c.push_back(format_double(r.grad_norm_flow));
  c.push_back(format_double(r.grad_norm_design));
  c.push_back(r.checkpoint ? "1" : "0");
  c.push_back(std::to_string(r.best_row));
  return c;
}

void write_posterior_samples(CsvWriter& out, std::size_t round, const inference::PosteriorSampleSet& set) {
  for (std::size_t r = 0; r < set.samples.rows(); ++r) {
    std::vector<std::string> cells{std::to_string(round), std::to_string(set.chain[r])};
    for (double v : set.samples.row_span(r)) cells.push_back(format_double(v));
    out.row(cells);
  }
}

void write_coverage(const std::filesystem::path& path, const inference::CoverageCurve& curve) {
  CsvWriter out(path, {"dim", "level", "coverage", "trials", "lower", "upper"});
  for (std::size_t d = 0; d < curve.coverage.size(); ++d) {
    for (std::size_t l = 0; l < curve.levels.size(); ++l) {
      out.row({std::to_string(d), format_double(curve.levels[l]), format_double(curve.coverage[d][l]),
               std::to_string(curve.trials), format_double(curve.band_lower[l]), format_double(curve.band_upper[l])});
    }
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

}  // namespace infodesign::cli
