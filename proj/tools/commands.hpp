#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivq/quantizer.hpp"
#include "ivq/search.hpp"

namespace ivq::cli {

// Bit width that leaves weights in full precision.
inline constexpr int kFullPrecisionBits = 16;

std::optional<QuantSpec> spec_for(int bits, std::size_t group_size);

struct QuantizeOptions {
  std::filesystem::path model;
  std::filesystem::path out;
  std::filesystem::path report;  // empty: <out>.report.json
  int bits = 2;
  std::size_t group_size = 128;
};

// Returns the report that was written.
nlohmann::json cmd_quantize(const QuantizeOptions& opt, std::ostream& log);

struct SearchOptions {
  std::filesystem::path model;
  std::filesystem::path calib;
  std::filesystem::path heldout;  // empty: split off from calib
  std::filesystem::path out;
  std::filesystem::path curves;   // empty: <out>.curves.csv
  int bits = 2;
  std::size_t group_size = 128;
  std::size_t steps = 2000;
  double sigma_s = 1e-2;
  double sigma_r = 1e-5;
  double subset = 0.10;
  double alpha_ratio = 10.0;
  std::optional<double> alpha;
  std::size_t match_layers = 0;  // 0: all layers
  std::uint64_t seed = 0;
  std::size_t calib_sequences = 32;
  std::size_t heldout_sequences = 64;
  std::size_t seq_len = 0;  // 0: model context
  double split_fraction = 0.75;
  bool permute = true;
  bool scale = true;
  bool rotate = true;
  std::size_t window = 500;
  std::size_t log_every = 100;

  SearchConfig search_config(std::size_t layers) const;
  nlohmann::json to_json() const;
  static SearchOptions from_json(const nlohmann::json& j);
};

struct SearchSummary {
  SearchResult result;
  double rtn_perplexity = 0.0;
  double searched_perplexity = 0.0;
  double fp_perplexity = 0.0;
};

SearchSummary cmd_search(const SearchOptions& opt, std::ostream& log);

struct EvalOptions {
  std::filesystem::path model;
  std::filesystem::path corpus;
  std::optional<int> bits;
  std::size_t group_size = 128;
  std::size_t max_sequences = 1u << 20;
  std::size_t seq_len = 0;
};

struct EvalReport {
  double fp_cross_entropy = 0.0;
  double fp_perplexity = 0.0;
  std::optional<double> quant_cross_entropy;
  std::optional<double> quant_perplexity;
};

EvalReport cmd_eval(const EvalOptions& opt, std::ostream& log);

enum class CurveFormat { csv, svg_plot };

struct CurvesOptions {
  std::filesystem::path run;  // curves CSV, or a directory holding one
  std::filesystem::path out_dir;  // empty: next to the CSV
  CurveFormat format = CurveFormat::csv;
};

// Paths of the artifacts written.
std::vector<std::filesystem::path> cmd_curves(const CurvesOptions& opt, std::ostream& log);

// Line plot with one series; used for the curve panels.
std::string svg_line_plot(const std::vector<double>& x, const std::vector<double>& y,
                          const std::string& title, const std::string& y_label);

// Full command line. Exit codes: 0 success, 2 usage, 1 runtime failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::string version_string();

}  // namespace ivq::cli
