#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ivq/invariance.hpp"
#include "ivq/model.hpp"
#include "ivq/quantizer.hpp"

namespace ivq {

struct SearchConfig {
  std::size_t steps = 2000;
  double sigma_scale = 1e-2;
  double sigma_rotation = 1e-5;
  // Fraction of a layer's hidden neurons touched by one proposal.
  double subset_fraction = 0.10;
  // Cross-entropy is weighted this many times more than activation MSE at
  // the starting point; alpha is derived once and then frozen.
  double alpha_ratio = 10.0;
  // Overrides the ratio rule when set.
  std::optional<double> alpha;
  std::vector<std::size_t> matched_layers;
  // No spec means the objective is evaluated on the un-quantized model.
  std::optional<QuantSpec> quant = QuantSpec{};
  std::uint64_t seed = 0;
  bool permute = true;
  bool scale = true;
  bool rotate = true;
  std::size_t acceptance_window = 500;

  // Throws DomainError on out-of-range settings.
  void validate(const ModelConfig& model) const;
};

// `count` layer indices spread evenly over [0, layers).
std::vector<std::size_t> evenly_spaced_layers(std::size_t layers, std::size_t count);

struct ObjectiveTerms {
  double cross_entropy = 0.0;
  double activation_mse = 0.0;
  double total = 0.0;
};

// CE of the (fake-quantized, when spec is set) model on calib plus alpha
// times the mean over matched layers of MSE(captured FFN output, reference).
ObjectiveTerms objective(const ModelParams& params, const std::optional<QuantSpec>& spec,
                         std::span<const TokenSequence> calib, const ActivationTrace& reference,
                         double alpha, std::span<const std::size_t> matched);

struct Proposal {
  std::size_t layer = 0;
  LayerTransform transform;
  // Hidden positions whose permutation entries were reshuffled.
  std::vector<std::size_t> positions;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t layer = 0;
  double proposed_loss = 0.0;
  double best_loss = 0.0;
  bool accepted = false;
  double acceptance_rate_window = 0.0;
};

struct SearchState {
  std::vector<LayerTransform> transforms;
  ModelParams params;  // base parameters with `transforms` applied
  ActivationTrace reference;
  double alpha = 0.0;
  double best_loss = 0.0;
  ObjectiveTerms initial;
  ObjectiveTerms best;
  std::size_t step = 0;
  std::vector<StepRecord> log;
};

struct SearchResult {
  ModelParams params;
  std::vector<LayerTransform> transforms;
  std::vector<StepRecord> curve;
  ObjectiveTerms initial;
  ObjectiveTerms final_terms;
  double alpha = 0.0;
};

// Activation-guided hill climbing over per-layer FFN transforms. Each step
// proposes a perturbed transform for one layer, rebuilds that layer's FFN
// from the base parameters, re-quantizes it, and keeps it only if the
// objective strictly decreases.
class HillClimbSearch {
 public:
  HillClimbSearch(ModelParams base, SearchConfig config, std::vector<TokenSequence> calib,
                  std::optional<std::vector<LayerTransform>> initial = std::nullopt);

  const SearchState& state() const noexcept { return state_; }
  const SearchConfig& config() const noexcept { return config_; }
  const ModelParams& base() const noexcept { return base_; }

  // Proposal for the next step; deterministic in (seed, step).
  Proposal propose() const;

  // Objective of the current state with `layer`'s transform replaced by `t`.
  ObjectiveTerms evaluate(std::size_t layer, const LayerTransform& t) const;

  const StepRecord& step();
  SearchResult run();

 private:
  struct Candidate {
    FfnWeights ffn;
    ModelParams quantized;
    ForwardCache cache;
    ObjectiveTerms terms;
  };

  Candidate build_candidate(std::size_t layer, const LayerTransform& t) const;
  ObjectiveTerms score(const ForwardResult& fr, std::size_t layer) const;

  ModelParams base_;
  SearchConfig config_;
  std::vector<TokenSequence> calib_;
  RandomSource rng_;
  SearchState state_;
  ModelParams quantized_;      // quantized view of state_.params
  ForwardCache cache_;         // forward of quantized_ on calib_
  std::size_t window_accepts_ = 0;
};

SearchResult run_search(const ModelParams& base, const SearchConfig& config,
                        std::span<const TokenSequence> calib);

// Columns: step,layer,proposed_loss,best_loss,accepted,acceptance_rate_window
void write_curves_csv(const std::filesystem::path& path, std::span<const StepRecord> curve);
std::vector<StepRecord> read_curves_csv(const std::filesystem::path& path);

}  // namespace ivq
