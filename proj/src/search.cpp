#include "ivq/search.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ivq/error.hpp"

namespace ivq {

namespace {

constexpr std::uint64_t kLayerStream = 0;
constexpr std::uint64_t kPerturbStream = 1;

double trace_mse(const ActivationTrace& trace, const ActivationTrace& reference,
                 std::span<const std::size_t> matched) {
  if (matched.empty()) return 0.0;
  if (trace.layers.size() != matched.size()) throw ShapeError("objective: trace/matched mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    const auto it = std::find(reference.layers.begin(), reference.layers.end(), matched[i]);
    if (it == reference.layers.end()) {
      throw ShapeError("objective: reference trace lacks layer " + std::to_string(matched[i]));
    }
    const auto idx = static_cast<std::size_t>(it - reference.layers.begin());
    total += mse(trace.outputs[i], reference.outputs[idx]);
  }
  return total / static_cast<double>(matched.size());
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void SearchConfig::validate(const ModelConfig& model) const {
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) {
    throw DomainError("SearchConfig: subset fraction must be in (0, 1]");
  }
  if (!(sigma_scale >= 0.0) || !(sigma_rotation >= 0.0)) {
    throw DomainError("SearchConfig: standard deviations must be non-negative");
  }
  if (!(alpha_ratio > 0.0)) throw DomainError("SearchConfig: alpha ratio must be positive");
  if (alpha && !(*alpha >= 0.0)) throw DomainError("SearchConfig: alpha must be non-negative");
  if (acceptance_window == 0) throw DomainError("SearchConfig: acceptance window must be positive");
  std::set<std::size_t> seen;
  for (std::size_t l : matched_layers) {
    if (l >= model.layers) throw DomainError("SearchConfig: matched layer out of range");
    if (!seen.insert(l).second) throw DomainError("SearchConfig: duplicate matched layer");
  }
  if (quant) quant->validate();
}

std::vector<std::size_t> evenly_spaced_layers(std::size_t layers, std::size_t count) {
  count = std::min(count, layers);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back((2 * i + 1) * layers / (2 * count));
  return out;
}

ObjectiveTerms objective(const ModelParams& params, const std::optional<QuantSpec>& spec,
                         std::span<const TokenSequence> calib, const ActivationTrace& reference,
                         double alpha, std::span<const std::size_t> matched) {
  if (!(alpha >= 0.0)) throw DomainError("objective: alpha must be non-negative");
  const ForwardResult fr = spec ? forward(fake_quantize_params(params, *spec), calib, matched)
                                : forward(params, calib, matched);
  ObjectiveTerms t;
  t.cross_entropy = next_token_cross_entropy(fr.logits, calib);
  t.activation_mse = trace_mse(fr.trace, reference, matched);
  t.total = t.cross_entropy + alpha * t.activation_mse;
  return t;
}

HillClimbSearch::HillClimbSearch(ModelParams base, SearchConfig config,
                                 std::vector<TokenSequence> calib,
                                 std::optional<std::vector<LayerTransform>> initial)
    : base_(std::move(base)), config_(std::move(config)), calib_(std::move(calib)), rng_(config_.seed) {
  base_.validate();
  config_.validate(base_.config);
  if (calib_.empty()) throw DomainError("search: calibration set is empty");
  std::sort(config_.matched_layers.begin(), config_.matched_layers.end());

  const std::size_t n_layers = base_.config.layers;
  const std::size_t d_ff = base_.config.d_ff;
  if (initial) {
    if (initial->size() != n_layers) throw DomainError("search: initial transform count mismatch");
    state_.transforms = std::move(*initial);
  } else {
    state_.transforms.assign(n_layers, LayerTransform::identity(d_ff));
  }
  state_.params = base_;
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (!state_.transforms[l].is_identity())
      state_.params.layers[l].ffn = transform_ffn(base_.layers[l].ffn, state_.transforms[l]);
  }

  // Reference activations come from the un-quantized starting parameters.
  state_.reference = forward(base_, calib_, config_.matched_layers).trace;

  quantized_ = config_.quant ? fake_quantize_params(state_.params, *config_.quant) : state_.params;
  const ForwardResult fr = forward(quantized_, calib_, config_.matched_layers, &cache_);
  ObjectiveTerms init;
  init.cross_entropy = next_token_cross_entropy(fr.logits, calib_);
  init.activation_mse = trace_mse(fr.trace, state_.reference, config_.matched_layers);
  if (config_.alpha) {
    state_.alpha = *config_.alpha;
  } else if (init.activation_mse > 0.0) {
    state_.alpha = init.cross_entropy / (config_.alpha_ratio * init.activation_mse);
  }
  init.total = init.cross_entropy + state_.alpha * init.activation_mse;
  state_.initial = init;
  state_.best = init;
  state_.best_loss = init.total;
}

Proposal HillClimbSearch::propose() const {
  const std::uint64_t step = state_.step + 1;
  RandomSource layer_rng = rng_.substream(step, kLayerStream);
  Proposal p;
  p.layer = layer_rng.uniform_index(base_.config.layers);
  RandomSource rng = rng_.substream(step, kPerturbStream + p.layer);

  const LayerTransform& current = state_.transforms[p.layer];
  const std::size_t n = current.d_ff();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(config_.subset_fraction * static_cast<double>(n) - 1e-9)), 1, n);

  // Uniform random k-subset of positions, in random order (partial shuffle).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.uniform_index(n - i)]);
  p.positions.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));

  p.transform = current;
  if (config_.permute && k >= 2) {
    // Cyclic shift along the random order: every chosen position moves.
    for (std::size_t j = 0; j < k; ++j)
      p.transform.permutation[p.positions[j]] = current.permutation[p.positions[(j + 1) % k]];
  }

  // Scales and angles are indexed by the original neuron, so perturb the
  // neurons that currently sit at the chosen positions.
  if (config_.scale && config_.sigma_scale > 0.0) {
    for (std::size_t pos : p.positions) {
      const std::size_t neuron = current.permutation[pos];
      double s;
      do {
        s = current.scales[neuron] + config_.sigma_scale * rng.standard_normal();
      } while (!(s > 0.0));
      p.transform.scales[neuron] = s;
    }
  }
  if (config_.rotate && config_.sigma_rotation > 0.0) {
    std::set<std::size_t> pairs;
    for (std::size_t pos : p.positions) pairs.insert(current.permutation[pos] / 2);
    for (std::size_t pair : pairs)
      p.transform.angles[pair] = current.angles[pair] + config_.sigma_rotation * rng.standard_normal();
  }
  return p;
}

ObjectiveTerms HillClimbSearch::score(const ForwardResult& fr, std::size_t) const {
  ObjectiveTerms t;
  t.cross_entropy = next_token_cross_entropy(fr.logits, calib_);
  t.activation_mse = trace_mse(fr.trace, state_.reference, config_.matched_layers);
  t.total = t.cross_entropy + state_.alpha * t.activation_mse;
  return t;
}

HillClimbSearch::Candidate HillClimbSearch::build_candidate(std::size_t layer,
                                                            const LayerTransform& t) const {
  Candidate c;
  c.ffn = transform_ffn(base_.layers[layer].ffn, t);
  c.quantized = quantized_;
  FfnWeights& qffn = c.quantized.layers[layer].ffn;
  if (config_.quant) {
    qffn.w_up = fake_quantize_matrix(c.ffn.w_up, *config_.quant);
    qffn.w_down = fake_quantize_matrix(c.ffn.w_down, *config_.quant);
  } else {
    qffn.w_up = c.ffn.w_up;
    qffn.w_down = c.ffn.w_down;
  }
  qffn.b_up = c.ffn.b_up;
  qffn.b_down = c.ffn.b_down;
  const ForwardResult fr =
      forward_from_ffn(c.quantized, calib_, config_.matched_layers, layer, cache_, &c.cache);
  c.terms = score(fr, layer);
  return c;
}

ObjectiveTerms HillClimbSearch::evaluate(std::size_t layer, const LayerTransform& t) const {
  return build_candidate(layer, t).terms;
}

const StepRecord& HillClimbSearch::step() {
  Proposal p = propose();
  Candidate c = build_candidate(p.layer, p.transform);

  StepRecord rec;
  rec.step = state_.step + 1;
  rec.layer = p.layer;
  rec.proposed_loss = c.terms.total;
  rec.accepted = c.terms.total < state_.best_loss;
  if (rec.accepted) {
    state_.transforms[p.layer] = std::move(p.transform);
    state_.params.layers[p.layer].ffn = std::move(c.ffn);
    quantized_ = std::move(c.quantized);
    cache_ = std::move(c.cache);
    state_.best_loss = c.terms.total;
    state_.best = c.terms;
  }
  rec.best_loss = state_.best_loss;

  const std::size_t w = config_.acceptance_window;
  window_accepts_ += rec.accepted ? 1 : 0;
  if (state_.log.size() >= w && state_.log[state_.log.size() - w].accepted) --window_accepts_;
  const std::size_t span = std::min(state_.log.size() + 1, w);
  rec.acceptance_rate_window = static_cast<double>(window_accepts_) / static_cast<double>(span);

  state_.step = rec.step;
  state_.log.push_back(rec);
  return state_.log.back();
}

SearchResult HillClimbSearch::run() {
  while (state_.step < config_.steps) step();
  SearchResult r;
  r.params = state_.params;
  r.transforms = state_.transforms;
  r.curve = state_.log;
  r.initial = state_.initial;
  r.final_terms = state_.best;
  r.alpha = state_.alpha;
  return r;
}

SearchResult run_search(const ModelParams& base, const SearchConfig& config,
                        std::span<const TokenSequence> calib) {
  HillClimbSearch search(base, config, std::vector<TokenSequence>(calib.begin(), calib.end()));
  return search.run();
}

void write_curves_csv(const std::filesystem::path& path, std::span<const StepRecord> curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write curves to " + path.string());
  out << "step,layer,proposed_loss,best_loss,accepted,acceptance_rate_window\n";
  for (const auto& r : curve) {
    out << r.step << ',' << r.layer << ',' << format_double(r.proposed_loss) << ','
        << format_double(r.best_loss) << ',' << (r.accepted ? 1 : 0) << ','
        << format_double(r.acceptance_rate_window) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<StepRecord> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open curves file " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line.rfind("step,layer,", 0) != 0) {
    throw ParseError("missing curves header", line_no);
  }
  std::vector<StepRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("expected 6 columns", line_no);
    try {
      StepRecord r;
      r.step = std::stoull(cells[0]);
      r.layer = std::stoull(cells[1]);
      r.proposed_loss = std::stod(cells[2]);
      r.best_loss = std::stod(cells[3]);
      r.accepted = cells[4] == "1";
      r.acceptance_rate_window = std::stod(cells[5]);
      out.push_back(r);
    } catch (const std::exception&) {
      throw ParseError("malformed curves row", line_no);
    }
  }
  return out;
}

}  // namespace ivq
