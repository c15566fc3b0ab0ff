// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. Optional arguments select criteria by number.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "commands.hpp"
#include "ivq/calibration.hpp"
#include "ivq/checkpoint.hpp"
#include "ivq/error.hpp"
#include "ivq/invariance.hpp"
#include "ivq/model_io.hpp"
#include "ivq/search.hpp"

#ifndef IVQ_FIXTURE_DIR
#error "IVQ_FIXTURE_DIR must be defined"
#endif

using namespace ivq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const fs::path kFixtures = IVQ_FIXTURE_DIR;

ModelParams fixture_model() { return params_from_checkpoint(read_checkpoint(kFixtures / "toy_model.ivq")); }

std::vector<TokenSequence> fixture_seqs(const char* file, std::size_t n) {
  return load_sequences(kFixtures / file, n, 128, 128).sequences;
}

ModelConfig toy() {
  ModelConfig c;
  c.layers = 2;
  c.d_model = 64;
  c.d_ff = 128;
  c.vocab = 128;
  c.heads = 4;
  c.context = 128;
  return c;
}

std::vector<TokenSequence> random_tokens(RandomSource& rng, std::size_t n, std::size_t len, std::size_t vocab) {
  std::vector<TokenSequence> out(n, TokenSequence(len));
  for (auto& s : out)
    for (auto& t : s) t = static_cast<TokenId>(rng.uniform_index(vocab));
  return out;
}

std::vector<std::size_t> random_permutation(RandomSource& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.uniform_index(i + 1)]);
  return p;
}

QuantSpec g16() {
  QuantSpec s;
  s.bits = 2;
  s.group_size = 16;
  return s;
}

SearchConfig search_cfg(std::size_t steps) {
  SearchConfig c;
  c.steps = steps;
  c.quant = g16();
  c.matched_layers = {0, 1};
  c.seed = 0;
  return c;
}

// 1. Every non-clamped weight reconstructs within half a step; zeros exactly.
Outcome quant_round_trip() {
  RandomSource rng(2024);
  const std::size_t sizes[] = {16, 64, 128};
  const int widths[] = {2, 3, 8};
  double worst = -1.0;
  std::size_t checked = 0, zeros = 0, zero_fail = 0;
  for (int g = 0; g < 10000; ++g) {
    QuantSpec spec;
    spec.group_size = sizes[rng.uniform_index(3)];
    spec.bits = widths[rng.uniform_index(3)];
    const double spread = std::pow(10.0, 4.0 * rng.uniform() - 3.0);
    const double shift = spread * (2.0 * rng.uniform() - 1.0) * (rng.uniform() < 0.3 ? 3.0 : 0.0);
    std::vector<double> w(spec.group_size);
    for (auto& v : w) {
      if (rng.uniform() < 0.05) {
        v = 0.0;
      } else {
        v = shift + spread * rng.standard_normal();
      }
    }
    const GroupParams p = fit_group_params(w, spec);
    const auto codes = quantize_group(w, p, spec);
    const auto back = dequantize_group(codes, p);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) {
        ++zeros;
        zero_fail += back[i] != 0.0;
      }
      const double level = std::round(w[i] / p.scale) + p.zero_point;
      if (level < spec.q_min() || level > spec.q_max()) continue;
      ++checked;
      worst = std::max(worst, std::abs(w[i] - back[i]) - (p.scale / 2.0 + 1e-9));
    }
  }
  return {worst <= 0.0 && zero_fail == 0 && zeros > 0,
          fmt("%.0f weights checked, worst |err| - (s/2 + 1e-9) = %.3g, %.0f zeros, %.0f nonzero reconstructions",
              static_cast<double>(checked), worst, static_cast<double>(zeros), static_cast<double>(zero_fail))};
}

// 2. Permutations leave un-quantized logits unchanged.
Outcome permutation_invariance() {
  const ModelParams p = random_model(toy(), 7, 0.1);
  RandomSource rng(8);
  const auto seqs = random_tokens(rng, 2, 48, 128);
  const Matrix base = forward(p, seqs).logits;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    LayerTransform t = LayerTransform::identity(128);
    t.permutation = random_permutation(rng, 128);
    const ModelParams q = apply_transformation(p, rng.uniform_index(2), t);
    worst = std::max(worst, relative_diff(forward(q, seqs).logits, base));
  }
  return {worst <= 1e-8, fmt("100 permutations, max relative logit change %.3g", worst)};
}

// 3. Positive scalings leave logits unchanged; non-positive ones are refused.
Outcome scaling_invariance() {
  const ModelParams p = random_model(toy(), 9, 0.1);
  RandomSource rng(10);
  const auto seqs = random_tokens(rng, 2, 48, 128);
  const Matrix base = forward(p, seqs).logits;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    LayerTransform t = LayerTransform::identity(128);
    for (double& s : t.scales) s = 0.5 + 1.5 * rng.uniform();
    const ModelParams q = apply_transformation(p, rng.uniform_index(2), t);
    worst = std::max(worst, relative_diff(forward(q, seqs).logits, base));
  }
  LayerTransform bad = LayerTransform::identity(128);
  bad.scales[rng.uniform_index(128)] = -(0.5 + 1.5 * rng.uniform());
  bool rejected = false;
  try {
    apply_transformation(p, 0, bad);
  } catch (const DomainError&) {
    rejected = true;
  }
  return {worst <= 1e-8 && rejected,
          fmt("100 scalings, max relative logit change %.3g; negative scale rejected: ", worst) +
              (rejected ? "yes" : "no")};
}

// 4. Rotations: exact at zero, nearly invariant when tiny, not invariant when large.
Outcome rotation_behaviour() {
  const ModelParams p = fixture_model();
  const auto seqs = fixture_seqs("calib.txt", 4);
  const Matrix base = forward(p, seqs).logits;
  const double ce = cross_entropy(p, seqs);
  RandomSource rng(11);

  bool identity = true;
  for (std::size_t l = 0; l < 2; ++l) {
    LayerTransform t = LayerTransform::identity(128);
    identity = identity && forward(apply_transformation(p, l, t), seqs).logits == base;
  }
  double small_worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    LayerTransform t = LayerTransform::identity(128);
    for (double& a : t.angles) a = 1e-3 * (2.0 * rng.uniform() - 1.0);
    const double ce_t = cross_entropy(apply_transformation(p, trial % 2, t), seqs);
    small_worst = std::max(small_worst, std::abs(ce_t - ce) / ce);
  }
  LayerTransform big = LayerTransform::identity(128);
  for (double& a : big.angles) a = rng.uniform() < 0.5 ? -0.5 : 0.5;
  const double big_change = relative_diff(forward(apply_transformation(p, 0, big), seqs).logits, base);
  return {identity && small_worst <= 1e-3 && big_change > 1e-3,
          std::string("phi=0 exact: ") + (identity ? "yes" : "no") +
              fmt("; |phi|<=1e-3 max relative CE change %.3g; |phi|=0.5 relative logit change %.3g",
                  small_worst, big_change)};
}

// 5. Best loss is the running minimum; rejected steps leave state untouched.
Outcome hill_climb_soundness() {
  const ModelParams p = fixture_model();
  HillClimbSearch search(p, search_cfg(500), fixture_seqs("calib.txt", 4));
  double running = search.state().best_loss;
  bool monotone = true, running_min = true, untouched = true;
  std::size_t accepted = 0;
  while (search.state().step < 500) {
    const auto transforms = search.state().transforms;
    const auto params = search.state().params;
    const double before = search.state().best_loss;
    const StepRecord r = search.step();
    running = std::min(running, r.proposed_loss);
    running_min = running_min && r.best_loss == running && r.accepted == (r.proposed_loss < before);
    monotone = monotone && r.best_loss <= before;
    if (r.accepted) {
      ++accepted;
    } else {
      untouched = untouched && search.state().transforms == transforms && search.state().params == params &&
                  search.state().best_loss == before;
    }
  }
  return {monotone && running_min && untouched,
          std::string("500 steps, ") + std::to_string(accepted) + " accepted; non-increasing: " +
              (monotone ? "yes" : "no") + ", running minimum: " + (running_min ? "yes" : "no") +
              ", rejected steps bit-identical: " + (untouched ? "yes" : "no")};
}

struct EndToEnd {
  SearchResult all;
  double rtn_ppl = 0.0;
  double searched_ppl = 0.0;
};

const EndToEnd& end_to_end() {
  static const EndToEnd run = [] {
    EndToEnd e;
    const ModelParams p = fixture_model();
    e.all = run_search(p, search_cfg(2000), fixture_seqs("calib.txt", 4));
    const auto held = fixture_seqs("heldout.txt", 16);
    e.rtn_ppl = perplexity(p, held, g16());
    e.searched_ppl = perplexity(e.all.params, held, g16());
    return e;
  }();
  return run;
}

// 6. Search lowers the objective by at least 1% and does not hurt held-out perplexity.
Outcome end_to_end_improvement() {
  const EndToEnd& e = end_to_end();
  const double ratio = e.all.final_terms.total / e.all.initial.total;
  return {ratio <= 0.99 && e.searched_ppl <= e.rtn_ppl,
          fmt("objective %.5f -> %.5f (ratio %.4f); held-out ppl RTN %.4f, searched ", e.all.initial.total,
              e.all.final_terms.total, ratio, e.rtn_ppl) +
              fmt("%.4f", e.searched_ppl)};
}

// 7. Searching all transforms is at least as good as any single one (1% slack).
Outcome ablation_direction() {
  const EndToEnd& e = end_to_end();
  const ModelParams p = fixture_model();
  const auto calib = fixture_seqs("calib.txt", 4);
  const double all = e.all.final_terms.total;
  bool pass = true;
  std::string detail = fmt("all %.5f", all);
  const std::pair<const char*, std::array<bool, 3>> variants[] = {
      {"P", {true, false, false}}, {"S", {false, true, false}}, {"R", {false, false, true}}};
  for (const auto& [name, flags] : variants) {
    SearchConfig c = search_cfg(2000);
    c.permute = flags[0];
    c.scale = flags[1];
    c.rotate = flags[2];
    const double single = run_search(p, c, calib).final_terms.total;
    pass = pass && all <= single * 1.01;
    detail += std::string(", ") + name + "-only " + fmt("%.5f", single);
  }
  return {pass, detail};
}

// 8. Early acceptance rate is higher than late acceptance rate.
Outcome acceptance_curve() {
  const auto& curve = end_to_end().all.curve;
  auto rate = [&](std::size_t lo, std::size_t hi) {
    std::size_t a = 0;
    for (std::size_t i = lo; i < hi; ++i) a += curve[i].accepted;
    return static_cast<double>(a) / static_cast<double>(hi - lo);
  };
  const double early = rate(0, 500);
  const double late = rate(curve.size() - 500, curve.size());
  return {early > late, fmt("first 500 steps %.3f, last 500 steps %.3f", early, late)};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

// 9. Two identical command lines produce identical checkpoints and curves.
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "ivq_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::uint64_t hashes[2][2];
  for (int run = 0; run < 2; ++run) {
    const std::string out = (dir / ("run" + std::to_string(run) + ".ivq")).string();
    const std::string model = (kFixtures / "toy_model.ivq").string();
    const std::string calib = (kFixtures / "calib.txt").string();
    const std::string held = (kFixtures / "heldout.txt").string();
    const std::string curves = out + ".csv";
    const char* argv[] = {"ivq", "search", model.c_str(), calib.c_str(), "--heldout", held.c_str(),
                          "--group-size", "16", "--steps", "300", "--calib-sequences", "4",
                          "--seed", "17", "--out", out.c_str(), "--curves", curves.c_str()};
    std::ostringstream log, err;
    const int code = cli::run(static_cast<int>(std::size(argv)), argv, log, err);
    if (code != 0) return {false, "cmd_search exited with " + std::to_string(code) + ": " + err.str()};
    hashes[run][0] = fnv1a(file_bytes(out));
    hashes[run][1] = fnv1a(file_bytes(curves));
  }
  const bool same = hashes[0][0] == hashes[1][0] && hashes[0][1] == hashes[1][1];
  char buf[160];
  std::snprintf(buf, sizeof buf, "checkpoint %016llx / %016llx, curves %016llx / %016llx",
                static_cast<unsigned long long>(hashes[0][0]), static_cast<unsigned long long>(hashes[1][0]),
                static_cast<unsigned long long>(hashes[0][1]), static_cast<unsigned long long>(hashes[1][1]));
  fs::remove_all(dir);
  return {same, buf};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "quantization round trip", 5.0, quant_round_trip},
      {2, "permutation invariance", 30.0, permutation_invariance},
      {3, "scaling invariance", 30.0, scaling_invariance},
      {4, "rotation behaviour", 60.0, rotation_behaviour},
      {5, "hill-climbing soundness", 120.0, hill_climb_soundness},
      {6, "end-to-end improvement", 600.0, end_to_end_improvement},
      {7, "ablation direction", 1800.0, ablation_direction},
      {8, "acceptance-rate curve", 600.0, acceptance_curve},
      {9, "determinism", 600.0, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s [%d] %s: %s (%.1f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
