#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "ivq/calibration.hpp"
#include "ivq/checkpoint.hpp"
#include "ivq/error.hpp"
#include "ivq/model_io.hpp"
#include "ivq/parallel.hpp"

#ifndef IVQ_VERSION
#define IVQ_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace ivq::cli {

namespace {

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::size_t context_len(const ModelParams& p, std::size_t requested) {
  if (requested == 0) return p.config.context;
  if (requested > p.config.context)
    throw DomainError("--seq-len " + std::to_string(requested) + " exceeds the model context " +
                      std::to_string(p.config.context));
  return requested;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json terms_json(const ObjectiveTerms& t) {
  return {{"cross_entropy", t.cross_entropy}, {"activation_mse", t.activation_mse}, {"total", t.total}};
}

}  // namespace

std::string version_string() { return IVQ_VERSION; }

std::optional<QuantSpec> spec_for(int bits, std::size_t group_size) {
  if (bits == kFullPrecisionBits) return std::nullopt;
  QuantSpec s;
  s.bits = bits;
  s.group_size = group_size;
  s.validate();
  return s;
}

// ---- quantize ----

json cmd_quantize(const QuantizeOptions& opt, std::ostream& log) {
  const ModelParams params = params_from_checkpoint(read_checkpoint(opt.model));
  const auto spec = spec_for(opt.bits, opt.group_size);

  const Checkpoint fp = to_checkpoint(params);
  json matrices = json::array();
  double max_err = 0.0;
  double scale_sum = 0.0;
  std::size_t groups = 0;
  log << "matrix                         max_abs_err    mean_scale  groups\n";
  for (const auto& name : quantized_matrix_names(params.config)) {
    const Tensor& t = fp.at(name);
    const Matrix w(t.dims[0], t.dims[1], t.to_doubles());
    QuantErrorStats st;
    if (spec) st = quant_error_stats(w, *spec);
    max_err = std::max(max_err, st.max_abs_error);
    scale_sum += st.mean_scale * static_cast<double>(st.groups);
    groups += st.groups;
    matrices.push_back({{"name", name},
                        {"max_abs_error", st.max_abs_error},
                        {"mean_scale", st.mean_scale},
                        {"groups", st.groups}});
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %12.6g %13.6g %7zu\n", name.c_str(), st.max_abs_error,
                  st.mean_scale, st.groups);
    log << line;
  }
  const double mean_scale = groups ? scale_sum / static_cast<double>(groups) : 0.0;
  log << "overall max_abs_err " << fmt("%.6g", max_err) << "  mean_scale " << fmt("%.6g", mean_scale)
      << "\n";

  write_checkpoint(opt.out, spec ? to_quantized_checkpoint(params, *spec) : to_checkpoint(params));

  json report = {{"version", version_string()},
                 {"model", opt.model.string()},
                 {"out", opt.out.string()},
                 {"bits", opt.bits},
                 {"group_size", opt.group_size},
                 {"max_abs_error", max_err},
                 {"mean_scale", mean_scale},
                 {"groups", groups},
                 {"matrices", matrices}};
  write_json(opt.report.empty() ? with_suffix(opt.out, ".report.json") : opt.report, report);
  return report;
}

// ---- search ----

SearchConfig SearchOptions::search_config(std::size_t layers) const {
  SearchConfig c;
  c.steps = steps;
  c.sigma_scale = sigma_s;
  c.sigma_rotation = sigma_r;
  c.subset_fraction = subset;
  c.alpha_ratio = alpha_ratio;
  c.alpha = alpha;
  c.matched_layers = evenly_spaced_layers(layers, match_layers == 0 ? layers : match_layers);
  c.quant = spec_for(bits, group_size);
  c.seed = seed;
  c.permute = permute;
  c.scale = scale;
  c.rotate = rotate;
  c.acceptance_window = window;
  return c;
}

json SearchOptions::to_json() const {
  json j = {{"model", model.string()},
            {"calib", calib.string()},
            {"heldout", heldout.string()},
            {"out", out.string()},
            {"curves", curves.string()},
            {"bits", bits},
            {"group_size", group_size},
            {"steps", steps},
            {"sigma_s", sigma_s},
            {"sigma_r", sigma_r},
            {"subset", subset},
            {"alpha_ratio", alpha_ratio},
            {"alpha", nullptr},
            {"match_layers", match_layers},
            {"seed", seed},
            {"calib_sequences", calib_sequences},
            {"heldout_sequences", heldout_sequences},
            {"seq_len", seq_len},
            {"split_fraction", split_fraction},
            {"permute", permute},
            {"scale", scale},
            {"rotate", rotate},
            {"window", window}};
  if (alpha) j["alpha"] = *alpha;
  return j;
}

SearchOptions SearchOptions::from_json(const json& j) {
  SearchOptions o;
  try {
    o.model = j.at("model").get<std::string>();
    o.calib = j.at("calib").get<std::string>();
    o.heldout = j.at("heldout").get<std::string>();
    o.out = j.at("out").get<std::string>();
    o.curves = j.at("curves").get<std::string>();
    o.bits = j.at("bits").get<int>();
    o.group_size = j.at("group_size").get<std::size_t>();
    o.steps = j.at("steps").get<std::size_t>();
    o.sigma_s = j.at("sigma_s").get<double>();
    o.sigma_r = j.at("sigma_r").get<double>();
    o.subset = j.at("subset").get<double>();
    o.alpha_ratio = j.at("alpha_ratio").get<double>();
    if (!j.at("alpha").is_null()) o.alpha = j.at("alpha").get<double>();
    o.match_layers = j.at("match_layers").get<std::size_t>();
    o.seed = j.at("seed").get<std::uint64_t>();
    o.calib_sequences = j.at("calib_sequences").get<std::size_t>();
    o.heldout_sequences = j.at("heldout_sequences").get<std::size_t>();
    o.seq_len = j.at("seq_len").get<std::size_t>();
    o.split_fraction = j.at("split_fraction").get<double>();
    o.permute = j.at("permute").get<bool>();
    o.scale = j.at("scale").get<bool>();
    o.rotate = j.at("rotate").get<bool>();
    o.window = j.at("window").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest options: ") + e.what());
  }
  return o;
}

SearchSummary cmd_search(const SearchOptions& opt, std::ostream& log) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_at = utc_now();
  const ModelParams params = params_from_checkpoint(read_checkpoint(opt.model));
  const std::size_t len = context_len(params, opt.seq_len);
  const std::size_t vocab = params.config.vocab;

  CalibSet calib = load_sequences(opt.calib, opt.calib_sequences, len, vocab);
  CalibSet heldout;
  if (!opt.heldout.empty()) {
    heldout = load_sequences(opt.heldout, opt.heldout_sequences, len, vocab);
  } else {
    auto [c, h] = split_eval(calib, opt.split_fraction, opt.seed);
    calib = std::move(c);
    heldout = std::move(h);
  }

  const SearchConfig cfg = opt.search_config(params.config.layers);
  cfg.validate(params.config);

  HillClimbSearch search(params, cfg, calib.sequences);
  log << "calibration " << calib.sequences.size() << " x " << len << " tokens, held-out "
      << heldout.sequences.size() << " sequences, " << evaluation_threads() << " thread(s)\n";
  log << "initial objective " << fmt("%.6f", search.state().initial.total) << " (ce "
      << fmt("%.6f", search.state().initial.cross_entropy) << ", mse "
      << fmt("%.6g", search.state().initial.activation_mse) << ", alpha "
      << fmt("%.6g", search.state().alpha) << ")\n";
  while (search.state().step < cfg.steps) {
    const StepRecord& r = search.step();
    if (opt.log_every && (r.step % opt.log_every == 0 || r.step == cfg.steps))
      log << "step " << r.step << "  best " << fmt("%.6f", r.best_loss) << "  accept "
          << fmt("%.3f", r.acceptance_rate_window) << "\n";
  }

  SearchSummary s;
  s.result = search.run();
  const auto& res = s.result;
  log << "final objective " << fmt("%.6f", res.final_terms.total) << " ("
      << fmt("%.2f", 100.0 * (1.0 - res.final_terms.total / res.initial.total)) << "% lower)\n";

  Checkpoint out_ckpt = cfg.quant ? to_quantized_checkpoint(res.params, *cfg.quant) : to_checkpoint(res.params);
  append_transforms(out_ckpt, res.transforms);
  write_checkpoint(opt.out, out_ckpt);
  const fs::path curves = opt.curves.empty() ? with_suffix(opt.out, ".curves.csv") : opt.curves;
  write_curves_csv(curves, res.curve);

  s.fp_perplexity = perplexity(params, heldout.sequences);
  s.rtn_perplexity = perplexity(params, heldout.sequences, cfg.quant);
  s.searched_perplexity = perplexity(res.params, heldout.sequences, cfg.quant);
  const double stored_ppl = perplexity(params_from_checkpoint(out_ckpt), heldout.sequences);
  log << "held-out perplexity: fp " << fmt("%.4f", s.fp_perplexity) << "  rtn "
      << fmt("%.4f", s.rtn_perplexity) << "  searched " << fmt("%.4f", s.searched_perplexity)
      << "  (stored " << fmt("%.4f", stored_ppl) << ")\n";

  std::size_t accepted = 0;
  for (const auto& r : res.curve) accepted += r.accepted;
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  json config = {{"steps", cfg.steps},
                 {"sigma_scale", cfg.sigma_scale},
                 {"sigma_rotation", cfg.sigma_rotation},
                 {"subset_fraction", cfg.subset_fraction},
                 {"alpha_ratio", cfg.alpha_ratio},
                 {"alpha", res.alpha},
                 {"matched_layers", cfg.matched_layers},
                 {"bits", opt.bits},
                 {"group_size", opt.group_size},
                 {"seed", cfg.seed},
                 {"permute", cfg.permute},
                 {"scale", cfg.scale},
                 {"rotate", cfg.rotate},
                 {"acceptance_window", cfg.acceptance_window}};
  json manifest = {
      {"version", version_string()},
      {"command", "search"},
      {"options", opt.to_json()},
      {"config", config},
      {"inputs", {{"model", opt.model.string()}, {"calib", opt.calib.string()}, {"heldout", opt.heldout.string()}}},
      {"outputs", {{"checkpoint", opt.out.string()}, {"curves", curves.string()}}},
      {"seed", opt.seed},
      {"started_at", started_at},
      {"wall_clock_seconds", seconds},
      {"threads", evaluation_threads()},
      {"metrics",
       {{"initial", terms_json(res.initial)},
        {"final", terms_json(res.final_terms)},
        {"accepted", accepted},
        {"fp_perplexity", s.fp_perplexity},
        {"rtn_perplexity", s.rtn_perplexity},
        {"searched_perplexity", s.searched_perplexity},
        {"stored_perplexity", stored_ppl}}}};
  write_json(with_suffix(opt.out, ".manifest.json"), manifest);
  return s;
}

// ---- eval ----

EvalReport cmd_eval(const EvalOptions& opt, std::ostream& log) {
  const ModelParams params = params_from_checkpoint(read_checkpoint(opt.model));
  const std::size_t len = context_len(params, opt.seq_len);
  const CalibSet corpus = load_sequences(opt.corpus, opt.max_sequences, len, params.config.vocab);

  EvalReport r;
  r.fp_cross_entropy = cross_entropy(params, corpus.sequences);
  r.fp_perplexity = std::exp(r.fp_cross_entropy);
  log << "sequences " << corpus.sequences.size() << ", tokens " << corpus.token_count() << "\n";
  log << "full precision: ce " << fmt("%.6f", r.fp_cross_entropy) << " nats/token, perplexity "
      << fmt("%.4f", r.fp_perplexity) << "\n";
  if (opt.bits) {
    if (const auto spec = spec_for(*opt.bits, opt.group_size)) {
      r.quant_cross_entropy = cross_entropy(fake_quantize_params(params, *spec), corpus.sequences);
      r.quant_perplexity = std::exp(*r.quant_cross_entropy);
      log << *opt.bits << "-bit g" << opt.group_size << ": ce " << fmt("%.6f", *r.quant_cross_entropy)
          << " nats/token, perplexity " << fmt("%.4f", *r.quant_perplexity) << "\n";
    }
  }
  return r;
}

// ---- curves ----

std::string svg_line_plot(const std::vector<double>& x, const std::vector<double>& y,
                          const std::string& title, const std::string& y_label) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double x0 = x.empty() ? 0.0 : *std::min_element(x.begin(), x.end());
  double x1 = x.empty() ? 1.0 : *std::max_element(x.begin(), x.end());
  double y0 = y.empty() ? 0.0 : *std::min_element(y.begin(), y.end());
  double y1 = y.empty() ? 1.0 : *std::max_element(y.begin(), y.end());
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    s << "<text x=\"" << px(fx) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
      << fmt("%g", std::round(fx)) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
      << fmt("%.4g", fy) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">step</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) s << (i ? " " : "") << fmt("%.2f", px(x[i])) << ',' << fmt("%.2f", py(y[i]));
  s << "\"/>\n</svg>\n";
  return s.str();
}

std::vector<fs::path> cmd_curves(const CurvesOptions& opt, std::ostream& log) {
  fs::path csv = opt.run;
  if (fs::is_directory(csv)) {
    csv = opt.run / "curves.csv";
    if (!fs::exists(csv)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(opt.run))
        if (e.path().extension() == ".csv") found.push_back(e.path());
      if (found.size() != 1)
        throw IoError("expected exactly one curves CSV in " + opt.run.string());
      csv = found.front();
    }
  }
  if (!fs::is_regular_file(csv)) throw IoError("curves CSV not found: " + csv.string());
  const auto curve = read_curves_csv(csv);
  for (const auto& r : curve)
    if (!(r.acceptance_rate_window >= 0.0 && r.acceptance_rate_window <= 1.0))
      throw FormatError("acceptance rate out of [0, 1] at step " + std::to_string(r.step));

  const fs::path dir = opt.out_dir.empty() ? csv.parent_path() : opt.out_dir;
  if (!dir.empty()) fs::create_directories(dir);
  std::vector<fs::path> written;
  if (opt.format == CurveFormat::csv) {
    const fs::path target = dir / "curves.csv";
    if (!(fs::exists(target) && fs::equivalent(target, csv)))
      fs::copy_file(csv, target, fs::copy_options::overwrite_existing);
    written.push_back(target);
  } else {
    std::vector<double> steps, best, accept;
    for (const auto& r : curve) {
      steps.push_back(static_cast<double>(r.step));
      best.push_back(r.best_loss);
      accept.push_back(r.acceptance_rate_window);
    }
    const std::pair<const char*, std::string> panels[] = {
        {"loss.svg", svg_line_plot(steps, best, "Calibration loss", "best loss")},
        {"acceptance.svg", svg_line_plot(steps, accept, "Acceptance rate", "acceptance rate (window)")}};
    for (const auto& [name, svg] : panels) {
      const fs::path p = dir / name;
      std::ofstream out(p, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + p.string());
      out << svg;
      written.push_back(p);
    }
  }
  for (const auto& p : written) log << "wrote " << p.string() << "\n";
  return written;
}

// ---- command line ----

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantize small decoder checkpoints and search FFN invariance transforms", "ivq"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  const std::vector<int> bit_choices{1, 2, 3, 4, 8, kFullPrecisionBits};

  QuantizeOptions q;
  auto* quant = app.add_subcommand("quantize", "Round-to-nearest quantize a checkpoint and report errors");
  quant->add_option("model", q.model, "Input checkpoint")->required()->check(CLI::ExistingFile);
  quant->add_option("--out,-o", q.out, "Output checkpoint")->required();
  quant->add_option("--report", q.report, "Report JSON (default <out>.report.json)");
  quant->add_option("--bits", q.bits, "Bit width (16 keeps full precision)")
      ->capture_default_str()->check(CLI::IsMember(bit_choices));
  quant->add_option("--group-size", q.group_size)->capture_default_str()->check(CLI::PositiveNumber);

  SearchOptions so;
  std::string replay;
  auto* srch = app.add_subcommand("search", "Hill-climb FFN transforms against the quantized objective");
  srch->add_option("model", so.model, "Input checkpoint")->check(CLI::ExistingFile);
  srch->add_option("calib", so.calib, "Calibration token file")->check(CLI::ExistingFile);
  srch->add_option("--heldout", so.heldout, "Held-out token file (default: split from calib)")
      ->check(CLI::ExistingFile);
  srch->add_option("--out,-o", so.out, "Output checkpoint");
  srch->add_option("--curves", so.curves, "Curves CSV (default <out>.curves.csv)");
  srch->add_option("--bits", so.bits)->capture_default_str()->check(CLI::IsMember(bit_choices));
  srch->add_option("--group-size", so.group_size)->capture_default_str()->check(CLI::PositiveNumber);
  srch->add_option("--steps", so.steps)->capture_default_str();
  srch->add_option("--sigma-s", so.sigma_s, "Scale perturbation std")->capture_default_str()->check(CLI::NonNegativeNumber);
  srch->add_option("--sigma-r", so.sigma_r, "Rotation perturbation std")->capture_default_str()->check(CLI::NonNegativeNumber);
  srch->add_option("--subset", so.subset, "Fraction of neurons per proposal")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  srch->add_option("--alpha-ratio", so.alpha_ratio)->capture_default_str()->check(CLI::PositiveNumber);
  srch->add_option("--alpha", so.alpha, "Fixed activation weight (overrides --alpha-ratio)");
  srch->add_option("--match-layers", so.match_layers, "Number of evenly spaced matched layers (0 = all)")->capture_default_str();
  srch->add_option("--seed", so.seed)->capture_default_str();
  srch->add_option("--calib-sequences", so.calib_sequences)->capture_default_str()->check(CLI::PositiveNumber);
  srch->add_option("--heldout-sequences", so.heldout_sequences)->capture_default_str()->check(CLI::PositiveNumber);
  srch->add_option("--seq-len", so.seq_len, "Tokens per sequence (0 = model context)")->capture_default_str();
  srch->add_option("--split", so.split_fraction, "Calibration share when splitting")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  srch->add_option("--window", so.window, "Acceptance-rate window")->capture_default_str()->check(CLI::PositiveNumber);
  srch->add_option("--log-every", so.log_every)->capture_default_str();
  bool no_permute = false, no_scale = false, no_rotate = false;
  srch->add_flag("--no-permute", no_permute);
  srch->add_flag("--no-scale", no_scale);
  srch->add_flag("--no-rotate", no_rotate);
  srch->add_option("--replay", replay, "Re-run from a manifest (--out/--curves may override)")
      ->check(CLI::ExistingFile);

  EvalOptions eo;
  auto* ev = app.add_subcommand("eval", "Cross-entropy and perplexity on a token file");
  ev->add_option("model", eo.model)->required()->check(CLI::ExistingFile);
  ev->add_option("corpus", eo.corpus)->required()->check(CLI::ExistingFile);
  ev->add_option("--bits", eo.bits, "Also evaluate fake-quantized")->check(CLI::IsMember(bit_choices));
  ev->add_option("--group-size", eo.group_size)->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--max-sequences", eo.max_sequences)->check(CLI::PositiveNumber);
  ev->add_option("--seq-len", eo.seq_len)->capture_default_str();

  CurvesOptions co;
  auto* cv = app.add_subcommand("curves", "Export optimization curves");
  cv->add_option("run", co.run, "Curves CSV or run directory")->required();
  cv->add_option("--format", co.format)
      ->capture_default_str()
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, CurveFormat>{{"csv", CurveFormat::csv}, {"svg-plot", CurveFormat::svg_plot}}));
  cv->add_option("--out-dir", co.out_dir);

  try {
    app.parse(argc, argv);
    if (srch->parsed()) {
      if (!replay.empty()) {
        std::ifstream in(replay);
        json m;
        try {
          m = json::parse(in);
        } catch (const json::exception& e) {
          throw FormatError("bad manifest " + replay + ": " + e.what());
        }
        SearchOptions r = SearchOptions::from_json(m.at("options"));
        if (srch->count("--out")) r.out = so.out;
        if (srch->count("--curves")) r.curves = so.curves;
        so = r;
      } else {
        so.permute = !no_permute;
        so.scale = !no_scale;
        so.rotate = !no_rotate;
      }
      if (so.model.empty() || so.calib.empty() || so.out.empty())
        throw CLI::RequiredError("model, calib and --out (or --replay)");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (quant->parsed()) {
      cmd_quantize(q, out);
    } else if (srch->parsed()) {
      cmd_search(so, out);
    } else if (ev->parsed()) {
      cmd_eval(eo, out);
    } else if (cv->parsed()) {
      cmd_curves(co, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ivq::cli
