#include <pybind11/iostream.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "commands.hpp"
#include "ivq/calibration.hpp"
#include "ivq/checkpoint.hpp"
#include "ivq/error.hpp"
#include "ivq/invariance.hpp"
#include "ivq/model_io.hpp"
#include "ivq/search.hpp"

#include <iostream>

namespace py = pybind11;
using namespace ivq;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const DoubleArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

template <class T>
py::array_t<T> vec_array(const std::vector<T>& v) {
  py::array_t<T> out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict step_dict(const StepRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["layer"] = r.layer;
  d["proposed_loss"] = r.proposed_loss;
  d["best_loss"] = r.best_loss;
  d["accepted"] = r.accepted;
  d["acceptance_rate_window"] = r.acceptance_rate_window;
  return d;
}

py::dict terms_dict(const ObjectiveTerms& t) {
  py::dict d;
  d["cross_entropy"] = t.cross_entropy;
  d["activation_mse"] = t.activation_mse;
  d["total"] = t.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Group quantization and FFN invariance search";

  auto base = py::register_exception<Error>(m, "IvqError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());

  py::class_<QuantSpec>(m, "QuantSpec")
      .def(py::init([](int bits, std::size_t group_size, bool strict) {
             QuantSpec s{bits, group_size, strict};
             s.validate();
             return s;
           }),
           py::arg("bits") = 2, py::arg("group_size") = 128, py::arg("strict") = false)
      .def_readonly("bits", &QuantSpec::bits)
      .def_readonly("group_size", &QuantSpec::group_size)
      .def_readonly("strict", &QuantSpec::strict)
      .def_property_readonly("q_max", &QuantSpec::q_max)
      .def("__eq__", [](const QuantSpec& a, const QuantSpec& b) { return a == b; })
      .def("__repr__", [](const QuantSpec& s) {
        return "QuantSpec(bits=" + std::to_string(s.bits) + ", group_size=" + std::to_string(s.group_size) + ")";
      });

  m.def("quantize", [](const DoubleArray& w, const QuantSpec& spec) {
        const QuantizedMatrix q = quantize_matrix(to_matrix(w), spec);
        py::array_t<Code> codes({q.rows, q.cols});
        std::copy(q.codes.begin(), q.codes.end(), codes.mutable_data());
        return py::make_tuple(codes, vec_array(q.scales), vec_array(q.zero_points));
      },
      py::arg("w"), py::arg("spec"), "Returns (codes, scales, zero_points); groups run along rows.");
  m.def("dequantize",
        [](const py::array_t<Code, py::array::c_style | py::array::forcecast>& codes, std::vector<double> scales,
           std::vector<std::int32_t> zeros, const QuantSpec& spec) {
          if (codes.ndim() != 2) throw ShapeError("expected 2-d codes");
          QuantizedMatrix q;
          q.spec = spec;
          q.rows = static_cast<std::size_t>(codes.shape(0));
          q.cols = static_cast<std::size_t>(codes.shape(1));
          q.codes.assign(codes.data(), codes.data() + q.rows * q.cols);
          q.scales = std::move(scales);
          q.zero_points = std::move(zeros);
          if (q.scales.size() != q.group_count() || q.zero_points.size() != q.group_count())
            throw ShapeError("scales/zero_points do not match the group count");
          return to_array(dequantize_matrix(q));
        },
        py::arg("codes"), py::arg("scales"), py::arg("zero_points"), py::arg("spec"));
  m.def("fake_quantize", [](const DoubleArray& w, const QuantSpec& spec) {
        return to_array(fake_quantize_matrix(to_matrix(w), spec));
      },
      py::arg("w"), py::arg("spec"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](std::size_t layers, std::size_t d_model, std::size_t d_ff, std::size_t vocab,
                       std::size_t heads, std::size_t context) {
             ModelConfig c{layers, d_model, d_ff, vocab, heads, context};
             c.validate();
             return c;
           }),
           py::arg("layers") = 2, py::arg("d_model") = 64, py::arg("d_ff") = 128, py::arg("vocab") = 128,
           py::arg("heads") = 4, py::arg("context") = 128)
      .def_readonly("layers", &ModelConfig::layers)
      .def_readonly("d_model", &ModelConfig::d_model)
      .def_readonly("d_ff", &ModelConfig::d_ff)
      .def_readonly("vocab", &ModelConfig::vocab)
      .def_readonly("heads", &ModelConfig::heads)
      .def_readonly("context", &ModelConfig::context);

  py::class_<ModelParams>(m, "Model")
      .def_readonly("config", &ModelParams::config)
      .def("ffn", [](const ModelParams& p, std::size_t layer) {
            if (layer >= p.layers.size()) throw RangeError("layer out of range");
            const FfnWeights& f = p.layers[layer].ffn;
            py::dict d;
            d["w_up"] = to_array(f.w_up);
            d["b_up"] = vec_array(f.b_up);
            d["w_down"] = to_array(f.w_down);
            d["b_down"] = vec_array(f.b_down);
            return d;
          },
          py::arg("layer"))
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("random_model", &random_model, py::arg("config"), py::arg("seed"), py::arg("weight_std") = 0.08);
  m.def("load_model", [](const std::filesystem::path& p) { return params_from_checkpoint(read_checkpoint(p)); },
        py::arg("path"));
  m.def("save_model",
        [](const ModelParams& p, const std::filesystem::path& path, const std::optional<QuantSpec>& spec) {
          write_checkpoint(path, spec ? to_quantized_checkpoint(p, *spec) : to_checkpoint(p));
        },
        py::arg("model"), py::arg("path"), py::arg("spec") = std::nullopt);
  m.def("load_transforms", [](const std::filesystem::path& p) { return load_transforms(read_checkpoint(p)); },
        py::arg("path"));

  m.def("forward", [](const ModelParams& p, const std::vector<TokenSequence>& seqs) {
        return to_array(forward(p, seqs).logits);
      },
      py::arg("model"), py::arg("sequences"), "Logits for all positions, sequences stacked row-wise.");
  m.def("cross_entropy", [](const ModelParams& p, const std::vector<TokenSequence>& seqs) {
        return cross_entropy(p, seqs);
      },
      py::arg("model"), py::arg("sequences"));
  m.def("perplexity",
        [](const ModelParams& p, const std::vector<TokenSequence>& seqs, const std::optional<QuantSpec>& spec) {
          return perplexity(p, seqs, spec);
        },
        py::arg("model"), py::arg("sequences"), py::arg("spec") = std::nullopt);
  m.def("fake_quantize_model", &fake_quantize_params, py::arg("model"), py::arg("spec"));

  py::class_<LayerTransform>(m, "LayerTransform")
      .def(py::init([](std::vector<std::size_t> perm, std::vector<double> scales, std::vector<double> angles) {
             LayerTransform t{std::move(perm), std::move(scales), std::move(angles)};
             t.validate(t.permutation.size());
             return t;
           }),
           py::arg("permutation"), py::arg("scales"), py::arg("angles"))
      .def_static("identity", &LayerTransform::identity, py::arg("d_ff"))
      .def_readonly("permutation", &LayerTransform::permutation)
      .def_readonly("scales", &LayerTransform::scales)
      .def_readonly("angles", &LayerTransform::angles)
      .def("is_identity", &LayerTransform::is_identity)
      .def("__eq__", [](const LayerTransform& a, const LayerTransform& b) { return a == b; });
  m.def("apply_transformation", &apply_transformation, py::arg("model"), py::arg("layer"), py::arg("transform"));

  py::class_<SearchConfig>(m, "SearchConfig")
      .def(py::init<>())
      .def_readwrite("steps", &SearchConfig::steps)
      .def_readwrite("sigma_scale", &SearchConfig::sigma_scale)
      .def_readwrite("sigma_rotation", &SearchConfig::sigma_rotation)
      .def_readwrite("subset_fraction", &SearchConfig::subset_fraction)
      .def_readwrite("alpha_ratio", &SearchConfig::alpha_ratio)
      .def_readwrite("alpha", &SearchConfig::alpha)
      .def_readwrite("matched_layers", &SearchConfig::matched_layers)
      .def_readwrite("quant", &SearchConfig::quant)
      .def_readwrite("seed", &SearchConfig::seed)
      .def_readwrite("permute", &SearchConfig::permute)
      .def_readwrite("scale", &SearchConfig::scale)
      .def_readwrite("rotate", &SearchConfig::rotate)
      .def_readwrite("acceptance_window", &SearchConfig::acceptance_window);

  m.def("run_search",
        [](const ModelParams& p, const SearchConfig& cfg, const std::vector<TokenSequence>& calib) {
          SearchResult r;
          {
            py::gil_scoped_release release;
            r = run_search(p, cfg, calib);
          }
          py::list curve;
          for (const auto& s : r.curve) curve.append(step_dict(s));
          py::dict d;
          d["model"] = r.params;
          d["transforms"] = r.transforms;
          d["curve"] = curve;
          d["initial"] = terms_dict(r.initial);
          d["final"] = terms_dict(r.final_terms);
          d["alpha"] = r.alpha;
          return d;
        },
        py::arg("model"), py::arg("config"), py::arg("calib"));

  m.def("load_sequences",
        [](const std::filesystem::path& p, std::size_t max_sequences, std::size_t seq_len, std::size_t vocab) {
          return load_sequences(p, max_sequences, seq_len, vocab).sequences;
        },
        py::arg("path"), py::arg("max_sequences"), py::arg("seq_len"), py::arg("vocab"));

  m.def("cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "ivq");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::scoped_ostream_redirect out_redirect;
        py::scoped_estream_redirect err_redirect;
        return cli::run(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
      },
      py::arg("args"), "Run the command-line tool in-process; returns the exit code.");
}
