#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "textseg/cli.hpp"
#include "textseg/embedding.hpp"
#include "textseg/error.hpp"
#include "textseg/fusion.hpp"
#include "textseg/metrics.hpp"
#include "textseg/pipelines.hpp"
#include "textseg/prompt.hpp"
#include "textseg/refinement.hpp"
#include "textseg/spatial_prior.hpp"
#include "textseg/tensor_ops.hpp"
#include "textseg/volume_io.hpp"

namespace py = pybind11;
using namespace textseg;

namespace {

using Spacing3 = std::array<double, 3>;
template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::buffer_info& info, int first) {
  if (info.ndim != first + 3) throw Error(ErrorCode::ShapeMismatch, "expected a " + std::to_string(first + 3) + "-d array");
  return {static_cast<std::size_t>(info.shape[first]), static_cast<std::size_t>(info.shape[first + 1]),
          static_cast<std::size_t>(info.shape[first + 2])};
}

Spacing to_spacing(const Spacing3& s) { return {s[0], s[1], s[2]}; }

BinaryMask to_mask(const Array<bool>& a, const Spacing3& spacing) {
  const auto info = a.request();
  BinaryMask m(dims_of(info, 0), to_spacing(spacing));
  const bool* p = static_cast<const bool*>(info.ptr);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = p[i] ? 1 : 0;
  return m;
}

LabelMap to_labels(const Array<std::uint8_t>& a, const Spacing3& spacing) {
  const auto info = a.request();
  LabelMap m(dims_of(info, 0), to_spacing(spacing));
  std::copy_n(static_cast<const std::uint8_t*>(info.ptr), m.data.size(), m.data.begin());
  return m;
}

LogitTensor to_logits(const Array<double>& a, const Spacing3& spacing) {
  const auto info = a.request();
  LogitTensor t(static_cast<int>(info.shape[0]), dims_of(info, 1), to_spacing(spacing));
  std::copy_n(static_cast<const double*>(info.ptr), t.data.size(), t.data.begin());
  return t;
}

template <typename T>
py::array_t<T> grid_array(const std::vector<T>& data, const Dims& d, std::size_t channels = 0) {
  std::vector<py::ssize_t> shape;
  if (channels) shape.push_back(static_cast<py::ssize_t>(channels));
  for (auto n : {d.d, d.h, d.w}) shape.push_back(static_cast<py::ssize_t>(n));
  py::array_t<T> out(shape);
  std::copy(data.begin(), data.end(), out.mutable_data());
  return out;
}

Lexicon lexicon_from(const std::string& path) { return path.empty() ? Lexicon::defaults() : Lexicon::load(path); }

py::object optional_value(const std::optional<double>& v) {
  return v ? py::object(py::float_(*v)) : py::object(py::none());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Text-guided 3D segmentation fusion";

  static py::exception<Error> error_type(m, "TextsegError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type, e.what());
    }
  });

  m.attr("DEFAULT_CLASSES") = kDefaultClasses;
  m.attr("EMBEDDING_DIM") = kEmbeddingDim;

  m.def(
      "parse_prompt",
      [](const std::string& text, const std::string& lexicon, int classes) {
        const auto lex = lexicon_from(lexicon);
        const auto parsed = parse_prompt(text, lex, classes);
        py::list relations;
        for (const auto& r : parsed.relations) relations.append(py::make_tuple(r.anchor, r.target));
        py::dict out;
        out["organs"] = parsed.organs();
        out["presence"] = std::vector<int>(parsed.presence.begin(), parsed.presence.end());
        out["relations"] = relations;
        return out;
      },
      py::arg("text"), py::arg("lexicon") = "", py::arg("classes") = kDefaultClasses,
      "Organ ids and (anchor, target) relations mentioned in a prompt.");

  m.def(
      "embed",
      [](const std::string& text, std::size_t dim) {
        const auto e = embed_hashed(text, dim);
        return py::array_t<double>(static_cast<py::ssize_t>(e.size()), e.data());
      },
      py::arg("text"), py::arg("dim") = kEmbeddingDim);

  m.def("fnv1a64", [](const std::string& s) { return fnv1a64(s); });

  m.def(
      "squared_edt",
      [](const Array<bool>& mask, Spacing3 spacing) {
        const auto field = squared_edt(to_mask(mask, spacing));
        return grid_array(field.values, field.dims);
      },
      py::arg("mask"), py::arg("spacing") = Spacing3{1.0, 1.0, 1.0},
      "Exact squared distance (mm^2) to the nearest set voxel.");

  m.def(
      "dilate",
      [](const Array<bool>& mask, double radius, Spacing3 spacing) {
        const auto out = dilate(to_mask(mask, spacing), radius);
        std::vector<bool> bits(out.bits.begin(), out.bits.end());
        py::array_t<bool> a({static_cast<py::ssize_t>(out.dims.d), static_cast<py::ssize_t>(out.dims.h),
                             static_cast<py::ssize_t>(out.dims.w)});
        std::copy(bits.begin(), bits.end(), a.mutable_data());
        return a;
      },
      py::arg("mask"), py::arg("radius_mm"), py::arg("spacing") = Spacing3{1.0, 1.0, 1.0});

  m.def(
      "relation_prior",
      [](const Array<bool>& anchor, double d_max, Spacing3 spacing) {
        RelationPriorConfig cfg;
        cfg.d_max = d_max;
        const auto mask = to_mask(anchor, spacing);
        return grid_array(relation_prior(mask, cfg), mask.dims);
      },
      py::arg("anchor"), py::arg("d_max"), py::arg("spacing") = Spacing3{1.0, 1.0, 1.0});

  m.def(
      "dsc", [](const Array<bool>& p, const Array<bool>& g) { return dsc(to_mask(p, {1, 1, 1}), to_mask(g, {1, 1, 1})); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "iou", [](const Array<bool>& p, const Array<bool>& g) { return iou(to_mask(p, {1, 1, 1}), to_mask(g, {1, 1, 1})); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "hd95",
      [](const Array<bool>& p, const Array<bool>& g, Spacing3 s) {
        return optional_value(hd95(to_mask(p, s), to_mask(g, s)));
      },
      py::arg("pred"), py::arg("gt"), py::arg("spacing") = Spacing3{1.0, 1.0, 1.0},
      "None when either mask is empty.");
  m.def(
      "rvd",
      [](const Array<bool>& p, const Array<bool>& g) { return optional_value(rvd(to_mask(p, {1, 1, 1}), to_mask(g, {1, 1, 1}))); },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "evaluate",
      [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& gt, int classes, Spacing3 spacing) {
        const auto report = evaluate_labelmaps(to_labels(pred, spacing), to_labels(gt, spacing), classes);
        return format_report_kv(report, Lexicon::defaults());
      },
      py::arg("pred"), py::arg("gt"), py::arg("classes") = kDefaultClasses,
      py::arg("spacing") = Spacing3{1.0, 1.0, 1.0}, "Metrics report in key: value form.");

  m.def(
      "softmax",
      [](const Array<double>& logits) {
        const auto p = softmax_channels(to_logits(logits, {1, 1, 1}));
        return grid_array(p.data, p.dims, static_cast<std::size_t>(p.channels));
      },
      py::arg("logits"));
  m.def(
      "argmax",
      [](const Array<double>& scores) {
        const auto l = argmax_channels(to_logits(scores, {1, 1, 1}));
        return grid_array(l.data, l.dims);
      },
      py::arg("scores"));

  m.def(
      "infer",
      [](const Array<double>& logits, const std::string& prompt, const std::string& fusion, const std::string& refine,
         bool restrict_to_prompt, Spacing3 spacing, const std::string& lexicon) {
        const auto ckpt = load_checkpoint(fusion);
        std::optional<RefineParams> head;
        if (!refine.empty()) head = load_refine(refine, ckpt.params.classes);
        InferenceConfig cfg;
        cfg.restrict_to_prompt = restrict_to_prompt;
        const HashedEncoder encoder;
        InferenceResult res;
        {
          py::gil_scoped_release release;
          res = infer(to_logits(logits, spacing), prompt, lexicon_from(lexicon), encoder, ckpt.params,
                      head ? &*head : nullptr, cfg);
        }
        return grid_array(res.mask.data, res.mask.dims);
      },
      py::arg("logits"), py::arg("prompt"), py::arg("fusion"), py::arg("refine") = "",
      py::arg("restrict_to_prompt") = false, py::arg("spacing") = Spacing3{1.0, 1.0, 1.0}, py::arg("lexicon") = "",
      "Label map for visual logits (C, D, H, W) under a text prompt.");

  m.def(
      "grid_spacing",
      [](const std::string& path) {
        const auto s = read_grid_header(path).spacing;
        return Spacing3{s.z, s.y, s.x};
      },
      py::arg("path"), "Voxel spacing (z, y, x) in mm from a grid file's header.");
  m.def(
      "load_labels",
      [](const std::string& path) {
        const auto l = load_labels(path);
        return grid_array(l.data, l.dims);
      },
      py::arg("path"));
  m.def(
      "load_logits",
      [](const std::string& path) {
        const auto t = load_logits(path);
        return grid_array(t.data, t.dims, static_cast<std::size_t>(t.channels));
      },
      py::arg("path"));
  m.def(
      "save_logits",
      [](const Array<double>& logits, const std::string& path, Spacing3 spacing) {
        save_logits(to_logits(logits, spacing), path);
      },
      py::arg("logits"), py::arg("path"), py::arg("spacing") = Spacing3{1.0, 1.0, 1.0});

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a textseg subcommand; returns (exit_code, stdout, stderr).");
}
