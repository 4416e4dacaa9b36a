#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <variant>

#include "abm/adjoint.hpp"
#include "abm/adversarial.hpp"
#include "abm/backmap.hpp"
#include "abm/cli.hpp"
#include "abm/error.hpp"
#include "abm/model_io.hpp"
#include "abm/render.hpp"
#include "abm/verify.hpp"

namespace py = pybind11;

namespace {

using abm::DType;

DType parse_dtype(const std::string& name) {
  if (name == "binary32" || name == "float32") return DType::binary32;
  if (name == "binary64" || name == "float64") return DType::binary64;
  throw abm::Error("unknown dtype '" + name + "' (expected float32 or float64)");
}

abm::WeightInit parse_init(const std::string& name) {
  if (name == "he_normal") return abm::WeightInit::he_normal;
  if (name == "fixup") return abm::WeightInit::fixup;
  throw abm::Error("unknown initialisation '" + name + "' (expected he_normal or fixup)");
}

template <typename T>
py::array_t<T> to_array(const abm::Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <typename T>
abm::Tensor<T> from_array(const py::array& a) {
  auto c = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c) throw abm::ShapeError("expected a numeric array");
  abm::Shape shape(c.shape(), c.shape() + c.ndim());
  std::vector<T> data(c.data(), c.data() + c.size());
  return abm::Tensor<T>(std::move(shape), std::move(data));
}

py::dict index_dict(const abm::SurfaceIndex& idx) {
  py::dict d;
  d["layer"] = idx.layer;
  d["s"] = idx.s;
  d["j"] = idx.j;
  d["i"] = idx.i;
  d["k"] = idx.k;
  return d;
}

template <typename N>
struct scalar_of;
template <typename T>
struct scalar_of<abm::Network<T>> {
  using type = T;
};
template <typename N>
using scalar_t = typename scalar_of<std::decay_t<N>>::type;

/// Network of either precision; inputs are converted to the network's dtype.
class PyNetwork {
 public:
  template <typename T>
  explicit PyNetwork(abm::Network<T> net) : net_(std::move(net)) {}

  [[nodiscard]] std::string dtype() const { return std::holds_alternative<abm::Network<float>>(net_) ? "float32" : "float64"; }

  template <typename Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit(std::forward<Fn>(fn), net_);
  }

 private:
  std::variant<abm::Network<float>, abm::Network<double>> net_;
};

PyNetwork build_network(const std::string& arch, std::uint64_t seed, const std::string& init, const std::string& dtype) {
  const auto a = abm::parse_architecture(arch);
  const auto w = parse_init(init);
  if (parse_dtype(dtype) == DType::binary64) return PyNetwork(abm::build<double>(a, seed, w));
  return PyNetwork(abm::build<float>(a, seed, w));
}

PyNetwork build_tiny_network(std::vector<std::size_t> shape, std::size_t classes, std::uint64_t seed,
                             const std::string& dtype) {
  if (parse_dtype(dtype) == DType::binary64) return PyNetwork(abm::build_tiny<double>(shape, classes, seed));
  return PyNetwork(abm::build_tiny<float>(shape, classes, seed));
}

PyNetwork load_network(const std::filesystem::path& path, const std::string& dtype) {
  if (parse_dtype(dtype) == DType::binary64) return PyNetwork(abm::load_model<double>(path));
  return PyNetwork(abm::load_model<float>(path));
}

abm::ReconstructionRequest make_request(const std::string& rm, int layer, std::vector<long> s, std::vector<long> j,
                                        std::vector<long> i, std::vector<long> k, std::size_t workers) {
  abm::ReconstructionRequest r;
  r.mode = rm.size() == 1 ? abm::parse_mode("rm" + rm) : abm::parse_mode(rm);
  r.layer = layer;
  r.s = std::move(s);
  r.j = std::move(j);
  r.i = std::move(i);
  r.k = std::move(k);
  r.workers = workers;
  return r;
}

py::dict perturbation_dict(const auto& p) {
  py::dict d;
  d["delta"] = to_array(p.delta);
  d["provenance"] = abm::to_string(p.provenance);
  d["target"] = p.target;
  d["achieved"] = p.achieved;
  d["l2"] = p.l2;
  d["beta"] = p.beta;
  d["steps"] = p.steps;
  d["success"] = p.success;
  d["degenerate"] = p.degenerate;
  return d;
}

abm::AdversarialConfig attack_config(double epsilon, std::size_t steps) {
  abm::AdversarialConfig c;
  c.epsilon = epsilon;
  c.steps = steps;
  return c;
}

py::array_t<std::uint8_t> image_array(const abm::Image& im) {
  py::array_t<std::uint8_t> out({static_cast<py::ssize_t>(im.height), static_cast<py::ssize_t>(im.width),
                                 static_cast<py::ssize_t>(3)});
  std::copy(im.rgb.begin(), im.rgb.end(), out.mutable_data());
  return out;
}

abm::Image array_image(const py::array& a) {
  auto c = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c || c.ndim() != 3 || c.shape(2) != 3) throw abm::ShapeError("expected a (height, width, 3) uint8 array");
  abm::Image im;
  im.height = static_cast<std::size_t>(c.shape(0));
  im.width = static_cast<std::size_t>(c.shape(1));
  im.rgb.assign(c.data(), c.data() + c.size());
  return im;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exact input-space hypersurfaces of bias-free piecewise-linear networks";

  auto base = py::register_exception<abm::Error>(m, "AbmError", PyExc_RuntimeError);
  py::register_exception<abm::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<abm::IndexError>(m, "AbmIndexError", base.ptr());
  py::register_exception<abm::UnsupportedError>(m, "UnsupportedError", base.ptr());
  py::register_exception<abm::DataError>(m, "DataError", base.ptr());
  py::register_exception<abm::NumericError>(m, "NumericError", base.ptr());
  py::register_exception<abm::FormatError>(m, "FormatError", base.ptr());

  py::class_<PyNetwork>(m, "Network")
      .def_property_readonly("dtype", &PyNetwork::dtype)
      .def_property_readonly("architecture",
                             [](const PyNetwork& n) {
                               return n.visit([](const auto& net) { return std::string(abm::to_string(net.architecture())); });
                             })
      .def_property_readonly("input_shape",
                             [](const PyNetwork& n) { return n.visit([](const auto& net) { return net.input_shape(); }); })
      .def_property_readonly("classes",
                             [](const PyNetwork& n) { return n.visit([](const auto& net) { return net.classes(); }); })
      .def_property_readonly("conv_count",
                             [](const PyNetwork& n) { return n.visit([](const auto& net) { return net.conv_count(); }); })
      .def(
          "logits",
          [](const PyNetwork& n, const py::array& x) {
            return n.visit([&](const auto& net) -> py::array {
              using T = scalar_t<decltype(net)>;
              return to_array(abm::logits(net, from_array<T>(x)));
            });
          },
          py::arg("x"), "Classifier output before its final activation for one (H, W, C) input")
      .def(
          "predict",
          [](const PyNetwork& n, const py::array& x) {
            return n.visit([&](const auto& net) {
              using T = scalar_t<decltype(net)>;
              return abm::predict(net, from_array<T>(x));
            });
          },
          py::arg("x"))
      .def(
          "save", [](const PyNetwork& n, const std::filesystem::path& path) {
            n.visit([&](const auto& net) { abm::save_model(net, path); });
          },
          py::arg("path"))
      .def(
          "shape_ledger",
          [](const PyNetwork& n) {
            return n.visit([](const auto& net) {
              py::list rows;
              for (const auto& r : abm::shape_ledger(net)) {
                py::dict d;
                d["layer"] = r.layer;
                d["mode"] = abm::to_string(r.mode);
                d["applicable"] = r.applicable;
                d["extents"] = r.extents;
                d["surface_shape"] = r.surface_shape;
                rows.append(d);
              }
              return rows;
            });
          },
          "Surface counts and shapes for every (layer, mode) pair")
      .def(
          "surfaces",
          [](const PyNetwork& n, const py::array& x, const std::string& rm, int layer, std::vector<long> s,
             std::vector<long> j, std::vector<long> i, std::vector<long> k, double z_scale, std::size_t workers) {
            const auto request = make_request(rm, layer, std::move(s), std::move(j), std::move(i), std::move(k), workers);
            return n.visit([&](const auto& net) {
              using T = scalar_t<decltype(net)>;
              const auto tr = abm::trace(net, from_array<T>(x), abm::EvaluationPoint{z_scale});
              py::list out;
              abm::batch_reconstruct<T>(net, tr, request, [&](std::size_t, const abm::Hypersurface<T>& h) {
                out.append(py::make_tuple(index_dict(h.index), to_array(h.values)));
                return true;
              });
              return out;
            });
          },
          py::arg("x"), py::arg("rm"), py::arg("layer") = -1, py::arg("s") = std::vector<long>{},
          py::arg("j") = std::vector<long>{}, py::arg("i") = std::vector<long>{}, py::arg("k") = std::vector<long>{},
          py::arg("z_scale") = 0.125, py::arg("workers") = 1,
          "Hypersurfaces with gates frozen at z_scale * x, as (index, array) pairs in emission order")
      .def(
          "verify",
          [](const PyNetwork& n, const py::array& inputs, double z_scale, double floor) {
            return n.visit([&](const auto& net) {
              using T = scalar_t<decltype(net)>;
              const auto batch = from_array<T>(inputs);
              if (batch.rank() != 4) throw abm::ShapeError("expected an (N, H, W, C) batch");
              std::vector<abm::Tensor<T>> xs;
              const std::size_t per = batch.size() / batch.dim(0);
              for (std::size_t e = 0; e < batch.dim(0); ++e) {
                xs.emplace_back(net.input_shape(),
                                std::vector<T>(batch.data().begin() + static_cast<std::ptrdiff_t>(e * per),
                                               batch.data().begin() + static_cast<std::ptrdiff_t>((e + 1) * per)));
              }
              abm::VerifyOptions options;
              options.z.k = z_scale;
              const auto report = abm::verify_layers(net, xs, options);
              py::dict d;
              d["passes"] = report.passes(floor);
              d["summary_csv"] = report.summary_csv();
              d["histogram_csv"] = report.histogram_csv();
              return d;
            });
          },
          py::arg("inputs"), py::arg("z_scale") = 0.125, py::arg("floor") = 0.9999)
      .def(
          "untargeted_attack",
          [](const PyNetwork& n, const py::array& x, std::size_t label, double epsilon, std::size_t steps) {
            return n.visit([&](const auto& net) {
              using T = scalar_t<decltype(net)>;
              return perturbation_dict(abm::untargeted_attack(net, from_array<T>(x), label, attack_config(epsilon, steps)));
            });
          },
          py::arg("x"), py::arg("label"), py::arg("epsilon") = 0.04, py::arg("steps") = 10)
      .def(
          "targeted_attack",
          [](const PyNetwork& n, const py::array& x, std::size_t target, double epsilon, std::size_t steps) {
            return n.visit([&](const auto& net) {
              using T = scalar_t<decltype(net)>;
              return perturbation_dict(
                  abm::targeted_least_likely(net, from_array<T>(x), target, attack_config(epsilon, steps)));
            });
          },
          py::arg("x"), py::arg("target"), py::arg("epsilon") = 0.04, py::arg("steps") = 10)
      .def(
          "compare_hyperplanes",
          [](const PyNetwork& n, const py::array& x, const py::array& x_perturbed, double z_scale) {
            return n.visit([&](const auto& net) {
              using T = scalar_t<decltype(net)>;
              const auto cmp = abm::compare_hyperplanes(net, from_array<T>(x), from_array<T>(x_perturbed),
                                                        abm::EvaluationPoint{z_scale});
              py::list rows;
              for (const auto& r : cmp.rows) rows.append(py::make_tuple(r.forward, r.fresh, r.stale));
              return rows;
            });
          },
          py::arg("x"), py::arg("x_perturbed"), py::arg("z_scale") = 0.125,
          "Per class: (logit, inner product with the fresh hyperplane, inner product with the clean-input hyperplane)");

  m.def("build", &build_network, py::arg("arch"), py::arg("seed") = 0, py::arg("init") = "he_normal",
        py::arg("dtype") = "float32", "vgg7, fixup_resnet20 or tiny with seeded weights");
  m.def("build_tiny", &build_tiny_network, py::arg("input_shape"), py::arg("classes") = 10, py::arg("seed") = 0,
        py::arg("dtype") = "float32");
  m.def("load_model", &load_network, py::arg("path"), py::arg("dtype") = "float32");

  m.def(
      "render_surface",
      [](const py::array& surface) {
        const auto t = from_array<double>(surface);
        return image_array(abm::to_image(abm::normalize_abs(t)));
      },
      py::arg("surface"), "Absolute value over max-abs, quantized to an (H, W, 3) uint8 image");
  m.def(
      "encode_png", [](const py::array& image) {
        const auto bytes = abm::encode_png(array_image(image));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("image"));
  m.def(
      "decode_png", [](const py::bytes& data) {
        const std::string s = data;
        return image_array(abm::decode_png(std::vector<std::uint8_t>(s.begin(), s.end())));
      },
      py::arg("data"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = abm::run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command line in-process; returns (exit code, stdout text, stderr text)");
}
