#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mdcpc/causality.hpp"
#include "mdcpc/cli.hpp"
#include "mdcpc/cpc.hpp"
#include "mdcpc/data.hpp"
#include "mdcpc/patching.hpp"

namespace py = pybind11;
using namespace mdcpc;

namespace {

// Runs the command-line entry point and returns (exit code, stdout, stderr).
py::tuple run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

py::dict synthetic_counts(int n_per_class, int image_size, std::uint64_t seed) {
  const DatasetStore s = generate_synthetic(n_per_class, image_size, seed);
  py::dict d;
  d["train"] = s.train.size();
  d["valid"] = s.valid.size();
  d["test"] = s.test.size();
  return d;
}

py::list leakcheck(const std::string& mask, const std::string& directional, int grid, int latent_dim, int trials,
                   std::uint64_t seed) {
  CpcConfig c;
  c.encoder.latent_dim = latent_dim;
  c.encoder.patch_size = 8;
  c.encoder.toy_width = 2;
  c.autoregressor.channels = latent_dim;
  c.autoregressor.directional = parse_directional(directional);
  c.mask_kind = parse_mask_kind(mask);
  c.image_size = 8 + 4 * (grid - 1);
  c.stride = 4;
  const CpcModel model(c, seed);
  py::list out;
  for (const auto& r : run_leakcheck(model, trials, seed)) {
    py::dict d;
    d["name"] = r.name;
    d["passed"] = r.passed;
    d["max_delta"] = r.max_delta;
    d["max_gradient"] = r.max_gradient;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_mdcpc, m) {
  m.doc() = "Contrastive predictive coding for image patches";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("grid_shape", &grid_shape, py::arg("image_size"), py::arg("patch_size"), py::arg("stride"));
  m.def("info_nce_loss", &info_nce_loss, py::arg("predictions"), py::arg("positives"), py::arg("negatives"));
  m.def("synthetic_counts", &synthetic_counts, py::arg("n_per_class"), py::arg("image_size") = 32,
        py::arg("seed") = 0);
  m.def("leakcheck", &leakcheck, py::arg("mask") = "infill", py::arg("directional") = "multi", py::arg("grid") = 7,
        py::arg("latent_dim") = 16, py::arg("trials") = 20, py::arg("seed") = 0);
  m.def("run_cli", &run, py::arg("args"));
}
