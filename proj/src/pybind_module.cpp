#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "voxelcom/codec.hpp"
#include "voxelcom/config.hpp"
#include "voxelcom/jscc.hpp"
#include "voxelcom/metrics.hpp"

namespace py = pybind11;
using namespace voxelcom;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push(a.shape(i));
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor::from(shape, std::move(data));
}

py::dict record_to_dict(const MetricsRecord& r) {
  py::dict d;
  d["method"] = r.method;
  d["snr_true_db"] = r.snr_true_db;
  d["snr_est_db"] = r.snr_est_db;
  d["cbr"] = r.cbr;
  d["psnr_db"] = r.psnr_db;
  d["ssim"] = r.ssim;
  d["seed"] = r.seed;
  d["scene_id"] = r.scene_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_voxelcom, m) {
  m.doc() = "voxelcom: voxel scene transmission toolkit (analysis helpers)";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config) PyErr_SetString(PyExc_ValueError, e.what());
      else PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  m.def("likelihood", &likelihood, py::arg("v"), py::arg("mu"), py::arg("sigma"),
        "unit-bin mass of the Gaussian-plus-uniform entropy model");
  m.def("expected_bits_per_dim", &expected_bits_per_dim, py::arg("sigma"),
        "expected -log2 bin mass for a latent dimension with scale sigma");

  m.def(
      "allocate",
      [](const std::vector<double>& per_patch_bits, double eta, const std::vector<int>& q_levels) {
        RateReport rr;
        rr.per_patch_bits = per_patch_bits;
        for (double b : per_patch_bits) rr.r_v += b;
        return allocate(rr, eta, q_levels).k_bar;
      },
      py::arg("per_patch_bits"), py::arg("eta"),
      py::arg("q_levels") = std::vector<int>{0, 2, 4, 8, 16, 32},
      "per-patch symbol counts: the q_level nearest to eta*bits, ties upward");

  m.def(
      "psnr",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b, double max_val) {
        return psnr(tensor_from_array(a), tensor_from_array(b), max_val);
      },
      py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
  m.def(
      "ssim",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        return ssim(tensor_from_array(a), tensor_from_array(b));
      },
      py::arg("a"), py::arg("b"), "mean SSIM over 11x11 windows of the luma channel");

  m.def(
      "validate_config",
      [](const std::string& text) {
        parse_config(text);
        return true;
      },
      py::arg("text"), "parse an INI config, raising ValueError on any problem");

  m.def(
      "read_rd_csv",
      [](const std::string& path) {
        py::list out;
        for (const auto& r : read_rd_csv(path)) out.append(record_to_dict(r));
        return out;
      },
      py::arg("path"));

  m.attr("__version__") = "0.1.0";
}
