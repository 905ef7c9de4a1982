#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <torch/torch.h>

#include "brainssl/error.hpp"
#include "brainssl/metrics.hpp"
#include "brainssl/nifti.hpp"
#include "brainssl/phantom.hpp"
#include "brainssl/pipeline.hpp"
#include "brainssl/segmodel.hpp"
#include "brainssl/ssl.hpp"
#include "brainssl/train.hpp"
#include "brainssl/transfer.hpp"

namespace py = pybind11;
using namespace brainssl;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

Dims3 dims_of(const py::buffer_info& info, int leading) {
  if (info.ndim != 3 + leading) {
    throw ShapeError("expected a " + std::to_string(3 + leading) + "-d array, got " + std::to_string(info.ndim) + "-d");
  }
  return {info.shape[leading], info.shape[leading + 1], info.shape[leading + 2]};
}

BinaryMask to_mask(const ByteArray& a) {
  auto info = a.request();
  const auto* p = static_cast<const uint8_t*>(info.ptr);
  return BinaryMask(dims_of(info, 0), std::vector<uint8_t>(p, p + info.size));
}

SegMask to_segmask(const ByteArray& a) {
  auto info = a.request();
  const Dims3 d = dims_of(info, 1);
  const auto* p = static_cast<const uint8_t*>(info.ptr);
  std::vector<std::string> names;
  for (py::ssize_t k = 0; k < info.shape[0]; ++k) names.push_back("class" + std::to_string(k + 1));
  return SegMask(d, std::vector<uint8_t>(p, p + info.size), std::move(names));
}

FloatArray volume_array(const Volume& v) {
  const Dims3& d = v.dims();
  FloatArray out({v.channels(), d.d, d.h, d.w});
  std::copy(v.voxels().begin(), v.voxels().end(), out.mutable_data());
  return out;
}

py::dict volume_dict(const Volume& v) {
  py::dict out;
  out["data"] = volume_array(v);
  out["spacing"] = v.spacing();
  out["subject_id"] = v.subject_id();
  out["modalities"] = v.modality_names();
  return out;
}

py::dict lesion_dict(const LesionCounts& c) {
  py::dict out;
  out["tp"] = c.tp;
  out["fp"] = c.fp;
  out["fn"] = c.fn;
  out["f1"] = c.f1;
  return out;
}

PhantomSpec make_spec(std::array<int64_t, 3> grid, bool diseased, uint64_t seed, int64_t n_modalities,
                      std::pair<double, double> lesion_radius, std::pair<int64_t, int64_t> n_lesions,
                      double noise) {
  PhantomSpec s;
  s.grid = {grid[0], grid[1], grid[2]};
  s.diseased = diseased;
  s.seed = seed;
  s.n_modalities = n_modalities;
  s.lesion_radius = lesion_radius;
  s.n_lesions = n_lesions;
  s.noise_sigma = noise;
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "brainssl core bindings";
  torch::set_num_threads(1);

  // Owned by the module for the interpreter's lifetime.
  static PyObject* error = PyErr_NewException("brainssl._core.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = py::handle(error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::handle(error)(e.what());
      inst.attr("kind") = e.kind();
      PyErr_SetObject(error, inst.ptr());
    }
  });

  m.def(
      "phantom",
      [](std::array<int64_t, 3> grid, bool diseased, uint64_t seed, int64_t n_modalities,
         std::pair<double, double> lesion_radius, std::pair<int64_t, int64_t> n_lesions, double noise) {
        Phantom p = generate_phantom(make_spec(grid, diseased, seed, n_modalities, lesion_radius, n_lesions, noise));
        py::dict out = volume_dict(p.image);
        if (p.mask) {
          const SegMask& mk = *p.mask;
          ByteArray labels({mk.classes(), mk.dims().d, mk.dims().h, mk.dims().w});
          std::copy(mk.labels().begin(), mk.labels().end(), labels.mutable_data());
          out["mask"] = labels;
        } else {
          out["mask"] = py::none();
        }
        return out;
      },
      py::arg("grid") = std::array<int64_t, 3>{64, 64, 64}, py::arg("diseased") = false, py::arg("seed") = 0,
      py::arg("n_modalities") = 2, py::arg("lesion_radius") = std::pair<double, double>{3.0, 7.0},
      py::arg("n_lesions") = std::pair<int64_t, int64_t>{1, 3}, py::arg("noise") = 0.05,
      "Synthetic brain phantom: dict with data (C,D,H,W), spacing, modalities and mask (K,D,H,W) or None.");

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, int64_t n, std::array<int64_t, 3> grid, bool diseased, uint64_t seed,
         int64_t n_modalities, std::pair<double, double> lesion_radius, std::pair<int64_t, int64_t> n_lesions,
         double noise) {
        auto records = generate_dataset(
            make_spec(grid, diseased, seed, n_modalities, lesion_radius, n_lesions, noise), n, out);
        std::vector<std::string> ids;
        for (const auto& r : records) ids.push_back(r.subject_id);
        return ids;
      },
      py::arg("out"), py::arg("n"), py::arg("grid") = std::array<int64_t, 3>{64, 64, 64},
      py::arg("diseased") = false, py::arg("seed") = 0, py::arg("n_modalities") = 2,
      py::arg("lesion_radius") = std::pair<double, double>{3.0, 7.0},
      py::arg("n_lesions") = std::pair<int64_t, int64_t>{1, 3}, py::arg("noise") = 0.05);

  m.def("read_nifti", [](const std::filesystem::path& path) { return volume_dict(read_nifti(path)); });
  m.def(
      "write_nifti",
      [](const FloatArray& data, const std::filesystem::path& path, Spacing spacing) {
        auto info = data.request();
        const Dims3 d = info.ndim == 3 ? dims_of(info, 0) : dims_of(info, 1);
        const auto* p = static_cast<const float*>(info.ptr);
        write_nifti(Volume(d, std::vector<float>(p, p + info.size), spacing), path);
      },
      py::arg("data"), py::arg("path"), py::arg("spacing") = Spacing{1.0, 1.0, 1.0});

  m.def("dice", [](const ByteArray& pred, const ByteArray& gt) { return dice(to_mask(pred), to_mask(gt)); });
  m.def(
      "connected_components",
      [](const ByteArray& mask, int connectivity) {
        const BinaryMask b = to_mask(mask);
        ComponentLabels c = connected_components(b, connectivity_from_int(connectivity));
        py::array_t<int32_t> labels({b.dims.d, b.dims.h, b.dims.w});
        std::copy(c.labels.begin(), c.labels.end(), labels.mutable_data());
        return py::make_tuple(labels, c.count);
      },
      py::arg("mask"), py::arg("connectivity") = 26);
  m.def(
      "lesionwise_f1",
      [](const ByteArray& pred, const ByteArray& gt, int connectivity) {
        return lesion_dict(lesionwise_f1(to_mask(pred), to_mask(gt), connectivity_from_int(connectivity)));
      },
      py::arg("pred"), py::arg("gt"), py::arg("connectivity") = 26);
  m.def(
      "volume_difference",
      [](const ByteArray& pred, const ByteArray& gt, Spacing spacing) {
        VolumeDifference v = volume_difference(to_mask(pred), to_mask(gt), spacing);
        return py::make_tuple(v.voxels, v.mm3);
      },
      py::arg("pred"), py::arg("gt"), py::arg("spacing") = Spacing{1.0, 1.0, 1.0});
  m.def(
      "evaluate_masks",
      [](const ByteArray& pred, const ByteArray& gt, Spacing spacing, int connectivity) {
        CaseMetrics c = evaluate_masks(to_segmask(pred), to_segmask(gt), spacing, connectivity_from_int(connectivity));
        py::dict out;
        out["dice_per_class"] = c.dice_per_class;
        out["dice"] = c.dice_mean;
        out["volume_difference_voxels"] = c.volume_difference.voxels;
        out["volume_difference_mm3"] = c.volume_difference.mm3;
        out["lesion_count_diff"] = c.lesion_count_diff;
        out["lesionwise"] = lesion_dict(c.lesionwise);
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("spacing") = Spacing{1.0, 1.0, 1.0}, py::arg("connectivity") = 26);

  m.def("warmup_cosine_lr", &warmup_cosine_lr, py::arg("step"), py::arg("lr_peak"), py::arg("warmup"),
        py::arg("total"));
  m.def("train_preset", [](const std::string& name) { return json_to_py(to_json(TrainConfig::preset(name))); });

  m.def("experiment_keys", &experiment_keys);
  m.def(
      "load_experiment",
      [](const std::filesystem::path& path, const std::vector<std::string>& overrides, const std::string& stage) {
        return json_to_py(load_experiment(path, overrides).to_json(stage));
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{}, py::arg("stage") = "finetune",
      "Resolved config as a dict; raises Error (kind 'config') on unknown keys.");

  m.def(
      "count_parameters",
      [](const std::string& variant, const std::string& model, int64_t in_channels) {
        const EncoderConfig enc = EncoderConfig::from_variant(variant, in_channels);
        if (model == "encoder") return count_parameters(*SwinEncoder(enc));
        if (model == "ssl") return count_parameters(*SslModel(enc));
        if (model == "seg") return count_parameters(*SegModel(enc, SegConfig{}));
        throw ValidationError("model must be encoder, ssl or seg, got '" + model + "'");
      },
      py::arg("variant") = "tiny", py::arg("model") = "encoder", py::arg("in_channels") = 1);

  m.def("read_checkpoint", [](const std::filesystem::path& path) {
    const Checkpoint ck = load_checkpoint(path);
    py::dict out;
    out["format_version"] = ck.format_version;
    out["step"] = ck.step;
    out["seed"] = ck.seed;
    out["config"] = json_to_py(ck.config);
    py::dict tensors;
    for (const auto& t : ck.tensors) {
      FloatArray a(t.shape);
      std::copy(t.data.begin(), t.data.end(), a.mutable_data());
      tensors[py::str(t.name)] = a;
    }
    out["tensors"] = tensors;
    return out;
  });
}
