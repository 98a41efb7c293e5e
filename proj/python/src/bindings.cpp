#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <numeric>
#include <sstream>

#include "penet/cli.hpp"
#include "penet/errors.hpp"
#include "penet/evalkit.hpp"
#include "penet/generator.hpp"
#include "penet/pevae.hpp"
#include "penet/posekit.hpp"
#include "penet/synthdata.hpp"
#include "penet/tensor_utils.hpp"
#include "penet/trainer.hpp"

namespace py = pybind11;
using namespace penet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_array(const Image& image) {
  py::array_t<float> out({image.height, image.width, image.channels});
  std::copy(image.pixels.begin(), image.pixels.end(), out.mutable_data());
  return out;
}

// (H, W) or (H, W, C)
Image from_array(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ParameterError("expected an (H, W) or (H, W, C) array");
  Image image(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
  std::copy(a.data(), a.data() + a.size(), image.pixels.begin());
  return image;
}

torch::Tensor image_batch(const FloatArray& a) { return to_tensor(from_array(a)).unsqueeze(0); }

Pose pose_from(const FloatArray& keypoints, int size, std::optional<std::vector<int>> visible) {
  if (keypoints.ndim() != 2 || keypoints.shape(1) != 2) throw ParameterError("keypoints must be a (K, 2) array");
  Pose p;
  p.canvas = {size, size};
  for (py::ssize_t k = 0; k < keypoints.shape(0); ++k) {
    p.keypoints.push_back({keypoints.at(k, 0), keypoints.at(k, 1)});
    p.visible.push_back(visible ? static_cast<std::uint8_t>(visible->at(k) != 0) : 1);
  }
  return p;
}

py::array_t<double> keypoints_array(const Pose& pose) {
  py::array_t<double> out({static_cast<py::ssize_t>(pose.size()), py::ssize_t{2}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t k = 0; k < pose.size(); ++k) {
    m(k, 0) = pose.keypoints[k].x;
    m(k, 1) = pose.keypoints[k].y;
  }
  return out;
}

py::dict attributes_dict(const SignerSpec& s) {
  py::dict d;
  d["skin_tone"] = s.skin_tone;
  d["gender_proxy"] = s.gender_proxy;
  d["ethnicity_proxy"] = s.ethnicity_proxy;
  return d;
}

py::dict report_dict(const LossReport& r) {
  py::dict d;
  d["perc"] = r.perc;
  d["feat"] = r.feat;
  d["edge"] = r.edge;
  d["attrib"] = r.attrib;
  d["vae"] = r.vae;
  d["total"] = r.total;
  d["d_loss"] = r.d_loss;
  return d;
}

struct PyTrainer {
  std::unique_ptr<Trainer> trainer;

  PyTrainer(const std::string& config_text, const std::optional<std::string>& corpus_dir) {
    auto config = TrainConfig::parse(config_text);
    if (corpus_dir) config.corpus = *corpus_dir;
    trainer = std::make_unique<Trainer>(config, read_corpus(config.corpus));
  }
};

}  // namespace

PYBIND11_MODULE(_penet, m) {
  m.doc() = "Part-wise pose-conditioned image synthesis on a synthetic signer corpus";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<VocabularyError>(m, "VocabularyError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.attr("JOINT_COUNT") = joints::kCount;
  m.attr("DEFAULT_TAU") = kDefaultTau;

  // ---- poses
  m.def(
      "render_heatmaps",
      [](const FloatArray& keypoints, int size, double tau, std::optional<std::vector<int>> visible) {
        const auto hm = render_heatmaps(pose_from(keypoints, size, visible), tau);
        py::array_t<double> out({hm.count, hm.height, hm.width});
        std::copy(hm.values.begin(), hm.values.end(), out.mutable_data());
        return out;
      },
      py::arg("keypoints"), py::arg("size"), py::arg("tau") = kDefaultTau, py::arg("visible") = py::none());
  m.def(
      "render_skeleton",
      [](const FloatArray& keypoints, int size, double stroke_width, std::optional<std::vector<int>> visible) {
        return to_array(render_skeleton(pose_from(keypoints, size, visible), default_palette(), stroke_width).pixels);
      },
      py::arg("keypoints"), py::arg("size"), py::arg("stroke_width") = 2.0, py::arg("visible") = py::none());

  // ---- corpus
  m.def(
      "generate_corpus",
      [](const std::filesystem::path& out, int signers, int frames, int image_size, std::uint64_t seed, double amplitude) {
        CorpusOptions o;
        o.signers = signers;
        o.frames = frames;
        o.image_size = image_size;
        o.seed = seed;
        o.amplitude = amplitude;
        write_corpus(generate_corpus(o), out);
        return signers * frames;
      },
      py::arg("out"), py::arg("signers") = 2, py::arg("frames") = 8, py::arg("image_size") = 64, py::arg("seed") = 0,
      py::arg("amplitude") = 1.0);

  py::class_<Corpus>(m, "Corpus")
      .def(py::init([](const std::filesystem::path& dir) { return read_corpus(dir); }), py::arg("dir"))
      .def("__len__", [](const Corpus& c) { return c.records.size(); })
      .def_property_readonly("image_size", [](const Corpus& c) { return c.manifest.image_size; })
      .def("image", [](const Corpus& c, std::size_t i) { return to_array(c.records.at(i).image); })
      .def("keypoints", [](const Corpus& c, std::size_t i) { return keypoints_array(c.records.at(i).pose); })
      .def("masks",
           [](const Corpus& c, std::size_t i) {
             const auto& r = c.records.at(i);
             py::dict d;
             d["head"] = to_array(r.mask_head);
             d["hand"] = to_array(r.mask_hand);
             d["torso"] = to_array(r.mask_torso);
             return d;
           })
      .def("attributes", [](const Corpus& c, std::size_t i) { return attributes_dict(c.records.at(i).attributes); });

  // ---- metrics and losses
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return ssim(from_array(a), from_array(b)); });
  m.def("psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(from_array(a), from_array(b)); });
  m.def("fid", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return fid(a, b); }, py::arg("features_a"),
        py::arg("features_b"));
  m.def(
      "kl_divergence",
      [](const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var) {
        auto t = [](const Eigen::MatrixXd& e) {
          Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = e;
          return torch::from_blob(r.data(), {r.rows(), r.cols()}, torch::kFloat64).clone();
        };
        return kl_loss({t(mu), t(log_var)}).item<double>();
      },
      py::arg("mu"), py::arg("log_var"));
  m.def(
      "compose",
      [](const FloatArray& head, const FloatArray& hand, const FloatArray& torso, const FloatArray& m_head,
         const FloatArray& m_hand, const FloatArray& m_torso) {
        const GeneratorOutput parts{image_batch(head), image_batch(hand), image_batch(torso)};
        const PartMasks masks{image_batch(m_head), image_batch(m_hand), image_batch(m_torso)};
        return to_array(to_image(compose(parts, masks)[0]));
      },
      py::arg("head"), py::arg("hand"), py::arg("torso"), py::arg("mask_head"), py::arg("mask_hand"),
      py::arg("mask_torso"));

  // ---- configuration and training
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("parse", &TrainConfig::parse)
      .def_static("load", [](const std::filesystem::path& p) { return TrainConfig::load(p); })
      .def("serialize", &TrainConfig::serialize)
      .def("hash", &TrainConfig::hash)
      .def("set", &TrainConfig::set)
      .def("validate", &TrainConfig::validate)
      .def("__repr__", &TrainConfig::serialize);

  py::class_<PyTrainer>(m, "Trainer")
      .def(py::init([](const TrainConfig& config, std::optional<std::string> corpus) {
             py::gil_scoped_release release;
             return PyTrainer(config.serialize(), corpus);
           }),
           py::arg("config"), py::arg("corpus") = py::none())
      .def(
          "train", [](PyTrainer& t, int max_steps) { t.trainer->train(nullptr, max_steps); },
          py::arg("max_steps") = -1, py::call_guard<py::gil_scoped_release>())
      .def("step",
           [](PyTrainer& t) {
             LossReport r;
             {
               py::gil_scoped_release release;
               r = t.trainer->step();
             }
             return report_dict(r);
           })
      .def_property_readonly("step_count", [](const PyTrainer& t) { return t.trainer->step_count(); })
      .def_property_readonly("history",
                             [](const PyTrainer& t) {
                               py::list out;
                               for (const auto& r : t.trainer->history()) out.append(report_dict(r));
                               return out;
                             })
      .def(
          "save", [](const PyTrainer& t, const std::filesystem::path& p) { save_checkpoint(*t.trainer, p); },
          py::call_guard<py::gil_scoped_release>())
      .def(
          "load", [](PyTrainer& t, const std::filesystem::path& p) { load_checkpoint(*t.trainer, p); },
          py::call_guard<py::gil_scoped_release>())
      .def(
          "reconstruct",
          [](PyTrainer& t, std::vector<std::size_t> indices) {
            if (indices.empty()) {
              indices.resize(t.trainer->data().labels.size());
              std::iota(indices.begin(), indices.end(), 0);
            }
            std::vector<Image> images;
            {
              py::gil_scoped_release release;
              const auto recon = t.trainer->reconstruct(t.trainer->make_batch(indices));
              for (int64_t i = 0; i < recon.size(0); ++i) images.push_back(to_image(recon[i]));
            }
            py::list out;
            for (const auto& image : images) out.append(to_array(image));
            return out;
          },
          py::arg("indices") = std::vector<std::size_t>{});

  // ---- command line
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
