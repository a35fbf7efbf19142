#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dbmnet/augment.hpp"
#include "dbmnet/checkpoint.hpp"
#include "dbmnet/dataset.hpp"
#include "dbmnet/evaluator.hpp"
#include "dbmnet/losses.hpp"
#include "dbmnet/model.hpp"
#include "dbmnet/probe.hpp"
#include "dbmnet/runspec.hpp"
#include "dbmnet/sampler.hpp"
#include "dbmnet/trainer.hpp"

namespace py = pybind11;
using namespace dbmnet;

namespace {

Image image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3 || arr.shape(0) != 3) {
        throw ShapeError("expected a (3, H, W) float array");
    }
    Image img(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(2)));
    std::copy(arr.data(), arr.data() + arr.size(), img.data.begin());
    return img;
}

py::array_t<float> array_from_image(const Image& img) {
    py::array_t<float> arr({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(img.height),
                            static_cast<py::ssize_t>(img.width)});
    std::copy(img.data.begin(), img.data.end(), arr.mutable_data());
    return arr;
}

py::array_t<float> array_from_vec(const std::vector<float>& v) {
    py::array_t<float> arr(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), arr.mutable_data());
    return arr;
}

// Owns the model configuration + parameters; the operation surface for
// python callers.
struct PyModel {
    ModelConfig cfg;
    ModelParams<float> params;

    PyModel(int input_size, int feature_dim, int num_actions, int num_views, uint64_t seed,
            bool identity_gate)
        : cfg{input_size, feature_dim, num_actions, num_views},
          params(init_params<float>(cfg, seed, identity_gate)) {}

    explicit PyModel(const Checkpoint& ckpt) : cfg(ckpt.model), params(ckpt.params) {}

    py::dict forward_image(
        const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) const {
        const Image img = image_from_array(arr);
        const ForwardOutput<float> out = forward(cfg, params, img);
        py::dict d;
        d["f"] = array_from_vec(out.f);
        d["z_v"] = array_from_vec(out.z_v);
        d["p_v"] = array_from_vec(out.p_v);
        d["f_hat"] = array_from_vec(out.f_hat);
        d["z_a"] = array_from_vec(out.z_a);
        return d;
    }
};

std::vector<float> vec_from_array(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    return {arr.data(), arr.data() + arr.size()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "view-invariant driver action classification core";
    m.attr("__version__") = kProjectVersion;

    py::register_exception<Error>(m, "DbmnetError");

    py::class_<LabelSpace>(m, "LabelSpace")
        .def_readonly("actions", &LabelSpace::actions)
        .def_readonly("views", &LabelSpace::views)
        .def_property_readonly("num_actions", &LabelSpace::num_actions)
        .def_property_readonly("num_views", &LabelSpace::num_views);

    py::class_<ManifestEntry>(m, "ManifestEntry")
        .def_readonly("source_id", &ManifestEntry::source_id)
        .def_readonly("action_id", &ManifestEntry::action_id)
        .def_readonly("view_id", &ManifestEntry::view_id);

    py::class_<DatasetManifest>(m, "DatasetManifest")
        .def_readonly("label_space", &DatasetManifest::label_space)
        .def_readonly("entries", &DatasetManifest::entries)
        .def_readonly("skipped_files", &DatasetManifest::skipped_files)
        .def("__len__", [](const DatasetManifest& m_) { return m_.entries.size(); });

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init([](int actions, int views, int per_cell, int image_size, double noise_sigma,
                         uint64_t seed) {
                 return SynthConfig{actions, views, per_cell, image_size, noise_sigma, seed};
             }),
             py::arg("actions") = 6, py::arg("views") = 4, py::arg("per_cell") = 200,
             py::arg("image_size") = 32, py::arg("noise_sigma") = 0.05, py::arg("seed") = 0)
        .def_readwrite("actions", &SynthConfig::actions)
        .def_readwrite("views", &SynthConfig::views)
        .def_readwrite("per_cell", &SynthConfig::per_cell)
        .def_readwrite("image_size", &SynthConfig::image_size)
        .def_readwrite("noise_sigma", &SynthConfig::noise_sigma)
        .def_readwrite("seed", &SynthConfig::seed);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("manifest", &Dataset::manifest)
        .def("image",
             [](const Dataset& ds, const std::string& source_id, int target_size) {
                 return array_from_image(ds.store->load(source_id, target_size));
             },
             py::arg("source_id"), py::arg("target_size") = 0);

    m.def("synth_generate", &synth_generate, py::arg("config"));
    m.def("load_directory_dataset", &load_directory_dataset, py::arg("root"));
    m.def("export_png_dataset", &export_png_dataset, py::arg("dataset"), py::arg("out_root"));

    py::class_<LocoSplit>(m, "LocoSplit")
        .def_readonly("train", &LocoSplit::train)
        .def_readonly("val", &LocoSplit::val)
        .def_readonly("test", &LocoSplit::test);
    m.def("split_loco", &split_loco, py::arg("manifest"), py::arg("test_view"),
          py::arg("val_fraction"), py::arg("seed") = kDefaultSplitSeed);

    py::class_<TrainValSplit>(m, "TrainValSplit")
        .def_readonly("train", &TrainValSplit::train)
        .def_readonly("val", &TrainValSplit::val);
    m.def("split_train_val", &split_train_val, py::arg("manifest"), py::arg("val_fraction"),
          py::arg("seed") = kDefaultSplitSeed);

    py::class_<SampleabilityReport>(m, "SampleabilityReport")
        .def_readonly("views_lacking_actions", &SampleabilityReport::views_lacking_actions)
        .def_readonly("actions_lacking_views", &SampleabilityReport::actions_lacking_views)
        .def("ok", &SampleabilityReport::ok);
    m.def("validate_sampleability", &validate_sampleability, py::arg("manifest"));

    m.def(
        "sample_triplets",
        [](const DatasetManifest& manifest, int batch_size, uint64_t seed, bool balanced) {
            TripletSampler sampler(manifest, balanced);
            Rng rng(seed);
            const TripletBatch batch = sampler.sample(batch_size, rng);
            std::vector<std::tuple<int, int, int>> out;
            out.reserve(batch.triplets.size());
            for (const auto& t : batch.triplets) {
                out.emplace_back(t.anchor, t.same_view, t.same_action);
            }
            return out;
        },
        py::arg("manifest"), py::arg("batch_size"), py::arg("seed"),
        py::arg("balanced_anchors") = false,
        "Draw one triplet batch; returns (anchor, same_view, same_action) index triples.");

    m.def(
        "augment_image",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& arr,
           uint64_t seed) {
            Rng rng(seed);
            return array_from_image(augment(image_from_array(arr), rng));
        },
        py::arg("image"), py::arg("seed"));

    py::class_<PyModel>(m, "Model")
        .def(py::init<int, int, int, int, uint64_t, bool>(), py::arg("input_size"),
             py::arg("feature_dim"), py::arg("num_actions"), py::arg("num_views"),
             py::arg("seed") = 1, py::arg("identity_gate") = false)
        .def(py::init<const Checkpoint&>(), py::arg("checkpoint"))
        .def("forward", &PyModel::forward_image, py::arg("image"));

    m.def(
        "cross_entropy",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& logits,
           int label) { return cross_entropy<float>(vec_from_array(logits), label); },
        py::arg("logits"), py::arg("label"));
    m.def(
        "euclidean_distance",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& y) {
            return euclidean_distance<float>(vec_from_array(x), vec_from_array(y));
        },
        py::arg("x"), py::arg("y"));

    py::class_<LossWeights>(m, "LossWeights")
        .def(py::init([](double lambda_ac, double lambda_vc, double delta) {
                 return LossWeights{lambda_ac, lambda_vc, delta};
             }),
             py::arg("lambda_ac") = 1.0, py::arg("lambda_vc") = 1.0, py::arg("delta") = 1.0)
        .def_readwrite("lambda_ac", &LossWeights::lambda_ac)
        .def_readwrite("lambda_vc", &LossWeights::lambda_vc)
        .def_readwrite("delta", &LossWeights::delta);

    py::class_<LossBreakdown>(m, "LossBreakdown")
        .def_readonly("l_ace", &LossBreakdown::l_ace)
        .def_readonly("l_vce", &LossBreakdown::l_vce)
        .def_readonly("l_ac", &LossBreakdown::l_ac)
        .def_readonly("l_vc", &LossBreakdown::l_vc)
        .def_readonly("total", &LossBreakdown::total);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("momentum", &TrainConfig::momentum)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("lr_drop_epochs", &TrainConfig::lr_drop_epochs)
        .def_readwrite("lr_drop_factor", &TrainConfig::lr_drop_factor)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("loss", &TrainConfig::loss)
        .def_readwrite("stop_gradient_pv", &TrainConfig::stop_gradient_pv)
        .def_readwrite("input_size", &TrainConfig::input_size)
        .def_readwrite("feature_dim", &TrainConfig::feature_dim)
        .def_readwrite("augment", &TrainConfig::augment)
        .def_readwrite("balanced_anchors", &TrainConfig::balanced_anchors)
        .def_readwrite("decay_queries", &TrainConfig::decay_queries)
        .def_readwrite("identity_gate", &TrainConfig::identity_gate);

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("label_space", &Checkpoint::label_space)
        .def_readonly("epoch", &Checkpoint::epoch)
        .def_readonly("val_top1", &Checkpoint::val_top1)
        .def_readonly("config_snapshot", &Checkpoint::config_snapshot);

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("lr", &EpochRecord::lr)
        .def_readonly("loss", &EpochRecord::loss)
        .def_readonly("val_top1", &EpochRecord::val_top1)
        .def_readonly("val_top5", &EpochRecord::val_top5);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("best", &TrainResult::best)
        .def_readonly("log", &TrainResult::log);

    m.def("train", &train, py::arg("config"), py::arg("train_data"), py::arg("val_data"),
          py::call_guard<py::gil_scoped_release>());
    m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("top1", &EvalReport::top1)
        .def_readonly("top5", &EvalReport::top5)
        .def_readonly("confusion", &EvalReport::confusion)
        .def_readonly("n_samples", &EvalReport::n_samples)
        .def_readonly("per_class_accuracy", &EvalReport::per_class_accuracy)
        .def_readonly("n_dropped", &EvalReport::n_dropped);

    m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("data"),
          py::call_guard<py::gil_scoped_release>());
    m.def(
        "topk_accuracy",
        [](const std::vector<std::vector<float>>& logits, const std::vector<int>& labels, int k) {
            return topk_accuracy(logits, labels, k);
        },
        py::arg("logits"), py::arg("labels"), py::arg("k"));
    m.def(
        "confusion_matrix",
        [](const std::vector<int>& preds, const std::vector<int>& truths, int num_classes) {
            return confusion_matrix(preds, truths, num_classes);
        },
        py::arg("predictions"), py::arg("truths"), py::arg("num_classes"));

    py::class_<GradCheckReport>(m, "GradCheckReport")
        .def_readonly("max_rel_err", &GradCheckReport::max_rel_err)
        .def_readonly("worst_parameter", &GradCheckReport::worst_parameter)
        .def_readonly("checked", &GradCheckReport::checked);

    m.def(
        "gradient_check_tiny",
        [](uint64_t seed, bool stop_gradient_pv) {
            const RunSpec spec = RunSpec::preset("tiny");
            const Dataset data = synth_generate(spec.synth);
            TripletSampler sampler(data.manifest);
            Rng rng(mix_seed(seed, 42));
            const TripletBatch batch = sampler.sample(2, rng);
            std::vector<Image> a, sv, sa;
            std::vector<int> al, vl;
            for (const auto& t : batch.triplets) {
                const auto& e = data.manifest.entries[t.anchor];
                a.push_back(data.store->load(e.source_id, spec.train.input_size));
                sv.push_back(data.store->load(data.manifest.entries[t.same_view].source_id,
                                              spec.train.input_size));
                sa.push_back(data.store->load(data.manifest.entries[t.same_action].source_id,
                                              spec.train.input_size));
                al.push_back(e.action_id);
                vl.push_back(e.view_id);
            }
            const ModelConfig mc{spec.train.input_size, spec.train.feature_dim,
                                 data.manifest.label_space.num_actions(),
                                 data.manifest.label_space.num_views()};
            const auto params = init_params<double>(mc, mix_seed(seed, 1));
            return gradient_check(mc, params, a, sv, sa, al, vl, spec.train.loss,
                                  stop_gradient_pv);
        },
        py::arg("seed") = 7, py::arg("stop_gradient_pv") = false,
        py::call_guard<py::gil_scoped_release>(),
        "Finite-difference gradient oracle on the tiny preset.");

    py::class_<ViewDropReport>(m, "ViewDropReport")
        .def_readonly("acc_pre", &ViewDropReport::acc_pre)
        .def_readonly("acc_post", &ViewDropReport::acc_post)
        .def_readonly("drop", &ViewDropReport::drop);

    py::enum_<FeatureStage>(m, "FeatureStage")
        .value("pre", FeatureStage::pre)
        .value("post", FeatureStage::post);

    py::class_<FeatureMatrix>(m, "FeatureMatrix")
        .def_property_readonly("rows",
                               [](const FeatureMatrix& fm) {
                                   py::array_t<float> arr({static_cast<py::ssize_t>(fm.n),
                                                           static_cast<py::ssize_t>(fm.d)});
                                   std::copy(fm.rows.begin(), fm.rows.end(), arr.mutable_data());
                                   return arr;
                               })
        .def_readonly("action_ids", &FeatureMatrix::action_ids)
        .def_readonly("view_ids", &FeatureMatrix::view_ids);

    m.def("extract_features", &extract_features, py::arg("checkpoint"), py::arg("data"),
          py::arg("stage"), py::call_guard<py::gil_scoped_release>());
    m.def("probe_view_drop", &probe_view_drop, py::arg("checkpoint"), py::arg("train_data"),
          py::arg("val_data"), py::call_guard<py::gil_scoped_release>());
    m.def("export_embeddings", &export_embeddings, py::arg("features"), py::arg("path"));
}
