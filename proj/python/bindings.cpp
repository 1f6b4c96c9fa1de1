// Python bindings: density-map synthesis, metrics, datasets, and trained-model
// inference over numpy arrays. Images are float32 (3, H, W) in [0, 1], density
// maps float32 (H, W), points float64 (N, 2) as (x, y).
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsrnet/checkpoint.hpp"
#include "hsrnet/dataset.hpp"
#include "hsrnet/density.hpp"
#include "hsrnet/io.hpp"
#include "hsrnet/metrics.hpp"
#include "hsrnet/model.hpp"
#include "hsrnet/pipeline.hpp"
#include "hsrnet/tensor.hpp"

namespace py = pybind11;
using namespace hsrnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Point> to_points(const DoubleArray& arr) {
    if (arr.ndim() != 2 || arr.shape(1) != 2) {
        throw std::invalid_argument("points must be an (n, 2) array of (x, y)");
    }
    std::vector<Point> pts(static_cast<size_t>(arr.shape(0)));
    const auto view = arr.unchecked<2>();
    for (py::ssize_t i = 0; i < arr.shape(0); ++i) {
        pts[static_cast<size_t>(i)].x = view(i, 0);
        pts[static_cast<size_t>(i)].y = view(i, 1);
    }
    return pts;
}

py::array_t<double> from_points(const std::vector<Point>& pts) {
    py::array_t<double> arr({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
    auto view = arr.mutable_unchecked<2>();
    for (size_t i = 0; i < pts.size(); ++i) {
        view(static_cast<py::ssize_t>(i), 0) = pts[i].x;
        view(static_cast<py::ssize_t>(i), 1) = pts[i].y;
    }
    return arr;
}

PointAnnotations to_annotations(const DoubleArray& pts, int64_t h, int64_t w) {
    PointAnnotations ann;
    ann.points = to_points(pts);
    ann.image_h = h;
    ann.image_w = w;
    ann.validate();
    return ann;
}

py::array_t<float> map_to_array(const DensityMap& d) {
    py::array_t<float> arr({static_cast<py::ssize_t>(d.h), static_cast<py::ssize_t>(d.w)});
    std::memcpy(arr.mutable_data(), d.grid.data(), sizeof(float) * d.grid.size());
    return arr;
}

DensityMap array_to_map(const FloatArray& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("density map must be a 2-d array");
    DensityMap d = DensityMap::zeros(arr.shape(0), arr.shape(1));
    std::memcpy(d.grid.data(), arr.data(), sizeof(float) * d.grid.size());
    return d;
}

Tensor array_to_image(const FloatArray& arr) {
    if (arr.ndim() != 3 || arr.shape(0) != 3) {
        throw std::invalid_argument("image must be a (3, h, w) array");
    }
    std::vector<float> buf(static_cast<size_t>(arr.size()));
    std::memcpy(buf.data(), arr.data(), sizeof(float) * buf.size());
    return Tensor::from_data({1, 3, arr.shape(1), arr.shape(2)}, std::move(buf));
}

py::array_t<float> image_to_array(const Tensor& t) {
    const Shape4 s = t.shape();
    py::array_t<float> arr({static_cast<py::ssize_t>(s.c), static_cast<py::ssize_t>(s.h),
                            static_cast<py::ssize_t>(s.w)});
    std::memcpy(arr.mutable_data(), t.data().data(), sizeof(float) * t.data().size());
    return arr;
}

Sample dict_to_sample(const py::dict& d) {
    Sample s;
    s.id = py::cast<std::string>(d["id"]);
    s.image = array_to_image(py::cast<FloatArray>(d["image"]));
    const Shape4 shape = s.image.shape();
    s.annotations = to_annotations(py::cast<DoubleArray>(d["points"]), shape.h, shape.w);
    if (d.contains("roi") && !d["roi"].is_none()) {
        const DensityMap m = array_to_map(py::cast<FloatArray>(d["roi"]));
        RoiMask roi;
        roi.h = m.h;
        roi.w = m.w;
        roi.grid = m.grid;
        s.roi = std::move(roi);
    }
    return s;
}

py::dict sample_to_dict(const Sample& s) {
    py::dict d;
    d["id"] = s.id;
    d["image"] = image_to_array(s.image);
    d["points"] = from_points(s.annotations.points);
    if (s.roi) {
        DensityMap m;
        m.h = s.roi->h;
        m.w = s.roi->w;
        m.grid = s.roi->grid;
        d["roi"] = map_to_array(m);
    } else {
        d["roi"] = py::none();
    }
    return d;
}

std::vector<Sample> dicts_to_samples(const py::list& items) {
    std::vector<Sample> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(dict_to_sample(py::cast<py::dict>(item)));
    return out;
}

py::dict report_to_dict(const EvalReport& rep) {
    py::dict d;
    d["mae"] = rep.mae;
    d["mse"] = rep.mse;
    d["game"] = py::make_tuple(rep.game[0], rep.game[1], rep.game[2], rep.game[3]);
    d["images"] = rep.rows.size();
    py::list rows;
    for (const EvalRow& r : rep.rows) {
        py::dict row;
        row["id"] = r.id;
        row["gt_count"] = r.gt_count;
        row["pred_count"] = r.pred_count;
        row["game"] = py::make_tuple(r.game[0], r.game[1], r.game[2], r.game[3]);
        rows.append(row);
    }
    d["rows"] = rows;
    d["json"] = rep.to_json();
    return d;
}

// Same whole-image protocol as the CLI and evaluate(): zero-pad up to the
// next multiple of 16, run the net, crop the head output back.
DensityMap predict_padded(const HsrNet& model, const Tensor& image) {
    const Shape4 s = image.shape();
    const int64_t ph = (s.h + 15) / 16 * 16;
    const int64_t pw = (s.w + 15) / 16 * 16;
    Tensor input = image;
    if (ph != s.h || pw != s.w) {
        std::vector<float> buf(static_cast<size_t>(s.c * ph * pw), 0.0f);
        for (int64_t c = 0; c < s.c; ++c) {
            for (int64_t y = 0; y < s.h; ++y) {
                std::memcpy(buf.data() + (c * ph + y) * pw,
                            image.data().data() + (c * s.h + y) * s.w,
                            sizeof(float) * static_cast<size_t>(s.w));
            }
        }
        input = Tensor::from_data({1, s.c, ph, pw}, std::move(buf));
    }
    NoGradGuard guard;
    const ForwardOutput out = model.forward(input);
    DensityMap d = DensityMap::zeros(s.h, s.w);
    for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t x = 0; x < s.w; ++x) d.at(y, x) = out.d0.at(0, 0, y, x);
    }
    return d;
}

class PyModel {
public:
    explicit PyModel(HsrNet model) : model_(std::move(model)) {}

    static PyModel from_checkpoint(const std::string& path) {
        return PyModel(model_from_checkpoint(read_checkpoint(path)));
    }

    py::array_t<float> predict(const FloatArray& image) const {
        return map_to_array(predict_padded(model_, array_to_image(image)));
    }

    double count(const FloatArray& image) const {
        return predict_padded(model_, array_to_image(image)).count();
    }

    std::string fingerprint() const { return model_.config().fingerprint(); }

    void save(const std::string& path) const { write_checkpoint(path, model_snapshot(model_)); }

    const HsrNet& net() const { return model_; }

private:
    HsrNet model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Crowd density estimation toolkit: geometry-adaptive ground truth, "
              "scale-recalibrated density regression, and counting metrics.";

    m.def(
        "knn_mean_distance",
        [](const DoubleArray& points, int k) {
            return knn_mean_distance(to_points(points), k);
        },
        py::arg("points"), py::arg("k"),
        "Mean distance from each point to its k nearest other points; None where "
        "fewer than k other points exist.");

    m.def(
        "make_density",
        [](const DoubleArray& points, std::pair<int64_t, int64_t> shape, int k, double beta,
           double fallback_sigma) {
            const PointAnnotations ann = to_annotations(points, shape.first, shape.second);
            return map_to_array(make_density(ann, AdaptiveSigma{k, beta, fallback_sigma}));
        },
        py::arg("points"), py::arg("shape"), py::arg("k") = 3, py::arg("beta") = 0.3,
        py::arg("fallback_sigma") = 4.0,
        "Geometry-adaptive density map for (x, y) annotations on an (h, w) grid; "
        "sums to the annotation count.");

    m.def(
        "make_density_fixed",
        [](const DoubleArray& points, std::pair<int64_t, int64_t> shape, double sigma) {
            const PointAnnotations ann = to_annotations(points, shape.first, shape.second);
            return map_to_array(make_density(ann, FixedSigma{sigma}));
        },
        py::arg("points"), py::arg("shape"), py::arg("sigma"),
        "Density map with one fixed-width Gaussian per annotation.");

    m.def(
        "make_pyramid",
        [](const FloatArray& density) {
            const GtPyramid pyr = make_pyramid(array_to_map(density));
            py::list out;
            for (const DensityMap& level : pyr.maps) out.append(map_to_array(level));
            return out;
        },
        py::arg("density"),
        "Five average-pooled and re-upsampled copies (windows 1, 2, 4, 8, 16) of a "
        "density map, all at source resolution.");

    m.def(
        "apply_roi",
        [](const FloatArray& density, const FloatArray& mask) {
            const DensityMap m = array_to_map(mask);
            RoiMask roi;
            roi.h = m.h;
            roi.w = m.w;
            roi.grid = m.grid;
            return map_to_array(apply_roi(array_to_map(density), roi));
        },
        py::arg("density"), py::arg("mask"), "Zero a density map outside a binary mask.");

    m.def(
        "game",
        [](const FloatArray& pred, const FloatArray& gt, int level) {
            return game(array_to_map(pred), array_to_map(gt), level);
        },
        py::arg("pred"), py::arg("gt"), py::arg("level"),
        "Grid Average Mean absolute Error at the given level; level 0 is the "
        "absolute count error.");

    m.def(
        "mae_mse",
        [](const std::vector<std::pair<double, double>>& pairs) { return mae_mse(pairs); },
        py::arg("pairs"),
        "(MAE, MSE) over (gt_count, pred_count) pairs; MSE is the root of the mean "
        "squared error.");

    m.def(
        "synth_dataset",
        [](int n, const std::string& profile, uint64_t seed) {
            py::list out;
            for (const Sample& s : synth_dataset(n, profile_from_string(profile), seed)) {
                out.append(sample_to_dict(s));
            }
            return out;
        },
        py::arg("n"), py::arg("profile") = "sparse", py::arg("seed") = 0,
        "Deterministic synthetic crowd scenes; profile is sparse, dense, or gradient.");

    m.def(
        "read_dmap", [](const std::string& path) { return map_to_array(read_dmap(path)); },
        py::arg("path"), "Read a binary .dmap density file.");

    m.def(
        "write_dmap",
        [](const std::string& path, const FloatArray& density) {
            write_dmap(path, array_to_map(density));
        },
        py::arg("path"), py::arg("density"), "Write a binary .dmap density file.");

    m.def(
        "train",
        [](const std::string& config_text, const py::list& samples, const std::string& out_dir) {
            const TrainConfig cfg = parse_train_config_text(config_text, "config");
            const TrainResult res = train(cfg, dicts_to_samples(samples), out_dir);
            py::dict d;
            d["first_step"] = res.first_step;
            py::list l0, total;
            for (const LossBreakdown& bd : res.history) {
                l0.append(bd.l0);
                total.append(bd.total);
            }
            d["l0"] = l0;
            d["total"] = total;
            return d;
        },
        py::arg("config_text"), py::arg("samples"), py::arg("out_dir") = "",
        "Run the training loop on in-memory samples; a non-empty out_dir receives "
        "final.ckpt, history.csv, and periodic snapshots.");

    m.def(
        "evaluate",
        [](const PyModel& model, const py::list& samples, int bins, int k, double beta) {
            return report_to_dict(evaluate(model.net(), dicts_to_samples(samples), bins, k, beta));
        },
        py::arg("model"), py::arg("samples"), py::arg("bins") = 5, py::arg("k") = 3,
        py::arg("beta") = 0.3,
        "Whole-image evaluation against geometry-adaptive ground truth.");

    py::class_<PyModel>(m, "Model", "Trained density regressor loaded from a checkpoint.")
        .def_static("from_checkpoint", &PyModel::from_checkpoint, py::arg("path"))
        .def("predict", &PyModel::predict, py::arg("image"),
             "Density map at input resolution for a (3, h, w) image in [0, 1].")
        .def("count", &PyModel::count, py::arg("image"), "Predicted crowd count.")
        .def("save", &PyModel::save, py::arg("path"))
        .def_property_readonly("fingerprint", &PyModel::fingerprint);
}
