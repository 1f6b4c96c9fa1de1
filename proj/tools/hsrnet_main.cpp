#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hsrnet/adam.hpp"
#include "hsrnet/checkpoint.hpp"
#include "hsrnet/dataset.hpp"
#include "hsrnet/density.hpp"
#include "hsrnet/io.hpp"
#include "hsrnet/model.hpp"
#include "hsrnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hsrnet;

namespace {

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    out << content;
    if (!out) throw io_error("write failed for " + path);
}

std::vector<fs::path> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw io_error("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw io_error("no .ppm/.pgm images found in " + dir);
    return files;
}

// Zero-pad to the next multiple of 16 so the resolution contract holds, then
// crop the prediction back; mirrors the evaluation protocol.
DensityMap predict_map(const HsrNet& model, const Image& img) {
    Tensor t = image_to_tensor(img);
    const Shape4 s = t.shape();
    const int64_t ph = (s.h + 15) / 16 * 16;
    const int64_t pw = (s.w + 15) / 16 * 16;
    Tensor input = t;
    if (ph != s.h || pw != s.w) {
        std::vector<float> buf(static_cast<size_t>(s.c * ph * pw), 0.0f);
        for (int64_t c = 0; c < s.c; ++c) {
            for (int64_t y = 0; y < s.h; ++y) {
                std::memcpy(buf.data() + (c * ph + y) * pw, t.data().data() + (c * s.h + y) * s.w,
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

struct MakeGtArgs {
    std::string images, ann, out;
    int k = 3;
    double beta = 0.3;
    double sigma = 0.0;
    bool sigma_set = false;
    bool pyramid = false;
};

void run_make_gt(const MakeGtArgs& a) {
    fs::create_directories(a.out);
    for (const fs::path& img_path : list_images(a.images)) {
        const std::string stem = img_path.stem().string();
        const Image img = read_image(img_path.string());
        const fs::path ann_path = fs::path(a.ann) / (stem + ".csv");
        if (!fs::exists(ann_path)) {
            throw io_error("missing annotation file " + ann_path.string());
        }
        const PointAnnotations ann = read_points_csv(ann_path.string(), img.w, img.h);
        const DensityMap d = a.sigma_set ? make_density(ann, FixedSigma{a.sigma})
                                         : make_density(ann, AdaptiveSigma{a.k, a.beta});
        write_dmap((fs::path(a.out) / (stem + ".dmap")).string(), d);
        if (a.pyramid) {
            const GtPyramid pyr = make_pyramid(d);
            for (size_t i = 0; i < pyr.maps.size(); ++i) {
                const std::string name =
                    stem + ".s" + std::to_string(kPyramidScales[i]) + ".dmap";
                write_dmap((fs::path(a.out) / name).string(), pyr.maps[i]);
            }
        }
    }
}

void run_eval(const std::string& ckpt, const std::string& data_dir, int bins,
              const std::string& report) {
    const HsrNet model = model_from_checkpoint(read_checkpoint(ckpt));
    const EvalReport rep = evaluate(model, load_dataset(data_dir), bins);
    write_text(report, rep.to_json());
    write_text(report + ".csv", rep.to_csv());
}

void run_predict(const std::string& ckpt, const std::string& image, const std::string& out,
                 const std::string& heatmap) {
    const HsrNet model = model_from_checkpoint(read_checkpoint(ckpt));
    const DensityMap d = predict_map(model, read_image(image));
    write_dmap(out, d);
    if (!heatmap.empty()) write_pgm_heatmap(heatmap, d);
    std::printf("%.2f\n", d.count());
}

void run_inspect(const std::string& ckpt) {
    const Checkpoint ck = read_checkpoint(ckpt);
    for (const CheckpointRecord& r : ck.records) {
        std::string dims = "(";
        for (size_t i = 0; i < r.dims.size(); ++i) {
            if (i) dims += ", ";
            dims += std::to_string(r.dims[i]);
        }
        dims += ")";
        std::printf("%s %s\n", r.name.c_str(), dims.c_str());
    }
    for (int i = 1; i <= 5; ++i) {
        const CheckpointRecord* r = ck.find("loss.lambda" + std::to_string(i));
        if (r == nullptr || r->data.empty()) continue;
        const double raw = r->data[0];
        const double lam = raw > 0.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
        std::printf("lambda%d = %.6f\n", i, lam);
    }
    if (ck.has_adam) {
        const CheckpointRecord* t = ck.find_adam("t");
        if (t != nullptr && !t->data.empty()) {
            std::printf("adam steps = %lld\n", static_cast<long long>(t->data[0]));
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crowd density estimation toolkit"};
    app.require_subcommand(1);

    MakeGtArgs gt;
    CLI::App* make_gt = app.add_subcommand("make-gt", "write density-map ground truth");
    make_gt->add_option("--images", gt.images, "image directory")->required();
    make_gt->add_option("--ann", gt.ann, "annotation directory")->required();
    make_gt->add_option("--out", gt.out, "output directory")->required();
    auto* opt_k = make_gt->add_option("--k", gt.k, "adaptive-kernel neighbours");
    auto* opt_beta = make_gt->add_option("--beta", gt.beta, "adaptive-kernel scale");
    auto* opt_sigma = make_gt->add_option("--sigma", gt.sigma, "fixed kernel width");
    opt_sigma->excludes(opt_k)->excludes(opt_beta);
    make_gt->add_flag("--pyramid", gt.pyramid, "also write the 5 pooled/upsampled levels");

    int synth_n = 0;
    std::string synth_profile, synth_out;
    uint64_t synth_seed = 0;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--n", synth_n, "image count")->required()->check(CLI::NonNegativeNumber);
    synth->add_option("--profile", synth_profile, "sparse | dense | gradient")
        ->required()
        ->check(CLI::IsMember({"sparse", "dense", "gradient"}));
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "generator seed");

    std::string train_config, train_data, train_out;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", train_config, "train config file")->required();
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();

    std::string eval_ckpt, eval_data, eval_report;
    int eval_bins = 5;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--bins", eval_bins, "quantile bins by gt count")
        ->check(CLI::NonNegativeNumber);
    eval_cmd->add_option("--report", eval_report, "report path (JSON; CSV sibling)")->required();

    std::string pred_ckpt, pred_image, pred_out, pred_heatmap;
    CLI::App* predict_cmd = app.add_subcommand("predict", "predict a density map");
    predict_cmd->add_option("--ckpt", pred_ckpt, "checkpoint file")->required();
    predict_cmd->add_option("--image", pred_image, "input image (.ppm/.pgm)")->required();
    predict_cmd->add_option("--out", pred_out, "output density map")->required();
    predict_cmd->add_option("--heatmap", pred_heatmap, "optional PGM visualization");

    std::string abl_config, abl_axis, abl_data, abl_report;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run an ablation axis");
    ablate_cmd->add_option("--config", abl_config, "base train config")->required();
    ablate_cmd->add_option("--axis", abl_axis, "components | ratio | sfm_order")
        ->required()
        ->check(CLI::IsMember({"components", "ratio", "sfm_order"}));
    ablate_cmd->add_option("--data", abl_data, "dataset directory")->required();
    ablate_cmd->add_option("--report", abl_report, "report path (JSON)")->required();

    std::string inspect_ckpt;
    CLI::App* inspect_cmd = app.add_subcommand("inspect", "list checkpoint contents");
    inspect_cmd->add_option("--ckpt", inspect_ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
        gt.sigma_set = opt_sigma->count() > 0;

        if (*make_gt) {
            run_make_gt(gt);
        } else if (*synth) {
            save_dataset(synth_out,
                         synth_dataset(synth_n, profile_from_string(synth_profile), synth_seed));
        } else if (*train_cmd) {
            train(parse_train_config(train_config), load_dataset(train_data), train_out);
        } else if (*eval_cmd) {
            run_eval(eval_ckpt, eval_data, eval_bins, eval_report);
        } else if (*predict_cmd) {
            run_predict(pred_ckpt, pred_image, pred_out, pred_heatmap);
        } else if (*ablate_cmd) {
            write_text(abl_report,
                       ablation_to_json(ablate(parse_train_config(abl_config), abl_axis,
                                               load_dataset(abl_data))));
        } else if (*inspect_cmd) {
            run_inspect(inspect_ckpt);
        }
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
