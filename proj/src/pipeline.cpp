#include "hsrnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hsrnet/ops.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace hsrnet {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key, const std::string& origin) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw io_error(origin + ": bad boolean '" + v + "' for key '" + key + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key, const std::string& origin) {
    std::istringstream is(v);
    T out;
    is >> out;
    if (is.fail() || !is.eof()) {
        throw io_error(origin + ": bad value '" + v + "' for key '" + key + "'");
    }
    return out;
}

std::array<int, 5> parse_int5(const std::string& v, const std::string& key,
                              const std::string& origin) {
    std::array<int, 5> out{};
    std::istringstream is(v);
    std::string tok;
    size_t i = 0;
    while (std::getline(is, tok, ',')) {
        if (i >= 5) throw io_error(origin + ": key '" + key + "' wants 5 values");
        out[i++] = parse_num<int>(trim(tok), key, origin);
    }
    if (i != 5) throw io_error(origin + ": key '" + key + "' wants 5 values, got " +
                               std::to_string(i));
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (lr < 0.0) throw std::invalid_argument("train config: lr must be >= 0");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (k < 1) throw std::invalid_argument("train config: k must be >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("train config: beta must be > 0");
    if (ckpt_every < 0) throw std::invalid_argument("train config: ckpt_every must be >= 0");
    if (!resume.empty() && !init_from.empty()) {
        throw std::invalid_argument("train config: resume and init_from are mutually exclusive");
    }
    model.validate();
}

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw io_error(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw io_error(where + ": expected 'key = value'");

        if (key == "lr") cfg.lr = parse_num<double>(value, key, where);
        else if (key == "epochs") cfg.epochs = parse_num<int>(value, key, where);
        else if (key == "batch_size") cfg.batch_size = parse_num<int>(value, key, where);
        else if (key == "k") cfg.k = parse_num<int>(value, key, where);
        else if (key == "beta") cfg.beta = parse_num<double>(value, key, where);
        else if (key == "augmentation") cfg.augmentation = parse_bool(value, key, where);
        else if (key == "seed") cfg.seed = parse_num<uint64_t>(value, key, where);
        else if (key == "ckpt_every") cfg.ckpt_every = parse_num<int>(value, key, where);
        else if (key == "resume") cfg.resume = value;
        else if (key == "init_from") cfg.init_from = value;
        else if (key == "loss_norm") {
            if (value == "pixels") cfg.loss_norm = LossNorm::pixels;
            else if (value == "images") cfg.loss_norm = LossNorm::images;
            else throw io_error(where + ": loss_norm must be 'pixels' or 'images'");
        } else if (key == "model.widths") cfg.model.stage_widths = parse_int5(value, key, where);
        else if (key == "model.convs") cfg.model.convs_per_stage = parse_int5(value, key, where);
        else if (key == "model.ratio") cfg.model.ratio_r = parse_num<int>(value, key, where);
        else if (key == "model.sfm_order") {
            try {
                cfg.model.sfm_order = sfm_order_from_string(value);
            } catch (const std::invalid_argument& e) {
                throw io_error(where + ": " + e.what());
            }
        } else if (key == "model.use_srm") cfg.model.use_srm = parse_bool(value, key, where);
        else if (key == "model.use_cf") cfg.model.use_cf = parse_bool(value, key, where);
        else if (key == "model.use_sf") cfg.model.use_sf = parse_bool(value, key, where);
        else if (key == "model.use_sc") cfg.model.use_sc = parse_bool(value, key, where);
        else if (key == "model.sfm_inline") cfg.model.sfm_inline = parse_bool(value, key, where);
        else if (key == "model.seed") cfg.model.seed = parse_num<uint64_t>(value, key, where);
        else throw io_error(where + ": unknown key '" + key + "'");
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw io_error(origin + ": " + e.what());
    }
    return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error(path + ": cannot open for reading");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_train_config_text(buf.str(), path);
}

namespace {

// One fully prepared training sample (post-augmentation).
struct TrainItem {
    Tensor image;                 // (1,3,h,w)
    Tensor gt;                    // (1,1,h,w), ROI already applied
    std::vector<Tensor> pyramid;  // 5 levels when side supervision is on
    Tensor roi;                   // (1,1,h,w) or undefined
    int64_t h = 0, w = 0;
};

Tensor map_to_tensor(const DensityMap& d) {
    return Tensor::from_data({1, 1, d.h, d.w}, d.grid);
}

TrainItem prepare_item(const Sample& s, const TrainConfig& cfg) {
    TrainItem item;
    const Shape4 sh = s.image.shape();
    item.image = s.image;
    item.h = sh.h;
    item.w = sh.w;
    DensityMap gt = make_density(s.annotations, AdaptiveSigma{cfg.k, cfg.beta, 4.0});
    GtPyramid pyr;
    const bool want_pyramid = cfg.model.use_srm && cfg.model.use_sc;
    if (want_pyramid) pyr = make_pyramid(gt);
    if (s.roi) {
        gt = apply_roi(gt, *s.roi);
        RoiMask mask = *s.roi;
        item.roi = Tensor::from_data({1, 1, mask.h, mask.w}, mask.grid);
    }
    item.gt = map_to_tensor(gt);
    if (want_pyramid) {
        for (const DensityMap& level : pyr.maps) {
            item.pyramid.push_back(
                s.roi ? map_to_tensor(apply_roi(level, *s.roi)) : map_to_tensor(level));
        }
    }
    return item;
}

Tensor stack_rows(const std::vector<const Tensor*>& rows) {
    if (rows.size() == 1) return *rows[0];
    const Shape4 s = rows[0]->shape();
    std::vector<float> data;
    data.reserve(rows.size() * rows[0]->data().size());
    for (const Tensor* t : rows) data.insert(data.end(), t->data().begin(), t->data().end());
    return Tensor::from_data({static_cast<int64_t>(rows.size()), s.c, s.h, s.w}, std::move(data));
}

// The whole run's batch schedule, derived only from (seed, sizes, epochs) so
// a resumed run rebuilds it identically.
std::vector<std::vector<size_t>> batch_schedule(const TrainConfig& cfg,
                                                const std::vector<TrainItem>& items) {
    std::vector<std::vector<size_t>> batches;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(items.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        size_t pos = 0;
        while (pos < order.size()) {
            std::vector<size_t> batch{order[pos]};
            ++pos;
            while (pos < order.size() && batch.size() < static_cast<size_t>(cfg.batch_size) &&
                   items[order[pos]].h == items[batch[0]].h &&
                   items[order[pos]].w == items[batch[0]].w) {
                batch.push_back(order[pos]);
                ++pos;
            }
            batches.push_back(std::move(batch));
        }
    }
    return batches;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error(path + ": cannot open for writing");
    os << text;
    if (!os) throw io_error(path + ": write failed");
}

}  // namespace

std::string history_to_csv(const TrainResult& result) {
    std::string out = "step,l0,l1,l2,l3,l4,l5,lambda1,lambda2,lambda3,lambda4,lambda5,total\n";
    char buf[512];
    int64_t step = result.first_step;
    for (const LossBreakdown& bd : result.history) {
        std::snprintf(buf, sizeof buf,
                      "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                      "%.17g\n",
                      static_cast<long long>(step), bd.l0, bd.l_side[0], bd.l_side[1], bd.l_side[2],
                      bd.l_side[3], bd.l_side[4], bd.lambda[0], bd.lambda[1], bd.lambda[2],
                      bd.lambda[3], bd.lambda[4], bd.total);
        out += buf;
        ++step;
    }
    return out;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data,
                  const std::string& out_dir) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");

    // Materialize the training set and its ground truth up front.
    std::vector<TrainItem> items;
    for (size_t i = 0; i < data.size(); ++i) {
        if (cfg.augmentation) {
            Rng arng(mix_seed(cfg.seed, 0x61756700ull + i));  // per-source stream
            for (const Sample& patch : augment(data[i], arng)) {
                items.push_back(prepare_item(patch, cfg));
            }
        } else {
            items.push_back(prepare_item(data[i], cfg));
        }
    }

    HsrNet model = cfg.resume.empty() && cfg.init_from.empty()
                       ? HsrNet(cfg.model)
                       : model_from_checkpoint(
                             read_checkpoint(cfg.resume.empty() ? cfg.init_from : cfg.resume));
    if (model.config().fingerprint() != cfg.model.fingerprint()) {
        throw io_error("train: checkpoint architecture '" + model.config().fingerprint() +
                       "' does not match configured '" + cfg.model.fingerprint() + "'");
    }

    AdamState adam;
    adam.lr = cfg.lr;
    adam.reset(model.params());
    if (!cfg.resume.empty()) {
        load_adam_state(read_checkpoint(cfg.resume), model.params(), adam);
        adam.lr = cfg.lr;
    }

    const auto schedule = batch_schedule(cfg, items);
    const int64_t total_steps = static_cast<int64_t>(schedule.size());
    const int64_t done_steps = adam.t;
    if (done_steps > total_steps) {
        throw io_error("train: checkpoint is at step " + std::to_string(done_steps) +
                       " but the schedule has only " + std::to_string(total_steps));
    }

    const bool use_sc = cfg.model.use_srm && cfg.model.use_sc;
    const std::vector<Tensor> lambda_raw = model.lambda_raw();

    TrainResult result;
    result.first_step = done_steps + 1;

    if (!out_dir.empty()) fs::create_directories(out_dir);

    for (int64_t step = done_steps; step < total_steps; ++step) {
        const std::vector<size_t>& batch = schedule[static_cast<size_t>(step)];
        std::vector<const Tensor*> images, gts;
        std::vector<const Tensor*> pyr[5];
        bool any_roi = false;
        for (size_t idx : batch) {
            images.push_back(&items[idx].image);
            gts.push_back(&items[idx].gt);
            if (items[idx].roi.defined()) any_roi = true;
            for (size_t level = 0; level < items[idx].pyramid.size(); ++level) {
                pyr[level].push_back(&items[idx].pyramid[level]);
            }
        }
        const Tensor x = stack_rows(images);
        const Tensor gt = stack_rows(gts);

        ForwardOutput out = model.forward(x);
        if (any_roi) {
            std::vector<float> mask;
            const size_t plane = static_cast<size_t>(items[batch[0]].h * items[batch[0]].w);
            for (size_t idx : batch) {
                if (items[idx].roi.defined()) {
                    const auto& g = items[idx].roi.data();
                    mask.insert(mask.end(), g.begin(), g.end());
                } else {
                    mask.insert(mask.end(), plane, 1.0f);
                }
            }
            const Tensor m = Tensor::from_data(
                {static_cast<int64_t>(batch.size()), 1, items[batch[0]].h, items[batch[0]].w},
                std::move(mask));
            out.d0 = broadcast_mul(out.d0, m);
            for (Tensor& side : out.side) side = broadcast_mul(side, m);
        }

        LossBreakdown bd;
        if (use_sc) {
            std::vector<Tensor> pyramid;
            for (auto& level : pyr) pyramid.push_back(stack_rows(level));
            bd = scale_consistency_loss(out, gt, pyramid, lambda_raw, cfg.loss_norm);
        } else {
            bd = density_only_loss(out.d0, gt, cfg.loss_norm);
        }
        if (!std::isfinite(bd.total)) {
            const auto culprit = first_non_finite(bd.total_node);
            throw numeric_error("train: non-finite loss at step " + std::to_string(step + 1) +
                                " (first non-finite tensor: " +
                                (culprit ? *culprit : "unknown") + ")");
        }
        backward(bd.total_node);
        adam_step(model.params(), adam);
        // The history keeps values only; retaining the live scalar would pin
        // every step's whole graph through its parent chain.
        bd.total_node = bd.total_node.clone();
        result.history.push_back(bd);

        if (!out_dir.empty() && cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(step + 1));
            write_checkpoint((fs::path(out_dir) / name).string(), model_snapshot(model, &adam));
        }
    }

    result.final_checkpoint = model_snapshot(model, &adam);
    if (!out_dir.empty()) {
        write_checkpoint((fs::path(out_dir) / "final.ckpt").string(), result.final_checkpoint);
        write_text_file((fs::path(out_dir) / "history.csv").string(), history_to_csv(result));
    }
    return result;
}

EvalReport evaluate(const HsrNet& model, const std::vector<Sample>& data, int bins, int k,
                    double beta) {
    if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<const Sample*> ordered;
    ordered.reserve(data.size());
    for (const Sample& s : data) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const Sample* a, const Sample* b) { return a->id < b->id; });

    std::vector<EvalRow> rows;
    rows.reserve(ordered.size());
    NoGradGuard ng;
    for (const Sample* s : ordered) {
        const Shape4 sh = s->image.shape();
        const int64_t ph = (sh.h + 15) / 16 * 16;
        const int64_t pw = (sh.w + 15) / 16 * 16;
        Tensor x = s->image;
        if (ph != sh.h || pw != sh.w) {
            std::vector<float> padded(static_cast<size_t>(3 * ph * pw), 0.0f);
            for (int64_t c = 0; c < 3; ++c) {
                for (int64_t y = 0; y < sh.h; ++y) {
                    for (int64_t xx = 0; xx < sh.w; ++xx) {
                        padded[static_cast<size_t>((c * ph + y) * pw + xx)] =
                            s->image.at(0, c, y, xx);
                    }
                }
            }
            x = Tensor::from_data({1, 3, ph, pw}, std::move(padded));
        }
        const ForwardOutput out = model.forward(x);

        DensityMap pred = DensityMap::zeros(sh.h, sh.w);
        for (int64_t y = 0; y < sh.h; ++y) {
            for (int64_t xx = 0; xx < sh.w; ++xx) {
                pred.at(y, xx) = out.d0.at(0, 0, y, xx);
            }
        }
        DensityMap gt = make_density(s->annotations, AdaptiveSigma{k, beta, 4.0});
        if (s->roi) {
            pred = apply_roi(pred, *s->roi);
            gt = apply_roi(gt, *s->roi);
        }

        EvalRow row;
        row.id = s->id;
        row.gt_count = gt.count();
        row.pred_count = pred.count();
        for (int level = 0; level < 4; ++level) {
            row.game[static_cast<size_t>(level)] = game(pred, gt, level);
        }
        rows.push_back(std::move(row));
    }
    return make_report(std::move(rows), bins);
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::string& axis,
                                const std::vector<Sample>& data) {
    struct Variant {
        std::string label;
        ModelConfig cfg;
    };
    std::vector<Variant> variants;
    if (axis == "components") {
        auto row = [&](const char* label, bool srm, bool cf, bool sf, bool sc) {
            ModelConfig m = base.model;
            m.use_srm = srm;
            m.use_cf = cf;
            m.use_sf = sf;
            m.use_sc = sc;
            variants.push_back({label, m});
        };
        row("backbone", false, false, false, false);
        row("srm", true, false, false, false);
        row("srm+cf", true, true, false, false);
        row("srm+sf", true, false, true, false);
        row("srm+cf+sf", true, true, true, false);
        row("srm+cf+sf+sc", true, true, true, true);
    } else if (axis == "ratio") {
        for (int r : {8, 16, 32, 64, 128}) {
            ModelConfig m = base.model;
            m.ratio_r = r;
            variants.push_back({"r" + std::to_string(r), m});
        }
    } else if (axis == "sfm_order") {
        for (SfmOrder order : {SfmOrder::channel_then_spatial, SfmOrder::spatial_then_channel,
                               SfmOrder::parallel_average, SfmOrder::parallel_conv}) {
            ModelConfig m = base.model;
            m.sfm_order = order;
            variants.push_back({to_string(order), m});
        }
    } else {
        throw std::invalid_argument("ablate: unknown axis '" + axis +
                                    "' (want components|ratio|sfm_order)");
    }

    const uint64_t hash = dataset_hash(data);
    std::vector<AblationRow> rows;
    rows.reserve(variants.size());
    for (const Variant& v : variants) {
        TrainConfig cfg = base;
        cfg.model = v.cfg;
        const TrainResult tr = train(cfg, data);
        AblationRow row;
        row.label = v.label;
        row.fingerprint = v.cfg.fingerprint();
        row.final_l0 = tr.history.empty() ? 0.0 : tr.history.back().l0;
        const HsrNet trained = model_from_checkpoint(tr.final_checkpoint);
        row.report = evaluate(trained, data, 0, base.k, base.beta);
        row.data_hash = hash;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const AblationRow& r : rows) {
        char hash[20];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.data_hash));
        nlohmann::ordered_json jr;
        jr["label"] = r.label;
        jr["fingerprint"] = r.fingerprint;
        jr["final_l0"] = r.final_l0;
        jr["mae"] = r.report.mae;
        jr["mse"] = r.report.mse;
        for (size_t level = 0; level < r.report.game.size(); ++level) {
            jr["game" + std::to_string(level)] = r.report.game[level];
        }
        jr["data_hash"] = hash;
        j.push_back(std::move(jr));
    }
    return j.dump(2) + "\n";
}

}  // namespace hsrnet
