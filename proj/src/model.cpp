#include "hsrnet/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "hsrnet/ops.hpp"
#include "hsrnet/rng.hpp"

namespace hsrnet {

namespace {

// Set cardinalities of the regrouped score-map channels.
constexpr std::array<int, 5> kSetSizes = {4, 4, 3, 2, 1};

// softplus(x) = 1  ⇒  x = ln(e − 1)
const float kLambdaRawInit = static_cast<float>(std::log(std::exp(1.0) - 1.0));

std::string stage_param(int k, int j, const char* leaf) {
    return "stage" + std::to_string(k) + ".conv" + std::to_string(j) + "." + leaf;
}

std::string sfm_param(int i, const char* mid, const char* leaf) {
    return "sfm" + std::to_string(i) + "." + mid + "." + leaf;
}

std::string srm_e_param(int k, const char* mid, const char* leaf) {
    return "srm.e" + std::to_string(k) + "." + mid + "." + leaf;
}

std::string srm_set_param(int j, const char* leaf) {
    return "srm.set" + std::to_string(j) + ".reduce." + leaf;
}

}  // namespace

std::string to_string(SfmOrder order) {
    switch (order) {
        case SfmOrder::channel_then_spatial: return "channel_then_spatial";
        case SfmOrder::spatial_then_channel: return "spatial_then_channel";
        case SfmOrder::parallel_average: return "parallel_average";
        case SfmOrder::parallel_conv: return "parallel_conv";
    }
    throw std::invalid_argument("to_string: bad SfmOrder value");
}

SfmOrder sfm_order_from_string(const std::string& s) {
    if (s == "channel_then_spatial") return SfmOrder::channel_then_spatial;
    if (s == "spatial_then_channel") return SfmOrder::spatial_then_channel;
    if (s == "parallel_average") return SfmOrder::parallel_average;
    if (s == "parallel_conv") return SfmOrder::parallel_conv;
    throw std::invalid_argument("unknown sfm_order '" + s + "'");
}

void ModelConfig::validate() const {
    for (int w : stage_widths) {
        if (w < 1) throw std::invalid_argument("model config: stage widths must be >= 1");
    }
    for (int c : convs_per_stage) {
        if (c < 1) throw std::invalid_argument("model config: convs per stage must be >= 1");
    }
    if (ratio_r < 1) throw std::invalid_argument("model config: ratio must be >= 1");
    if (use_sc && !use_srm) {
        throw std::invalid_argument("model config: use_sc requires use_srm (no side outputs)");
    }
}

int ModelConfig::focus_hidden(int channels) const {
    return std::max(1, channels / ratio_r);
}

std::string ModelConfig::fingerprint() const {
    std::ostringstream os;
    os << "widths=";
    for (size_t i = 0; i < stage_widths.size(); ++i) os << (i ? "," : "") << stage_widths[i];
    os << ";convs=";
    for (size_t i = 0; i < convs_per_stage.size(); ++i) os << (i ? "," : "") << convs_per_stage[i];
    os << ";r=" << ratio_r << ";order=" << to_string(sfm_order) << ";srm=" << use_srm
       << ";cf=" << use_cf << ";sf=" << use_sf << ";sc=" << use_sc << ";inline=" << sfm_inline;
    return os.str();
}

Tensor channel_focus(const Tensor& f, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                     const Tensor& b2) {
    const Tensor z = global_avg_pool(f);
    const Tensor hidden = activation(linear(z, w1, b1), Activation::relu);
    const Tensor s = activation(linear(hidden, w2, b2), Activation::sigmoid);
    return broadcast_mul(f, s);
}

Tensor spatial_focus(const Tensor& f, const Tensor& w7, const Tensor& b7) {
    const Tensor m = channel_mean(f);
    const Tensor mask = activation(conv2d(m, w7, b7, 1, 3), Activation::sigmoid);
    return broadcast_mul(f, mask);
}

HsrNet::HsrNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);

    auto add_weight = [&](std::string name, Shape4 shape) {
        // Fan-scaled init: the net trains from scratch, and a fixed small
        // stddev would shrink activations geometrically over the stages until
        // only the output bias can learn.
        const double stddev = std::sqrt(2.0 / static_cast<double>(shape.c * shape.h * shape.w));
        std::vector<float> data(static_cast<size_t>(shape.numel()));
        for (auto& v : data) v = static_cast<float>(rng.normal(0.0, stddev));
        params_.emplace_back(std::move(name), Tensor::from_data(shape, std::move(data)));
    };
    auto add_bias = [&](std::string name, int64_t channels) {
        params_.emplace_back(std::move(name), Tensor::zeros({1, channels, 1, 1}));
    };
    auto add_scalar = [&](std::string name, float v) {
        params_.emplace_back(std::move(name), Tensor::full({1, 1, 1, 1}, v));
    };

    // Backbone: five stages of 3x3 convs.
    for (int k = 1; k <= 5; ++k) {
        const int64_t out_c = cfg_.stage_widths[static_cast<size_t>(k - 1)];
        for (int j = 1; j <= cfg_.convs_per_stage[static_cast<size_t>(k - 1)]; ++j) {
            const int64_t in_c =
                j > 1 ? out_c : (k == 1 ? 3 : cfg_.stage_widths[static_cast<size_t>(k - 2)]);
            add_weight(stage_param(k, j, "weight"), {out_c, in_c, 3, 3});
            add_bias(stage_param(k, j, "bias"), out_c);
        }
    }

    // One SFM per tapped stage (stages 2..5 → sfm1..sfm4).
    for (int i = 1; i <= 4; ++i) {
        const int64_t c = cfg_.stage_widths[static_cast<size_t>(i)];
        if (cfg_.use_cf) {
            const int64_t hidden = cfg_.focus_hidden(static_cast<int>(c));
            add_weight(sfm_param(i, "fc1", "weight"), {hidden, c, 1, 1});
            add_bias(sfm_param(i, "fc1", "bias"), hidden);
            add_weight(sfm_param(i, "fc2", "weight"), {c, hidden, 1, 1});
            add_bias(sfm_param(i, "fc2", "bias"), c);
        }
        if (cfg_.use_sf) {
            add_weight(sfm_param(i, "conv7", "weight"), {1, 1, 7, 7});
            add_bias(sfm_param(i, "conv7", "bias"), 1);
        }
        if (cfg_.sfm_order == SfmOrder::parallel_conv && (cfg_.use_cf || cfg_.use_sf)) {
            add_weight(sfm_param(i, "merge", "weight"), {c, 2 * c, 1, 1});
            add_bias(sfm_param(i, "merge", "bias"), c);
        }
    }

    if (cfg_.use_srm) {
        // Score maps E_2..E_5: 1x1 conv to k channels + learned 2^(k-1)x upsampling.
        for (int k = 2; k <= 5; ++k) {
            const int64_t in_c = cfg_.stage_widths[static_cast<size_t>(k - 1)];
            const int64_t factor = int64_t{1} << (k - 1);
            add_weight(srm_e_param(k, "conv1", "weight"), {k, in_c, 1, 1});
            add_bias(srm_e_param(k, "conv1", "bias"), k);
            add_weight(srm_e_param(k, "deconv", "weight"), {k, k, 2 * factor, 2 * factor});
        }
        for (int j = 1; j <= 5; ++j) {
            add_weight(srm_set_param(j, "weight"), {1, kSetSizes[static_cast<size_t>(j - 1)], 1, 1});
            add_bias(srm_set_param(j, "bias"), 1);
        }
    }

    const int64_t fuse_in = cfg_.use_srm ? 5 : cfg_.stage_widths[4];
    add_weight("fuse.weight", {1, fuse_in, 1, 1});
    add_bias("fuse.bias", 1);

    if (cfg_.use_srm && cfg_.use_sc) {
        for (int i = 1; i <= 5; ++i) add_scalar("loss.lambda" + std::to_string(i), kLambdaRawInit);
    }
}

const Tensor& HsrNet::param(const std::string& name) const {
    for (const Parameter& p : params_) {
        if (p.name() == name) return p.value();
    }
    throw std::invalid_argument("model has no parameter '" + name + "'");
}

Tensor* HsrNet::find_param(const std::string& name) {
    for (Parameter& p : params_) {
        if (p.name() == name) return &p.value();
    }
    return nullptr;
}

std::vector<Tensor> HsrNet::lambda_raw() const {
    std::vector<Tensor> out;
    if (!(cfg_.use_srm && cfg_.use_sc)) return out;
    for (int i = 1; i <= 5; ++i) out.push_back(param("loss.lambda" + std::to_string(i)));
    return out;
}

Tensor HsrNet::sfm(const Tensor& f, int i) const {
    if (!cfg_.use_cf && !cfg_.use_sf) return f;
    auto cf = [&](const Tensor& in) {
        if (!cfg_.use_cf) return in;
        return channel_focus(in, param(sfm_param(i, "fc1", "weight")),
                             param(sfm_param(i, "fc1", "bias")),
                             param(sfm_param(i, "fc2", "weight")),
                             param(sfm_param(i, "fc2", "bias")));
    };
    auto sf = [&](const Tensor& in) {
        if (!cfg_.use_sf) return in;
        return spatial_focus(in, param(sfm_param(i, "conv7", "weight")),
                             param(sfm_param(i, "conv7", "bias")));
    };
    switch (cfg_.sfm_order) {
        case SfmOrder::channel_then_spatial: return sf(cf(f));
        case SfmOrder::spatial_then_channel: return cf(sf(f));
        case SfmOrder::parallel_average: return scale(add(cf(f), sf(f)), 0.5f);
        case SfmOrder::parallel_conv:
            return conv2d(concat_channels({cf(f), sf(f)}), param(sfm_param(i, "merge", "weight")),
                          param(sfm_param(i, "merge", "bias")), 1, 0);
    }
    throw std::invalid_argument("sfm: bad order");
}

ForwardOutput HsrNet::forward(const Tensor& x) const {
    const Shape4 s = x.shape();
    if (s.c != 3) {
        throw std::invalid_argument("forward: input must have 3 channels, got " + s.str());
    }
    if (s.h < 16 || s.w < 16 || s.h % 16 != 0 || s.w % 16 != 0) {
        throw std::invalid_argument("forward: input H and W must be positive multiples of 16, got " +
                                    s.str());
    }

    ForwardOutput out;
    Tensor t = x;
    for (int k = 1; k <= 5; ++k) {
        for (int j = 1; j <= cfg_.convs_per_stage[static_cast<size_t>(k - 1)]; ++j) {
            t = activation(
                conv2d(t, param(stage_param(k, j, "weight")), param(stage_param(k, j, "bias")), 1, 1),
                Activation::relu);
        }
        if (k >= 2) {
            Tensor tap = sfm(t, k - 1);
            out.taps.push_back(tap);
            if (cfg_.sfm_inline) t = tap;
        }
        if (k <= 4) t = max_pool2(t);
    }

    if (cfg_.use_srm) {
        std::vector<Tensor> score;  // E_2..E_5, k channels each, input resolution
        for (int k = 2; k <= 5; ++k) {
            const Tensor& f = out.taps[static_cast<size_t>(k - 2)];
            Tensor e = conv2d(f, param(srm_e_param(k, "conv1", "weight")),
                              param(srm_e_param(k, "conv1", "bias")), 1, 0);
            const int factor = 1 << (k - 1);
            e = transposed_conv2d(e, param(srm_e_param(k, "deconv", "weight")), factor, factor / 2);
            score.push_back(e);
        }
        for (int j = 1; j <= 5; ++j) {
            std::vector<Tensor> slices;
            std::vector<int64_t> channels;
            for (int k = 2; k <= 5; ++k) {
                if (k < j) continue;  // E_k has k channels
                slices.push_back(score[static_cast<size_t>(k - 2)]);
                channels.push_back(j - 1);
            }
            const Tensor stacked = channel_slice_concat(slices, channels);
            out.side.push_back(conv2d(stacked, param(srm_set_param(j, "weight")),
                                      param(srm_set_param(j, "bias")), 1, 0));
        }
        out.d0 = conv2d(concat_channels(out.side), param("fuse.weight"), param("fuse.bias"), 1, 0);
    } else {
        const Tensor up = bilinear_upsample(out.taps[3], s.h, s.w);
        out.d0 = conv2d(up, param("fuse.weight"), param("fuse.bias"), 1, 0);
    }
    return out;
}

namespace {

constexpr const char* kConfigRecord = "config.model";

std::vector<float> encode_config(const ModelConfig& cfg) {
    std::vector<float> v;
    for (int w : cfg.stage_widths) v.push_back(static_cast<float>(w));
    for (int c : cfg.convs_per_stage) v.push_back(static_cast<float>(c));
    v.push_back(static_cast<float>(cfg.ratio_r));
    v.push_back(static_cast<float>(static_cast<int>(cfg.sfm_order)));
    v.push_back(cfg.use_srm ? 1.0f : 0.0f);
    v.push_back(cfg.use_cf ? 1.0f : 0.0f);
    v.push_back(cfg.use_sf ? 1.0f : 0.0f);
    v.push_back(cfg.use_sc ? 1.0f : 0.0f);
    v.push_back(cfg.sfm_inline ? 1.0f : 0.0f);
    return v;
}

ModelConfig decode_config(const std::vector<float>& v) {
    if (v.size() != 17) {
        throw io_error("config.model record has " + std::to_string(v.size()) +
                       " values, expected 17");
    }
    ModelConfig cfg;
    for (int i = 0; i < 5; ++i) cfg.stage_widths[static_cast<size_t>(i)] = static_cast<int>(v[i]);
    for (int i = 0; i < 5; ++i) {
        cfg.convs_per_stage[static_cast<size_t>(i)] = static_cast<int>(v[5 + i]);
    }
    cfg.ratio_r = static_cast<int>(v[10]);
    const int order = static_cast<int>(v[11]);
    if (order < 0 || order > 3) throw io_error("config.model record has bad sfm_order");
    cfg.sfm_order = static_cast<SfmOrder>(order);
    cfg.use_srm = v[12] != 0.0f;
    cfg.use_cf = v[13] != 0.0f;
    cfg.use_sf = v[14] != 0.0f;
    cfg.use_sc = v[15] != 0.0f;
    cfg.sfm_inline = v[16] != 0.0f;
    cfg.seed = 0;  // irrelevant once weights are loaded
    return cfg;
}

}  // namespace

Checkpoint model_snapshot(const HsrNet& model, const AdamState* adam) {
    Checkpoint ck;
    {
        CheckpointRecord rec;
        rec.name = kConfigRecord;
        rec.data = encode_config(model.config());
        rec.dims = {static_cast<uint32_t>(rec.data.size())};
        ck.records.push_back(std::move(rec));
    }
    for (const Parameter& p : model.params()) {
        CheckpointRecord rec;
        rec.name = p.name();
        const Shape4 s = p.value().shape();
        rec.dims = {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                    static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)};
        rec.data = p.value().data();
        ck.records.push_back(std::move(rec));
    }
    if (adam) {
        ck.has_adam = true;
        CheckpointRecord t;
        t.name = "t";
        t.dims = {1};
        t.data = {static_cast<float>(adam->t)};
        ck.adam_records.push_back(std::move(t));
        const auto& params = model.params();
        if (adam->m.size() != params.size()) {
            throw std::invalid_argument("model_snapshot: optimizer state does not match model");
        }
        for (size_t i = 0; i < params.size(); ++i) {
            CheckpointRecord m;
            m.name = params[i].name() + ".m";
            m.dims = {static_cast<uint32_t>(adam->m[i].size())};
            m.data = adam->m[i];
            ck.adam_records.push_back(std::move(m));
            CheckpointRecord v;
            v.name = params[i].name() + ".v";
            v.dims = {static_cast<uint32_t>(adam->v[i].size())};
            v.data = adam->v[i];
            ck.adam_records.push_back(std::move(v));
        }
    }
    return ck;
}

HsrNet model_from_checkpoint(const Checkpoint& ck) {
    const CheckpointRecord* cfg_rec = ck.find(kConfigRecord);
    if (!cfg_rec) throw io_error("checkpoint is not a model snapshot: missing config.model");
    ModelConfig cfg = decode_config(cfg_rec->data);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw io_error(std::string("checkpoint config invalid: ") + e.what());
    }
    HsrNet model(cfg);
    size_t used = 1;
    for (Parameter& p : model.params()) {
        const CheckpointRecord* rec = ck.find(p.name());
        if (!rec) throw io_error("checkpoint missing parameter '" + p.name() + "'");
        if (rec->numel() != p.value().data().size()) {
            throw io_error("checkpoint parameter '" + p.name() + "' has " +
                           std::to_string(rec->numel()) + " values, model expects " +
                           std::to_string(p.value().data().size()));
        }
        p.value().mutable_data() = rec->data;
        ++used;
    }
    if (used != ck.records.size()) {
        throw io_error("checkpoint holds records that match no model parameter");
    }
    return model;
}

void load_adam_state(const Checkpoint& ck, const std::vector<Parameter>& params,
                     AdamState& state) {
    if (!ck.has_adam) throw io_error("checkpoint has no optimizer block");
    const CheckpointRecord* t = ck.find_adam("t");
    if (!t || t->data.size() != 1) throw io_error("optimizer block missing step record 't'");
    state.t = static_cast<int64_t>(t->data[0]);
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
        const CheckpointRecord* m = ck.find_adam(params[i].name() + ".m");
        const CheckpointRecord* v = ck.find_adam(params[i].name() + ".v");
        if (!m || !v) {
            throw io_error("optimizer block missing moments for '" + params[i].name() + "'");
        }
        if (m->data.size() != params[i].value().data().size() ||
            v->data.size() != params[i].value().data().size()) {
            throw io_error("optimizer moment size mismatch for '" + params[i].name() + "'");
        }
        state.m[i] = m->data;
        state.v[i] = v->data;
    }
}

}  // namespace hsrnet
