#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hsrnet/adam.hpp"
#include "hsrnet/checkpoint.hpp"
#include "hsrnet/tensor.hpp"

namespace hsrnet {

// How the channel-focus and spatial-focus stages combine inside one SFM.
enum class SfmOrder {
    channel_then_spatial,
    spatial_then_channel,
    parallel_average,
    parallel_conv,
};

std::string to_string(SfmOrder order);
SfmOrder sfm_order_from_string(const std::string& s);

struct ModelConfig {
    // Channels of the five backbone stages. Full-size topology is
    // 64,128,256,512,512; the defaults are desk-scale.
    std::array<int, 5> stage_widths = {8, 16, 32, 32, 32};
    std::array<int, 5> convs_per_stage = {2, 2, 3, 3, 3};
    int ratio_r = 64;  // channel-focus bottleneck reduction
    SfmOrder sfm_order = SfmOrder::channel_then_spatial;
    bool use_srm = true;  // off: single 1x1 head on the last tap (baseline)
    bool use_cf = true;   // channel focus
    bool use_sf = true;   // spatial focus
    bool use_sc = true;   // scale-consistency supervision (needs use_srm)
    // Off (default): SFM outputs are side taps only and the backbone trunk is
    // unmodified; on: each stage's SFM output also feeds the next stage.
    bool sfm_inline = false;
    uint64_t seed = 0;

    void validate() const;
    // Stable architecture identity (excludes the init seed).
    std::string fingerprint() const;
    int focus_hidden(int channels) const;
};

struct ForwardOutput {
    Tensor d0;                 // (n,1,H,W) density prediction
    std::vector<Tensor> side;  // D_1..D_5 when use_srm, else empty
    std::vector<Tensor> taps;  // post-SFM features F̂_1..F̂_4
};

// Focus stages as free functions so tests can drive them with explicit
// weights. channel_focus: sigmoid(fc2(relu(fc1(gap(f))))) gating per channel.
// spatial_focus: sigmoid(conv7(channel_mean(f))) gating per position
// (7x7 kernel, padding 3).
Tensor channel_focus(const Tensor& f, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                     const Tensor& b2);
Tensor spatial_focus(const Tensor& f, const Tensor& w7, const Tensor& b7);

class HsrNet {
  public:
    explicit HsrNet(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }

    const Tensor& param(const std::string& name) const;
    Tensor* find_param(const std::string& name);

    // Raw (pre-softplus) loss-weight scalars, in index order; empty unless
    // both use_srm and use_sc are set.
    std::vector<Tensor> lambda_raw() const;

    ForwardOutput forward(const Tensor& x) const;

  private:
    Tensor sfm(const Tensor& f, int i) const;

    ModelConfig cfg_;
    std::vector<Parameter> params_;
};

// Checkpoint glue. The snapshot embeds the architecture in a "config.model"
// record so a checkpoint alone reconstructs the network; the optional Adam
// block stores the step count as record "t" plus "<param>.m"/"<param>.v"
// moment buffers.
Checkpoint model_snapshot(const HsrNet& model, const AdamState* adam = nullptr);
HsrNet model_from_checkpoint(const Checkpoint& ck);
void load_adam_state(const Checkpoint& ck, const std::vector<Parameter>& params, AdamState& state);

}  // namespace hsrnet
