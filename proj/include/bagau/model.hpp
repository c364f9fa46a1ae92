#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bagau/graph.hpp"
#include "bagau/params.hpp"

namespace bagau {

using nn::Graph;
using nn::Shape4;
using nn::Tensor;
using nn::Var;

enum class Variant {
    bagau,
    bagau_no_mam,
    bagau_no_afm,
    /// Both paths, plain concatenation skips and a 1x1 head.
    bagau_plain,
    unet_flair,
    /// Single path with the atlas stacked as a second input channel.
    unet_flair_atlas_channel,
};

[[nodiscard]] std::string_view to_string(Variant v);
/// Throws ConfigError on unknown names.
[[nodiscard]] Variant parse_variant(std::string_view name);
[[nodiscard]] const std::array<Variant, 6>& all_variants();

[[nodiscard]] bool has_atlas_path(Variant v);
[[nodiscard]] bool has_mam(Variant v);
[[nodiscard]] bool has_afm(Variant v);

struct ModelSpec {
    /// Encoder widths for the four resolution levels, then the bottleneck.
    std::array<int, 5> channels{64, 96, 128, 256, 512};
    int seg_kernel = 3;
    int atlas_kernel = 5;
    Variant variant = Variant::bagau;
    int canvas_h = 128;
    int canvas_w = 128;
    std::uint64_t init_seed = 0;

    /// Throws ConfigError when the spec cannot be instantiated.
    void validate() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct AttentionGateSpec {
    int f_x = 0;
    int f_g = 0;
    int f_int = 0;
};

/// Graph handles of one attention gate's parameters:
/// q = w_att * relu(w_x * x + w_g * g + b_g) + b_att, alpha = sigmoid(q).
/// All projections are 1x1 convolutions.
struct GateVars {
    Var w_x;
    Var w_g;
    Var b_g;
    Var w_att;
    Var b_att;
};

struct GateOutput {
    Var alpha;     ///< (N,1,h,w)
    Var attended;  ///< alpha * x, (N,Fx,h,w)
};

template <typename T>
GateOutput attention_gate(Graph<T>& g, Var x, Var gating, const GateVars& p);

struct MamVars {
    GateVars seg;
    GateVars atlas;
    /// 1x1 projection of atlas features to the skip width; invalid when the
    /// widths already agree.
    Var atlas_proj;
};

struct MamOutput {
    Var out;
    Var alpha_seg;
    Var alpha_atlas;
};

/// Multi-input attention: both the segmentation skip feature and the atlas
/// feature are gated by the same decoder signal and the attended maps summed.
template <typename T>
MamOutput mam(Graph<T>& g, Var x_seg, Var x_atlas, Var gating, const MamVars& p);

/// Channel MLP (C -> C/4 -> C) and the 1x1 head over concat(fused, f_seg).
struct AfmVars {
    Var fc1_w;
    Var fc1_b;
    Var fc2_w;
    Var fc2_b;
    Var head_w;
    Var head_b;
};

struct AfmOutput {
    Var channel_weights;  ///< (N,C,1,1), in (0,1)
    Var fused;
    Var logits;  ///< (N,1,h,w)
};

template <typename T>
AfmOutput afm(Graph<T>& g, Var f_seg, Var f_atlas, const AfmVars& p);

/// Registers an attention gate's tensors under `prefix` and returns their indices
/// in registration order: w_x, w_g, b_g, w_att, b_att.
template <typename T>
std::array<int, 5> add_gate_params(ParameterSet<T>& ps, const std::string& prefix,
                                   const AttentionGateSpec& spec);

template <typename T>
struct ForwardOptions {
    bool training = false;
    /// Batch-norm statistics group (see BatchNormOptions::group).
    int bn_group = 0;
    /// Parameter gradient sinks, parallel to ParameterSet::params(); null
    /// builds the graph without parameter gradients.
    std::vector<Tensor<T>>* grads = nullptr;
    /// Running statistics to update in training mode; usually the model's own.
    ParameterSet<T>* stats_sink = nullptr;
};

struct ForwardOutput {
    Var logits;
    Var prob;
    /// Every attention map produced (MAM gates, seg then atlas per level).
    std::vector<Var> alphas;
    Var channel_weights;
};

/// The dual-path network. Constructing it is the build step: parameters are
/// registered in a fixed order and initialized from spec.init_seed.
template <typename T>
class Model {
public:
    explicit Model(const ModelSpec& spec);

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] ParameterSet<T>& params() { return params_; }
    [[nodiscard]] const ParameterSet<T>& params() const { return params_; }

    /// Records the forward pass. flair/atlas are (N,1,h,w) at the spec canvas.
    ForwardOutput forward(Graph<T>& g, Var flair, Var atlas, const ForwardOptions<T>& opt) const;

    /// Eval-mode probabilities without gradient bookkeeping.
    [[nodiscard]] Tensor<T> predict(const Tensor<T>& flair, const Tensor<T>& atlas) const;

    /// Replaces all tensors; names and shapes must match exactly.
    void load_params(const ParameterSet<T>& other);

private:
    struct ConvP {
        int w = -1;
        int b = -1;
    };
    struct BnP {
        int gamma = -1;
        int beta = -1;
        int mean = -1;
        int var = -1;
    };
    struct UnitP {
        ConvP conv;
        BnP bn;
    };
    struct BlockP {
        UnitP first;
        UnitP second;
    };
    struct GateP {
        std::array<int, 5> idx{};
    };
    struct MamP {
        GateP seg;
        GateP atlas;
        int proj = -1;
    };
    struct AfmP {
        ConvP fc1;
        ConvP fc2;
        ConvP head;
    };

    class Builder;
    class Runner;

    ModelSpec spec_;
    ParameterSet<T> params_;

    std::array<BlockP, 5> seg_enc_{};
    std::array<UnitP, 4> seg_up_{};  // [l]: level l+1 -> l
    std::array<BlockP, 4> seg_dec_{};
    std::array<BlockP, 5> atlas_enc_{};
    std::array<ConvP, 4> atlas_up_{};  // 1x1 projection after upsampling
    std::array<BlockP, 4> atlas_dec_{};
    std::array<MamP, 4> mam_{};
    AfmP afm_{};
    ConvP head_{};
};

}  // namespace bagau
