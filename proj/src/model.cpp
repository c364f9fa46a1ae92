#include "bagau/model.hpp"

#include <cmath>
#include <random>

#include "bagau/error.hpp"
#include "bagau/ops.hpp"

namespace bagau {

namespace {

constexpr double kForegroundPrior = 0.01;

constexpr std::array<Variant, 6> kVariants = {
    Variant::bagau,       Variant::bagau_no_mam, Variant::bagau_no_afm,
    Variant::bagau_plain, Variant::unet_flair,   Variant::unet_flair_atlas_channel,
};

int gate_width(int f_x) { return std::max(1, f_x / 2); }
int afm_hidden(int c) { return std::max(1, c / 4); }

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::bagau: return "bagau";
        case Variant::bagau_no_mam: return "bagau_no_mam";
        case Variant::bagau_no_afm: return "bagau_no_afm";
        case Variant::bagau_plain: return "bagau_plain";
        case Variant::unet_flair: return "unet_flair";
        case Variant::unet_flair_atlas_channel: return "unet_flair_atlas_channel";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    for (Variant v : kVariants) {
        if (to_string(v) == name) {
            return v;
        }
    }
    throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

const std::array<Variant, 6>& all_variants() { return kVariants; }

bool has_atlas_path(Variant v) {
    return v == Variant::bagau || v == Variant::bagau_no_mam || v == Variant::bagau_no_afm ||
           v == Variant::bagau_plain;
}
bool has_mam(Variant v) { return v == Variant::bagau || v == Variant::bagau_no_afm; }
bool has_afm(Variant v) { return v == Variant::bagau || v == Variant::bagau_no_mam; }

void ModelSpec::validate() const {
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1) {
            throw ConfigError("channel widths must be positive");
        }
        if (i > 0 && channels[i] <= channels[i - 1]) {
            throw ConfigError("channel widths must be strictly increasing");
        }
    }
    if (seg_kernel < 1 || seg_kernel % 2 == 0 || atlas_kernel < 1 || atlas_kernel % 2 == 0) {
        throw ConfigError("kernel sizes must be odd and positive");
    }
    if (canvas_h < 16 || canvas_w < 16 || canvas_h % 16 != 0 || canvas_w % 16 != 0) {
        throw ConfigError("canvas " + std::to_string(canvas_h) + "x" + std::to_string(canvas_w) +
                          " is not divisible by 16");
    }
}

// ---------------------------------------------------------------------------
// Standalone modules

template <typename T>
GateOutput attention_gate(Graph<T>& g, Var x, Var gating, const GateVars& p) {
    const Shape4 xs = g.shape(x);
    const Shape4 gs = g.shape(gating);
    if (xs.n != gs.n || xs.h != gs.h || xs.w != gs.w) {
        throw std::invalid_argument("attention_gate: x " + xs.str() + " and gating " + gs.str() +
                                    " are not spatially aligned");
    }
    const Var theta = nn::conv2d(g, x, p.w_x, Var{});
    const Var phi = nn::conv2d(g, gating, p.w_g, p.b_g);
    const Var inner = nn::relu(g, nn::add(g, theta, phi));
    const Var q = nn::conv2d(g, inner, p.w_att, p.b_att);
    const Var alpha = nn::sigmoid(g, q);
    return GateOutput{alpha, nn::mul_spatial(g, x, alpha)};
}

template <typename T>
MamOutput mam(Graph<T>& g, Var x_seg, Var x_atlas, Var gating, const MamVars& p) {
    const Shape4 ss = g.shape(x_seg);
    const Shape4 as = g.shape(x_atlas);
    if (ss.n != as.n || ss.h != as.h || ss.w != as.w) {
        throw std::invalid_argument("mam: segmentation " + ss.str() + " and atlas " + as.str() +
                                    " features are not spatially aligned");
    }
    Var atlas = x_atlas;
    if (p.atlas_proj.valid()) {
        atlas = nn::conv2d(g, x_atlas, p.atlas_proj, Var{});
    } else if (as.c != ss.c) {
        throw std::invalid_argument("mam: atlas width differs from skip width and no projection");
    }
    const GateOutput seg = attention_gate(g, x_seg, gating, p.seg);
    const GateOutput atl = attention_gate(g, atlas, gating, p.atlas);
    return MamOutput{nn::add(g, seg.attended, atl.attended), seg.alpha, atl.alpha};
}

template <typename T>
AfmOutput afm(Graph<T>& g, Var f_seg, Var f_atlas, const AfmVars& p) {
    if (g.shape(f_seg) != g.shape(f_atlas)) {
        throw std::invalid_argument("afm: feature shapes differ " + g.shape(f_seg).str() +
                                    " vs " + g.shape(f_atlas).str());
    }
    const Var pooled = nn::global_avg_pool(g, f_atlas);
    const Var hidden = nn::relu(g, nn::conv2d(g, pooled, p.fc1_w, p.fc1_b));
    const Var weights = nn::sigmoid(g, nn::conv2d(g, hidden, p.fc2_w, p.fc2_b));
    const Var fused = nn::mul_channel(g, f_seg, weights);
    const Var cat = nn::concat_channels(g, {fused, f_seg});
    return AfmOutput{weights, fused, nn::conv2d(g, cat, p.head_w, p.head_b)};
}

template <typename T>
std::array<int, 5> add_gate_params(ParameterSet<T>& ps, const std::string& prefix,
                                   const AttentionGateSpec& spec) {
    if (spec.f_x < 1 || spec.f_g < 1 || spec.f_int < 1) {
        throw ConfigError("attention gate widths must be positive");
    }
    return {
        ps.add_param(prefix + ".w_x", prefix, Shape4{spec.f_int, spec.f_x, 1, 1}),
        ps.add_param(prefix + ".w_g", prefix, Shape4{spec.f_int, spec.f_g, 1, 1}),
        ps.add_param(prefix + ".b_g", prefix, Shape4{1, spec.f_int, 1, 1}),
        ps.add_param(prefix + ".w_att", prefix, Shape4{1, spec.f_int, 1, 1}),
        ps.add_param(prefix + ".b_att", prefix, Shape4{1, 1, 1, 1}),
    };
}

// ---------------------------------------------------------------------------
// Construction

template <typename T>
class Model<T>::Builder {
public:
    Builder(Model& m, std::uint64_t seed) : m_(m), rng_(seed) {}

    ConvP conv(const std::string& name, const std::string& block, int cin, int cout, int k,
               bool bias) {
        ConvP p;
        p.w = m_.params_.add_param(name + ".weight", block, Shape4{cout, cin, k, k});
        kaiming(m_.params_.param(p.w), cin * k * k);
        if (bias) {
            p.b = m_.params_.add_param(name + ".bias", block, Shape4{1, cout, 1, 1});
        }
        return p;
    }

    UnitP unit(const std::string& name, const std::string& block, int cin, int cout, int k) {
        UnitP u;
        u.conv = conv(name + ".conv", block, cin, cout, k, false);
        ParameterSet<T>& ps = m_.params_;
        u.bn.gamma = ps.add_param(name + ".bn.gamma", block, Shape4{1, cout, 1, 1});
        ps.param(u.bn.gamma).fill(T(1));
        u.bn.beta = ps.add_param(name + ".bn.beta", block, Shape4{1, cout, 1, 1});
        u.bn.mean = ps.add_buffer(name + ".bn.running_mean", block, Shape4{1, cout, 1, 1}, T(0));
        u.bn.var = ps.add_buffer(name + ".bn.running_var", block, Shape4{1, cout, 1, 1}, T(1));
        return u;
    }

    BlockP block(const std::string& name, int cin, int cout, int k) {
        return BlockP{unit(name + ".unit1", name, cin, cout, k),
                      unit(name + ".unit2", name, cout, cout, k)};
    }

    GateP gate(const std::string& prefix, int f_x, int f_g) {
        GateP gp;
        gp.idx = add_gate_params(m_.params_, prefix,
                                 AttentionGateSpec{f_x, f_g, gate_width(f_x)});
        kaiming(m_.params_.param(gp.idx[0]), f_x);
        kaiming(m_.params_.param(gp.idx[1]), f_g);
        kaiming(m_.params_.param(gp.idx[3]), gate_width(f_x));
        return gp;
    }

    // Lesions are rare, so the output starts at a small foreground probability
    // instead of 0.5; otherwise the first few thousand steps only move the bias.
    void prior_bias(const ConvP& p) {
        m_.params_.param(p.b).fill(T(std::log(kForegroundPrior / (1.0 - kForegroundPrior))));
    }

private:
    void kaiming(Tensor<T>& w, int fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : w.vec()) {
            v = T(dist(rng_));
        }
    }

    Model& m_;
    std::mt19937_64 rng_;
};

template <typename T>
Model<T>::Model(const ModelSpec& spec) : spec_(spec) {
    spec_.validate();
    Builder b(*this, spec_.init_seed);
    const auto& c = spec_.channels;
    const Variant v = spec_.variant;
    const int in_ch = v == Variant::unet_flair_atlas_channel ? 2 : 1;
    const int ks = spec_.seg_kernel;
    const int ka = spec_.atlas_kernel;

    for (int l = 0; l < 5; ++l) {
        seg_enc_[l] = b.block("seg.enc" + std::to_string(l), l == 0 ? in_ch : c[l - 1], c[l], ks);
    }
    if (has_atlas_path(v)) {
        for (int l = 0; l < 5; ++l) {
            atlas_enc_[l] =
                b.block("atlas.enc" + std::to_string(l), l == 0 ? 1 : c[l - 1], c[l], ka);
        }
        for (int l = 3; l >= 0; --l) {
            const std::string lv = std::to_string(l);
            atlas_up_[l] = b.conv("atlas.up" + lv + ".proj", "atlas.up" + lv, c[l + 1], c[l], 1,
                                  false);
            atlas_dec_[l] = b.block("atlas.dec" + lv, c[l], c[l], ka);
        }
    }
    for (int l = 3; l >= 0; --l) {
        const std::string lv = std::to_string(l);
        seg_up_[l] = b.unit("seg.up" + lv, "seg.up" + lv, c[l + 1], c[l], ks);
        int dec_in = 2 * c[l];
        if (has_mam(v)) {
            mam_[l].seg = b.gate("mam" + lv + ".seg_gate", c[l], c[l]);
            mam_[l].atlas = b.gate("mam" + lv + ".atlas_gate", c[l], c[l]);
        } else if (has_atlas_path(v)) {
            dec_in = 3 * c[l];
        }
        seg_dec_[l] = b.block("seg.dec" + lv, dec_in, c[l], ks);
    }
    if (has_afm(v)) {
        afm_.fc1 = b.conv("afm.fc1", "afm", c[0], afm_hidden(c[0]), 1, true);
        afm_.fc2 = b.conv("afm.fc2", "afm", afm_hidden(c[0]), c[0], 1, true);
        afm_.head = b.conv("afm.head", "afm", 2 * c[0], 1, 1, true);
        b.prior_bias(afm_.head);
    } else {
        head_ = b.conv("head", "head", c[0], 1, 1, true);
        b.prior_bias(head_);
    }
}

template <typename T>
void Model<T>::load_params(const ParameterSet<T>& other) {
    auto copy = [](auto& dst, const auto& src, const char* what) {
        if (dst.size() != src.size()) {
            throw DataError(std::string("parameter set has a different number of ") + what);
        }
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i].name != src[i].name || dst[i].value.shape() != src[i].value.shape()) {
                throw DataError("parameter mismatch at '" + dst[i].name + "' vs '" +
                                src[i].name + "' " + src[i].value.shape().str());
            }
            dst[i].value = src[i].value;
        }
    };
    copy(params_.params(), other.params(), "parameters");
    copy(params_.buffers(), other.buffers(), "buffers");
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
class Model<T>::Runner {
public:
    Runner(const Model& m, Graph<T>& g, const ForwardOptions<T>& opt)
        : m_(m), g_(g), opt_(opt), leaves_(m.params_.params().size()) {}

    Var p(int idx) {
        if (idx < 0) {
            return Var{};
        }
        Var& leaf = leaves_[idx];
        if (!leaf.valid()) {
            leaf = g_.parameter(m_.params_.param(idx),
                                opt_.grads != nullptr ? &(*opt_.grads)[idx] : nullptr);
        }
        return leaf;
    }

    Var conv(Var x, const ConvP& cp) { return nn::conv2d(g_, x, p(cp.w), p(cp.b)); }

    Var unit(Var x, const UnitP& u) {
        nn::BatchNormOptions bo;
        bo.training = opt_.training;
        bo.group = opt_.bn_group;
        std::pair<Tensor<T>*, Tensor<T>*> sink{nullptr, nullptr};
        if (opt_.training && opt_.stats_sink != nullptr) {
            sink = {&opt_.stats_sink->buffer(u.bn.mean), &opt_.stats_sink->buffer(u.bn.var)};
        }
        const Var y = nn::batch_norm(g_, conv(x, u.conv), p(u.bn.gamma), p(u.bn.beta),
                                     m_.params_.buffer(u.bn.mean), m_.params_.buffer(u.bn.var),
                                     bo, sink);
        return nn::relu(g_, y);
    }

    Var block(Var x, const BlockP& b) { return unit(unit(x, b.first), b.second); }

    GateVars gate(const GateP& gp) {
        return GateVars{p(gp.idx[0]), p(gp.idx[1]), p(gp.idx[2]), p(gp.idx[3]), p(gp.idx[4])};
    }

private:
    const Model& m_;
    Graph<T>& g_;
    const ForwardOptions<T>& opt_;
    std::vector<Var> leaves_;
};

template <typename T>
ForwardOutput Model<T>::forward(Graph<T>& g, Var flair, Var atlas,
                                const ForwardOptions<T>& opt) const {
    const Shape4 fs = g.shape(flair);
    if (fs.c != 1 || fs.h != spec_.canvas_h || fs.w != spec_.canvas_w) {
        throw std::invalid_argument("forward: input " + fs.str() + " does not match canvas " +
                                    std::to_string(spec_.canvas_h) + "x" +
                                    std::to_string(spec_.canvas_w));
    }
    if (atlas.valid() && g.shape(atlas) != fs) {
        throw std::invalid_argument("forward: atlas shape " + g.shape(atlas).str() +
                                    " differs from flair " + fs.str());
    }
    if (opt.grads != nullptr && opt.grads->size() != params_.params().size()) {
        throw std::invalid_argument("forward: gradient sink count mismatch");
    }
    if (!params_.all_finite()) {
        throw NumericalAbort("forward: non-finite parameter values");
    }
    const Variant v = spec_.variant;
    if (v != Variant::unet_flair && !atlas.valid()) {
        throw std::invalid_argument("forward: variant requires an atlas input");
    }

    Runner r(*this, g, opt);
    ForwardOutput out;

    Var input = flair;
    if (v == Variant::unet_flair_atlas_channel) {
        input = nn::concat_channels(g, {flair, atlas});
    }
    std::array<Var, 5> enc;
    enc[0] = r.block(input, seg_enc_[0]);
    for (int l = 1; l < 5; ++l) {
        enc[l] = r.block(nn::max_pool2(g, enc[l - 1]), seg_enc_[l]);
    }

    std::array<Var, 5> atlas_dec;
    if (has_atlas_path(v)) {
        std::array<Var, 5> aenc;
        aenc[0] = r.block(atlas, atlas_enc_[0]);
        for (int l = 1; l < 5; ++l) {
            aenc[l] = r.block(nn::max_pool2(g, aenc[l - 1]), atlas_enc_[l]);
        }
        atlas_dec[4] = aenc[4];
        for (int l = 3; l >= 0; --l) {
            const Var up = r.conv(nn::upsample_bilinear2(g, atlas_dec[l + 1]), atlas_up_[l]);
            atlas_dec[l] = r.block(nn::add(g, up, aenc[l]), atlas_dec_[l]);
        }
    }

    Var dec = enc[4];
    for (int l = 3; l >= 0; --l) {
        const Var up = r.unit(nn::upsample_bilinear2(g, dec), seg_up_[l]);
        Var cat;
        if (has_mam(v)) {
            const MamOutput m =
                mam(g, enc[l], atlas_dec[l], up, MamVars{r.gate(mam_[l].seg), r.gate(mam_[l].atlas), Var{}});
            out.alphas.push_back(m.alpha_seg);
            out.alphas.push_back(m.alpha_atlas);
            cat = nn::concat_channels(g, {m.out, up});
        } else if (has_atlas_path(v)) {
            cat = nn::concat_channels(g, {enc[l], atlas_dec[l], up});
        } else {
            cat = nn::concat_channels(g, {enc[l], up});
        }
        dec = r.block(cat, seg_dec_[l]);
    }

    if (has_afm(v)) {
        const AfmOutput a =
            afm(g, dec, atlas_dec[0],
                AfmVars{r.p(afm_.fc1.w), r.p(afm_.fc1.b), r.p(afm_.fc2.w), r.p(afm_.fc2.b),
                        r.p(afm_.head.w), r.p(afm_.head.b)});
        out.logits = a.logits;
        out.channel_weights = a.channel_weights;
    } else {
        out.logits = r.conv(dec, head_);
    }
    out.prob = nn::sigmoid(g, out.logits);
    return out;
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& flair, const Tensor<T>& atlas) const {
    Graph<T> g(false);
    const Var f = g.input(flair);
    const Var a = spec_.variant == Variant::unet_flair ? Var{} : g.input(atlas);
    const ForwardOutput out = forward(g, f, a, ForwardOptions<T>{});
    return g.value(out.prob);
}

template class Model<float>;
template class Model<double>;

#define BAGAU_INSTANTIATE_MODULES(T)                                                        \
    template GateOutput attention_gate<T>(Graph<T>&, Var, Var, const GateVars&);            \
    template MamOutput mam<T>(Graph<T>&, Var, Var, Var, const MamVars&);                    \
    template AfmOutput afm<T>(Graph<T>&, Var, Var, const AfmVars&);                         \
    template std::array<int, 5> add_gate_params<T>(ParameterSet<T>&, const std::string&,    \
                                                   const AttentionGateSpec&);

BAGAU_INSTANTIATE_MODULES(float)
BAGAU_INSTANTIATE_MODULES(double)

}  // namespace bagau
