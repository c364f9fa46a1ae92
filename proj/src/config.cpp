#include "bagau/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bagau/error.hpp"

namespace bagau {

using nlohmann::json;

namespace {

void require_object(const json& j, const char* where) {
    if (!j.is_object()) {
        throw ConfigError(std::string(where) + ": expected a JSON object");
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
    require_object(j, where);
    for (const auto& [k, v] : j.items()) {
        if (!known.contains(k)) {
            throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
        }
    }
}

template <typename F>
void read(const json& j, const char* key, F& field, const char* where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        field = j.at(key).get<F>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

}  // namespace

void to_json(json& j, const ModelSpec& s) {
    j = json{{"channels", s.channels},
             {"seg_kernel", s.seg_kernel},
             {"atlas_kernel", s.atlas_kernel},
             {"variant", std::string(to_string(s.variant))},
             {"canvas_h", s.canvas_h},
             {"canvas_w", s.canvas_w},
             {"init_seed", s.init_seed}};
}

void from_json(const json& j, ModelSpec& s) {
    reject_unknown(j,
                   {"channels", "seg_kernel", "atlas_kernel", "variant", "canvas_h", "canvas_w",
                    "init_seed"},
                   "model");
    read(j, "channels", s.channels, "model");
    read(j, "seg_kernel", s.seg_kernel, "model");
    read(j, "atlas_kernel", s.atlas_kernel, "model");
    std::string variant(to_string(s.variant));
    read(j, "variant", variant, "model");
    s.variant = parse_variant(variant);
    read(j, "canvas_h", s.canvas_h, "model");
    read(j, "canvas_w", s.canvas_w, "model");
    read(j, "init_seed", s.init_seed, "model");
}

void to_json(json& j, const AugmentConfig& a) {
    j = json{{"rotation_deg", a.rotation_deg},
             {"shear", a.shear},
             {"scale", a.scale},
             {"mirror_prob", a.mirror_prob}};
}

void from_json(const json& j, AugmentConfig& a) {
    reject_unknown(j, {"rotation_deg", "shear", "scale", "mirror_prob"}, "train.augment");
    read(j, "rotation_deg", a.rotation_deg, "train.augment");
    read(j, "shear", a.shear, "train.augment");
    read(j, "scale", a.scale, "train.augment");
    read(j, "mirror_prob", a.mirror_prob, "train.augment");
}

void to_json(json& j, const TrainConfig& t) {
    j = json{{"alpha", t.alpha},
             {"lr", t.lr},
             {"batch_size", t.batch_size},
             {"epochs", t.epochs},
             {"accumulation_steps", t.accumulation_steps},
             {"seed", t.seed},
             {"smooth_eps", t.smooth_eps},
             {"bn_group", t.bn_group},
             {"precision", std::string(to_string(t.precision))},
             {"augment", t.augment},
             {"threshold", t.threshold},
             {"overfit", t.overfit},
             {"overfit_slices", t.overfit_slices}};
}

void from_json(const json& j, TrainConfig& t) {
    reject_unknown(j,
                   {"alpha", "lr", "batch_size", "epochs", "accumulation_steps", "seed",
                    "smooth_eps", "bn_group", "precision", "augment", "threshold", "overfit",
                    "overfit_slices"},
                   "train");
    read(j, "alpha", t.alpha, "train");
    read(j, "lr", t.lr, "train");
    read(j, "batch_size", t.batch_size, "train");
    read(j, "epochs", t.epochs, "train");
    read(j, "accumulation_steps", t.accumulation_steps, "train");
    read(j, "seed", t.seed, "train");
    read(j, "smooth_eps", t.smooth_eps, "train");
    read(j, "bn_group", t.bn_group, "train");
    std::string precision(to_string(t.precision));
    read(j, "precision", precision, "train");
    t.precision = parse_precision(precision);
    if (j.contains("augment")) {
        from_json(j.at("augment"), t.augment);
    }
    read(j, "threshold", t.threshold, "train");
    read(j, "overfit", t.overfit, "train");
    read(j, "overfit_slices", t.overfit_slices, "train");
}

void to_json(json& j, const PhantomConfig& p) {
    j = json{{"n_cases", p.n_cases},
             {"shape", p.shape},
             {"spacing", p.spacing},
             {"lesion_count_range", p.lesion_count_range},
             {"lesion_radius_range", p.lesion_radius_range},
             {"lesion_contrast", p.lesion_contrast},
             {"noise_sigma", p.noise_sigma},
             {"seed", p.seed}};
}

void from_json(const json& j, PhantomConfig& p) {
    reject_unknown(j,
                   {"n_cases", "shape", "spacing", "lesion_count_range", "lesion_radius_range",
                    "lesion_contrast", "noise_sigma", "seed"},
                   "phantom");
    read(j, "n_cases", p.n_cases, "phantom");
    read(j, "shape", p.shape, "phantom");
    read(j, "spacing", p.spacing, "phantom");
    read(j, "lesion_count_range", p.lesion_count_range, "phantom");
    read(j, "lesion_radius_range", p.lesion_radius_range, "phantom");
    read(j, "lesion_contrast", p.lesion_contrast, "phantom");
    read(j, "noise_sigma", p.noise_sigma, "phantom");
    read(j, "seed", p.seed, "phantom");
}

void to_json(json& j, const DatasetSplit& s) {
    j = json{{"train", s.train}, {"val", s.val}, {"test", s.test}, {"seed", s.seed}};
}

void from_json(const json& j, DatasetSplit& s) {
    reject_unknown(j, {"train", "val", "test", "seed", "hash"}, "split");
    read(j, "train", s.train, "split");
    read(j, "val", s.val, "split");
    read(j, "test", s.test, "split");
    read(j, "seed", s.seed, "split");
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    phantom.validate();
    if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
        throw ConfigError("connectivity must be 6, 18 or 26");
    }
    double total = 0.0;
    for (double r : data.split_ratio) {
        if (!(r >= 0.0)) {
            throw ConfigError("split ratios must be non-negative");
        }
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw ConfigError("split ratios must sum to 1");
    }
}

void to_json(json& j, const RunConfig& r) {
    json data{{"dataset", r.data.dataset}, {"split_ratio", r.data.split_ratio}};
    data["split_seed"] = r.data.split_seed ? json(*r.data.split_seed) : json(nullptr);
    j = json{{"model", r.model},
             {"train", r.train},
             {"data", data},
             {"phantom", r.phantom},
             {"eval", {{"connectivity", r.connectivity}}}};
}

void from_json(const json& j, RunConfig& r) {
    reject_unknown(j, {"model", "train", "data", "phantom", "eval"}, "config");
    if (j.contains("model")) {
        from_json(j.at("model"), r.model);
    }
    if (j.contains("train")) {
        from_json(j.at("train"), r.train);
    }
    if (j.contains("phantom")) {
        from_json(j.at("phantom"), r.phantom);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, {"dataset", "split_ratio", "split_seed"}, "data");
        read(d, "dataset", r.data.dataset, "data");
        read(d, "split_ratio", r.data.split_ratio, "data");
        if (d.contains("split_seed") && !d.at("split_seed").is_null()) {
            std::uint64_t seed = 0;
            read(d, "split_seed", seed, "data");
            r.data.split_seed = seed;
        }
    }
    if (j.contains("eval")) {
        reject_unknown(j.at("eval"), {"connectivity"}, "eval");
        read(j.at("eval"), "connectivity", r.connectivity, "eval");
    }
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &j;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) {
        keys.push_back(key);
    }
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!node->is_object() || !node->contains(keys[i])) {
            throw ConfigError("override: unknown key '" + path + "'");
        }
        node = &(*node)[keys[i]];
    }
    *node = std::move(value);
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides) {
    json j = RunConfig{};
    if (file) {
        std::ifstream in(*file);
        if (!in) {
            throw ConfigError("cannot read config file " + file->string());
        }
        json user;
        try {
            user = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file " + file->string() + ": " + e.what());
        }
        RunConfig parsed;
        from_json(user, parsed);  // strict key check against the user's own text
        j.merge_patch(user);
    }
    for (const auto& o : overrides) {
        apply_override(j, o);
    }
    RunConfig r;
    from_json(j, r);
    r.validate();
    return r;
}

}  // namespace bagau
