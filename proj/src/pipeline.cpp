#include "bagau/pipeline.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

#include "bagau/error.hpp"

namespace bagau {

using nlohmann::json;

DatasetSplit split_for(const RunConfig& cfg, const Manifest& m) {
    const std::uint64_t seed = cfg.data.split_seed.value_or(m.split_seed);
    return split_dataset(m.case_ids, cfg.data.split_ratio, seed);
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream out(dir / "config.json");
    out << json(cfg).dump(2) << '\n';
    if (!out) {
        throw DataError("cannot write " + (dir / "config.json").string());
    }
}

TrainResult train_from_config(const RunConfig& cfg, const fs::path& out_dir,
                              const TrainOptions& opt) {
    if (cfg.data.dataset.empty()) {
        throw ConfigError("data.dataset is not set");
    }
    const Manifest m = read_manifest(cfg.data.dataset);
    const DatasetSplit split = split_for(cfg, m);
    echo_config(cfg, out_dir);
    {
        json j = split;
        j["hash"] = split.hash();
        std::ofstream out(out_dir / "split.json");
        out << j.dump(2) << '\n';
    }
    const TrainData data =
        prepare_data(m, split, Canvas{cfg.model.canvas_h, cfg.model.canvas_w});
    return train(cfg.model, cfg.train, data, out_dir, opt);
}

LoadedModel::LoadedModel(const Checkpoint& c, const ModelSpec* expected)
    : precision_(parse_precision(c.meta.value("precision", std::string("float32")))) {
    if (precision_ == Precision::float64) {
        f64_.emplace(model_from_checkpoint<double>(c, expected));
    } else {
        f32_.emplace(model_from_checkpoint<float>(c, expected));
    }
}

const ModelSpec& LoadedModel::spec() const { return f32_ ? f32_->spec() : f64_->spec(); }

PredictionVolume LoadedModel::predict(const CaseRecord& c, const PredictOptions& opt) const {
    return f32_ ? predict_case(*f32_, c, opt) : predict_case(*f64_, c, opt);
}

void write_png_rgb(const fs::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
        throw std::invalid_argument("png: pixel buffer does not match the image size");
    }
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!f) {
        throw DataError("cannot write " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, rgb.data() + static_cast<std::size_t>(y) * width * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

// Foreground pixels with a 4-neighbour outside the mask or the image.
bool on_outline(const Volume3D& m, int z, int y, int x) {
    if (m.at(z, y, x) < 0.5f) return false;
    const int h = m.shape[1];
    const int w = m.shape[2];
    if (y == 0 || x == 0 || y == h - 1 || x == w - 1) return true;
    return m.at(z, y - 1, x) < 0.5f || m.at(z, y + 1, x) < 0.5f || m.at(z, y, x - 1) < 0.5f ||
           m.at(z, y, x + 1) < 0.5f;
}

}  // namespace

int write_overlays(const CaseRecord& c, const Volume3D& pred_mask, const fs::path& dir) {
    if (pred_mask.shape != c.shape()) {
        throw DataError("overlay: prediction shape differs from the case");
    }
    fs::create_directories(dir);
    const Volume3D& f = c.flair();
    const float top = std::max(1e-6f, *std::max_element(f.data.begin(), f.data.end()));
    const auto [d, h, w] = c.shape();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int z = 0; z < d; ++z) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float v = std::clamp(f.at(z, y, x) / top, 0.0f, 1.0f);
                auto* px = &rgb[(static_cast<std::size_t>(y) * w + x) * 3];
                px[0] = px[1] = px[2] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
                const bool ref = c.mask() && on_outline(*c.mask(), z, y, x);
                const bool pred = on_outline(pred_mask, z, y, x);
                if (pred || ref) {
                    px[0] = pred ? 255 : 0;
                    px[1] = ref ? 255 : 0;
                    px[2] = 0;
                }
            }
        }
        char name[32];
        std::snprintf(name, sizeof name, "slice_%03d.png", z);
        write_png_rgb(dir / name, w, h, rgb);
    }
    return d;
}

PredictionVolume write_prediction(const LoadedModel& model, const CaseRecord& c,
                                  const fs::path& out_root, const PredictOptions& opt,
                                  bool overlay) {
    PredictionVolume p = model.predict(c, opt);
    const fs::path dir = out_root / c.case_id();
    fs::create_directories(dir);
    save_volume(p.probability, dir / "probability.nii.gz");
    save_volume(p.mask, dir / "mask.nii.gz");
    if (overlay) {
        write_overlays(c, p.mask, dir / "overlay");
    }
    return p;
}

std::vector<std::string> list_mask_cases(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw DataError(root.string() + " is not a directory");
    }
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / "mask.nii.gz")) {
            ids.push_back(e.path().filename().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::string variant_label(Variant v) {
    switch (v) {
        case Variant::bagau: return "dual path, MAM + AFM";
        case Variant::bagau_no_mam: return "dual path, AFM only";
        case Variant::bagau_no_afm: return "dual path, MAM only";
        case Variant::bagau_plain: return "dual path, concatenation";
        case Variant::unet_flair: return "U-Net, FLAIR";
        case Variant::unet_flair_atlas_channel: return "U-Net, FLAIR + atlas channel";
    }
    return std::string(to_string(v));
}

namespace {

// Display groups: single-path baselines, ablations, full model.
int display_group(Variant v) {
    switch (v) {
        case Variant::unet_flair:
        case Variant::unet_flair_atlas_channel: return 0;
        case Variant::bagau: return 2;
        default: return 1;
    }
}

int display_rank(Variant v) {
    switch (v) {
        case Variant::unet_flair: return 0;
        case Variant::unet_flair_atlas_channel: return 1;
        case Variant::bagau_plain: return 2;
        case Variant::bagau_no_mam: return 3;
        case Variant::bagau_no_afm: return 4;
        case Variant::bagau: return 5;
    }
    return 6;
}

}  // namespace

std::string AblationReport::to_table() const {
    std::vector<const AblationRow*> order;
    for (const auto& r : rows) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(), [](const AblationRow* a, const AblationRow* b) {
        return display_rank(a->variant) < display_rank(b->variant);
    });
    std::string out;
    char line[200];
    std::snprintf(line, sizeof line, "split %s\n", split_hash.c_str());
    out += line;
    const std::string rule(80, '-');
    std::snprintf(line, sizeof line, "%-34s %10s %10s %12s %8s\n", "Model", "DSC (%)", "AVD (%)",
                  "Recall (%)", "F1 (%)");
    out += rule + "\n" + line + rule + "\n";
    int group = -1;
    for (const auto* r : order) {
        const int g = display_group(r->variant);
        if (group >= 0 && g != group) out += rule + "\n";
        group = g;
        const CaseMetrics& a = r->report.aggregate;
        std::snprintf(line, sizeof line, "%-34s %10.2f %10.2f %12.2f %8.2f\n",
                      variant_label(r->variant).c_str(), a.dsc, a.avd, a.recall, a.f1);
        out += line;
    }
    out += rule + "\n";
    return out;
}

std::string AblationReport::to_json() const {
    json j;
    j["split_hash"] = split_hash;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"variant", std::string(to_string(r.variant))},
                             {"label", variant_label(r.variant)},
                             {"best_val_dsc", r.best_val_dsc},
                             {"report", json::parse(r.report.to_json())}});
    }
    return j.dump(2);
}

AblationReport run_ablation(const RunConfig& cfg, const std::vector<Variant>& variants,
                            const fs::path& out_dir,
                            const std::function<void(Variant, const EpochRecord&)>& on_epoch) {
    if (variants.empty()) {
        throw ConfigError("ablation needs at least one variant");
    }
    if (cfg.data.dataset.empty()) {
        throw ConfigError("data.dataset is not set");
    }
    const Manifest m = read_manifest(cfg.data.dataset);
    const DatasetSplit split = split_for(cfg, m);
    if (split.test.empty()) {
        throw ConfigError("the test split is empty");
    }
    echo_config(cfg, out_dir);

    AblationReport report;
    report.split_hash = split.hash();
    for (const Variant v : variants) {
        RunConfig run = cfg;
        run.model.variant = v;
        const fs::path dir = out_dir / std::string(to_string(v));
        TrainOptions opt;
        if (on_epoch) opt.on_epoch = [&](const EpochRecord& r) { on_epoch(v, r); };
        const TrainResult tr = train_from_config(run, dir, opt);
        {
            std::ifstream in(dir / "split.json");
            if (json::parse(in).at("hash") != report.split_hash) {
                throw DataError("variant " + std::string(to_string(v)) + " used a different split");
            }
        }
        const LoadedModel model(load_checkpoint(dir / kBestCheckpoint), &run.model);
        PredictOptions po;
        po.threshold = cfg.train.threshold;
        std::vector<CaseMetrics> cases;
        for (const auto& id : split.test) {
            const CaseRecord c = load_case(case_dir(m.root, id), id, true);
            const PredictionVolume p = write_prediction(model, c, dir / "predictions", po, false);
            cases.push_back(evaluate_case(id, p.mask, *c.mask(), cfg.connectivity));
        }
        report.rows.push_back(AblationRow{v, tr.best_val_dsc, make_report(cases, cfg.connectivity)});
    }
    return report;
}

}  // namespace bagau
