#include "bagau/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "bagau/error.hpp"
#include "json.hpp"

namespace bagau {

namespace fs = std::filesystem;
using nlohmann::json;

CaseRecord::CaseRecord(std::string case_id, Volume3D flair, Volume3D atlas,
                       std::optional<Volume3D> mask)
    : case_id_(std::move(case_id)),
      flair_(std::move(flair)),
      atlas_(std::move(atlas)),
      mask_(std::move(mask)) {
    if (flair_.kind != VolumeKind::flair || atlas_.kind != VolumeKind::atlas ||
        (mask_ && mask_->kind != VolumeKind::mask)) {
        throw DataError("case '" + case_id_ + "': volume kinds do not match their roles");
    }
    if (atlas_.shape != flair_.shape || (mask_ && mask_->shape != flair_.shape)) {
        throw DataError("case '" + case_id_ + "': FLAIR, atlas and mask shapes differ");
    }
}

std::string DatasetSplit::hash() const {
    const std::string s = json{{"train", train}, {"val", val}, {"test", test}}.dump();
    const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(s.data()),
                            static_cast<uInt>(s.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

DatasetSplit split_dataset(std::vector<std::string> case_ids, std::array<double, 3> ratio,
                           std::uint64_t seed) {
    if (case_ids.size() < 3) {
        throw ConfigError("a split needs at least 3 cases, got " + std::to_string(case_ids.size()));
    }
    for (double r : ratio) {
        if (!(r > 0.0)) {
            throw ConfigError("split ratios must be positive");
        }
    }
    if (std::abs(ratio[0] + ratio[1] + ratio[2] - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    std::sort(case_ids.begin(), case_ids.end());
    if (std::adjacent_find(case_ids.begin(), case_ids.end()) != case_ids.end()) {
        throw DataError("duplicate case ids in split input");
    }
    // Fisher-Yates with a plain modulo draw keeps the order independent of the
    // standard library's distribution implementation.
    std::mt19937_64 rng(seed);
    for (std::size_t i = case_ids.size() - 1; i > 0; --i) {
        std::swap(case_ids[i], case_ids[rng() % (i + 1)]);
    }
    const double n = static_cast<double>(case_ids.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratio[1] + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratio[2] + 1e-9));
    const std::size_t n_train = case_ids.size() - n_val - n_test;

    DatasetSplit s;
    s.seed = seed;
    s.train.assign(case_ids.begin(), case_ids.begin() + n_train);
    s.val.assign(case_ids.begin() + n_train, case_ids.begin() + n_train + n_val);
    s.test.assign(case_ids.begin() + n_train + n_val, case_ids.end());
    return s;
}

Manifest read_manifest(const fs::path& path) {
    const fs::path file = fs::is_directory(path) ? path / kManifestName : path;
    std::ifstream in(file);
    if (!in) {
        throw DataError("cannot read manifest '" + file.string() + "'");
    }
    json j;
    try {
        in >> j;
        Manifest m;
        m.root = file.parent_path();
        m.case_ids = j.at("cases").get<std::vector<std::string>>();
        m.split_seed = j.value("split_seed", std::uint64_t{0});
        if (j.contains("split_ratio")) {
            m.split_ratio = j.at("split_ratio").get<std::array<double, 3>>();
        }
        m.generator_json = j.value("generator", json(nullptr)).dump();
        return m;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest '" + file.string() + "': " + e.what());
    }
}

void write_manifest(const Manifest& m) {
    json j;
    j["cases"] = m.case_ids;
    j["split_seed"] = m.split_seed;
    j["split_ratio"] = m.split_ratio;
    j["generator"] = json::parse(m.generator_json);
    j["layout"] = "<case_id>/{flair,atlas,mask}.nii.gz; axis order (D,H,W), axial first";
    fs::create_directories(m.root);
    const fs::path file = m.root / kManifestName;
    std::ofstream out(file);
    out << j.dump(2) << '\n';
    if (!out) {
        throw DataError("cannot write manifest '" + file.string() + "'");
    }
}

fs::path case_dir(const fs::path& root, const std::string& case_id) { return root / case_id; }

CaseRecord load_case(const fs::path& dir, const std::string& case_id, bool require_mask) {
    if (!fs::is_directory(dir)) {
        throw DataError("case directory '" + dir.string() + "' does not exist");
    }
    Volume3D flair = load_volume(dir / "flair.nii.gz", VolumeKind::flair);
    Volume3D atlas = load_volume(dir / "atlas.nii.gz", VolumeKind::atlas);
    std::optional<Volume3D> mask;
    if (fs::exists(dir / "mask.nii.gz")) {
        mask = load_volume(dir / "mask.nii.gz", VolumeKind::mask);
    } else if (require_mask) {
        throw DataError("case '" + case_id + "' has no mask.nii.gz");
    }
    return CaseRecord(case_id, std::move(flair), std::move(atlas), std::move(mask));
}

void save_case(const CaseRecord& c, const fs::path& dir) {
    fs::create_directories(dir);
    save_volume(c.flair(), dir / "flair.nii.gz");
    save_volume(c.atlas(), dir / "atlas.nii.gz");
    if (c.mask()) {
        save_volume(*c.mask(), dir / "mask.nii.gz");
    }
}

}  // namespace bagau
