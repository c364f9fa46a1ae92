#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bagau/volume.hpp"

namespace bagau {

/// Co-registered FLAIR, atlas and (optionally) mask of one subject.
class CaseRecord {
public:
    /// Throws DataError when shapes differ or a volume has the wrong kind.
    CaseRecord(std::string case_id, Volume3D flair, Volume3D atlas,
               std::optional<Volume3D> mask = std::nullopt);

    [[nodiscard]] const std::string& case_id() const { return case_id_; }
    [[nodiscard]] const Volume3D& flair() const { return flair_; }
    [[nodiscard]] const Volume3D& atlas() const { return atlas_; }
    [[nodiscard]] const std::optional<Volume3D>& mask() const { return mask_; }
    [[nodiscard]] const std::array<int, 3>& shape() const { return flair_.shape; }

private:
    std::string case_id_;
    Volume3D flair_;
    Volume3D atlas_;
    std::optional<Volume3D> mask_;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;

    /// Stable checksum of the three lists, used to prove that runs share a split.
    [[nodiscard]] std::string hash() const;
};

/// Shuffles the ids deterministically, gives floor(n * r) cases to val and
/// test and the remainder to train.
[[nodiscard]] DatasetSplit split_dataset(std::vector<std::string> case_ids,
                                         std::array<double, 3> ratio, std::uint64_t seed);

/// Dataset directory contract: `<root>/<case_id>/{flair,atlas,mask}.nii.gz`
/// plus `<root>/manifest.json`.
struct Manifest {
    std::filesystem::path root;
    std::vector<std::string> case_ids;
    std::uint64_t split_seed = 0;
    std::array<double, 3> split_ratio{0.8, 0.1, 0.1};
    /// Free-form provenance (e.g. the phantom configuration).
    std::string generator_json = "null";
};

inline constexpr const char* kManifestName = "manifest.json";

/// Accepts either the manifest file or the directory holding it.
[[nodiscard]] Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m);

[[nodiscard]] std::filesystem::path case_dir(const std::filesystem::path& root,
                                             const std::string& case_id);

/// Loads one case directory. The mask is read when present, required when
/// `require_mask` is set.
[[nodiscard]] CaseRecord load_case(const std::filesystem::path& dir, const std::string& case_id,
                                   bool require_mask);
void save_case(const CaseRecord& c, const std::filesystem::path& dir);

}  // namespace bagau
