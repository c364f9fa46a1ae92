#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bagau/dataset.hpp"

namespace bagau {

struct PhantomConfig {
    int n_cases = 30;
    std::array<int, 3> shape{8, 128, 128};  ///< (D,H,W)
    std::array<double, 3> spacing{2.0, 1.0, 1.0};
    std::array<int, 2> lesion_count_range{2, 6};
    /// In-plane radius in voxels; the axial radius is scaled by spacing.
    std::array<double, 2> lesion_radius_range{3.0, 6.0};
    double lesion_contrast = 0.6;
    double noise_sigma = 0.2;
    std::uint64_t seed = 0;

    /// Throws ConfigError on an unusable configuration.
    void validate() const;
};

struct PhantomLesion {
    std::array<int, 3> center{};      ///< (z,y,x) voxel
    std::array<double, 3> radii{};    ///< (z,y,x) semi-axes in voxels
};

struct PhantomCase {
    CaseRecord record;
    std::vector<PhantomLesion> lesions;
    int requested_lesions = 0;
};

/// Voxels with ((z-cz)/rz)^2 + ((y-cy)/ry)^2 + ((x-cx)/rx)^2 <= 1.
[[nodiscard]] bool inside_lesion(const PhantomLesion& l, int z, int y, int x);

[[nodiscard]] std::string phantom_case_id(int index);

/// Deterministic in (config.seed, index).
[[nodiscard]] PhantomCase generate_case(const PhantomConfig& config, int index);

/// Writes every case directory (with a per-case phantom.json) and the
/// manifest; returns the manifest.
Manifest generate_dataset(const PhantomConfig& config, const std::filesystem::path& out_dir);

}  // namespace bagau
