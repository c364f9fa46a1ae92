#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

namespace bagau {

enum class VolumeKind { flair, atlas, mask, probability };

[[nodiscard]] std::string_view to_string(VolumeKind k);

/// A scalar grid indexed (d, y, x) with x fastest. The first axis is axial.
struct Volume3D {
    std::array<int, 3> shape{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm, same axis order as shape
    VolumeKind kind = VolumeKind::flair;
    std::vector<float> data;

    Volume3D() = default;
    Volume3D(std::array<int, 3> shape, VolumeKind kind, std::array<double, 3> spacing = {1, 1, 1});

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] std::size_t slice_size() const {
        return static_cast<std::size_t>(shape[1]) * shape[2];
    }
    float& at(int d, int y, int x) { return data[index(d, y, x)]; }
    [[nodiscard]] float at(int d, int y, int x) const { return data[index(d, y, x)]; }
    [[nodiscard]] std::size_t index(int d, int y, int x) const {
        return (static_cast<std::size_t>(d) * shape[1] + y) * shape[2] + x;
    }

    /// Throws DataError when shape, data size or value range break the kind's contract.
    void validate() const;
};

/// Reads a NIfTI-1 file (.nii or .nii.gz). Masks are coerced to {0,1}; values
/// more than 1e-6 away from 0 or 1 are rejected, as are atlas/probability
/// values outside [0,1].
[[nodiscard]] Volume3D load_volume(const std::filesystem::path& path, VolumeKind kind);

/// Writes NIfTI-1, gzip-compressed when the name ends in .gz. Masks are stored
/// as uint8, everything else as float32.
void save_volume(const Volume3D& v, const std::filesystem::path& path);

/// Z-score over the nonzero voxels; background stays exactly zero.
[[nodiscard]] Volume3D normalize_zscore(const Volume3D& v);

}  // namespace bagau
