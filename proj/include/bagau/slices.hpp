#pragma once

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bagau/dataset.hpp"
#include "bagau/tensor.hpp"

namespace bagau {

/// Co-registered 2-D slices at the model canvas, with their origin.
struct SliceBatch {
    nn::Tensor<float> flair;  ///< (N,1,h,w)
    nn::Tensor<float> atlas;
    nn::Tensor<float> mask;   ///< {0,1}; all zero when the case had no mask
    std::vector<std::string> case_ids;
    std::vector<int> slice_index;  ///< axial index in the source volume

    [[nodiscard]] int size() const { return static_cast<int>(slice_index.size()); }
    /// Samples at the given positions, in that order.
    [[nodiscard]] SliceBatch select(std::span<const int> which) const;
    [[nodiscard]] static SliceBatch concat(std::span<const SliceBatch> parts);
};

struct Canvas {
    int h = 128;
    int w = 128;
};

/// Axial slices, centre-cropped or zero-padded to the canvas. With
/// keep_empty=false slices without FLAIR support are skipped.
[[nodiscard]] SliceBatch extract_slices(const CaseRecord& c, Canvas canvas, bool keep_empty);

/// Inverse of extract_slices: places (N,1,h,w) maps back at their axial
/// indices in a zero volume of `shape`. Throws on duplicate or out-of-range
/// indices.
[[nodiscard]] Volume3D restack_slices(const nn::Tensor<float>& maps, std::span<const int> indices,
                                      std::array<int, 3> shape,
                                      VolumeKind kind = VolumeKind::probability,
                                      std::array<double, 3> spacing = {1, 1, 1});

struct AugmentConfig {
    double rotation_deg = 0.0;  ///< angle drawn from [-r, r]
    double shear = 0.0;         ///< shear factor drawn from [-s, s]
    double scale = 0.0;         ///< scale drawn from [1-s, 1+s]
    double mirror_prob = 0.0;   ///< probability of a horizontal flip
};

/// One 2x2 linear map about the slice centre, output = A * (input - c) + c.
struct Affine2 {
    double a00 = 1, a01 = 0, a10 = 0, a11 = 1;  // rows act on (x, y)
};

[[nodiscard]] Affine2 compose_affine(double rotation_deg, double shear, double scale, bool mirror);

/// Resamples one (h,w) plane through `a`: bilinear for images, nearest for
/// masks, zero outside the source.
void warp_plane(const float* src, float* dst, int h, int w, const Affine2& a, bool nearest);

/// Draws one transform per sample and applies it to FLAIR, atlas and mask.
[[nodiscard]] SliceBatch augment(const SliceBatch& batch, std::mt19937_64& rng,
                                 const AugmentConfig& cfg);

}  // namespace bagau
