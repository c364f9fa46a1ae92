#include "bagau/slices.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bagau/error.hpp"

namespace bagau {

using nn::Shape4;
using nn::Tensor;

namespace {

// Offset of the source window inside the canvas (positive: padding) and of
// the canvas inside the source (positive: cropping), per axis.
struct AxisMap {
    int pad = 0;
    int crop = 0;
    int len = 0;  // number of copied pixels
};

AxisMap axis_map(int src, int dst) {
    AxisMap m;
    if (dst >= src) {
        m.pad = (dst - src) / 2;
        m.len = src;
    } else {
        m.crop = (src - dst) / 2;
        m.len = dst;
    }
    return m;
}

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

SliceBatch SliceBatch::select(std::span<const int> which) const {
    const Shape4 s = flair.shape();
    SliceBatch out;
    const Shape4 os{static_cast<int>(which.size()), 1, s.h, s.w};
    out.flair = Tensor<float>(os);
    out.atlas = Tensor<float>(os);
    out.mask = Tensor<float>(os);
    for (std::size_t i = 0; i < which.size(); ++i) {
        const int k = which[i];
        if (k < 0 || k >= size()) {
            throw std::out_of_range("slice batch index out of range");
        }
        std::copy_n(flair.plane(k, 0), s.plane(), out.flair.plane(static_cast<int>(i), 0));
        std::copy_n(atlas.plane(k, 0), s.plane(), out.atlas.plane(static_cast<int>(i), 0));
        std::copy_n(mask.plane(k, 0), s.plane(), out.mask.plane(static_cast<int>(i), 0));
        out.case_ids.push_back(case_ids[k]);
        out.slice_index.push_back(slice_index[k]);
    }
    return out;
}

SliceBatch SliceBatch::concat(std::span<const SliceBatch> parts) {
    SliceBatch out;
    std::vector<Tensor<float>> f, a, m;
    for (const auto& p : parts) {
        if (p.size() == 0) {
            continue;
        }
        f.push_back(p.flair);
        a.push_back(p.atlas);
        m.push_back(p.mask);
        out.case_ids.insert(out.case_ids.end(), p.case_ids.begin(), p.case_ids.end());
        out.slice_index.insert(out.slice_index.end(), p.slice_index.begin(), p.slice_index.end());
    }
    if (f.empty()) {
        return out;
    }
    out.flair = nn::stack_batch<float>(f);
    out.atlas = nn::stack_batch<float>(a);
    out.mask = nn::stack_batch<float>(m);
    return out;
}

SliceBatch extract_slices(const CaseRecord& c, Canvas canvas, bool keep_empty) {
    if (canvas.h < 16 || canvas.w < 16) {
        throw ConfigError("canvas must be at least 16x16");
    }
    const auto [d, h, w] = c.shape();
    const AxisMap my = axis_map(h, canvas.h);
    const AxisMap mx = axis_map(w, canvas.w);

    std::vector<int> keep;
    for (int z = 0; z < d; ++z) {
        bool any = keep_empty;
        for (std::size_t i = 0; !any && i < c.flair().slice_size(); ++i) {
            any = c.flair().data[z * c.flair().slice_size() + i] != 0.0f;
        }
        if (any) {
            keep.push_back(z);
        }
    }

    SliceBatch out;
    const Shape4 s{static_cast<int>(keep.size()), 1, canvas.h, canvas.w};
    out.flair = Tensor<float>(s);
    out.atlas = Tensor<float>(s);
    out.mask = Tensor<float>(s);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const int z = keep[i];
        const int n = static_cast<int>(i);
        for (int y = 0; y < my.len; ++y) {
            for (int x = 0; x < mx.len; ++x) {
                const int sy = y + my.crop;
                const int sx = x + mx.crop;
                const int ty = y + my.pad;
                const int tx = x + mx.pad;
                out.flair.at(n, 0, ty, tx) = c.flair().at(z, sy, sx);
                out.atlas.at(n, 0, ty, tx) = c.atlas().at(z, sy, sx);
                if (c.mask()) {
                    out.mask.at(n, 0, ty, tx) = c.mask()->at(z, sy, sx);
                }
            }
        }
        out.case_ids.push_back(c.case_id());
        out.slice_index.push_back(z);
    }
    return out;
}

Volume3D restack_slices(const Tensor<float>& maps, std::span<const int> indices,
                        std::array<int, 3> shape, VolumeKind kind, std::array<double, 3> spacing) {
    const Shape4 s = maps.shape();
    if (s.c != 1 || s.n != static_cast<int>(indices.size())) {
        throw std::invalid_argument("restack_slices: expected (N,1,h,w) maps with N indices");
    }
    Volume3D v(shape, kind, spacing);
    const AxisMap my = axis_map(shape[1], s.h);
    const AxisMap mx = axis_map(shape[2], s.w);
    std::vector<char> seen(shape[0], 0);
    for (int n = 0; n < s.n; ++n) {
        const int z = indices[n];
        if (z < 0 || z >= shape[0]) {
            throw DataError("restack_slices: slice index " + std::to_string(z) + " out of range");
        }
        if (seen[z]) {
            throw DataError("restack_slices: duplicate slice index " + std::to_string(z));
        }
        seen[z] = 1;
        for (int y = 0; y < my.len; ++y) {
            for (int x = 0; x < mx.len; ++x) {
                v.at(z, y + my.crop, x + mx.crop) = maps.at(n, 0, y + my.pad, x + mx.pad);
            }
        }
    }
    return v;
}

Affine2 compose_affine(double rotation_deg, double shear, double scale, bool mirror) {
    if (rotation_deg == 0.0 && shear == 0.0 && scale == 1.0) {
        return Affine2{mirror ? -1.0 : 1.0, 0.0, 0.0, 1.0};
    }
    const double t = rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(t);
    const double s = std::sin(t);
    const double m = mirror ? -1.0 : 1.0;
    // R * Shear * Scale * Mirror, acting on column vectors (x, y).
    const double b00 = scale * m;
    const double b01 = shear * scale;
    const double b10 = 0.0;
    const double b11 = scale;
    return Affine2{c * b00 - s * b10, c * b01 - s * b11, s * b00 + c * b10, s * b01 + c * b11};
}

void warp_plane(const float* src, float* dst, int h, int w, const Affine2& a, bool nearest) {
    const double det = a.a00 * a.a11 - a.a01 * a.a10;
    if (std::abs(det) < 1e-12) {
        throw std::invalid_argument("warp_plane: singular transform");
    }
    const double i00 = a.a11 / det;
    const double i01 = -a.a01 / det;
    const double i10 = -a.a10 / det;
    const double i11 = a.a00 / det;
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    auto pix = [&](int y, int x) -> double {
        return (y >= 0 && y < h && x >= 0 && x < w) ? src[static_cast<std::size_t>(y) * w + x]
                                                    : 0.0;
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx;
            const double dy = y - cy;
            const double sx = i00 * dx + i01 * dy + cx;
            const double sy = i10 * dx + i11 * dy + cy;
            double v = 0.0;
            if (nearest) {
                v = pix(static_cast<int>(std::floor(sy + 0.5)), static_cast<int>(std::floor(sx + 0.5)));
            } else {
                const double fx = std::floor(sx);
                const double fy = std::floor(sy);
                const int x0 = static_cast<int>(fx);
                const int y0 = static_cast<int>(fy);
                const double tx = sx - fx;
                const double ty = sy - fy;
                v = (1 - ty) * ((1 - tx) * pix(y0, x0) + (tx != 0 ? tx * pix(y0, x0 + 1) : 0.0));
                if (ty != 0) {
                    v += ty * ((1 - tx) * pix(y0 + 1, x0) + (tx != 0 ? tx * pix(y0 + 1, x0 + 1) : 0.0));
                }
            }
            dst[static_cast<std::size_t>(y) * w + x] = static_cast<float>(v);
        }
    }
}

SliceBatch augment(const SliceBatch& batch, std::mt19937_64& rng, const AugmentConfig& cfg) {
    SliceBatch out = batch;
    const Shape4 s = batch.flair.shape();
    for (int n = 0; n < batch.size(); ++n) {
        // Always four draws per sample so the stream does not depend on cfg.
        const bool mirror = uniform01(rng) < cfg.mirror_prob;
        const double rot = (2.0 * uniform01(rng) - 1.0) * cfg.rotation_deg;
        const double shear = (2.0 * uniform01(rng) - 1.0) * cfg.shear;
        const double scale = 1.0 + (2.0 * uniform01(rng) - 1.0) * cfg.scale;
        const Affine2 a = compose_affine(rot, shear, scale, mirror);
        if (a.a00 == 1.0 && a.a01 == 0.0 && a.a10 == 0.0 && a.a11 == 1.0) {
            continue;
        }
        warp_plane(batch.flair.plane(n, 0), out.flair.plane(n, 0), s.h, s.w, a, false);
        warp_plane(batch.atlas.plane(n, 0), out.atlas.plane(n, 0), s.h, s.w, a, false);
        warp_plane(batch.mask.plane(n, 0), out.mask.plane(n, 0), s.h, s.w, a, true);
    }
    return out;
}

}  // namespace bagau
