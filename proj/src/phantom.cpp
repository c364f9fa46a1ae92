#include "bagau/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "bagau/error.hpp"
#include "json.hpp"

namespace bagau {

namespace {

using nlohmann::json;

constexpr int kPlacementRetries = 200;

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Head geometry of one case: an ellipsoidal brain with a white-matter shell
// between two normalized radii.
struct Head {
    std::array<double, 3> center{};
    std::array<double, 3> semi{};
    double shell_in = 0.35;
    double shell_out = 0.75;
    double edge = 0.04;

    [[nodiscard]] double radius(int z, int y, int x) const {
        const double dz = (z - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dx = (x - center[2]) / semi[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
    [[nodiscard]] double atlas(double r) const {
        return logistic((r - shell_in) / edge) * logistic((shell_out - r) / edge);
    }
};

// Low-frequency tissue texture: a few random plane waves.
struct Texture {
    struct Wave {
        double kz, ky, kx, phase, amp;
    };
    std::vector<Wave> waves;

    [[nodiscard]] double at(int z, int y, int x) const {
        double s = 0.0;
        for (const auto& w : waves) {
            s += w.amp * std::cos(w.kz * z + w.ky * y + w.kx * x + w.phase);
        }
        return s;
    }
};

json to_json(const PhantomConfig& c) {
    return json{{"n_cases", c.n_cases},
                {"shape", c.shape},
                {"spacing", c.spacing},
                {"lesion_count_range", c.lesion_count_range},
                {"lesion_radius_range", c.lesion_radius_range},
                {"lesion_contrast", c.lesion_contrast},
                {"noise_sigma", c.noise_sigma},
                {"seed", c.seed}};
}

}  // namespace

void PhantomConfig::validate() const {
    if (n_cases < 1) {
        throw ConfigError("phantom n_cases must be >= 1");
    }
    if (shape[0] < 8 || shape[1] < 32 || shape[2] < 32) {
        throw ConfigError("phantom shape must be at least (8,32,32)");
    }
    if (lesion_count_range[0] < 0 || lesion_count_range[0] > lesion_count_range[1]) {
        throw ConfigError("lesion_count_range must satisfy 0 <= min <= max");
    }
    if (!(lesion_radius_range[0] >= 1.0) || lesion_radius_range[0] > lesion_radius_range[1]) {
        throw ConfigError("lesion_radius_range must satisfy 1 <= min <= max");
    }
    for (double s : spacing) {
        if (!(s > 0.0)) {
            throw ConfigError("phantom spacing must be positive");
        }
    }
    if (!(noise_sigma >= 0.0) || !(lesion_contrast > 0.0)) {
        throw ConfigError("noise_sigma must be >= 0 and lesion_contrast > 0");
    }
}

bool inside_lesion(const PhantomLesion& l, int z, int y, int x) {
    const double dz = (z - l.center[0]) / l.radii[0];
    const double dy = (y - l.center[1]) / l.radii[1];
    const double dx = (x - l.center[2]) / l.radii[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
}

std::string phantom_case_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom_%03d", index);
    return buf;
}

PhantomCase generate_case(const PhantomConfig& cfg, int index) {
    cfg.validate();
    if (index < 0) {
        throw ConfigError("phantom case index must be >= 0");
    }
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const auto [d, h, w] = cfg.shape;
    // The axial extent is a slab through the middle of a taller head.
    Head head;
    head.center = {(d - 1) / 2.0, (h - 1) / 2.0 + (u(rng) - 0.5) * 4.0,
                   (w - 1) / 2.0 + (u(rng) - 0.5) * 4.0};
    head.semi = {1.2 * d, 0.44 * h * (0.95 + 0.1 * u(rng)), 0.40 * w * (0.95 + 0.1 * u(rng))};

    Texture tex;
    for (int i = 0; i < 4; ++i) {
        const double theta = 2.0 * std::numbers::pi * u(rng);
        const double k = 2.0 * std::numbers::pi / (12.0 + 20.0 * u(rng));
        tex.waves.push_back({0.3 * k * (u(rng) - 0.5), k * std::sin(theta), k * std::cos(theta),
                             2.0 * std::numbers::pi * u(rng), 0.05});
    }

    Volume3D atlas(cfg.shape, VolumeKind::atlas, cfg.spacing);
    std::vector<double> radius(atlas.size());
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = atlas.index(z, y, x);
                radius[i] = head.radius(z, y, x);
                atlas.data[i] = radius[i] < 1.0 ? static_cast<float>(head.atlas(radius[i])) : 0.0f;
            }

    PhantomCase out{CaseRecord(phantom_case_id(index), Volume3D(cfg.shape, VolumeKind::flair),
                               atlas, Volume3D(cfg.shape, VolumeKind::mask)),
                    {},
                    0};
    const int lo = cfg.lesion_count_range[0];
    const int hi = cfg.lesion_count_range[1];
    out.requested_lesions = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));

    Volume3D mask(cfg.shape, VolumeKind::mask, cfg.spacing);
    for (int n = 0; n < out.requested_lesions; ++n) {
        const double r_lo = cfg.lesion_radius_range[0];
        const double r_hi = cfg.lesion_radius_range[1];
        for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
            PhantomLesion l;
            const double ry = r_lo + (r_hi - r_lo) * u(rng);
            const double rx = r_lo + (r_hi - r_lo) * u(rng);
            const double rz = std::max(0.5, (r_lo + (r_hi - r_lo) * u(rng)) * cfg.spacing[2] /
                                                 cfg.spacing[0]);
            l.radii = {rz, ry, rx};
            l.center = {static_cast<int>(rng() % d), static_cast<int>(rng() % h),
                        static_cast<int>(rng() % w)};
            const int ez = static_cast<int>(std::floor(rz));
            const int ey = static_cast<int>(std::floor(ry));
            const int ex = static_cast<int>(std::floor(rx));
            bool ok = true;
            for (int z = l.center[0] - ez; ok && z <= l.center[0] + ez; ++z)
                for (int y = l.center[1] - ey; ok && y <= l.center[1] + ey; ++y)
                    for (int x = l.center[2] - ex; ok && x <= l.center[2] + ex; ++x) {
                        if (!inside_lesion(l, z, y, x)) continue;
                        ok = z >= 0 && z < d && y >= 0 && y < h && x >= 0 && x < w &&
                             atlas.at(z, y, x) > 0.5f;
                    }
            if (!ok) continue;
            for (int z = l.center[0] - ez; z <= l.center[0] + ez; ++z)
                for (int y = l.center[1] - ey; y <= l.center[1] + ey; ++y)
                    for (int x = l.center[2] - ex; x <= l.center[2] + ex; ++x) {
                        if (inside_lesion(l, z, y, x)) mask.at(z, y, x) = 1.0f;
                    }
            out.lesions.push_back(l);
            break;
        }
    }

    // Tissue: dark ventricles inside the shell, white matter, and a brighter
    // cortical rim that competes with lesions for a naive threshold.
    Volume3D flair(cfg.shape, VolumeKind::flair, cfg.spacing);
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = flair.index(z, y, x);
                const double r = radius[i];
                if (r >= 1.0) continue;
                const double inner = logistic((head.shell_in - 0.05 - r) / 0.03);
                const double cortex = logistic((r - 0.85) / 0.03);
                double v = 1.0 - 0.6 * inner + 0.5 * cortex + tex.at(z, y, x);
                v += cfg.lesion_contrast * mask.data[i];
                v += cfg.noise_sigma * gauss(rng);
                // Brain voxels stay strictly positive so background is exactly zero.
                flair.data[i] = static_cast<float>(std::max(v, 1e-3));
            }

    out.record = CaseRecord(out.record.case_id(), std::move(flair), std::move(atlas), std::move(mask));
    return out;
}

Manifest generate_dataset(const PhantomConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    Manifest m;
    m.root = out_dir;
    m.split_seed = cfg.seed;
    m.generator_json = json{{"phantom", to_json(cfg)}}.dump();
    for (int i = 0; i < cfg.n_cases; ++i) {
        const PhantomCase pc = generate_case(cfg, i);
        const auto dir = case_dir(out_dir, pc.record.case_id());
        save_case(pc.record, dir);
        json meta{{"case_id", pc.record.case_id()},
                  {"requested_lesions", pc.requested_lesions},
                  {"placed_lesions", pc.lesions.size()},
                  {"lesions", json::array()}};
        for (const auto& l : pc.lesions) {
            meta["lesions"].push_back({{"center", l.center}, {"radii", l.radii}});
        }
        std::ofstream f(dir / "phantom.json");
        f << meta.dump(2) << '\n';
        if (!f) {
            throw DataError("cannot write phantom metadata in '" + dir.string() + "'");
        }
        m.case_ids.push_back(pc.record.case_id());
    }
    write_manifest(m);
    return m;
}

}  // namespace bagau
