#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "bagau/dataset.hpp"
#include "bagau/error.hpp"
#include "bagau/slices.hpp"
#include "bagau/volume.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace bagau;
using bagau::testing::TempDir;

namespace {

Volume3D random_mask(std::array<int, 3> shape, std::uint64_t seed, double p = 0.1) {
    Volume3D v(shape, VolumeKind::mask, {3.0, 1.0, 1.2});
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution b(p);
    for (auto& x : v.data) x = b(rng) ? 1.0f : 0.0f;
    return v;
}

CaseRecord random_case(std::array<int, 3> shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Volume3D f(shape, VolumeKind::flair);
    Volume3D a(shape, VolumeKind::atlas);
    for (auto& x : f.data) x = u(rng) < 0.2f ? 0.0f : u(rng) * 4.0f - 1.0f;
    for (auto& x : a.data) x = u(rng);
    return CaseRecord("c" + std::to_string(seed), std::move(f), std::move(a),
                      random_mask(shape, seed + 1));
}

float mask_sum(const Volume3D& v) { return std::accumulate(v.data.begin(), v.data.end(), 0.0f); }

std::string error_of(auto&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("mask volumes round-trip bit-exactly") {
    TempDir dir;
    const Volume3D m = random_mask({48, 64, 64}, 3);
    for (const char* name : {"m.nii.gz", "m.nii"}) {
        save_volume(m, dir / name);
        const Volume3D r = load_volume(dir / name, VolumeKind::mask);
        CHECK(r.shape == std::array<int, 3>{48, 64, 64});
        CHECK(r.kind == VolumeKind::mask);
        CHECK(r.data == m.data);
        CHECK(r.spacing[0] == doctest::Approx(3.0));
        CHECK(r.spacing[2] == doctest::Approx(1.2));
    }
}

TEST_CASE("FLAIR with negative values round-trips") {
    TempDir dir;
    Volume3D f({5, 7, 9}, VolumeKind::flair);
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n(0.0f, 3.0f);
    for (auto& x : f.data) x = n(rng);
    save_volume(f, dir / "f.nii.gz");
    const Volume3D r = load_volume(dir / "f.nii.gz", VolumeKind::flair);
    for (std::size_t i = 0; i < f.size(); ++i) {
        REQUIRE(std::abs(r.data[i] - f.data[i]) <= 1e-6);
    }
}

TEST_CASE("loader rejects non-3-D payloads and out-of-range values") {
    TempDir dir;
    SUBCASE("4-D file") {
        Volume3D f({2, 3, 4}, VolumeKind::flair);
        save_volume(f, dir / "v.nii");
        {
            std::fstream io(dir / "v.nii", std::ios::in | std::ios::out | std::ios::binary);
            const std::int16_t four = 4;
            const std::int16_t two = 2;
            io.seekp(40);
            io.write(reinterpret_cast<const char*>(&four), 2);
            io.seekp(48);
            io.write(reinterpret_cast<const char*>(&two), 2);
            io.seekp(0, std::ios::end);
            const std::vector<char> more(f.size() * 4, 0);
            io.write(more.data(), static_cast<std::streamsize>(more.size()));
        }
        const std::string msg = error_of([&] { (void)load_volume(dir / "v.nii", VolumeKind::flair); });
        CHECK(msg.find("expected 3-D volume") != std::string::npos);
    }
    SUBCASE("atlas above one") {
        Volume3D f({2, 3, 4}, VolumeKind::flair);
        f.data[5] = 1.2f;
        save_volume(f, dir / "a.nii.gz");
        const std::string msg = error_of([&] { (void)load_volume(dir / "a.nii.gz", VolumeKind::atlas); });
        CHECK(msg.find("atlas values outside [0,1]") != std::string::npos);
        CHECK_THROWS_AS((void)load_volume(dir / "a.nii.gz", VolumeKind::atlas), DataError);
    }
    SUBCASE("non-binary mask") {
        Volume3D f({2, 3, 4}, VolumeKind::flair);
        f.data[0] = 0.5f;
        save_volume(f, dir / "m.nii.gz");
        CHECK_THROWS_AS((void)load_volume(dir / "m.nii.gz", VolumeKind::mask), DataError);
    }
    SUBCASE("missing and garbage files") {
        CHECK_THROWS_AS((void)load_volume(dir / "nope.nii.gz", VolumeKind::flair), DataError);
        std::ofstream(dir / "junk.nii") << "not an image";
        CHECK_THROWS_AS((void)load_volume(dir / "junk.nii", VolumeKind::flair), DataError);
    }
}

TEST_CASE("writing below a regular file fails") {
    TempDir dir;
    std::ofstream(dir / "file") << "x";
    CHECK_THROWS_AS(save_volume(random_mask({2, 2, 2}, 1), dir / "file" / "m.nii.gz"), DataError);
    CHECK_THROWS_AS(save_volume(random_mask({2, 2, 2}, 1), dir / "file" / "m.nii"), DataError);
}

TEST_CASE("z-score over the nonzero support") {
    Volume3D v({1, 2, 3}, VolumeKind::flair);
    v.data = {0, 2, 0, 4, 0, 0};
    const Volume3D z = normalize_zscore(v);
    CHECK(z.data == std::vector<float>{0, -1, 0, 1, 0, 0});

    const CaseRecord c = random_case({6, 20, 20}, 4);
    const Volume3D n = normalize_zscore(c.flair());
    double s = 0, ss = 0;
    int k = 0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        CHECK((c.flair().data[i] == 0.0f) == (n.data[i] == 0.0f));
        if (n.data[i] != 0.0f) {
            s += n.data[i];
            ss += double(n.data[i]) * n.data[i];
            ++k;
        }
    }
    CHECK(std::abs(s / k) < 1e-5);
    CHECK(std::abs(std::sqrt(ss / k - (s / k) * (s / k)) - 1.0) < 1e-5);

    const Volume3D again = normalize_zscore(n);
    for (std::size_t i = 0; i < n.size(); ++i) {
        REQUIRE(std::abs(again.data[i] - n.data[i]) < 1e-5);
    }

    Volume3D flat({1, 2, 2}, VolumeKind::flair);
    flat.data = {3, 3, 0, 3};
    CHECK(error_of([&] { (void)normalize_zscore(flat); }).find("zero variance") != std::string::npos);
    Volume3D empty({1, 2, 2}, VolumeKind::flair);
    CHECK(error_of([&] { (void)normalize_zscore(empty); }).find("empty brain support") !=
          std::string::npos);
}

TEST_CASE("dataset split sizes, determinism and disjointness") {
    auto ids = [](int n) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back("case" + std::to_string(i));
        return v;
    };
    const DatasetSplit a = split_dataset(ids(10), {0.8, 0.1, 0.1}, 7);
    CHECK(a.train.size() == 8);
    CHECK(a.val.size() == 1);
    CHECK(a.test.size() == 1);

    const DatasetSplit b = split_dataset(ids(30), {0.8, 0.1, 0.1}, 7);
    CHECK(b.train.size() == 24);
    CHECK(b.val.size() == 3);
    CHECK(b.test.size() == 3);
    std::set<std::string> all(b.train.begin(), b.train.end());
    all.insert(b.val.begin(), b.val.end());
    all.insert(b.test.begin(), b.test.end());
    CHECK(all.size() == 30);

    auto shuffled = ids(30);
    std::reverse(shuffled.begin(), shuffled.end());
    const DatasetSplit c = split_dataset(shuffled, {0.8, 0.1, 0.1}, 7);
    CHECK(c.train == b.train);
    CHECK(c.test == b.test);
    CHECK(c.hash() == b.hash());
    CHECK(split_dataset(ids(30), {0.8, 0.1, 0.1}, 8).hash() != b.hash());

    const DatasetSplit d = split_dataset(ids(7), {0.5, 0.25, 0.25}, 1);
    CHECK(d.val.size() == 1);
    CHECK(d.test.size() == 1);
    CHECK(d.train.size() == 5);

    CHECK_THROWS_AS((void)split_dataset(ids(2), {0.8, 0.1, 0.1}, 1), ConfigError);
    CHECK_THROWS_AS((void)split_dataset(ids(5), {0.8, 0.1, 0.2}, 1), ConfigError);
}

TEST_CASE("case records require identical shapes") {
    Volume3D f({2, 4, 4}, VolumeKind::flair);
    Volume3D a({2, 4, 5}, VolumeKind::atlas);
    CHECK_THROWS_AS(CaseRecord("x", f, a), DataError);
    CHECK_THROWS_AS(CaseRecord("x", f, Volume3D({2, 4, 4}, VolumeKind::mask)), DataError);
}

TEST_CASE("manifest and case directories round-trip") {
    TempDir dir;
    const CaseRecord c = random_case({3, 8, 8}, 9);
    save_case(c, case_dir(dir.path(), c.case_id()));
    Manifest m;
    m.root = dir.path();
    m.case_ids = {c.case_id()};
    m.split_seed = 5;
    write_manifest(m);
    const Manifest r = read_manifest(dir.path());
    CHECK(r.case_ids == m.case_ids);
    CHECK(r.split_seed == 5);
    const CaseRecord back = load_case(case_dir(r.root, c.case_id()), c.case_id(), true);
    CHECK(back.mask()->data == c.mask()->data);
    CHECK(back.flair().data == c.flair().data);
    CHECK_THROWS_AS((void)load_case(dir / "missing", "missing", true), DataError);
}

TEST_CASE("slice extraction counts, padding and exact restacking") {
    SUBCASE("same size") {
        const CaseRecord c = random_case({48, 64, 64}, 1);
        const SliceBatch b = extract_slices(c, {64, 64}, true);
        CHECK(b.size() == 48);
        CHECK(b.flair.shape() == nn::Shape4{48, 1, 64, 64});
        const Volume3D back =
            restack_slices(b.mask, b.slice_index, c.shape(), VolumeKind::mask);
        CHECK(back.data == c.mask()->data);
    }
    SUBCASE("padding is symmetric and conserves the mask") {
        const CaseRecord c = random_case({48, 50, 50}, 2);
        const SliceBatch b = extract_slices(c, {64, 64}, true);
        CHECK(std::accumulate(b.mask.vec().begin(), b.mask.vec().end(), 0.0f) == mask_sum(*c.mask()));
        CHECK(b.flair.at(5, 0, 7, 7) == c.flair().at(5, 0, 0));
        CHECK(b.flair.at(5, 0, 56, 56) == c.flair().at(5, 49, 49));
        for (int i = 0; i < 64; ++i) {
            CHECK(b.flair.at(5, 0, 6, i) == 0.0f);
            CHECK(b.flair.at(5, 0, i, 57) == 0.0f);
        }
        const Volume3D back =
            restack_slices(b.mask, b.slice_index, c.shape(), VolumeKind::mask);
        CHECK(back.data == c.mask()->data);
    }
    SUBCASE("cropping keeps the centre") {
        const CaseRecord c = random_case({2, 70, 40}, 3);
        const SliceBatch b = extract_slices(c, {64, 48}, true);
        CHECK(b.atlas.at(1, 0, 0, 4) == c.atlas().at(1, 3, 0));
        const Volume3D back = restack_slices(b.atlas, b.slice_index, c.shape());
        CHECK(back.at(1, 3, 0) == c.atlas().at(1, 3, 0));
        CHECK(back.at(1, 2, 0) == 0.0f);
    }
    SUBCASE("empty slices are dropped and restored as zeros") {
        CaseRecord full = random_case({6, 16, 16}, 4);
        Volume3D f = full.flair();
        Volume3D m = *full.mask();
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                f.at(3, y, x) = 0.0f;
            }
        const CaseRecord c("e", f, full.atlas(), m);
        const SliceBatch b = extract_slices(c, {16, 16}, false);
        CHECK(b.size() == 5);
        CHECK(std::find(b.slice_index.begin(), b.slice_index.end(), 3) == b.slice_index.end());
        const Volume3D back = restack_slices(b.mask, b.slice_index, c.shape(), VolumeKind::mask);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                REQUIRE(back.at(3, y, x) == 0.0f);
                REQUIRE(back.at(2, y, x) == m.at(2, y, x));
            }
    }
    SUBCASE("contract errors") {
        const CaseRecord c = random_case({4, 16, 16}, 5);
        CHECK_THROWS_AS((void)extract_slices(c, {8, 8}, true), ConfigError);
        const SliceBatch b = extract_slices(c, {16, 16}, true);
        std::vector<int> dup = b.slice_index;
        dup[1] = dup[0];
        CHECK_THROWS_AS((void)restack_slices(b.mask, dup, c.shape()), DataError);
    }
}

TEST_CASE("slice batches select and concatenate") {
    const SliceBatch a = extract_slices(random_case({3, 16, 16}, 1), {16, 16}, true);
    const SliceBatch b = extract_slices(random_case({2, 16, 16}, 2), {16, 16}, true);
    const std::vector<SliceBatch> parts{a, b};
    const SliceBatch ab = SliceBatch::concat(parts);
    CHECK(ab.size() == 5);
    CHECK(ab.case_ids[3] == b.case_ids[0]);
    const std::vector<int> pick{4, 0};
    const SliceBatch s = ab.select(pick);
    CHECK(s.slice_index == std::vector<int>{1, 0});
    CHECK(std::equal(s.flair.plane(0, 0), s.flair.plane(0, 0) + 256, b.flair.plane(1, 0)));
}

TEST_CASE("augmentation") {
    const SliceBatch base = extract_slices(random_case({4, 32, 32}, 6), {32, 32}, true);

    SUBCASE("zero ranges are the identity") {
        std::mt19937_64 rng(1);
        const SliceBatch out = augment(base, rng, AugmentConfig{});
        CHECK(out.flair.vec() == base.flair.vec());
        CHECK(out.atlas.vec() == base.atlas.vec());
        CHECK(out.mask.vec() == base.mask.vec());
    }
    SUBCASE("mirroring is a horizontal flip and an involution") {
        AugmentConfig cfg;
        cfg.mirror_prob = 1.0;
        std::mt19937_64 rng(1);
        const SliceBatch once = augment(base, rng, cfg);
        CHECK(once.flair.at(2, 0, 5, 3) == base.flair.at(2, 0, 5, 28));
        CHECK(once.mask.at(1, 0, 30, 0) == base.mask.at(1, 0, 30, 31));
        const SliceBatch twice = augment(once, rng, cfg);
        CHECK(twice.flair.vec() == base.flair.vec());
        CHECK(twice.mask.vec() == base.mask.vec());
    }
    SUBCASE("a 90 degree rotation moves a delta to the rotated coordinate") {
        SliceBatch d = base.select(std::vector<int>{0});
        d.mask.fill(0.0f);
        d.flair.fill(0.0f);
        d.mask.at(0, 0, 4, 20) = 1.0f;
        d.flair.at(0, 0, 4, 20) = 1.0f;
        // Offsets from the centre (15.5, 15.5): dx = 4.5, dy = -11.5. A +90
        // degree turn sends (dx, dy) to (-dy, dx) = (11.5, 4.5).
        const Affine2 a = compose_affine(90.0, 0.0, 1.0, false);
        SliceBatch out = d;
        warp_plane(d.mask.plane(0, 0), out.mask.plane(0, 0), 32, 32, a, true);
        warp_plane(d.flair.plane(0, 0), out.flair.plane(0, 0), 32, 32, a, false);
        CHECK(out.mask.at(0, 0, 20, 27) == 1.0f);
        CHECK(std::accumulate(out.mask.vec().begin(), out.mask.vec().end(), 0.0f) == 1.0f);
        CHECK(out.flair.at(0, 0, 20, 27) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("random transforms: deterministic, binary masks, shared per sample") {
        AugmentConfig cfg{15.0, 0.1, 0.1, 0.5};
        SliceBatch paired = base;
        paired.atlas = paired.mask;  // identical content through both resamplers
        std::mt19937_64 r1(42);
        std::mt19937_64 r2(42);
        const SliceBatch a = augment(paired, r1, cfg);
        const SliceBatch b = augment(paired, r2, cfg);
        CHECK(a.flair.vec() == b.flair.vec());
        CHECK(a.mask.vec() == b.mask.vec());
        CHECK(a.mask.vec() != paired.mask.vec());
        for (std::size_t i = 0; i < a.mask.numel(); ++i) {
            REQUIRE((a.mask[i] == 0.0f || a.mask[i] == 1.0f));
            // Nearest and bilinear samples of the same map agree wherever the
            // bilinear value is unambiguous.
            if (a.atlas[i] > 0.999f) REQUIRE(a.mask[i] == 1.0f);
            if (a.atlas[i] < 0.001f) REQUIRE(a.mask[i] == 0.0f);
        }
    }
}
