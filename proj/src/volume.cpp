#include "bagau/volume.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "bagau/error.hpp"

namespace bagau {

namespace {

static_assert(std::endian::native == std::endian::little, "NIfTI writer assumes a little-endian host");

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;  // header + empty extension flag

// NIfTI-1 datatype codes.
constexpr std::int16_t kUint8 = 2;
constexpr std::int16_t kInt16 = 4;
constexpr std::int16_t kInt32 = 8;
constexpr std::int16_t kFloat32 = 16;
constexpr std::int16_t kFloat64 = 64;
constexpr std::int16_t kInt8 = 256;
constexpr std::int16_t kUint16 = 512;

constexpr double kRangeTol = 1e-6;

bool has_gz_suffix(const std::filesystem::path& p) {
    const std::string s = p.string();
    return s.size() > 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    // gzread passes uncompressed files through unchanged.
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof buf)) > 0) {
        out.insert(out.end(), buf, buf + n);
    }
    const bool failed = n < 0;
    gzclose(f);
    if (failed) {
        throw DataError("corrupt or unreadable file '" + path.string() + "'");
    }
    return out;
}

template <typename T>
T get(const std::vector<unsigned char>& b, std::size_t off, bool swap) {
    T v;
    std::memcpy(&v, b.data() + off, sizeof v);
    if (swap) {
        auto* p = reinterpret_cast<unsigned char*>(&v);
        std::reverse(p, p + sizeof v);
    }
    return v;
}

template <typename T>
void put(std::vector<unsigned char>& b, std::size_t off, T v) {
    std::memcpy(b.data() + off, &v, sizeof v);
}

template <typename S>
void convert(const std::vector<unsigned char>& bytes, std::size_t off, std::size_t n, bool swap,
             float slope, float inter, std::vector<float>& out) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = static_cast<double>(get<S>(bytes, off + i * sizeof(S), swap));
        out[i] = static_cast<float>(raw * slope + inter);
    }
}

int bits_of(std::int16_t dtype) {
    switch (dtype) {
        case kUint8:
        case kInt8: return 8;
        case kInt16:
        case kUint16: return 16;
        case kInt32:
        case kFloat32: return 32;
        case kFloat64: return 64;
        default: return 0;
    }
}

}  // namespace

std::string_view to_string(VolumeKind k) {
    switch (k) {
        case VolumeKind::flair: return "flair";
        case VolumeKind::atlas: return "atlas";
        case VolumeKind::mask: return "mask";
        case VolumeKind::probability: return "probability";
    }
    return "?";
}

Volume3D::Volume3D(std::array<int, 3> shape_, VolumeKind kind_, std::array<double, 3> spacing_)
    : shape(shape_), spacing(spacing_), kind(kind_) {
    for (int s : shape) {
        if (s < 1) {
            throw DataError("volume extents must be >= 1");
        }
    }
    data.assign(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2], 0.0f);
}

void Volume3D::validate() const {
    for (int s : shape) {
        if (s < 1) {
            throw DataError("volume extents must be >= 1");
        }
    }
    if (data.size() != static_cast<std::size_t>(shape[0]) * shape[1] * shape[2]) {
        throw DataError("volume data size does not match its shape");
    }
    for (float v : data) {
        if (!std::isfinite(v)) {
            throw DataError(std::string(to_string(kind)) + " volume contains non-finite values");
        }
    }
    if (kind == VolumeKind::mask) {
        for (float v : data) {
            if (v != 0.0f && v != 1.0f) {
                throw DataError("mask values outside {0,1}");
            }
        }
    } else if (kind == VolumeKind::atlas || kind == VolumeKind::probability) {
        for (float v : data) {
            if (v < 0.0f || v > 1.0f) {
                throw DataError(std::string(to_string(kind)) + " values outside [0,1]");
            }
        }
    }
}

Volume3D load_volume(const std::filesystem::path& path, VolumeKind kind) {
    const std::vector<unsigned char> bytes = read_all(path);
    const std::string name = path.string();
    if (bytes.size() < kHeaderSize) {
        throw DataError("'" + name + "' is too short for a NIfTI-1 header");
    }
    bool swap = false;
    if (get<std::int32_t>(bytes, 0, false) != kHeaderSize) {
        swap = true;
        if (get<std::int32_t>(bytes, 0, true) != kHeaderSize) {
            throw DataError("'" + name + "' is not a NIfTI-1 file (sizeof_hdr != 348)");
        }
    }
    if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0) {
        throw DataError("'" + name + "' is not a single-file NIfTI-1 volume");
    }

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) {
        dim[i] = get<std::int16_t>(bytes, 40 + 2 * i, swap);
    }
    if (dim[0] < 3 || dim[0] > 7) {
        throw DataError("'" + name + "': expected 3-D volume, header declares " +
                        std::to_string(dim[0]) + " dimensions");
    }
    for (int i = 4; i <= dim[0]; ++i) {
        if (dim[i] > 1) {
            throw DataError("'" + name + "': expected 3-D volume, got " + std::to_string(dim[0]) +
                            "-D payload");
        }
    }
    for (int i = 1; i <= 3; ++i) {
        if (dim[i] < 1) {
            throw DataError("'" + name + "': non-positive extent");
        }
    }

    const auto dtype = get<std::int16_t>(bytes, 70, swap);
    const int bits = bits_of(dtype);
    if (bits == 0) {
        throw DataError("'" + name + "': unsupported datatype " + std::to_string(dtype));
    }
    float pixdim[4];
    for (int i = 0; i < 4; ++i) {
        pixdim[i] = get<float>(bytes, 76 + 4 * i, swap);
    }
    const auto vox_offset = static_cast<std::size_t>(get<float>(bytes, 108, swap));
    float slope = get<float>(bytes, 112, swap);
    float inter = get<float>(bytes, 116, swap);
    if (slope == 0.0f || !std::isfinite(slope)) {
        slope = 1.0f;
        inter = 0.0f;
    }

    Volume3D v({dim[3], dim[2], dim[1]}, kind,
               {pixdim[3] > 0 ? pixdim[3] : 1.0, pixdim[2] > 0 ? pixdim[2] : 1.0,
                pixdim[1] > 0 ? pixdim[1] : 1.0});
    const std::size_t n = v.size();
    if (vox_offset < kHeaderSize || bytes.size() < vox_offset + n * (bits / 8)) {
        throw DataError("'" + name + "': truncated voxel data");
    }
    switch (dtype) {
        case kUint8: convert<std::uint8_t>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        case kInt8: convert<std::int8_t>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        case kInt16: convert<std::int16_t>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        case kUint16: convert<std::uint16_t>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        case kInt32: convert<std::int32_t>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        case kFloat32: convert<float>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        case kFloat64: convert<double>(bytes, vox_offset, n, swap, slope, inter, v.data); break;
        default: break;
    }

    for (float& x : v.data) {
        if (!std::isfinite(x)) {
            throw DataError("'" + name + "': non-finite voxel values");
        }
    }
    if (kind == VolumeKind::mask) {
        for (float& x : v.data) {
            if (std::abs(x) > kRangeTol && std::abs(x - 1.0f) > kRangeTol) {
                throw DataError("'" + name + "': mask values outside {0,1}");
            }
            x = x > 0.5f ? 1.0f : 0.0f;
        }
    } else if (kind == VolumeKind::atlas || kind == VolumeKind::probability) {
        for (float& x : v.data) {
            if (x < -kRangeTol || x > 1.0 + kRangeTol) {
                throw DataError("'" + name + "': " + std::string(to_string(kind)) +
                                " values outside [0,1]");
            }
            x = std::clamp(x, 0.0f, 1.0f);
        }
    }
    return v;
}

void save_volume(const Volume3D& v, const std::filesystem::path& path) {
    v.validate();
    const bool as_mask = v.kind == VolumeKind::mask;
    const std::int16_t dtype = as_mask ? kUint8 : kFloat32;
    const std::size_t elem = as_mask ? 1 : 4;

    std::vector<unsigned char> buf(kDataOffset + v.size() * elem, 0);
    put<std::int32_t>(buf, 0, kHeaderSize);
    const std::int16_t dim[8] = {3, static_cast<std::int16_t>(v.shape[2]),
                                 static_cast<std::int16_t>(v.shape[1]),
                                 static_cast<std::int16_t>(v.shape[0]), 1, 1, 1, 1};
    for (int s : v.shape) {
        if (s > 32767) {
            throw DataError("volume extent exceeds the NIfTI-1 limit");
        }
    }
    for (int i = 0; i < 8; ++i) {
        put<std::int16_t>(buf, 40 + 2 * i, dim[i]);
    }
    put<std::int16_t>(buf, 70, dtype);
    put<std::int16_t>(buf, 72, static_cast<std::int16_t>(elem * 8));
    const float pixdim[4] = {1.0f, static_cast<float>(v.spacing[2]),
                             static_cast<float>(v.spacing[1]), static_cast<float>(v.spacing[0])};
    for (int i = 0; i < 4; ++i) {
        put<float>(buf, 76 + 4 * i, pixdim[i]);
    }
    put<float>(buf, 108, static_cast<float>(kDataOffset));
    put<float>(buf, 112, 1.0f);
    put<std::uint8_t>(buf, 123, 2);  // spatial units: mm
    const std::string descrip = "bagau " + std::string(to_string(v.kind));
    std::memcpy(buf.data() + 148, descrip.data(), std::min<std::size_t>(descrip.size(), 79));
    put<std::int16_t>(buf, 254, 1);  // sform: scaled identity
    put<float>(buf, 280, pixdim[1]);
    put<float>(buf, 296 + 4, pixdim[2]);
    put<float>(buf, 312 + 8, pixdim[3]);
    std::memcpy(buf.data() + 344, "n+1", 4);

    unsigned char* payload = buf.data() + kDataOffset;
    if (as_mask) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            payload[i] = v.data[i] > 0.5f ? 1 : 0;
        }
    } else {
        std::memcpy(payload, v.data.data(), v.size() * sizeof(float));
    }

    const std::string name = path.string();
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(name.c_str(), "wb6");
        if (f == nullptr) {
            throw DataError("cannot write '" + name + "'");
        }
        const bool ok = gzwrite(f, buf.data(), static_cast<unsigned>(buf.size())) ==
                        static_cast<int>(buf.size());
        if (gzclose(f) != Z_OK || !ok) {
            throw DataError("failed writing '" + name + "'");
        }
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw DataError("cannot write '" + name + "'");
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) {
            throw DataError("failed writing '" + name + "'");
        }
    }
}

Volume3D normalize_zscore(const Volume3D& v) {
    if (v.kind != VolumeKind::flair) {
        throw DataError("z-score normalization applies to FLAIR volumes only");
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (float x : v.data) {
        if (x != 0.0f) {
            sum += x;
            ++n;
        }
    }
    if (n == 0) {
        throw DataError("empty brain support");
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (float x : v.data) {
        if (x != 0.0f) {
            ss += (x - mean) * (x - mean);
        }
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 0.0)) {
        throw DataError("zero variance over brain support");
    }
    Volume3D out = v;
    for (float& x : out.data) {
        if (x != 0.0f) {
            x = static_cast<float>((x - mean) / sd);
        }
    }
    return out;
}

}  // namespace bagau
