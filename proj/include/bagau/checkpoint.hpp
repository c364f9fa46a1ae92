#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bagau/model.hpp"
#include "json.hpp"

namespace bagau {

/// Contents of a checkpoint archive. Tensors are held in double so that one
/// file serves both precisions; float values round-trip exactly.
struct Checkpoint {
    ModelSpec spec;
    ParameterSet<double> params;  ///< learnable tensors and buffers
    /// Optimizer moments parallel to params.params(); empty for inference-only files.
    std::vector<Tensor<double>> adam_m;
    std::vector<Tensor<double>> adam_v;
    std::int64_t step = 0;
    int epoch = 0;
    double best_val_dsc = -1.0;
    std::string rng_state;
    /// Free-form run metadata (training config, split, precision).
    nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header, then
/// little-endian f64 tensor data in header order. Written via a temporary
/// file and renamed into place.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);

/// Throws DataError on a missing, truncated or foreign file.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
[[nodiscard]] Checkpoint make_checkpoint(const Model<T>& model);

/// Builds a model from the checkpoint. When `expected` is given its spec
/// must match the stored one exactly (ConfigError otherwise).
template <typename T>
[[nodiscard]] Model<T> model_from_checkpoint(const Checkpoint& c,
                                             const ModelSpec* expected = nullptr);

}  // namespace bagau
