#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bagau/dataset.hpp"
#include "bagau/model.hpp"
#include "bagau/slices.hpp"

namespace bagau {

enum class Precision { float32, float64 };

[[nodiscard]] std::string_view to_string(Precision p);
[[nodiscard]] Precision parse_precision(std::string_view name);

struct TrainConfig {
    double alpha = 0.7;
    double lr = 2e-4;
    /// Samples per forward/backward pass; the optimizer sees
    /// batch_size * accumulation_steps samples per step.
    int batch_size = 32;
    int epochs = 200;
    int accumulation_steps = 1;
    std::uint64_t seed = 0;
    double smooth_eps = 1e-6;
    /// Batch-norm group size in training mode, 0 = the whole micro-batch.
    int bn_group = 0;
    Precision precision = Precision::float32;
    AugmentConfig augment{10.0, 0.1, 0.1, 0.5};
    double threshold = 0.5;
    /// One optimizer step per epoch on a fixed batch of lesion slices, which
    /// also serves as the validation set.
    bool overfit = false;
    int overfit_slices = 4;

    /// Throws ConfigError.
    void validate() const;
};

/// One line of history.jsonl.
struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_dsc = 0.0;
    double lr = 0.0;
    double wall_time = 0.0;  ///< seconds spent on this epoch
};

[[nodiscard]] std::string to_json_line(const EpochRecord& r);
[[nodiscard]] EpochRecord parse_epoch_record(const std::string& line);
[[nodiscard]] std::vector<EpochRecord> read_history(const std::filesystem::path& path);

template <typename T>
class Adam {
public:
    explicit Adam(const ParameterSet<T>& params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step(ParameterSet<T>& params, const std::vector<Tensor<T>>& grads);

    [[nodiscard]] double lr() const { return lr_; }
    [[nodiscard]] std::int64_t steps() const { return t_; }
    std::vector<Tensor<T>>& m() { return m_; }
    std::vector<Tensor<T>>& v() { return v_; }
    [[nodiscard]] const std::vector<Tensor<T>>& m() const { return m_; }
    [[nodiscard]] const std::vector<Tensor<T>>& v() const { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

/// Training slices and validation cases of one split.
struct TrainData {
    SliceBatch train_slices;
    std::vector<CaseRecord> val_cases;
    DatasetSplit split;
};

/// FLAIR z-scored over its support; atlas and mask untouched.
[[nodiscard]] CaseRecord normalized(const CaseRecord& c);

/// Loads the split's training cases as slices (empty slices dropped) and its
/// validation cases as volumes.
[[nodiscard]] TrainData prepare_data(const Manifest& m, const DatasetSplit& split, Canvas canvas);

struct TrainOptions {
    bool resume = false;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double best_val_dsc = -1.0;
    int best_epoch = 0;
};

inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kHistoryFile = "history.jsonl";

/// Trains a fresh model (or resumes from `<out_dir>/last.ckpt`) and writes
/// history.jsonl, last.ckpt and best.ckpt to out_dir. A non-finite loss
/// dumps the batch to `<out_dir>/nan_dump/` and throws NumericalAbort.
TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const TrainData& data,
                  const std::filesystem::path& out_dir, const TrainOptions& opt = {});

struct PredictOptions {
    double threshold = 0.5;
    /// Canvas the caller expects; must match the model spec when given.
    std::optional<Canvas> canvas;
    /// Slices per forward pass.
    int chunk = 8;
};

struct PredictionVolume {
    Volume3D probability;
    Volume3D mask;  ///< probability > threshold
};

template <typename T>
[[nodiscard]] PredictionVolume predict_case(const Model<T>& model, const CaseRecord& c,
                                            const PredictOptions& opt = {});

/// Mean volumetric DSC (percent) of eval-mode predictions over cases with masks.
template <typename T>
[[nodiscard]] double validation_dsc(const Model<T>& model, const std::vector<CaseRecord>& cases,
                                    double threshold);

}  // namespace bagau
