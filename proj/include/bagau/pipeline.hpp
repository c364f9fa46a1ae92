#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bagau/checkpoint.hpp"
#include "bagau/config.hpp"
#include "bagau/metrics.hpp"
#include "bagau/train.hpp"

namespace bagau {

namespace fs = std::filesystem;

/// The split a run config selects for a dataset: its ratio, and its seed or
/// else the manifest's.
[[nodiscard]] DatasetSplit split_for(const RunConfig& cfg, const Manifest& m);

/// Writes `config.json` (the resolved configuration) into dir.
void echo_config(const RunConfig& cfg, const fs::path& dir);

/// Splits, loads, echoes config.json and split.json to out_dir and trains.
TrainResult train_from_config(const RunConfig& cfg, const fs::path& out_dir,
                              const TrainOptions& opt = {});

/// A checkpoint's model at the precision it was trained in.
class LoadedModel {
public:
    /// Throws ConfigError when `expected` is given and differs from the stored spec.
    explicit LoadedModel(const Checkpoint& c, const ModelSpec* expected = nullptr);

    [[nodiscard]] const ModelSpec& spec() const;
    [[nodiscard]] Precision precision() const { return precision_; }
    [[nodiscard]] PredictionVolume predict(const CaseRecord& c, const PredictOptions& opt) const;

private:
    Precision precision_;
    std::optional<Model<float>> f32_;
    std::optional<Model<double>> f64_;
};

/// 8-bit RGB PNG, rows top to bottom.
void write_png_rgb(const fs::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);

/// One PNG per axial slice: FLAIR in grey, the predicted mask outline in red
/// and, when the case has a reference mask, its outline in green. Returns the
/// number of images written.
int write_overlays(const CaseRecord& c, const Volume3D& pred_mask, const fs::path& dir);

/// Writes `<out_root>/<case_id>/{probability,mask}.nii.gz` (plus
/// `overlay/slice_NNN.png` when asked) and returns the prediction.
PredictionVolume write_prediction(const LoadedModel& model, const CaseRecord& c,
                                  const fs::path& out_root, const PredictOptions& opt,
                                  bool overlay);

/// Case directories (sub-directories holding mask.nii.gz) under root, sorted.
[[nodiscard]] std::vector<std::string> list_mask_cases(const fs::path& root);

struct AblationRow {
    Variant variant;
    double best_val_dsc = 0.0;
    MetricReport report;
};

struct AblationReport {
    std::string split_hash;
    std::vector<AblationRow> rows;

    /// Rows in the fixed order single-path baselines, ablations, full model.
    [[nodiscard]] std::string to_table() const;
    [[nodiscard]] std::string to_json() const;
};

/// Human-readable row label of a variant.
[[nodiscard]] std::string variant_label(Variant v);

/// Trains every variant on one split under one seed (into out_dir/<variant>),
/// predicts the test split with each best checkpoint and evaluates it.
AblationReport run_ablation(const RunConfig& cfg, const std::vector<Variant>& variants,
                            const fs::path& out_dir,
                            const std::function<void(Variant, const EpochRecord&)>& on_epoch = {});

}  // namespace bagau
