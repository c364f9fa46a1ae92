#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bagau/volume.hpp"

namespace bagau {

/// 100 * 2|P&G| / (|P|+|G|); 100 when both are empty.
[[nodiscard]] double dsc(const Volume3D& pred, const Volume3D& gt);

/// 100 * ||P| - |G|| / |G|. Throws DataError on an empty ground truth.
[[nodiscard]] double avd(const Volume3D& pred, const Volume3D& gt);

/// Connected foreground components. Labels are 1..count, numbered in raster
/// order of each component's first voxel; 0 is background.
struct LesionSet {
    std::array<int, 3> shape{};
    int connectivity = 26;
    int count = 0;
    std::vector<int> labels;
    std::vector<std::size_t> sizes;  ///< voxels per label, index 0 unused
};

/// connectivity is 6 (faces), 18 (faces + edges) or 26 (faces, edges, corners).
[[nodiscard]] LesionSet connected_components(const Volume3D& mask, int connectivity = 26);

/// Percentage of ground-truth lesions sharing at least one voxel with a
/// predicted lesion; 100 when there are no ground-truth lesions.
[[nodiscard]] double lesion_recall(const LesionSet& pred, const LesionSet& gt);

/// Percentage of predicted lesions touching a ground-truth lesion; 100 when
/// there are no predicted lesions and no ground-truth lesions, else 0 for an
/// empty prediction.
[[nodiscard]] double lesion_precision(const LesionSet& pred, const LesionSet& gt);

/// Harmonic mean of lesion recall and precision; 100 when both sets are empty.
[[nodiscard]] double lesion_f1(const LesionSet& pred, const LesionSet& gt);

struct CaseMetrics {
    std::string case_id;
    double dsc = 0.0;
    double avd = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int n_gt_lesions = 0;
    int n_pred_lesions = 0;
};

struct MetricReport {
    std::vector<CaseMetrics> cases;  ///< sorted by case_id
    CaseMetrics aggregate;           ///< unweighted means; lesion counts are totals
    int connectivity = 26;

    [[nodiscard]] std::string to_json() const;
    /// Plain-text table: DSC, AVD, Recall, F1 per case and the mean row.
    [[nodiscard]] std::string to_table() const;
};

[[nodiscard]] CaseMetrics evaluate_case(const std::string& case_id, const Volume3D& pred,
                                        const Volume3D& gt, int connectivity = 26);

/// Builds the report from per-case metrics (any order).
[[nodiscard]] MetricReport make_report(std::vector<CaseMetrics> cases, int connectivity = 26);

/// Compares `<pred_dir>/<id>/mask.nii.gz` with `<gt_root>/<id>/mask.nii.gz`
/// for every id in `case_ids`. Missing cases and shape mismatches are DataErrors.
[[nodiscard]] MetricReport evaluate(const std::filesystem::path& pred_dir,
                                    const std::filesystem::path& gt_root,
                                    const std::vector<std::string>& case_ids,
                                    int connectivity = 26);

}  // namespace bagau
