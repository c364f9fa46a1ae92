#include "bagau/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "bagau/error.hpp"
#include "json.hpp"

namespace bagau {

namespace {

void require_same_shape(const Volume3D& a, const Volume3D& b, const char* what) {
    if (a.shape != b.shape) {
        throw DataError(std::string(what) + ": prediction and ground truth shapes differ");
    }
}

std::size_t count_fg(const Volume3D& v) {
    return static_cast<std::size_t>(
        std::count_if(v.data.begin(), v.data.end(), [](float x) { return x > 0.5f; }));
}

// Union-find over voxel indices.
struct Forest {
    std::vector<std::size_t> parent;

    explicit Forest(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

    std::size_t find(std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) {
            parent[std::max(a, b)] = std::min(a, b);
        }
    }
};

// Hits per label of `a` that overlap foreground of `b`.
std::vector<char> overlapping(const LesionSet& a, const LesionSet& b) {
    if (a.shape != b.shape) {
        throw DataError("lesion sets come from volumes of different shapes");
    }
    std::vector<char> hit(a.count + 1, 0);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        if (a.labels[i] != 0 && b.labels[i] != 0) {
            hit[a.labels[i]] = 1;
        }
    }
    return hit;
}

int hits(const std::vector<char>& h) { return static_cast<int>(std::count(h.begin(), h.end(), 1)); }

}  // namespace

double dsc(const Volume3D& pred, const Volume3D& gt) {
    require_same_shape(pred, gt, "dsc");
    std::size_t inter = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred.data[i] > 0.5f && gt.data[i] > 0.5f;
    }
    const std::size_t total = count_fg(pred) + count_fg(gt);
    if (total == 0) {
        return 100.0;
    }
    return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double avd(const Volume3D& pred, const Volume3D& gt) {
    require_same_shape(pred, gt, "avd");
    const auto g = static_cast<double>(count_fg(gt));
    if (g == 0.0) {
        throw DataError("undefined AVD: ground truth is empty");
    }
    return 100.0 * std::abs(static_cast<double>(count_fg(pred)) - g) / g;
}

LesionSet connected_components(const Volume3D& mask, int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
        throw ConfigError("connectivity must be 6, 18 or 26");
    }
    const auto [d, h, w] = mask.shape;
    // Backward half of the neighbourhood: every offset that precedes the
    // voxel in raster order.
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                const int order = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (connectivity == 6 && order > 1) continue;
                if (connectivity == 18 && order > 2) continue;
                offsets.push_back({dz, dy, dx});
            }

    Forest forest(mask.size());
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = mask.index(z, y, x);
                if (!(mask.data[i] > 0.5f)) continue;
                for (const auto& o : offsets) {
                    const int nz = z + o[0];
                    const int ny = y + o[1];
                    const int nx = x + o[2];
                    if (nz < 0 || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const std::size_t j = mask.index(nz, ny, nx);
                    if (mask.data[j] > 0.5f) forest.unite(i, j);
                }
            }

    LesionSet out;
    out.shape = mask.shape;
    out.connectivity = connectivity;
    out.labels.assign(mask.size(), 0);
    out.sizes.assign(1, 0);
    // Roots are the smallest index of each tree, so raster order labels them.
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!(mask.data[i] > 0.5f)) continue;
        const std::size_t r = forest.find(i);
        if (r == i) {
            out.labels[i] = ++out.count;
            out.sizes.push_back(0);
        } else {
            out.labels[i] = out.labels[r];
        }
        ++out.sizes[out.labels[i]];
    }
    return out;
}

double lesion_recall(const LesionSet& pred, const LesionSet& gt) {
    if (gt.count == 0) {
        return 100.0;
    }
    return 100.0 * hits(overlapping(gt, pred)) / gt.count;
}

double lesion_precision(const LesionSet& pred, const LesionSet& gt) {
    if (pred.count == 0) {
        return gt.count == 0 ? 100.0 : 0.0;
    }
    return 100.0 * hits(overlapping(pred, gt)) / pred.count;
}

double lesion_f1(const LesionSet& pred, const LesionSet& gt) {
    if (pred.count == 0 && gt.count == 0) {
        return 100.0;
    }
    const double r = lesion_recall(pred, gt);
    const double p = lesion_precision(pred, gt);
    return r + p > 0.0 ? 2.0 * r * p / (r + p) : 0.0;
}

CaseMetrics evaluate_case(const std::string& case_id, const Volume3D& pred, const Volume3D& gt,
                          int connectivity) {
    require_same_shape(pred, gt, case_id.c_str());
    const LesionSet lp = connected_components(pred, connectivity);
    const LesionSet lg = connected_components(gt, connectivity);
    CaseMetrics m;
    m.case_id = case_id;
    m.dsc = dsc(pred, gt);
    m.avd = avd(pred, gt);
    m.recall = lesion_recall(lp, lg);
    m.f1 = lesion_f1(lp, lg);
    m.n_gt_lesions = lg.count;
    m.n_pred_lesions = lp.count;
    return m;
}

MetricReport make_report(std::vector<CaseMetrics> cases, int connectivity) {
    if (cases.empty()) {
        throw DataError("no cases to report");
    }
    std::sort(cases.begin(), cases.end(),
              [](const CaseMetrics& a, const CaseMetrics& b) { return a.case_id < b.case_id; });
    MetricReport r;
    r.connectivity = connectivity;
    r.aggregate.case_id = "mean";
    for (const auto& c : cases) {
        r.aggregate.dsc += c.dsc;
        r.aggregate.avd += c.avd;
        r.aggregate.recall += c.recall;
        r.aggregate.f1 += c.f1;
        r.aggregate.n_gt_lesions += c.n_gt_lesions;
        r.aggregate.n_pred_lesions += c.n_pred_lesions;
    }
    const auto n = static_cast<double>(cases.size());
    r.aggregate.dsc /= n;
    r.aggregate.avd /= n;
    r.aggregate.recall /= n;
    r.aggregate.f1 /= n;
    r.cases = std::move(cases);
    return r;
}

std::string MetricReport::to_json() const {
    auto row = [](const CaseMetrics& c) {
        return nlohmann::json{{"case_id", c.case_id},       {"dsc", c.dsc},
                              {"avd", c.avd},               {"recall", c.recall},
                              {"f1", c.f1},                 {"n_gt_lesions", c.n_gt_lesions},
                              {"n_pred_lesions", c.n_pred_lesions}};
    };
    nlohmann::json j;
    j["connectivity"] = connectivity;
    j["units"] = "percent";
    j["cases"] = nlohmann::json::array();
    for (const auto& c : cases) {
        j["cases"].push_back(row(c));
    }
    j["aggregate"] = row(aggregate);
    j["aggregate"].erase("case_id");
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %8s %8s %10s %8s %6s %6s\n", "case", "DSC (%)",
                  "AVD (%)", "Recall (%)", "F1 (%)", "#GT", "#Pred");
    out << line;
    auto emit = [&](const CaseMetrics& c) {
        std::snprintf(line, sizeof line, "%-20s %8.2f %8.2f %10.2f %8.2f %6d %6d\n",
                      c.case_id.c_str(), c.dsc, c.avd, c.recall, c.f1, c.n_gt_lesions,
                      c.n_pred_lesions);
        out << line;
    };
    for (const auto& c : cases) {
        emit(c);
    }
    emit(aggregate);
    return out.str();
}

MetricReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_root,
                      const std::vector<std::string>& case_ids, int connectivity) {
    std::vector<CaseMetrics> cases;
    for (const auto& id : case_ids) {
        const auto pred_path = pred_dir / id / "mask.nii.gz";
        const auto gt_path = gt_root / id / "mask.nii.gz";
        if (!std::filesystem::exists(pred_path)) {
            throw DataError("missing case '" + id + "' in predictions (" + pred_path.string() + ")");
        }
        if (!std::filesystem::exists(gt_path)) {
            throw DataError("missing case '" + id + "' in ground truth (" + gt_path.string() + ")");
        }
        const Volume3D pred = load_volume(pred_path, VolumeKind::mask);
        const Volume3D gt = load_volume(gt_path, VolumeKind::mask);
        cases.push_back(evaluate_case(id, pred, gt, connectivity));
    }
    return make_report(std::move(cases), connectivity);
}

}  // namespace bagau
