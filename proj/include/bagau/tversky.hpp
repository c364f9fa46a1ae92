#pragma once

#include <span>
#include <vector>

namespace bagau {

/// Soft set cardinalities of a probability map p against a binary mask g.
struct TverskyCounts {
    double tp = 0.0;  ///< sum p g
    double fp = 0.0;  ///< sum p (1 - g)
    double fn = 0.0;  ///< sum (1 - p) g

    TverskyCounts& operator+=(const TverskyCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

template <typename T>
[[nodiscard]] TverskyCounts tversky_counts(std::span<const T> p, std::span<const T> g);

/// (tp + eps) / (tp + alpha fp + (1 - alpha) fn + eps). Throws ConfigError
/// unless 0 < alpha < 1.
[[nodiscard]] double tversky_index(const TverskyCounts& c, double alpha, double eps = 1e-6);

template <typename T>
[[nodiscard]] double tversky_index(std::span<const T> p, std::span<const T> g, double alpha,
                                   double eps = 1e-6);

template <typename T>
[[nodiscard]] double tversky_loss(std::span<const T> p, std::span<const T> g, double alpha,
                                  double eps = 1e-6);

/// d(1 - index)/dp_i depends only on g_i, so the gradient is two numbers.
struct TverskyGrad {
    double on_fg = 0.0;  ///< g_i = 1
    double on_bg = 0.0;  ///< g_i = 0

    [[nodiscard]] double at(double g) const { return g * on_fg + (1.0 - g) * on_bg; }
};

/// Gradient of the loss at the given (possibly pooled) counts.
[[nodiscard]] TverskyGrad tversky_loss_grad(const TverskyCounts& c, double alpha,
                                            double eps = 1e-6);

/// Per-element gradient for one map, for callers that want it spelled out.
template <typename T>
[[nodiscard]] std::vector<T> tversky_loss_grad(std::span<const T> p, std::span<const T> g,
                                               double alpha, double eps = 1e-6);

}  // namespace bagau
