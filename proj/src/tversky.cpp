#include "bagau/tversky.hpp"

#include <stdexcept>
#include <string>

#include "bagau/error.hpp"

namespace bagau {

namespace {

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ConfigError("tversky alpha must lie in (0,1), got " + std::to_string(alpha));
    }
}

template <typename T>
void check_sizes(std::span<const T> p, std::span<const T> g) {
    if (p.size() != g.size()) {
        throw std::invalid_argument("tversky: probability and mask sizes differ");
    }
}

}  // namespace

template <typename T>
TverskyCounts tversky_counts(std::span<const T> p, std::span<const T> g) {
    check_sizes(p, g);
    TverskyCounts c;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p[i];
        const double gi = g[i];
        c.tp += pi * gi;
        c.fp += pi * (1.0 - gi);
        c.fn += (1.0 - pi) * gi;
    }
    return c;
}

double tversky_index(const TverskyCounts& c, double alpha, double eps) {
    check_alpha(alpha);
    return (c.tp + eps) / (c.tp + alpha * c.fp + (1.0 - alpha) * c.fn + eps);
}

template <typename T>
double tversky_index(std::span<const T> p, std::span<const T> g, double alpha, double eps) {
    check_alpha(alpha);
    return tversky_index(tversky_counts(p, g), alpha, eps);
}

template <typename T>
double tversky_loss(std::span<const T> p, std::span<const T> g, double alpha, double eps) {
    return 1.0 - tversky_index(p, g, alpha, eps);
}

TverskyGrad tversky_loss_grad(const TverskyCounts& c, double alpha, double eps) {
    check_alpha(alpha);
    // With N = tp + eps and D = tp + a fp + (1-a) fn + eps, dN/dp_i = g_i and
    // dD/dp_i = g_i + a (1 - g_i) - (1 - a) g_i = a for either label.
    const double n = c.tp + eps;
    const double d = c.tp + alpha * c.fp + (1.0 - alpha) * c.fn + eps;
    TverskyGrad out;
    out.on_fg = -(d - n * alpha) / (d * d);
    out.on_bg = n * alpha / (d * d);
    return out;
}

template <typename T>
std::vector<T> tversky_loss_grad(std::span<const T> p, std::span<const T> g, double alpha,
                                 double eps) {
    const TverskyGrad k = tversky_loss_grad(tversky_counts(p, g), alpha, eps);
    std::vector<T> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = static_cast<T>(k.at(g[i]));
    }
    return out;
}

#define BAGAU_INSTANTIATE_TVERSKY(T)                                                         \
    template TverskyCounts tversky_counts<T>(std::span<const T>, std::span<const T>);       \
    template double tversky_index<T>(std::span<const T>, std::span<const T>, double, double); \
    template double tversky_loss<T>(std::span<const T>, std::span<const T>, double, double);  \
    template std::vector<T> tversky_loss_grad<T>(std::span<const T>, std::span<const T>,    \
                                                 double, double);

BAGAU_INSTANTIATE_TVERSKY(float)
BAGAU_INSTANTIATE_TVERSKY(double)

}  // namespace bagau
