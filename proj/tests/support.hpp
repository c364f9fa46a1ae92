#pragma once

// Test-only helpers: random tensors and a central finite-difference oracle
// that never touches the backward closures it is used to check.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "bagau/graph.hpp"
#include "bagau/ops.hpp"

namespace bagau::testing {

using nn::Graph;
using nn::Shape4;
using nn::Tensor;
using nn::Var;

inline Tensor<double> random_tensor(Shape4 s, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<double> t(s);
    for (auto& v : t.vec()) {
        v = d(rng);
    }
    return t;
}

/// Builds the scalar objective from leaf variables (one per input tensor).
using Objective = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    int checked = 0;
};

inline double evaluate(const Objective& f, const std::vector<Tensor<double>>& inputs) {
    Graph<double> g(false);
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
        leaves.push_back(g.input(t));
    }
    return g.value(f(g, leaves))[0];
}

/// Compares analytic gradients with central differences on up to
/// `max_per_tensor` coordinates of every input. Relative error uses
/// |a - n| / max(|a|, |n|, floor_frac * max|a| over the tensor), so
/// coordinates whose true gradient is ~0 are judged against the tensor's
/// gradient scale rather than against rounding noise.
inline GradCheckResult grad_check(const Objective& f, std::vector<Tensor<double>> inputs,
                                  double step = 1e-6, int max_per_tensor = 40,
                                  double floor_frac = 1e-3, std::uint64_t seed = 7) {
    std::vector<Tensor<double>> grads;
    {
        Graph<double> g(true);
        std::vector<Var> leaves;
        for (const auto& t : inputs) {
            grads.emplace_back(t.shape());
        }
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            leaves.push_back(g.parameter(inputs[i], &grads[i]));
        }
        const Var out = f(g, leaves);
        g.backward(out, Tensor<double>(Shape4{1, 1, 1, 1}, 1.0));
    }
    GradCheckResult r;
    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const std::size_t n = inputs[t].numel();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            idx[i] = i;
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min<std::size_t>(n, max_per_tensor));
        double scale = 1e-12;
        for (double v : grads[t].vec()) {
            scale = std::max(scale, std::abs(v));
        }
        const double floor = floor_frac * scale;
        for (std::size_t i : idx) {
            const double orig = inputs[t][i];
            inputs[t][i] = orig + step;
            const double up = evaluate(f, inputs);
            inputs[t][i] = orig - step;
            const double down = evaluate(f, inputs);
            inputs[t][i] = orig;
            const double numeric = (up - down) / (2 * step);
            const double analytic = grads[t][i];
            const double abs_err = std::abs(numeric - analytic);
            const double rel =
                abs_err / std::max({std::abs(numeric), std::abs(analytic), floor});
            r.max_abs_error = std::max(r.max_abs_error, abs_err);
            r.max_rel_error = std::max(r.max_rel_error, rel);
            ++r.checked;
        }
    }
    return r;
}

/// Directional check: analytic <grad, v> against the central difference of f
/// along a random unit-scale direction v spanning every input at once.
inline double directional_rel_error(const Objective& f, std::vector<Tensor<double>> inputs,
                                    double step = 1e-6, std::uint64_t seed = 11) {
    std::vector<Tensor<double>> grads;
    {
        Graph<double> g(true);
        std::vector<Var> leaves;
        for (const auto& t : inputs) {
            grads.emplace_back(t.shape());
        }
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            leaves.push_back(g.parameter(inputs[i], &grads[i]));
        }
        g.backward(f(g, leaves), Tensor<double>(Shape4{1, 1, 1, 1}, 1.0));
    }
    std::mt19937_64 rng(seed);
    std::vector<Tensor<double>> dir;
    double analytic = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        dir.push_back(random_tensor(inputs[t].shape(), rng));
        for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
            analytic += grads[t][i] * dir[t][i];
        }
    }
    auto shifted = [&](double h) {
        std::vector<Tensor<double>> moved = inputs;
        for (std::size_t t = 0; t < inputs.size(); ++t) {
            for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
                moved[t][i] += h * dir[t][i];
            }
        }
        return evaluate(f, moved);
    };
    const double numeric = (shifted(step) - shifted(-step)) / (2 * step);
    return std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-12});
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("bagau_test_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace bagau::testing
