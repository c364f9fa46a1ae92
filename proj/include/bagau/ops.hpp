#pragma once

#include <utility>
#include <vector>

#include "bagau/graph.hpp"

namespace bagau::nn {

/// Stride-1 "same" convolution. `w` is (Cout, Cin, k, k) with odd k; `b` is
/// (1, Cout, 1, 1) or invalid for no bias.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b);

struct BatchNormOptions {
    bool training = true;
    double momentum = 0.1;
    double eps = 1e-5;
    /// Samples per normalization group in training mode; 0 = whole batch.
    int group = 0;
};

/// Per-channel batch normalization over (N, H, W). The running statistics
/// are (1, C, 1, 1) and only read in eval mode. In training mode, when
/// `stats_update` is non-null its two tensors (mean, var) are moved toward
/// each group's batch statistics in place, one momentum step per group,
/// using the unbiased variance.
template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, const Tensor<T>& running_mean,
               const Tensor<T>& running_var, const BatchNormOptions& opt,
               std::pair<Tensor<T>*, Tensor<T>*> stats_update = {nullptr, nullptr});

template <typename T>
Var relu(Graph<T>& g, Var x);

template <typename T>
Var sigmoid(Graph<T>& g, Var x);

/// 2x2 max pooling, stride 2. Ties resolve to the first element in raster order.
template <typename T>
Var max_pool2(Graph<T>& g, Var x);

/// 2x bilinear upsampling with half-pixel centers (align_corners = false).
template <typename T>
Var upsample_bilinear2(Graph<T>& g, Var x);

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

/// x (N,C,h,w) times a per-pixel map (N,1,h,w).
template <typename T>
Var mul_spatial(Graph<T>& g, Var x, Var alpha);

/// x (N,C,h,w) times per-channel weights (N,C,1,1).
template <typename T>
Var mul_channel(Graph<T>& g, Var x, Var weights);

/// (N,C,h,w) -> (N,C,1,1).
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x);

/// sum(x * weights); `weights` has the shape of x. Returns a (1,1,1,1) node.
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights);

}  // namespace bagau::nn
