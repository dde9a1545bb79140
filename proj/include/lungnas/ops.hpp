#pragma once

#include <optional>

#include "lungnas/tensor.hpp"

namespace lungnas {

enum class Mode { Train, Eval };
enum class PoolKind { Max, Avg };

/// 3D cross-correlation. input (B, Cin, D, H, W), weight (Cout, Cin, k, k, k),
/// bias (Cout). Output extents are floor((n + 2*padding - k) / stride) + 1.
Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              Index stride = 1, Index padding = 0);

/// Running statistics carried by a batch-norm layer between calls.
struct BatchNormStats {
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormStats(Index channels = 0)
        : running_mean(Vector::Zero(channels)), running_var(Vector::Ones(channels)) {}
};

/// Per-channel normalization over (batch, spatial). Train mode uses the biased
/// batch variance and updates `stats`; eval mode normalizes with the running
/// statistics.
Tensor batchnorm3d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   Mode mode);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);

/// Reduces every spatial position of each channel: (B, C, D, H, W) -> (B, C, 1, 1, 1).
Tensor global_pool3d(const Tensor& input, PoolKind kind);

/// Windowed cubic pooling. Max routes the gradient to the first maximal index.
Tensor pool3d(const Tensor& input, PoolKind kind, Index window, Index stride);

/// Reduces across channels at each position: (B, C, D, H, W) -> (B, 1, D, H, W).
Tensor channel_pool(const Tensor& input, PoolKind kind);

/// input (B, In), weight (Out, In), bias (Out) -> (B, Out).
Tensor dense(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias);

Tensor add(const Tensor& a, const Tensor& b);

/// Elementwise product where `gate` broadcasts over size-1 axes of `input`
/// (rank-5 only; e.g. (B, C, 1, 1, 1) or (B, 1, D, H, W)).
Tensor mul_broadcast(const Tensor& input, const Tensor& gate);

/// Concatenates two rank-5 tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// (B, ...) -> (B, prod(...)).
Tensor flatten(const Tensor& input);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }

}  // namespace lungnas
