#pragma once

#include <string>
#include <vector>

#include "lungnas/ops.hpp"
#include "lungnas/optim.hpp"
#include "lungnas/rng.hpp"

namespace lungnas {

/// He-normal initialization, std = sqrt(2 / fan_in).
Tensor he_normal(Shape shape, Index fan_in, Rng& rng);

struct Conv3dLayer {
    Parameter weight;
    Parameter bias;
    Index stride = 1;
    Index padding = 0;

    Conv3dLayer() = default;
    Conv3dLayer(const std::string& name, Index in_channels, Index out_channels, Index kernel, Index stride,
                Index padding, Rng& rng);

    Tensor forward(const Tensor& x) const { return conv3d(x, weight.value, bias.value, stride, padding); }
    void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }
    Index in_channels() const { return weight.value.dim(1); }
    Index out_channels() const { return weight.value.dim(0); }
};

struct BatchNorm3dLayer {
    Parameter gamma;
    Parameter beta;
    BatchNormStats stats;

    BatchNorm3dLayer() = default;
    BatchNorm3dLayer(const std::string& name, Index channels);

    Tensor forward(const Tensor& x, Mode mode) { return batchnorm3d(x, gamma.value, beta.value, stats, mode); }
    void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&gamma, &beta}); }
};

struct DenseLayer {
    Parameter weight;  // (out, in)
    Parameter bias;

    DenseLayer() = default;
    DenseLayer(const std::string& name, Index in_features, Index out_features, Rng& rng);

    Tensor forward(const Tensor& x) const { return dense(x, weight.value, bias.value); }
    void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }
};

}  // namespace lungnas
