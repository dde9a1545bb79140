#include "lungnas/layers.hpp"

#include <cmath>

namespace lungnas {

Tensor he_normal(Shape shape, Index fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(std::max<Index>(fan_in, 1)));
    for (Index i = 0; i < t.size(); ++i) t[i] = std_dev * rng.normal();
    return t;
}

Conv3dLayer::Conv3dLayer(const std::string& name, Index in_channels, Index out_channels, Index kernel,
                         Index stride_, Index padding_, Rng& rng)
    : weight(name + ".weight",
             he_normal({out_channels, in_channels, kernel, kernel, kernel}, in_channels * kernel * kernel * kernel, rng)),
      bias(name + ".bias", Tensor::zeros({out_channels})),
      stride(stride_),
      padding(padding_) {}

BatchNorm3dLayer::BatchNorm3dLayer(const std::string& name, Index channels)
    : gamma(name + ".gamma", Tensor::constant({channels}, 1.0)),
      beta(name + ".beta", Tensor::zeros({channels})),
      stats(channels) {}

DenseLayer::DenseLayer(const std::string& name, Index in_features, Index out_features, Rng& rng)
    : weight(name + ".weight", he_normal({out_features, in_features}, in_features, rng)),
      bias(name + ".bias", Tensor::zeros({out_features})) {}

}  // namespace lungnas
