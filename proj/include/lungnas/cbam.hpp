#pragma once

#include <string>
#include <vector>

#include "lungnas/layers.hpp"

namespace lungnas {

enum class CbamOrder { ChannelFirst, SpatialFirst };

const char* to_string(CbamOrder order);
CbamOrder parse_cbam_order(const std::string& text);

/// Channel + spatial attention over a (B, C, D, H, W) feature map.
///
/// The channel MLP (C -> hidden -> C, ReLU after the first layer) is shared by
/// the average- and max-pooled branches. The spatial gate is a single-output
/// cubic convolution over the concatenated channel-mean and channel-max maps.
struct CbamBlock {
    Index channels = 0;
    Index reduction = 4;
    CbamOrder order = CbamOrder::ChannelFirst;
    DenseLayer mlp_hidden;
    DenseLayer mlp_out;
    Conv3dLayer spatial_conv;

    CbamBlock() = default;
    CbamBlock(const std::string& name, Index channels, Rng& rng, CbamOrder order = CbamOrder::ChannelFirst,
              Index reduction = 4, Index spatial_kernel = 7);

    /// max(ceil(C / r), 1)
    static Index hidden_width(Index channels, Index reduction);
    /// Trainable scalar count of a block with these settings.
    static Index parameter_count(Index channels, Index reduction = 4, Index spatial_kernel = 7);

    Index hidden() const { return mlp_hidden.weight.value.dim(0); }
    void collect(std::vector<Parameter*>& out);
    std::vector<Parameter*> parameters();
};

/// sigmoid(MLP(AvgPool(F)) + MLP(MaxPool(F))), shape (B, C, 1, 1, 1).
Tensor channel_attention(const Tensor& features, const CbamBlock& block);

/// sigmoid(Conv([mean_c(F); max_c(F)])), shape (B, 1, D, H, W).
Tensor spatial_attention(const Tensor& features, const CbamBlock& block);

/// Applies both gates in the block's order. When `spatial_map` is non-null it
/// receives the spatial gate that was applied.
Tensor cbam_apply(const Tensor& features, const CbamBlock& block, Tensor* spatial_map = nullptr);

}  // namespace lungnas
