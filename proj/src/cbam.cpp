#include "lungnas/cbam.hpp"

#include <stdexcept>

namespace lungnas {

const char* to_string(CbamOrder order) {
    return order == CbamOrder::ChannelFirst ? "channel-first" : "spatial-first";
}

CbamOrder parse_cbam_order(const std::string& text) {
    if (text == "channel-first") return CbamOrder::ChannelFirst;
    if (text == "spatial-first") return CbamOrder::SpatialFirst;
    throw std::invalid_argument("unknown CBAM order '" + text + "' (expected channel-first or spatial-first)");
}

Index CbamBlock::hidden_width(Index channels, Index reduction) {
    return std::max<Index>((channels + reduction - 1) / reduction, 1);
}

Index CbamBlock::parameter_count(Index channels, Index reduction, Index spatial_kernel) {
    const Index hidden = hidden_width(channels, reduction);
    const Index mlp = (channels * hidden + hidden) + (hidden * channels + channels);
    const Index conv = 2 * spatial_kernel * spatial_kernel * spatial_kernel + 1;
    return mlp + conv;
}

CbamBlock::CbamBlock(const std::string& name, Index channels_, Rng& rng, CbamOrder order_, Index reduction_,
                     Index spatial_kernel)
    : channels(channels_),
      reduction(reduction_),
      order(order_),
      mlp_hidden(name + ".mlp.0", channels_, hidden_width(channels_, reduction_), rng),
      mlp_out(name + ".mlp.1", hidden_width(channels_, reduction_), channels_, rng),
      spatial_conv(name + ".spatial", 2, 1, spatial_kernel, 1, spatial_kernel / 2, rng) {
    if (reduction_ < 1) throw std::invalid_argument("CBAM reduction must be >= 1");
    if (spatial_kernel % 2 == 0) throw std::invalid_argument("CBAM spatial kernel must be odd");
}

void CbamBlock::collect(std::vector<Parameter*>& out) {
    mlp_hidden.collect(out);
    mlp_out.collect(out);
    spatial_conv.collect(out);
}

std::vector<Parameter*> CbamBlock::parameters() {
    std::vector<Parameter*> out;
    collect(out);
    return out;
}

Tensor channel_attention(const Tensor& features, const CbamBlock& block) {
    if (features.rank() != 5 || features.dim(1) != block.channels) {
        throw ShapeError("channel_attention: expected " + std::to_string(block.channels) + " channels, got " +
                         shape_string(features.shape()));
    }
    const Index batch = features.dim(0), c = features.dim(1);
    auto mlp = [&](const Tensor& pooled) {
        return block.mlp_out.forward(relu(block.mlp_hidden.forward(pooled.reshape({batch, c}))));
    };
    Tensor logits = mlp(global_pool3d(features, PoolKind::Avg)) + mlp(global_pool3d(features, PoolKind::Max));
    return sigmoid(logits).reshape({batch, c, 1, 1, 1});
}

Tensor spatial_attention(const Tensor& features, const CbamBlock& block) {
    if (features.rank() != 5) throw ShapeError("spatial_attention: expected rank-5 input");
    Tensor pooled = concat_channels(channel_pool(features, PoolKind::Avg), channel_pool(features, PoolKind::Max));
    return sigmoid(block.spatial_conv.forward(pooled));
}

Tensor cbam_apply(const Tensor& features, const CbamBlock& block, Tensor* spatial_map) {
    if (block.order == CbamOrder::ChannelFirst) {
        Tensor refined = mul_broadcast(features, channel_attention(features, block));
        Tensor gate = spatial_attention(refined, block);
        if (spatial_map) *spatial_map = gate;
        return mul_broadcast(refined, gate);
    }
    Tensor gate = spatial_attention(features, block);
    if (spatial_map) *spatial_map = gate;
    Tensor refined = mul_broadcast(features, gate);
    return mul_broadcast(refined, channel_attention(refined, block));
}

}  // namespace lungnas
