#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungnas/arch.hpp"
#include "lungnas/cbam.hpp"
#include "lungnas/layers.hpp"
#include "lungnas/losses.hpp"

namespace lungnas {

/// Fixed (non-searched) settings of the network family.
struct NetConfig {
    Index input_size = 32;
    Index input_channels = 1;
    Index stem_channels = 4;
    bool cbam = true;
    CbamOrder cbam_order = CbamOrder::ChannelFirst;
    Index cbam_reduction = 4;
    Index cbam_kernel = 7;
    LossKind loss = LossKind::ASoftmax;
    int margin = 4;
    LambdaSchedule lambda;
    Index classes = 2;
    std::array<Index, 3> stage_strides{2, 2, 2};

    /// Canonical one-line `key=value;` form, stored in checkpoints.
    std::string to_text() const;
    static NetConfig from_text(const std::string& text);
    std::uint64_t digest() const;

    friend bool operator==(const NetConfig& a, const NetConfig& b) { return a.to_text() == b.to_text(); }
};

/// Two 3^3 conv+BN layers with a shortcut; a 1^3 conv+BN projection replaces
/// the identity when the channel count or stride changes.
struct ResidualBlock {
    Conv3dLayer conv1;
    BatchNorm3dLayer bn1;
    Conv3dLayer conv2;
    BatchNorm3dLayer bn2;
    std::optional<Conv3dLayer> projection;
    std::optional<BatchNorm3dLayer> projection_bn;

    ResidualBlock(const std::string& name, Index in_channels, Index out_channels, Index stride, Rng& rng);
    /// `activate = false` returns the residual sum without the closing ReLU.
    Tensor forward(const Tensor& x, Mode mode, bool activate = true);
    void collect(std::vector<Parameter*>& out);
    void collect_stats(std::vector<BatchNormStats*>& out);
};

/// Spatial gates captured during a forward pass, indexed by stage (2..5).
struct AttentionTrace {
    std::array<std::optional<Tensor>, 4> spatial;

    const std::optional<Tensor>& at_stage(int stage) const { return spatial.at(static_cast<std::size_t>(stage - 2)); }
};

class Network {
public:
    Network(const ArchSpec& spec, const NetConfig& config, std::uint64_t seed);

    const ArchSpec& spec() const { return spec_; }
    const NetConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    /// Penultimate features: global average pool after the last stage, (B, C_last).
    Tensor features(const Tensor& input, Mode mode, AttentionTrace* trace = nullptr);
    /// Classifier logits from features: dense layer, or ||x|| cos(theta_j) for the angular head.
    Tensor logits(const Tensor& features);
    /// Training loss for the configured head.
    Tensor loss(const Tensor& features, std::span<const int> labels, std::int64_t step);
    /// Class probabilities (B, classes) in eval mode without recording a graph.
    Matrix predict_proba(const Tensor& input);

    bool has_cbam(int stage) const;

    /// Trainable parameters in construction order.
    std::vector<Parameter*> parameters();
    std::vector<BatchNormStats*> batch_norm_stats();
    Index parameter_count() const;

private:
    ArchSpec spec_;
    NetConfig config_;
    std::uint64_t seed_;

    Conv3dLayer stem1_;
    BatchNorm3dLayer stem1_bn_;
    Conv3dLayer stem2_;
    BatchNorm3dLayer stem2_bn_;
    std::array<std::vector<ResidualBlock>, 3> stages_;
    std::array<std::optional<CbamBlock>, 4> cbam_;  // after stages 2..5
    std::optional<DenseLayer> classifier_;
    std::optional<AngularHead> angular_;
};

/// Deterministic in (spec, config, seed). Throws SpecError for an invalid spec.
Network build_network(const ArchSpec& spec, const NetConfig& config, std::uint64_t seed,
                      const SpaceConstraints& constraints = {});

/// Exact trainable scalar count of a built network.
Index count_params(const Network& network);
/// The same count derived from the architecture alone.
Index count_params(const ArchSpec& spec, const NetConfig& config);

/// Multiply-adds of a single-sample forward pass, counting convolutions.
double count_macs(const ArchSpec& spec, const NetConfig& config);

/// Eval-mode penultimate features, one row per sample.
Tensor extract_features(Network& network, const Tensor& input);

/// Spatial extent entering each stage 3..5 and leaving stage 5.
std::array<Index, 4> stage_extents(const NetConfig& config);

}  // namespace lungnas
