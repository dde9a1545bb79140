#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lungnas/data.hpp"
#include "lungnas/network.hpp"
#include "lungnas/optim.hpp"

namespace lungnas {

struct TrainConfig {
    int epochs = 10;
    int batch = 16;
    AdamConfig adam;
    bool augment = true;
    std::uint64_t seed = 0;
    /// Best-validation checkpoint is written here when set.
    std::optional<std::filesystem::path> checkpoint;
    std::function<void(const struct EpochStats&)> on_epoch;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double loss = 0.0;  // mean over batches
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    Network network;  // weights of the best validation epoch
    std::vector<EpochStats> history;
    int best_epoch = 0;  // 0 = initial weights
    double best_val_accuracy = 0.0;
};

/// Non-finite loss or activations during training.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int epoch, const std::string& detail);
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

/// Adam training with augmentation; deterministic in (spec, config, data, seed).
/// Throws std::invalid_argument for empty sets and DivergenceError on blow-up.
TrainResult train_model(const ArchSpec& spec, const NetConfig& net_config, std::span<const VolumeSample> train,
                        std::span<const VolumeSample> val, const TrainConfig& config);

/// Overwrites weights and batch-norm buffers from flat vectors.
void restore_weights(Network& network, std::span<const double> weights, std::span<const double> buffers);

/// Malignancy probability per sample, eval mode.
std::vector<double> predict_probabilities(Network& network, std::span<const VolumeSample> samples, int batch = 16);
std::vector<int> labels_of(std::span<const VolumeSample> samples);

}  // namespace lungnas
