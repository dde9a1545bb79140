#include "lungnas/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lungnas/checkpoint.hpp"

namespace lungnas {

DivergenceError::DivergenceError(int epoch, const std::string& detail)
    : std::runtime_error("training diverged in epoch " + std::to_string(epoch) + ": " + detail), epoch_(epoch) {}

void restore_weights(Network& network, std::span<const double> weights, std::span<const double> buffers) {
    const auto params = network.parameters();
    const auto stats = network.batch_norm_stats();
    std::size_t nw = 0, nb = 0;
    for (const Parameter* p : params) nw += static_cast<std::size_t>(p->size());
    for (const BatchNormStats* s : stats) nb += 2 * static_cast<std::size_t>(s->running_mean.size());
    if (weights.size() != nw || buffers.size() != nb)
        throw std::invalid_argument("restore_weights: sizes do not match the architecture");
    std::size_t k = 0;
    for (Parameter* p : params)
        for (Index i = 0; i < p->size(); ++i) p->value[i] = weights[k++];
    k = 0;
    for (BatchNormStats* s : stats) {
        for (Index i = 0; i < s->running_mean.size(); ++i) s->running_mean[i] = buffers[k++];
        for (Index i = 0; i < s->running_var.size(); ++i) s->running_var[i] = buffers[k++];
    }
}

std::vector<int> labels_of(std::span<const VolumeSample> samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

std::vector<double> predict_probabilities(Network& network, std::span<const VolumeSample> samples, int batch) {
    std::vector<double> out;
    out.reserve(samples.size());
    const auto step = static_cast<std::size_t>(std::max(batch, 1));
    for (std::size_t start = 0; start < samples.size(); start += step) {
        std::vector<const VolumeSample*> chunk;
        for (std::size_t i = start; i < std::min(samples.size(), start + step); ++i) chunk.push_back(&samples[i]);
        const Matrix p = network.predict_proba(stack_volumes(chunk));
        for (Index r = 0; r < p.rows(); ++r) out.push_back(p(r, 1));
    }
    return out;
}

namespace {

double accuracy_of(std::span<const double> probs, std::span<const int> labels) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) hit += ((probs[i] >= 0.5 ? 1 : 0) == labels[i]) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(probs.size());
}

}  // namespace

TrainResult train_model(const ArchSpec& spec, const NetConfig& net_config, std::span<const VolumeSample> train,
                        std::span<const VolumeSample> val, const TrainConfig& config) {
    if (train.empty() || val.empty()) throw std::invalid_argument("train_model needs non-empty train and validation sets");
    if (config.epochs < 0 || config.batch < 1) throw std::invalid_argument("train_model: epochs >= 0 and batch >= 1");
    const Rng root(config.seed);
    TrainResult result{build_network(spec, net_config, root.split("init").seed()), {}, 0, 0.0};
    Network& net = result.network;
    const auto params = net.parameters();
    const std::vector<int> val_labels = labels_of(val);

    std::vector<double> best_weights = flatten_weights(net), best_buffers = flatten_buffers(net);
    result.best_val_accuracy = -1.0;
    Rng order_rng = root.split("order");
    Rng aug_rng = root.split("augment");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::int64_t step = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
                const auto b = static_cast<Index>(end - start);
                const auto& e = train[order[start]].extents;
                const Index voxels = Index{e[0]} * e[1] * e[2];
                Tensor x({b, 1, Index{e[0]}, Index{e[1]}, Index{e[2]}});
                std::vector<int> labels;
                for (std::size_t i = start; i < end; ++i) {
                    const VolumeSample& s = train[order[i]];
                    const auto row = static_cast<Index>(i - start);
                    if (config.augment) {
                        x.data().segment(row * voxels, voxels) = augment(s, aug_rng).data();
                    } else {
                        for (Index v = 0; v < voxels; ++v) x[row * voxels + v] = s.voxels[static_cast<std::size_t>(v)];
                    }
                    labels.push_back(s.label);
                }
                Tensor feats = net.features(x, Mode::Train);
                Tensor loss = net.loss(feats, labels, step);
                const double value = loss.item();
                if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
                {
                    NoGradGuard guard;
                    const Tensor logits = net.logits(feats.detach());
                    for (Index r = 0; r < b; ++r)
                        correct += ((logits[r * 2 + 1] > logits[r * 2]) ? 1 : 0) == labels[static_cast<std::size_t>(r)];
                }
                loss.backward();
                adam_step(params, config.adam);
                ++step;
                loss_sum += value;
                ++batches;
            }
        } catch (const NumericError& err) {
            throw DivergenceError(epoch, err.what());
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / static_cast<double>(batches);
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
        const auto probs = predict_probabilities(net, val);
        for (double p : probs)
            if (!std::isfinite(p)) throw DivergenceError(epoch, "non-finite validation probability");
        stats.val_accuracy = accuracy_of(probs, val_labels);
        result.history.push_back(stats);
        if (stats.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = stats.val_accuracy;
            result.best_epoch = epoch;
            best_weights = flatten_weights(net);
            best_buffers = flatten_buffers(net);
        }
        if (config.on_epoch) config.on_epoch(stats);
    }

    restore_weights(net, best_weights, best_buffers);
    if (config.epochs == 0) result.best_val_accuracy = accuracy_of(predict_probabilities(net, val), val_labels);
    if (config.checkpoint) save_checkpoint(net, *config.checkpoint);
    return result;
}

}  // namespace lungnas
