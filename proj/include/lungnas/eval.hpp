#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungnas/data.hpp"
#include "lungnas/network.hpp"

namespace lungnas {

struct ConfusionCounts {
    std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;

    std::int64_t total() const { return tp + fn + fp + tn; }
    /// Counts from binary labels and predictions of equal length.
    static ConfusionCounts from(std::span<const int> truth, std::span<const int> predicted);
};

/// Each ratio is empty when its denominator is zero.
struct Metrics {
    std::optional<double> accuracy, sensitivity, specificity, f1;
};

Metrics confusion_metrics(const ConfusionCounts& counts);
/// "undefined" for an empty ratio, otherwise a fixed 6-decimal number.
std::string format_metric(const std::optional<double>& value);

/// Label 1 iff the probability is at least 0.5.
inline int threshold_label(double p) { return p >= 0.5 ? 1 : 0; }
std::vector<int> threshold_labels(std::span<const double> probabilities);

/// Label 1 iff more than floor(n/2) of the member labels are 1.
int majority_vote(std::span<const int> member_labels);

struct EnsemblePrediction {
    int label = 0;
    std::vector<int> member_labels;
    std::vector<double> member_probs;
};

class EnsembleModel {
public:
    /// Throws std::invalid_argument for an empty or even-sized member list.
    explicit EnsembleModel(std::vector<Network> members);

    std::size_t size() const { return members_.size(); }
    Network& member(std::size_t i) { return members_.at(i); }

private:
    std::vector<Network> members_;
};

EnsemblePrediction ensemble_predict(EnsembleModel& ensemble, const VolumeSample& volume);
/// Majority-vote labels for a batch of samples, members evaluated once each.
std::vector<int> ensemble_labels(EnsembleModel& ensemble, std::span<const VolumeSample> samples);

struct SweepRow {
    int size = 0;
    int repeats = 0;
    Metrics mean;  // mean over repeats with a defined value
};

/// For each size n, averages metrics over `repeats` random n-member subsets of
/// the pool. member_probs[m][i] is member m's probability for sample i.
/// Throws std::invalid_argument if the pool is smaller than a size or a size
/// is even or non-positive.
std::vector<SweepRow> ensemble_sweep(const std::vector<std::vector<double>>& member_probs, std::span<const int> labels,
                                     std::span<const int> sizes, int repeats, std::uint64_t seed);

struct FeatureSet {
    std::array<std::vector<Vector>, 2> by_class;

    std::size_t count(int cls) const { return by_class.at(static_cast<std::size_t>(cls)).size(); }
    void add(const Vector& feature, int label);
};

struct DbiResult {
    double s0 = 0.0, s1 = 0.0, m01 = 0.0, dbi = 0.0;
};

/// Throws std::invalid_argument for an empty class or ragged vectors and
/// std::domain_error when the two centroids coincide.
DbiResult dbi(const FeatureSet& features);
DbiResult dbi_from_parts(double s0, double s1, double m01);

FeatureSet collect_features(Network& network, std::span<const VolumeSample> samples, int batch = 16);

struct AttentionExport {
    std::filesystem::path map_pgm, map_values, input_pgm;
    Index height = 0, width = 0, slice = 0;
    std::vector<double> values;  // row-major slice of the spatial gate
};

/// Writes the axial slice of the stage's spatial attention map as an 8-bit
/// P5 PGM (min-max scaled; a constant map gives all-zero pixels), a text
/// file of raw values and the matching input slice. `slice` defaults to the
/// middle slice. Throws std::invalid_argument for a stage without CBAM and
/// std::out_of_range for a bad slice.
AttentionExport export_attention_slice(Network& network, const VolumeSample& volume, int stage,
                                       std::optional<Index> slice, const std::filesystem::path& out_pgm);

/// Reads a binary PGM written by export_attention_slice.
struct GrayImage {
    Index width = 0, height = 0;
    std::vector<std::uint8_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);

/// One `[name]` block of `key = value` lines.
std::string format_metrics_block(const std::string& name, const ConfusionCounts& counts, const Metrics& metrics);

}  // namespace lungnas
