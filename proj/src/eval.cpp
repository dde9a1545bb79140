#include "lungnas/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lungnas/binary_io.hpp"
#include "lungnas/train.hpp"

namespace lungnas {

ConfusionCounts ConfusionCounts::from(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("label and prediction counts differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if ((t != 0 && t != 1) || (p != 0 && p != 1)) throw std::invalid_argument("labels must be 0 or 1");
        if (t == 1) (p == 1 ? c.tp : c.fn) += 1;
        else (p == 1 ? c.fp : c.tn) += 1;
    }
    return c;
}

namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metrics confusion_metrics(const ConfusionCounts& c) {
    if (c.tp < 0 || c.fn < 0 || c.fp < 0 || c.tn < 0) throw std::invalid_argument("negative confusion count");
    Metrics m;
    m.accuracy = ratio(c.tp + c.tn, c.total());
    m.sensitivity = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.fp + c.tn);
    m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    return m;
}

std::string format_metric(const std::optional<double>& value) {
    if (!value) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *value);
    return buf;
}

std::vector<int> threshold_labels(std::span<const double> probabilities) {
    std::vector<int> out;
    out.reserve(probabilities.size());
    for (double p : probabilities) out.push_back(threshold_label(p));
    return out;
}

int majority_vote(std::span<const int> member_labels) {
    const auto positives = std::count(member_labels.begin(), member_labels.end(), 1);
    return positives > static_cast<std::ptrdiff_t>(member_labels.size() / 2) ? 1 : 0;
}

EnsembleModel::EnsembleModel(std::vector<Network> members) : members_(std::move(members)) {
    if (members_.empty() || members_.size() % 2 == 0)
        throw std::invalid_argument("ensemble size must be odd, got " + std::to_string(members_.size()));
}

EnsemblePrediction ensemble_predict(EnsembleModel& ensemble, const VolumeSample& volume) {
    EnsemblePrediction out;
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
        const double p = predict_probabilities(ensemble.member(m), std::span(&volume, 1))[0];
        out.member_probs.push_back(p);
        out.member_labels.push_back(threshold_label(p));
    }
    out.label = majority_vote(out.member_labels);
    return out;
}

std::vector<int> ensemble_labels(EnsembleModel& ensemble, std::span<const VolumeSample> samples) {
    std::vector<std::vector<int>> votes;
    for (std::size_t m = 0; m < ensemble.size(); ++m)
        votes.push_back(threshold_labels(predict_probabilities(ensemble.member(m), samples)));
    std::vector<int> out;
    std::vector<int> column(ensemble.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t m = 0; m < ensemble.size(); ++m) column[m] = votes[m][i];
        out.push_back(majority_vote(column));
    }
    return out;
}

std::vector<SweepRow> ensemble_sweep(const std::vector<std::vector<double>>& member_probs, std::span<const int> labels,
                                     std::span<const int> sizes, int repeats, std::uint64_t seed) {
    if (repeats < 1) throw std::invalid_argument("ensemble_sweep needs repeats >= 1");
    for (const auto& p : member_probs)
        if (p.size() != labels.size()) throw std::invalid_argument("member prediction count differs from label count");
    for (int n : sizes) {
        if (n < 1 || n % 2 == 0) throw std::invalid_argument("ensemble size " + std::to_string(n) + " is not odd");
        if (static_cast<std::size_t>(n) > member_probs.size())
            throw std::invalid_argument("pool of " + std::to_string(member_probs.size()) + " is too small for n = " +
                                        std::to_string(n));
    }
    std::vector<std::vector<int>> votes;
    for (const auto& p : member_probs) votes.push_back(threshold_labels(p));

    const Rng root(seed);
    std::vector<SweepRow> rows;
    for (int n : sizes) {
        Rng rng = root.split(static_cast<std::uint64_t>(n));
        std::array<double, 4> sum{};
        std::array<int, 4> defined{};
        std::vector<std::size_t> pool(member_probs.size());
        std::vector<int> column(static_cast<std::size_t>(n)), predicted(labels.size());
        for (int r = 0; r < repeats; ++r) {
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            rng.shuffle(pool.begin(), pool.end());
            for (std::size_t i = 0; i < labels.size(); ++i) {
                for (int k = 0; k < n; ++k) column[static_cast<std::size_t>(k)] = votes[pool[static_cast<std::size_t>(k)]][i];
                predicted[i] = majority_vote(column);
            }
            const Metrics m = confusion_metrics(ConfusionCounts::from(labels, predicted));
            const std::array<std::optional<double>, 4> vals{m.accuracy, m.sensitivity, m.specificity, m.f1};
            for (std::size_t j = 0; j < 4; ++j)
                if (vals[j]) {
                    sum[j] += *vals[j];
                    ++defined[j];
                }
        }
        SweepRow row;
        row.size = n;
        row.repeats = repeats;
        auto mean = [&](std::size_t j) -> std::optional<double> {
            if (defined[j] == 0) return std::nullopt;
            return sum[j] / defined[j];
        };
        row.mean = {mean(0), mean(1), mean(2), mean(3)};
        rows.push_back(row);
    }
    return rows;
}

void FeatureSet::add(const Vector& feature, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("feature label must be 0 or 1");
    by_class[static_cast<std::size_t>(label)].push_back(feature);
}

DbiResult dbi_from_parts(double s0, double s1, double m01) {
    if (!(m01 > 0.0)) throw std::domain_error("DBI undefined: class centroids coincide");
    return {s0, s1, m01, (s0 + s1) / m01};
}

DbiResult dbi(const FeatureSet& f) {
    if (f.by_class[0].empty() || f.by_class[1].empty()) throw std::invalid_argument("DBI needs both classes non-empty");
    const Index dim = f.by_class[0][0].size();
    std::array<Vector, 2> centroid;
    std::array<double, 2> spread{};
    for (std::size_t c = 0; c < 2; ++c) {
        centroid[c] = Vector::Zero(dim);
        for (const Vector& v : f.by_class[c]) {
            if (v.size() != dim) throw std::invalid_argument("DBI features have different lengths");
            centroid[c] += v;
        }
        centroid[c] /= static_cast<double>(f.by_class[c].size());
        for (const Vector& v : f.by_class[c]) spread[c] += (v - centroid[c]).norm();
        spread[c] /= static_cast<double>(f.by_class[c].size());
    }
    return dbi_from_parts(spread[0], spread[1], (centroid[0] - centroid[1]).norm());
}

FeatureSet collect_features(Network& network, std::span<const VolumeSample> samples, int batch) {
    FeatureSet out;
    const auto step = static_cast<std::size_t>(std::max(batch, 1));
    for (std::size_t start = 0; start < samples.size(); start += step) {
        std::vector<const VolumeSample*> chunk;
        for (std::size_t i = start; i < std::min(samples.size(), start + step); ++i) chunk.push_back(&samples[i]);
        const Tensor feats = extract_features(network, stack_volumes(chunk));
        const Index width = feats.dim(1);
        for (std::size_t r = 0; r < chunk.size(); ++r)
            out.add(feats.data().segment(static_cast<Index>(r) * width, width), chunk[r]->label);
    }
    return out;
}

namespace {

void write_pgm(const std::filesystem::path& path, Index width, Index height, const std::vector<std::uint8_t>& pixels) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::uint8_t> min_max_bytes(const std::vector<double>& values) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    std::vector<std::uint8_t> out(values.size(), 0);
    if (*hi > *lo) {
        for (std::size_t i = 0; i < values.size(); ++i)
            out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
    }
    return out;
}

}  // namespace

AttentionExport export_attention_slice(Network& network, const VolumeSample& volume, int stage,
                                       std::optional<Index> slice, const std::filesystem::path& out_pgm) {
    if (stage < 2 || stage > 5) throw std::invalid_argument("attention stage must be 2..5, got " + std::to_string(stage));
    if (!network.has_cbam(stage))
        throw std::invalid_argument("stage " + std::to_string(stage) + " has no CBAM block");
    AttentionTrace trace;
    {
        NoGradGuard guard;
        const VolumeSample* one = &volume;
        network.features(stack_volumes(std::span(&one, 1)), Mode::Eval, &trace);
    }
    const Tensor& map = *trace.at_stage(stage);  // (1, 1, D, H, W)
    const Index d = map.dim(2), h = map.dim(3), w = map.dim(4);
    const Index k = slice.value_or(d / 2);
    if (k < 0 || k >= d)
        throw std::out_of_range("slice " + std::to_string(k) + " outside 0.." + std::to_string(d - 1));

    AttentionExport out;
    out.height = h;
    out.width = w;
    out.slice = k;
    out.values.assign(map.data().data() + k * h * w, map.data().data() + (k + 1) * h * w);
    out.map_pgm = out_pgm;
    out.map_values = std::filesystem::path(out_pgm).replace_extension(".txt");
    out.input_pgm = out_pgm.parent_path() / (out_pgm.stem().string() + "_input.pgm");

    write_pgm(out.map_pgm, w, h, min_max_bytes(out.values));
    {
        std::ofstream txt(out.map_values, std::ios::trunc);
        txt << "# stage " << stage << " slice " << k << " of " << d << ", " << h << " rows x " << w << " cols\n";
        char buf[32];
        for (Index y = 0; y < h; ++y) {
            for (Index x = 0; x < w; ++x) {
                std::snprintf(buf, sizeof buf, "%.17g", out.values[static_cast<std::size_t>(y * w + x)]);
                txt << (x ? " " : "") << buf;
            }
            txt << "\n";
        }
        if (!txt) throw std::runtime_error("cannot write " + out.map_values.string());
    }
    // Input slice through the centre of the map slice's depth range.
    const Index in_d = volume.extents[0], in_h = volume.extents[1], in_w = volume.extents[2];
    const Index factor = in_d / d;
    const Index z = std::min(in_d - 1, k * factor + factor / 2);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(in_h * in_w));
    for (Index i = 0; i < in_h * in_w; ++i) {
        const double v = volume.voxels[static_cast<std::size_t>(z * in_h * in_w + i)];
        pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    }
    write_pgm(out.input_pgm, in_w, in_h, pixels);
    return out;
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    int maxval = 0;
    GrayImage img;
    if (!(in >> magic >> img.width >> img.height >> maxval) || magic != "P5" || maxval != 255)
        throw FormatError(path.string() + ": not an 8-bit binary PGM");
    in.get();
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw FormatError(path.string() + ": truncated");
    return img;
}

std::string format_metrics_block(const std::string& name, const ConfusionCounts& c, const Metrics& m) {
    std::ostringstream out;
    out << "[" << name << "]\n";
    out << "tp = " << c.tp << "\nfn = " << c.fn << "\nfp = " << c.fp << "\ntn = " << c.tn << "\n";
    out << "accuracy = " << format_metric(m.accuracy) << "\n";
    out << "sensitivity = " << format_metric(m.sensitivity) << "\n";
    out << "specificity = " << format_metric(m.specificity) << "\n";
    out << "f1 = " << format_metric(m.f1) << "\n";
    return out.str();
}

}  // namespace lungnas
