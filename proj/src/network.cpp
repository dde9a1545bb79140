#include "lungnas/network.hpp"

#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lungnas {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Index conv_params(Index in, Index out, Index k) { return in * out * k * k * k + out; }
Index bn_params(Index c) { return 2 * c; }

}  // namespace

std::string NetConfig::to_text() const {
    std::ostringstream out;
    out << "input=" << input_size << ";channels=" << input_channels << ";stem=" << stem_channels
        << ";cbam=" << (cbam ? 1 : 0) << ";cbam_order=" << to_string(cbam_order) << ";reduction=" << cbam_reduction
        << ";cbam_kernel=" << cbam_kernel << ";loss=" << to_string(loss) << ";m=" << margin
        << ";lambda0=" << fmt_double(lambda.initial) << ";lambda_min=" << fmt_double(lambda.minimum)
        << ";lambda_decay=" << fmt_double(lambda.decay) << ";classes=" << classes << ";strides=" << stage_strides[0]
        << ',' << stage_strides[1] << ',' << stage_strides[2];
    return out.str();
}

NetConfig NetConfig::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string field;
    while (std::getline(in, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("network config: malformed field '" + field + "'");
        kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    auto take = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw std::invalid_argument(std::string("network config: missing key '") + key + "'");
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    NetConfig c;
    c.input_size = std::stol(take("input"));
    c.input_channels = std::stol(take("channels"));
    c.stem_channels = std::stol(take("stem"));
    c.cbam = take("cbam") == "1";
    c.cbam_order = parse_cbam_order(take("cbam_order"));
    c.cbam_reduction = std::stol(take("reduction"));
    c.cbam_kernel = std::stol(take("cbam_kernel"));
    c.loss = parse_loss_kind(take("loss"));
    c.margin = std::stoi(take("m"));
    c.lambda.initial = std::stod(take("lambda0"));
    c.lambda.minimum = std::stod(take("lambda_min"));
    c.lambda.decay = std::stod(take("lambda_decay"));
    c.classes = std::stol(take("classes"));
    const std::string strides = take("strides");
    if (std::sscanf(strides.c_str(), "%ld,%ld,%ld", &c.stage_strides[0], &c.stage_strides[1], &c.stage_strides[2]) != 3) {
        throw std::invalid_argument("network config: malformed strides '" + strides + "'");
    }
    if (!kv.empty()) throw std::invalid_argument("network config: unknown key '" + kv.begin()->first + "'");
    return c;
}

std::uint64_t NetConfig::digest() const { return hash_tag(to_text()); }

ResidualBlock::ResidualBlock(const std::string& name, Index in_channels, Index out_channels, Index stride, Rng& rng)
    : conv1(name + ".conv1", in_channels, out_channels, 3, stride, 1, rng),
      bn1(name + ".bn1", out_channels),
      conv2(name + ".conv2", out_channels, out_channels, 3, 1, 1, rng),
      bn2(name + ".bn2", out_channels) {
    if (in_channels != out_channels || stride != 1) {
        projection.emplace(name + ".proj", in_channels, out_channels, 1, stride, 0, rng);
        projection_bn.emplace(name + ".proj_bn", out_channels);
    }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode, bool activate) {
    Tensor h = relu(bn1.forward(conv1.forward(x), mode));
    h = bn2.forward(conv2.forward(h), mode);
    Tensor shortcut = projection ? projection_bn->forward(projection->forward(x), mode) : x;
    return activate ? relu(h + shortcut) : h + shortcut;
}

void ResidualBlock::collect(std::vector<Parameter*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
    if (projection) {
        projection->collect(out);
        projection_bn->collect(out);
    }
}

void ResidualBlock::collect_stats(std::vector<BatchNormStats*>& out) {
    out.push_back(&bn1.stats);
    out.push_back(&bn2.stats);
    if (projection_bn) out.push_back(&projection_bn->stats);
}

Network::Network(const ArchSpec& spec, const NetConfig& config, std::uint64_t seed)
    : spec_(spec), config_(config), seed_(seed) {
    Rng rng(seed);
    const Index stem = config.stem_channels;
    stem1_ = Conv3dLayer("stem1", config.input_channels, stem, 3, 1, 1, rng);
    stem1_bn_ = BatchNorm3dLayer("stem1.bn", stem);
    stem2_ = Conv3dLayer("stem2", stem, stem, 3, 1, 1, rng);
    stem2_bn_ = BatchNorm3dLayer("stem2.bn", stem);
    if (config.cbam) cbam_[0].emplace("cbam2", stem, rng, config.cbam_order, config.cbam_reduction, config.cbam_kernel);
    Index channels = stem;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& widths = spec.stages[s];
        for (std::size_t i = 0; i < widths.size(); ++i) {
            const Index stride = i == 0 ? config.stage_strides[s] : 1;
            stages_[s].emplace_back("stage" + std::to_string(s + 3) + "." + std::to_string(i), channels, widths[i],
                                    stride, rng);
            channels = widths[i];
        }
        if (config.cbam) {
            cbam_[s + 1].emplace("cbam" + std::to_string(s + 3), channels, rng, config.cbam_order,
                                 config.cbam_reduction, config.cbam_kernel);
        }
    }
    if (config.loss == LossKind::Softmax) {
        classifier_.emplace("fc", channels, config.classes, rng);
    } else {
        angular_.emplace("angular", channels, config.classes, rng, config.margin, config.lambda);
    }
}

bool Network::has_cbam(int stage) const {
    return stage >= 2 && stage <= 5 && cbam_[static_cast<std::size_t>(stage - 2)].has_value();
}

Tensor Network::features(const Tensor& input, Mode mode, AttentionTrace* trace) {
    if (input.rank() != 5 || input.dim(1) != config_.input_channels) {
        throw ShapeError("network input must be (B, " + std::to_string(config_.input_channels) + ", D, H, W), got " +
                         shape_string(input.shape()));
    }
    auto attend = [&](const Tensor& x, std::size_t slot) {
        if (!cbam_[slot]) return x;
        Tensor map;
        Tensor out = cbam_apply(x, *cbam_[slot], trace ? &map : nullptr);
        if (trace) trace->spatial[slot] = map;
        return out;
    };
    Tensor h = relu(stem1_bn_.forward(stem1_.forward(input), mode));
    h = relu(stem2_bn_.forward(stem2_.forward(h), mode));
    h = attend(h, 0);
    // The last block skips its closing ReLU: a rectified, pooled feature can be
    // exactly zero, which leaves the angular head without a direction.
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t i = 0; i < stages_[s].size(); ++i) {
            const bool last = s == 2 && i + 1 == stages_[s].size();
            h = stages_[s][i].forward(h, mode, !last);
        }
        h = attend(h, s + 1);
    }
    Tensor pooled = global_pool3d(h, PoolKind::Avg);
    return pooled.reshape({pooled.dim(0), pooled.dim(1)});
}

Tensor Network::logits(const Tensor& feats) {
    if (classifier_) return classifier_->forward(feats);
    angular_->renormalize();
    return cosine_logits(feats, angular_->weight.value);
}

Tensor Network::loss(const Tensor& feats, std::span<const int> labels, std::int64_t step) {
    if (classifier_) return softmax_ce(classifier_->forward(feats), labels);
    return asoftmax_loss(feats, labels, *angular_, step);
}

Matrix Network::predict_proba(const Tensor& input) {
    NoGradGuard guard;
    return softmax_probabilities(logits(features(input, Mode::Eval)));
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    stem1_.collect(out);
    stem1_bn_.collect(out);
    stem2_.collect(out);
    stem2_bn_.collect(out);
    if (cbam_[0]) cbam_[0]->collect(out);
    for (std::size_t s = 0; s < 3; ++s) {
        for (auto& block : stages_[s]) block.collect(out);
        if (cbam_[s + 1]) cbam_[s + 1]->collect(out);
    }
    if (classifier_) classifier_->collect(out);
    if (angular_) angular_->collect(out);
    return out;
}

std::vector<BatchNormStats*> Network::batch_norm_stats() {
    std::vector<BatchNormStats*> out{&stem1_bn_.stats, &stem2_bn_.stats};
    for (auto& stage : stages_)
        for (auto& block : stage) block.collect_stats(out);
    return out;
}

Index Network::parameter_count() const {
    Index n = 0;
    for (const Parameter* p : const_cast<Network*>(this)->parameters()) n += p->size();
    return n;
}

Network build_network(const ArchSpec& spec, const NetConfig& config, std::uint64_t seed,
                      const SpaceConstraints& constraints) {
    validate_spec(spec, constraints);
    return Network(spec, config, seed);
}

Index count_params(const Network& network) { return network.parameter_count(); }

Index count_params(const ArchSpec& spec, const NetConfig& config) {
    const Index stem = config.stem_channels;
    Index n = conv_params(config.input_channels, stem, 3) + bn_params(stem) + conv_params(stem, stem, 3) + bn_params(stem);
    if (config.cbam) n += CbamBlock::parameter_count(stem, config.cbam_reduction, config.cbam_kernel);
    Index channels = stem;
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t i = 0; i < spec.stages[s].size(); ++i) {
            const Index out = spec.stages[s][i];
            const Index stride = i == 0 ? config.stage_strides[s] : 1;
            n += conv_params(channels, out, 3) + bn_params(out) + conv_params(out, out, 3) + bn_params(out);
            if (channels != out || stride != 1) n += conv_params(channels, out, 1) + bn_params(out);
            channels = out;
        }
        if (config.cbam) n += CbamBlock::parameter_count(channels, config.cbam_reduction, config.cbam_kernel);
    }
    n += config.loss == LossKind::Softmax ? channels * config.classes + config.classes : channels * config.classes;
    return n;
}

double count_macs(const ArchSpec& spec, const NetConfig& config) {
    const auto extents = stage_extents(config);
    auto volume = [](Index e) { return static_cast<double>(e) * static_cast<double>(e) * static_cast<double>(e); };
    auto conv = [](Index in, Index out, Index k, double vol) {
        return static_cast<double>(in * out * k * k * k) * vol;
    };
    const Index stem = config.stem_channels;
    const double full = volume(config.input_size);
    double n = conv(config.input_channels, stem, 3, full) + conv(stem, stem, 3, full);
    if (config.cbam) n += conv(2, 1, config.cbam_kernel, full);
    Index channels = stem;
    for (std::size_t s = 0; s < 3; ++s) {
        const double vol = volume(extents[s + 1]);
        for (std::size_t i = 0; i < spec.stages[s].size(); ++i) {
            const Index out = spec.stages[s][i];
            const Index stride = i == 0 ? config.stage_strides[s] : 1;
            n += conv(channels, out, 3, vol) + conv(out, out, 3, vol);
            if (channels != out || stride != 1) n += conv(channels, out, 1, vol);
            channels = out;
        }
        if (config.cbam) n += conv(2, 1, config.cbam_kernel, vol);
    }
    return n;
}

Tensor extract_features(Network& network, const Tensor& input) {
    NoGradGuard guard;
    return network.features(input, Mode::Eval);
}

std::array<Index, 4> stage_extents(const NetConfig& config) {
    std::array<Index, 4> out{};
    Index extent = config.input_size;
    for (std::size_t s = 0; s < 3; ++s) {
        out[s] = extent;
        extent = (extent + 2 - 3) / config.stage_strides[s] + 1;
    }
    out[3] = extent;
    return out;
}

}  // namespace lungnas
