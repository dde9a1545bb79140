#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lungnas/arch.hpp"
#include "lungnas/network.hpp"
#include "lungnas/optim.hpp"

namespace lungnas {

enum class LatencySource { Measured, Estimated };
enum class NetVariant { Base, Full };  // base: no CBAM, plain softmax

/// Every setting of a pipeline run. Defaults are the published training setup
/// where one is known; configs/desk.conf holds the scaled-down desk settings.
struct RunConfig {
    std::uint64_t seed = 1;

    // data
    int samples = 400;
    int folds = 10;
    int test_fold = 0;
    int val_fold = 1;

    // search space and search
    std::vector<int> widths{4, 8, 16, 32, 64, 128};
    int min_depth = 3;
    int max_depth = 9;
    int budget = 20;
    int patience = 5;
    std::string policy = "smallest";  // smallest | random
    int workers = 1;
    int search_epochs = 10;
    NetVariant search_net = NetVariant::Full;
    LatencySource latency = LatencySource::Measured;
    int latency_warmup = 2;
    int latency_reps = 5;

    // training
    double lr = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int epochs = 700;
    int batch = 16;
    bool augment = true;
    int top_k = 9;
    double max_latency_ms = 0.0;  // 0 = no cap

    // network
    bool cbam = true;
    CbamOrder cbam_order = CbamOrder::ChannelFirst;
    int reduction = 4;
    int cbam_kernel = 7;
    LossKind loss = LossKind::ASoftmax;
    int m = 4;
    double lambda_initial = 1000.0;
    double lambda_min = 5.0;
    double lambda_decay = 0.12;

    // ensembles and analysis
    int ensemble_size = 9;
    std::vector<std::string> members;  // checkpoint names; empty = pick by F1
    std::vector<int> sweep_sizes{1, 3, 5, 7, 9};
    int sweep_repeats = 10;
    int attention_stage = 2;
    int attention_slice = -1;  // -1 = middle
    std::string attention_sample;  // sample id; empty = first test-fold malignant
    int bench_warmup = 3;
    int bench_reps = 20;

    SpaceConstraints space() const;
    NetConfig net_config() const;  // the trained (full) network family
    NetConfig search_net_config() const;
    AdamConfig adam() const;

    /// Throws ConfigError naming the first field outside its documented range.
    void validate() const;
    /// `key = value` lines for every field, loadable by load_config.
    std::string to_text() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

/// All recognised keys in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Applies one `key = value` assignment; throws ConfigError for an unknown
/// key or a value that does not parse.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Parses key/value text: `#` comments, blank lines, `key = value`.
/// Errors carry "line N".
RunConfig parse_config(const std::string& text, RunConfig base = {});

/// Reads the file (when given), applies overrides in order and validates.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& overrides = {});
RunConfig load_config(const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace lungnas
