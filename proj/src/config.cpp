#include "lungnas/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace lungnas {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const std::string t = trim(text);
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || end != t.data() + t.size())
        throw ConfigError(key + ": cannot parse '" + text + "' as a number");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
    if (t == "0" || t == "false" || t == "no" || t == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<int> out;
    for (const auto& item : split_list(text)) out.push_back(parse_number<int>(key, item));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
    std::ostringstream os;
    for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
    return os.str();
}

std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
ConfigKey int_key(std::string name, std::string help, T RunConfig::*field) {
    return {name, std::move(help), [name, field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>(name, v); },
            [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

ConfigKey real_key(std::string name, std::string help, double RunConfig::*field) {
    return {name, std::move(help),
            [name, field](RunConfig& c, const std::string& v) { c.*field = parse_number<double>(name, v); },
            [field](const RunConfig& c) { return number(c.*field); }};
}

ConfigKey bool_key(std::string name, std::string help, bool RunConfig::*field) {
    return {name, std::move(help), [name, field](RunConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
            [field](const RunConfig& c) { return std::string(c.*field ? "1" : "0"); }};
}

ConfigKey text_key(std::string name, std::string help, std::string RunConfig::*field) {
    return {name, std::move(help), [field](RunConfig& c, const std::string& v) { c.*field = trim(v); },
            [field](const RunConfig& c) { return c.*field; }};
}

ConfigKey list_key(std::string name, std::string help, std::vector<int> RunConfig::*field) {
    return {name, std::move(help),
            [name, field](RunConfig& c, const std::string& v) { c.*field = parse_int_list(name, v); },
            [field](const RunConfig& c) { return join(c.*field); }};
}

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> k;
    k.push_back(int_key("seed", "root seed; every component derives its own stream", &RunConfig::seed));
    k.push_back(int_key("samples", "volumes written by gen-data", &RunConfig::samples));
    k.push_back(int_key("folds", "stratified folds in the manifest", &RunConfig::folds));
    k.push_back(int_key("test_fold", "held-out fold for eval, ensemble, sweep and dbi", &RunConfig::test_fold));
    k.push_back(int_key("val_fold", "validation fold for search and training", &RunConfig::val_fold));
    k.push_back(list_key("widths", "allowed block widths", &RunConfig::widths));
    k.push_back(int_key("min_depth", "smallest total block count", &RunConfig::min_depth));
    k.push_back(int_key("max_depth", "largest total block count", &RunConfig::max_depth));
    k.push_back(int_key("budget", "maximum search evaluations", &RunConfig::budget));
    k.push_back(int_key("patience", "stop after this many evaluations without pruning (0 = off)", &RunConfig::patience));
    k.push_back(text_key("policy", "candidate order: smallest | random", &RunConfig::policy));
    k.push_back(int_key("workers", "concurrent search evaluations", &RunConfig::workers));
    k.push_back(int_key("search_epochs", "training epochs per search candidate", &RunConfig::search_epochs));
    k.push_back({"search_net", "network trained during search: base | full",
                 [](RunConfig& c, const std::string& v) {
                     const std::string t = trim(v);
                     if (t == "base") c.search_net = NetVariant::Base;
                     else if (t == "full") c.search_net = NetVariant::Full;
                     else throw ConfigError("search_net: expected base or full, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return std::string(c.search_net == NetVariant::Base ? "base" : "full"); }});
    k.push_back({"latency", "latency source: measured | estimated (MAC count at 1 GMAC/s)",
                 [](RunConfig& c, const std::string& v) {
                     const std::string t = trim(v);
                     if (t == "measured") c.latency = LatencySource::Measured;
                     else if (t == "estimated") c.latency = LatencySource::Estimated;
                     else throw ConfigError("latency: expected measured or estimated, got '" + v + "'");
                 },
                 [](const RunConfig& c) {
                     return std::string(c.latency == LatencySource::Measured ? "measured" : "estimated");
                 }});
    k.push_back(int_key("latency_warmup", "discarded forward passes before timing", &RunConfig::latency_warmup));
    k.push_back(int_key("latency_reps", "timed forward passes (median reported)", &RunConfig::latency_reps));
    k.push_back(real_key("lr", "Adam learning rate", &RunConfig::lr));
    k.push_back(real_key("beta1", "Adam first-moment decay", &RunConfig::beta1));
    k.push_back(real_key("beta2", "Adam second-moment decay", &RunConfig::beta2));
    k.push_back(int_key("epochs", "final training epochs", &RunConfig::epochs));
    k.push_back(int_key("batch", "mini-batch size", &RunConfig::batch));
    k.push_back(bool_key("augment", "pad-crop-flip augmentation", &RunConfig::augment));
    k.push_back(int_key("top_k", "searched models trained by `train`", &RunConfig::top_k));
    k.push_back(real_key("max_latency_ms", "latency cap for model selection (0 = none)", &RunConfig::max_latency_ms));
    k.push_back(bool_key("cbam", "attention blocks after stages 2-5", &RunConfig::cbam));
    k.push_back({"cbam_order", "channel-first | spatial-first",
                 [](RunConfig& c, const std::string& v) {
                     try {
                         c.cbam_order = parse_cbam_order(trim(v));
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("cbam_order: ") + e.what());
                     }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.cbam_order)); }});
    k.push_back(int_key("reduction", "channel-attention reduction ratio", &RunConfig::reduction));
    k.push_back(int_key("cbam_kernel", "spatial-attention kernel size (odd)", &RunConfig::cbam_kernel));
    k.push_back({"loss", "softmax | asoftmax",
                 [](RunConfig& c, const std::string& v) {
                     try {
                         c.loss = parse_loss_kind(trim(v));
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("loss: ") + e.what());
                     }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.loss)); }});
    k.push_back(int_key("m", "angular margin", &RunConfig::m));
    k.push_back(real_key("lambda_initial", "A-Softmax blend weight at step 0", &RunConfig::lambda_initial));
    k.push_back(real_key("lambda_min", "A-Softmax blend weight floor", &RunConfig::lambda_min));
    k.push_back(real_key("lambda_decay", "A-Softmax blend weight decay rate", &RunConfig::lambda_decay));
    k.push_back(int_key("ensemble_size", "members voting in `ensemble` (odd)", &RunConfig::ensemble_size));
    k.push_back({"members", "comma-separated checkpoint names; empty picks the best by validation F1",
                 [](RunConfig& c, const std::string& v) { c.members = split_list(v); },
                 [](const RunConfig& c) { return join(c.members); }});
    k.push_back(list_key("sweep_sizes", "ensemble sizes for `sweep` (odd)", &RunConfig::sweep_sizes));
    k.push_back(int_key("sweep_repeats", "random subsets per sweep size", &RunConfig::sweep_repeats));
    k.push_back(int_key("attention_stage", "stage 2-5 exported by export-attention", &RunConfig::attention_stage));
    k.push_back(int_key("attention_slice", "axial slice to export (-1 = middle)", &RunConfig::attention_slice));
    k.push_back(text_key("attention_sample", "sample id to export (empty = first held-out malignant)",
                         &RunConfig::attention_sample));
    k.push_back(int_key("bench_warmup", "discarded passes in `bench`", &RunConfig::bench_warmup));
    k.push_back(int_key("bench_reps", "timed passes in `bench`", &RunConfig::bench_reps));
    return k;
}

void require(bool ok, const std::string& field, const std::string& rule) {
    if (!ok) throw ConfigError(field + ": " + rule);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    const auto& keys = config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
    if (it == keys.end()) throw ConfigError("unknown key '" + key + "'");
    it->set(config, value);
}

SpaceConstraints RunConfig::space() const {
    SpaceConstraints s;
    s.widths = widths;
    s.min_total = min_depth;
    s.max_total = max_depth;
    return s;
}

NetConfig RunConfig::net_config() const {
    NetConfig c;
    c.cbam = cbam;
    c.cbam_order = cbam_order;
    c.cbam_reduction = reduction;
    c.cbam_kernel = cbam_kernel;
    c.loss = loss;
    c.margin = m;
    c.lambda.initial = lambda_initial;
    c.lambda.minimum = lambda_min;
    c.lambda.decay = lambda_decay;
    return c;
}

NetConfig RunConfig::search_net_config() const {
    NetConfig c = net_config();
    if (search_net == NetVariant::Base) {
        c.cbam = false;
        c.loss = LossKind::Softmax;
    }
    return c;
}

AdamConfig RunConfig::adam() const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = beta1;
    a.beta2 = beta2;
    return a;
}

void RunConfig::validate() const {
    require(samples >= 2, "samples", "must be >= 2");
    require(folds >= 2, "folds", "must be >= 2");
    require(samples >= folds, "samples", "must be at least the fold count");
    require(test_fold >= 0 && test_fold < folds, "test_fold", "must lie in 0..folds-1");
    require(val_fold >= 0 && val_fold < folds, "val_fold", "must lie in 0..folds-1");
    require(val_fold != test_fold, "val_fold", "must differ from test_fold");
    require(!widths.empty(), "widths", "must list at least one width");
    const SpaceConstraints full;
    for (int w : widths)
        require(std::find(full.widths.begin(), full.widths.end(), w) != full.widths.end(), "widths",
                "allowed values are 4, 8, 16, 32, 64, 128");
    require(std::set<int>(widths.begin(), widths.end()).size() == widths.size(), "widths", "must not repeat");
    require(min_depth >= 3 && min_depth <= 9, "min_depth", "must lie in 3..9");
    require(max_depth >= min_depth && max_depth <= 9, "max_depth", "must lie in min_depth..9");
    require(budget >= 0, "budget", "must be >= 0");
    require(patience >= 0, "patience", "must be >= 0");
    require(policy == "smallest" || policy == "random", "policy", "must be smallest or random");
    require(workers >= 1, "workers", "must be >= 1");
    require(search_epochs >= 1, "search_epochs", "must be >= 1");
    require(latency_warmup >= 0, "latency_warmup", "must be >= 0");
    require(latency_reps >= 1, "latency_reps", "must be >= 1");
    require(lr > 0.0, "lr", "must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
    require(epochs >= 0, "epochs", "must be >= 0");
    require(batch >= 1, "batch", "must be >= 1");
    require(top_k >= 1, "top_k", "must be >= 1");
    require(max_latency_ms >= 0.0, "max_latency_ms", "must be >= 0");
    require(reduction >= 1, "reduction", "must be >= 1");
    require(cbam_kernel >= 1 && cbam_kernel % 2 == 1, "cbam_kernel", "must be odd and >= 1");
    require(m >= 1 && m <= 8, "m", "must lie in 1..8");
    require(lambda_initial >= lambda_min, "lambda_initial", "must be >= lambda_min");
    require(lambda_min >= 0.0, "lambda_min", "must be >= 0");
    require(lambda_decay >= 0.0, "lambda_decay", "must be >= 0");
    require(ensemble_size >= 1 && ensemble_size % 2 == 1, "ensemble_size", "must be odd and >= 1");
    require(members.empty() || members.size() % 2 == 1, "members", "must list an odd number of checkpoints");
    require(!sweep_sizes.empty(), "sweep_sizes", "must list at least one size");
    for (int n : sweep_sizes) require(n >= 1 && n % 2 == 1, "sweep_sizes", "sizes must be odd and >= 1");
    require(sweep_repeats >= 1, "sweep_repeats", "must be >= 1");
    require(attention_stage >= 2 && attention_stage <= 5, "attention_stage", "must lie in 2..5");
    require(attention_slice >= -1, "attention_slice", "must be >= -1");
    require(bench_warmup >= 0, "bench_warmup", "must be >= 0");
    require(bench_reps >= 1, "bench_reps", "must be >= 1");
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& k : config_keys()) os << k.name << " = " << k.get(*this) << "\n";
    return os.str();
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(number) + ": expected 'key = value', got '" + trim(line) + "'");
        const std::string key = trim(line.substr(0, eq));
        try {
            apply_setting(base, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(number) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c;
    try {
        c = parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    for (const auto& [key, value] : overrides) apply_setting(c, key, value);
    c.validate();
    return c;
}

RunConfig load_config(const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig c;
    for (const auto& [key, value] : overrides) apply_setting(c, key, value);
    c.validate();
    return c;
}

}  // namespace lungnas
