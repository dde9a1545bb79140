#include "lungnas/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "lungnas/checkpoint.hpp"
#include "lungnas/config.hpp"
#include "lungnas/data.hpp"
#include "lungnas/eval.hpp"
#include "lungnas/pop.hpp"
#include "lungnas/rng.hpp"
#include "lungnas/train.hpp"

namespace lungnas::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string dashed(std::string name) {
    std::replace(name.begin(), name.end(), '_', '-');
    return name;
}

std::string fixed(double v, int digits = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// Command-line state shared by every subcommand.
struct Invocation {
    std::string out_dir;
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::pair<CLI::Option*, std::string>> setting_flags;
    std::map<std::string, std::string> setting_values;
    std::vector<std::string> specs;
    std::vector<std::string> checkpoints;
};

struct Context {
    RunConfig cfg;
    fs::path dir;
    std::ostream& out;
    std::ostream& err;

    Rng root() const { return Rng(cfg.seed); }
    fs::path reports() const { return dir / "reports"; }
    fs::path checkpoints() const { return dir / "checkpoints"; }
};

RunConfig resolve_config(const Invocation& inv) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : inv.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [opt, name] : inv.setting_flags)
        if (opt->count() > 0) overrides.emplace_back(name, inv.setting_values.at(name));
    return inv.config_path.empty() ? load_config(overrides) : load_config(inv.config_path, overrides);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

void echo_config(const Context& ctx, const std::string& command) {
    write_text(ctx.reports() / (command + ".conf"),
               "# effective settings of `" + command + "`\n" + ctx.cfg.to_text());
}

struct Split {
    std::vector<VolumeSample> train, val, test;
};

Split load_split(const Context& ctx) {
    const fs::path manifest_path = ctx.dir / "manifest";
    if (!fs::exists(manifest_path)) throw std::runtime_error("no manifest in " + ctx.dir.string() + "; run gen-data first");
    const DatasetManifest m = DatasetManifest::load(manifest_path);
    if (ctx.cfg.test_fold >= m.folds || ctx.cfg.val_fold >= m.folds)
        throw ConfigError("test_fold/val_fold: manifest has only " + std::to_string(m.folds) + " folds");
    const std::vector<VolumeSample> all = load_samples(m, ctx.dir);
    const int test_fold[] = {ctx.cfg.test_fold};
    const int val_fold[] = {ctx.cfg.val_fold};
    const int both[] = {ctx.cfg.test_fold, ctx.cfg.val_fold};
    Split s;
    for (std::size_t i : m.indices_outside_folds(both)) s.train.push_back(all[i]);
    for (std::size_t i : m.indices_in_folds(val_fold)) s.val.push_back(all[i]);
    for (std::size_t i : m.indices_in_folds(test_fold)) s.test.push_back(all[i]);
    if (s.train.empty() || s.val.empty() || s.test.empty())
        throw std::runtime_error("dataset split left an empty train, validation or test set");
    return s;
}

std::string spec_slug(const ArchSpec& spec) {
    std::string out;
    for (std::size_t s = 0; s < 3; ++s) {
        if (s) out += '_';
        for (std::size_t i = 0; i < spec.stages[s].size(); ++i) out += (i ? "-" : "") + std::to_string(spec.stages[s][i]);
    }
    return out;
}

struct Model {
    std::string name;
    fs::path path;
    Network network;
};

std::vector<Model> load_models(const Context& ctx, const std::vector<std::string>& explicit_paths) {
    std::vector<fs::path> paths;
    for (const auto& p : explicit_paths) paths.emplace_back(p);
    if (paths.empty()) {
        if (!fs::is_directory(ctx.checkpoints()))
            throw std::runtime_error("no checkpoints in " + ctx.checkpoints().string() + "; run train first");
        for (const auto& entry : fs::directory_iterator(ctx.checkpoints()))
            if (entry.path().extension() == ".nlw") paths.push_back(entry.path());
        std::sort(paths.begin(), paths.end());
    }
    if (paths.empty()) throw std::runtime_error("no checkpoints found");
    std::vector<Model> models;
    for (const auto& p : paths) models.push_back({p.stem().string(), p, load_checkpoint(p)});
    return models;
}

double model_latency(const RunConfig& cfg, Network& net, int warmup, int reps) {
    if (cfg.latency == LatencySource::Estimated) return count_macs(net.spec(), net.config()) / 1e6;
    const Index n = net.config().input_size;
    return measure_latency(net, {1, 1, n, n, n}, warmup, reps);
}

Metrics metrics_of(std::span<const int> truth, std::span<const int> predicted, ConfusionCounts* counts = nullptr) {
    const ConfusionCounts c = ConfusionCounts::from(truth, predicted);
    if (counts) *counts = c;
    return confusion_metrics(c);
}

// ------------------------------------------------------------------ gen-data

int run_gen_data(const Context& ctx) {
    fs::create_directories(ctx.dir);
    echo_config(ctx, "gen-data");
    const DatasetManifest m =
        generate_dataset(ctx.dir, ctx.cfg.samples, ctx.root().split("data").seed(), NoduleParams{}, ctx.cfg.folds);
    ctx.out << "wrote " << m.entries.size() << " volumes and " << (ctx.dir / "manifest").string() << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ search

int run_search(const Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.dir);
    echo_config(ctx, "search");
    const Split split = load_split(ctx);
    const NetConfig net = cfg.search_net_config();
    std::vector<ArchSpec> universe = enumerate_space(cfg.space());

    const fs::path log_path = ctx.dir / "search.log";
    std::vector<TrainedRecord> prior;
    for (auto& r : read_search_log(log_path)) {
        if (std::find(universe.begin(), universe.end(), r.spec) != universe.end() &&
            std::none_of(prior.begin(), prior.end(), [&](const TrainedRecord& p) { return p.spec == r.spec; }))
            prior.push_back(std::move(r));
        else
            ctx.err << "search.log: skipping " << format_spec(r.spec) << " (outside the space or repeated)\n";
    }
    if (!prior.empty()) ctx.out << "resuming with " << prior.size() << " logged evaluations\n";

    const std::uint64_t search_seed = ctx.root().split("search").seed();
    Evaluator evaluate = [&](const ArchSpec& spec, std::uint64_t seed) {
        TrainConfig tc;
        tc.epochs = cfg.search_epochs;
        tc.batch = cfg.batch;
        tc.adam = cfg.adam();
        tc.augment = cfg.augment;
        tc.seed = seed;
        TrainResult r = train_model(spec, net, split.train, split.val, tc);
        return Evaluation{r.best_val_accuracy, model_latency(cfg, r.network, cfg.latency_warmup, cfg.latency_reps)};
    };
    PopOptions opt;
    opt.budget = static_cast<std::size_t>(cfg.budget);
    opt.patience = static_cast<std::size_t>(cfg.patience);
    opt.workers = static_cast<std::size_t>(cfg.workers);
    opt.seed = search_seed;
    opt.policy = cfg.policy == "random" ? random_order(search_seed) : smallest_params_first();
    opt.params = [net](const ArchSpec& spec) { return count_params(spec, net); };
    const std::size_t already = prior.size();
    std::size_t seen = 0;
    opt.on_record = [&](const TrainedRecord& r) {
        if (seen++ < already) return;
        append_search_log(log_path, r);
        ctx.out << "evaluated " << format_spec(r.spec) << "  accuracy " << fixed(r.accuracy, 4) << "  latency "
                << fixed(r.latency_ms, 3) << " ms  params " << r.params << std::endl;
    };
    const SearchResult result = pop_search(std::move(universe), evaluate, opt, prior);

    std::ostringstream rep;
    rep << "[search]\nuniverse = " << result.state.universe().size() << "\nevaluated = " << result.state.trained().size()
        << "\nnew_evaluations = " << result.evaluations << "\npruned = " << result.state.pruned_count()
        << "\nprune_events = " << result.prune_events << "\nstopped_by_patience = " << (result.stopped_by_patience ? 1 : 0)
        << "\n\n[frontier]\n";
    for (const auto& r : result.state.frontier())
        rep << format_spec(r.spec) << " accuracy=" << fixed(r.accuracy, 4) << " latency_ms=" << fixed(r.latency_ms, 4)
            << " params=" << r.params << "\n";
    write_text(ctx.reports() / "search.txt", rep.str());
    ctx.out << rep.str();
    return kExitOk;
}

// ------------------------------------------------------------------ train

std::vector<ArchSpec> select_from_log(const Context& ctx) {
    const auto records = read_search_log(ctx.dir / "search.log");
    if (records.empty()) throw std::runtime_error("search.log is empty or missing; run search first or pass --spec");
    auto better = [](const TrainedRecord& a, const TrainedRecord& b) {
        if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
        if (a.latency_ms != b.latency_ms) return a.latency_ms < b.latency_ms;
        return a.spec < b.spec;
    };
    std::vector<TrainedRecord> frontier = pareto_frontier(records);
    std::vector<TrainedRecord> rest;
    for (const auto& r : records)
        if (std::none_of(frontier.begin(), frontier.end(), [&](const TrainedRecord& f) { return f.spec == r.spec; }))
            rest.push_back(r);
    std::sort(frontier.begin(), frontier.end(), better);
    std::sort(rest.begin(), rest.end(), better);
    frontier.insert(frontier.end(), rest.begin(), rest.end());
    std::vector<ArchSpec> out;
    for (const auto& r : frontier) {
        if (ctx.cfg.max_latency_ms > 0.0 && r.latency_ms > ctx.cfg.max_latency_ms) continue;
        if (std::find(out.begin(), out.end(), r.spec) != out.end()) continue;
        out.push_back(r.spec);
        if (out.size() == static_cast<std::size_t>(ctx.cfg.top_k)) break;
    }
    if (out.empty()) throw std::runtime_error("no searched model satisfies max_latency_ms");
    return out;
}

int run_train(const Context& ctx, const Invocation& inv) {
    const RunConfig& cfg = ctx.cfg;
    fs::create_directories(ctx.checkpoints());
    echo_config(ctx, "train");
    std::vector<ArchSpec> specs;
    for (const auto& text : inv.specs) specs.push_back(parse_spec(text, cfg.space()));
    if (specs.empty()) specs = select_from_log(ctx);
    const Split split = load_split(ctx);
    const NetConfig net = cfg.net_config();
    const Rng train_root = ctx.root().split("train");

    std::ostringstream summary;
    summary << "[train]\nmodels = " << specs.size() << "\n";
    for (const ArchSpec& spec : specs) {
        const std::string name = "arch-" + spec_slug(spec);
        ctx.out << "training " << format_spec(spec) << " -> " << name << ".nlw" << std::endl;
        TrainConfig tc;
        tc.epochs = cfg.epochs;
        tc.batch = cfg.batch;
        tc.adam = cfg.adam();
        tc.augment = cfg.augment;
        tc.seed = train_root.split(format_spec(spec)).seed();
        tc.checkpoint = ctx.checkpoints() / (name + ".nlw");
        std::ostringstream history;
        history << "# epoch loss train_accuracy val_accuracy\n";
        tc.on_epoch = [&](const EpochStats& s) {
            history << s.epoch << " " << fixed(s.loss) << " " << fixed(s.train_accuracy) << " " << fixed(s.val_accuracy) << "\n";
            ctx.out << "  epoch " << s.epoch << "  loss " << fixed(s.loss, 4) << "  train " << fixed(s.train_accuracy, 3)
                    << "  val " << fixed(s.val_accuracy, 3) << std::endl;
        };
        TrainResult r = train_model(spec, net, split.train, split.val, tc);
        ConfusionCounts counts;
        const Metrics m = metrics_of(labels_of(split.val), threshold_labels(predict_probabilities(r.network, split.val)), &counts);
        std::ostringstream rep;
        rep << "spec = " << format_spec(spec) << "\nparams = " << count_params(r.network) << "\nseed = " << tc.seed
            << "\nbest_epoch = " << r.best_epoch << "\n"
            << format_metrics_block("validation", counts, m) << "\n[history]\n"
            << history.str();
        write_text(ctx.reports() / ("train-" + name + ".txt"), rep.str());
        summary << name << " spec=" << format_spec(spec) << " best_epoch=" << r.best_epoch
                << " val_accuracy=" << format_metric(m.accuracy) << " val_f1=" << format_metric(m.f1) << "\n";
    }
    write_text(ctx.reports() / "train.txt", summary.str());
    ctx.out << summary.str();
    return kExitOk;
}

// ------------------------------------------------------------------ eval

int run_eval(const Context& ctx, const Invocation& inv) {
    echo_config(ctx, "eval");
    const Split split = load_split(ctx);
    auto models = load_models(ctx, inv.checkpoints);
    const auto truth = labels_of(split.test);
    std::ostringstream rep;
    for (auto& model : models) {
        ConfusionCounts c;
        const Metrics m = metrics_of(truth, threshold_labels(predict_probabilities(model.network, split.test)), &c);
        rep << format_metrics_block(model.name, c, m) << "\n";
    }
    write_text(ctx.reports() / "eval.txt", rep.str());
    ctx.out << rep.str();
    return kExitOk;
}

// ------------------------------------------------------------------ ensemble

int run_ensemble(const Context& ctx, const Invocation& inv) {
    const RunConfig& cfg = ctx.cfg;
    echo_config(ctx, "ensemble");
    const Split split = load_split(ctx);
    std::vector<std::string> paths = inv.checkpoints;
    for (const auto& name : cfg.members)
        paths.push_back((ctx.checkpoints() / (fs::path(name).extension() == ".nlw" ? name : name + ".nlw")).string());
    auto pool = load_models(ctx, paths);
    const bool chosen = !paths.empty();

    struct Candidate {
        std::size_t index;
        double val_f1, latency;
    };
    std::vector<Candidate> candidates;
    const auto val_truth = labels_of(split.val);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const Metrics m = metrics_of(val_truth, threshold_labels(predict_probabilities(pool[i].network, split.val)));
        candidates.push_back({i, m.f1.value_or(0.0), model_latency(cfg, pool[i].network, cfg.bench_warmup, cfg.bench_reps)});
    }
    std::vector<std::size_t> members;
    if (chosen) {
        for (const auto& c : candidates) members.push_back(c.index);
    } else {
        std::vector<Candidate> eligible;
        for (const auto& c : candidates)
            if (cfg.max_latency_ms <= 0.0 || c.latency <= cfg.max_latency_ms) eligible.push_back(c);
        std::stable_sort(eligible.begin(), eligible.end(),
                         [](const Candidate& a, const Candidate& b) { return a.val_f1 > b.val_f1; });
        if (eligible.size() < static_cast<std::size_t>(cfg.ensemble_size))
            throw std::runtime_error("ensemble_size " + std::to_string(cfg.ensemble_size) + " exceeds the " +
                                     std::to_string(eligible.size()) + " eligible checkpoints");
        for (int k = 0; k < cfg.ensemble_size; ++k) members.push_back(eligible[static_cast<std::size_t>(k)].index);
    }
    if (members.size() % 2 == 0) throw UsageError("an ensemble needs an odd number of members");

    const auto truth = labels_of(split.test);
    std::vector<std::vector<int>> votes;
    std::ostringstream rep;
    rep << "[ensemble]\nsize = " << members.size() << "\nmembers =";
    for (std::size_t i : members) rep << " " << pool[i].name;
    rep << "\n\n";
    for (std::size_t i : members) {
        votes.push_back(threshold_labels(predict_probabilities(pool[i].network, split.test)));
        ConfusionCounts c;
        const Metrics m = metrics_of(truth, votes.back(), &c);
        rep << format_metrics_block("member " + pool[i].name, c, m) << "val_f1 = " << fixed(candidates[i].val_f1)
            << "\nlatency_ms = " << fixed(candidates[i].latency, 4) << "\n\n";
    }
    std::vector<int> predicted(truth.size());
    std::vector<int> column(votes.size());
    for (std::size_t s = 0; s < truth.size(); ++s) {
        for (std::size_t k = 0; k < votes.size(); ++k) column[k] = votes[k][s];
        predicted[s] = majority_vote(column);
    }
    ConfusionCounts c;
    const Metrics m = metrics_of(truth, predicted, &c);
    rep << format_metrics_block("ensemble", c, m);
    write_text(ctx.reports() / "ensemble.txt", rep.str());
    ctx.out << rep.str();
    return kExitOk;
}

// ------------------------------------------------------------------ sweep

int run_sweep(const Context& ctx, const Invocation& inv) {
    const RunConfig& cfg = ctx.cfg;
    echo_config(ctx, "sweep");
    const Split split = load_split(ctx);
    auto pool = load_models(ctx, inv.checkpoints);
    std::vector<std::vector<double>> probs;
    for (auto& model : pool) probs.push_back(predict_probabilities(model.network, split.test));
    const auto truth = labels_of(split.test);
    const auto rows = ensemble_sweep(probs, truth, cfg.sweep_sizes, cfg.sweep_repeats, ctx.root().split("sweep").seed());
    std::ostringstream rep;
    rep << "# pool " << pool.size() << ", " << cfg.sweep_repeats << " random subsets per size\n"
        << "# n accuracy sensitivity specificity f1\n";
    for (const auto& r : rows)
        rep << r.size << " " << format_metric(r.mean.accuracy) << " " << format_metric(r.mean.sensitivity) << " "
            << format_metric(r.mean.specificity) << " " << format_metric(r.mean.f1) << "\n";
    write_text(ctx.reports() / "sweep.txt", rep.str());
    ctx.out << rep.str();
    return kExitOk;
}

// ------------------------------------------------------------------ dbi

int run_dbi(const Context& ctx, const Invocation& inv) {
    echo_config(ctx, "dbi");
    const Split split = load_split(ctx);
    auto models = load_models(ctx, inv.checkpoints);
    std::ostringstream rep;
    for (auto& model : models) {
        rep << "[" << model.name << "]\nloss = " << to_string(model.network.config().loss) << "\n";
        try {
            const DbiResult r = dbi(collect_features(model.network, split.test));
            rep << "s0 = " << fixed(r.s0) << "\ns1 = " << fixed(r.s1) << "\nm01 = " << fixed(r.m01)
                << "\ndbi = " << fixed(r.dbi) << "\n\n";
        } catch (const std::domain_error& e) {
            rep << "dbi = undefined\n# " << e.what() << "\n\n";
        }
    }
    write_text(ctx.reports() / "dbi.txt", rep.str());
    ctx.out << rep.str();
    return kExitOk;
}

// ------------------------------------------------------------------ export-attention

int run_export_attention(const Context& ctx, const Invocation& inv) {
    const RunConfig& cfg = ctx.cfg;
    echo_config(ctx, "export-attention");
    const Split split = load_split(ctx);
    const VolumeSample* sample = nullptr;
    for (const auto* set : {&split.test, &split.val, &split.train})
        for (const auto& s : *set)
            if (!sample && (cfg.attention_sample.empty() ? (set == &split.test && s.label == 1) : s.id == cfg.attention_sample))
                sample = &s;
    if (!sample) throw std::runtime_error("sample '" + cfg.attention_sample + "' not found");
    auto models = load_models(ctx, inv.checkpoints);
    const fs::path dir = ctx.dir / "attention";
    fs::create_directories(dir);
    const std::optional<Index> slice =
        cfg.attention_slice < 0 ? std::nullopt : std::optional<Index>(Index{cfg.attention_slice});
    for (auto& model : models) {
        const fs::path pgm = dir / (model.name + "_" + sample->id + "_stage" + std::to_string(cfg.attention_stage) + ".pgm");
        const AttentionExport e = export_attention_slice(model.network, *sample, cfg.attention_stage, slice, pgm);
        ctx.out << "wrote " << e.map_pgm.string() << " (" << e.width << "x" << e.height << ", slice " << e.slice << "), "
                << e.map_values.filename().string() << ", " << e.input_pgm.filename().string() << "\n";
    }
    return kExitOk;
}

// ------------------------------------------------------------------ bench

int run_bench(const Context& ctx, const Invocation& inv) {
    const RunConfig& cfg = ctx.cfg;
    std::vector<Model> models;
    for (const auto& text : inv.specs) {
        const ArchSpec spec = parse_spec(text, cfg.space());
        models.push_back({format_spec(spec), {}, build_network(spec, cfg.net_config(), ctx.root().split("bench").seed(), cfg.space())});
    }
    if (models.empty()) models = load_models(ctx, inv.checkpoints);
    std::ostringstream rep;
    rep << "# model params mmacs latency_ms (median of " << cfg.bench_reps << ")\n";
    for (auto& model : models) {
        const Index n = model.network.config().input_size;
        const double ms = measure_latency(model.network, {1, 1, n, n, n}, cfg.bench_warmup, cfg.bench_reps);
        rep << model.name << " " << count_params(model.network) << " "
            << fixed(count_macs(model.network.spec(), model.network.config()) / 1e6, 3) << " " << fixed(ms, 3) << "\n";
    }
    if (!ctx.dir.empty()) {
        echo_config(ctx, "bench");
        write_text(ctx.reports() / "bench.txt", rep.str());
    }
    ctx.out << rep.str();
    return kExitOk;
}

std::string settings_help() {
    std::ostringstream os;
    os << "\nSettings (every subcommand; also `key = value` lines in a --config file):\n";
    for (const auto& k : config_keys()) {
        std::string flag = "  --" + dashed(k.name);
        if (k.name == "samples") flag += ", --n";
        os << std::left << std::setw(26) << flag << k.help << "\n";
    }
    os << "Command-line settings override the config file; --set key=value is equivalent.\n";
    return os.str();
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lung nodule classification with partial-order-pruned architecture search", "lungnas"};
    app.require_subcommand(1, 1);
    app.footer(settings_help());

    Invocation inv;
    struct Command {
        const char* name;
        const char* help;
        bool needs_out;
    };
    const Command commands[] = {
        {"gen-data", "write synthetic volumes and a stratified manifest", true},
        {"search", "partial-order-pruned architecture search (resumes from search.log)", true},
        {"train", "train the best searched models, or --spec, and save checkpoints", true},
        {"eval", "score checkpoints on the held-out fold", true},
        {"ensemble", "majority-vote ensemble on the held-out fold", true},
        {"sweep", "mean metrics of random ensembles per size", true},
        {"dbi", "Davies-Bouldin index of penultimate features", true},
        {"export-attention", "write a spatial-attention slice as PGM", true},
        {"bench", "median single-volume inference latency", false},
    };
    std::map<std::string, CLI::App*> subs;
    const auto& keys = config_keys();
    for (const auto& key : keys) inv.setting_values[key.name];
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        auto* out_opt = sub->add_option("--out", inv.out_dir, "run directory (manifest, search.log, checkpoints/, reports/, attention/)");
        if (c.needs_out) out_opt->required();
        sub->add_option("--config", inv.config_path, "key = value settings file")->check(CLI::ExistingFile);
        sub->add_option("--set", inv.sets, "override one setting, key=value");
        for (const auto& key : keys) {
            std::string names = "--" + dashed(key.name);
            if (key.name == "samples") names += ",--n";
            inv.setting_flags.emplace_back(sub->add_option(names, inv.setting_values[key.name], key.help)->group(""),
                                           key.name);
        }
        const std::string n = c.name;
        if (n == "train" || n == "bench")
            sub->add_option("--spec", inv.specs, "architecture, e.g. [[4],[8],[8,16]]")->allow_extra_args(false);
        if (n == "eval" || n == "ensemble" || n == "sweep" || n == "dbi" || n == "export-attention" || n == "bench")
            sub->add_option("--checkpoint", inv.checkpoints, "checkpoint file (default: every file in checkpoints/)");
        subs[n] = sub;
    }

    if (!args.empty() && !args.front().starts_with("-") && !subs.contains(args.front())) {
        err << "lungnas: unknown subcommand '" << args.front() << "'\n";
        err << "run `lungnas --help` for usage\n";
        return kExitUsage;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const bool top = app.get_subcommands().empty();
        out << (top ? app.help("", CLI::AppFormatMode::All) : app.help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "lungnas: " << e.what() << "\n";
        err << "run `lungnas --help` for usage\n";
        return kExitUsage;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        RunConfig cfg = resolve_config(inv);
        Context ctx{std::move(cfg), fs::path(inv.out_dir), out, err};
        if (command == "gen-data") return run_gen_data(ctx);
        if (command == "search") return run_search(ctx);
        if (command == "train") return run_train(ctx, inv);
        if (command == "eval") return run_eval(ctx, inv);
        if (command == "ensemble") return run_ensemble(ctx, inv);
        if (command == "sweep") return run_sweep(ctx, inv);
        if (command == "dbi") return run_dbi(ctx, inv);
        if (command == "export-attention") return run_export_attention(ctx, inv);
        return run_bench(ctx, inv);
    } catch (const ConfigError& e) {
        err << "lungnas " << command << ": invalid configuration: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "lungnas " << command << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const SpecError& e) {
        err << "lungnas " << command << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "lungnas " << command << ": " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace lungnas::cli
