// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--workdir DIR] [N ...]
//
// With no numbers every criterion runs. Criteria 6-8 train real networks on
// the desk configuration and take tens of minutes on one core.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "lungnas/arch.hpp"
#include "lungnas/binary_io.hpp"
#include "lungnas/cbam.hpp"
#include "lungnas/checkpoint.hpp"
#include "lungnas/cli.hpp"
#include "lungnas/config.hpp"
#include "lungnas/data.hpp"
#include "lungnas/eval.hpp"
#include "lungnas/losses.hpp"
#include "lungnas/network.hpp"
#include "lungnas/ops.hpp"
#include "lungnas/pop.hpp"
#include "lungnas/train.hpp"
#include "support/gradcheck.hpp"
#include "support/monotone_oracle.hpp"

namespace fs = std::filesystem;
using namespace lungnas;
using lungnas::testing::gradcheck;
using lungnas::testing::random_tensor;
using lungnas::testing::separated_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

fs::path desk_config() { return fs::path(LUNGNAS_SOURCE_DIR) / "configs" / "desk.conf"; }

int run_cli(std::vector<std::string> args, std::string* err_text = nullptr) {
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    if (err_text) *err_text = err.str();
    if (code != 0) std::cerr << "  lungnas " << args.front() << " exited " << code << ": " << err.str();
    return code;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (!line.empty() && line[0] != '#') out.push_back(line);
    return out;
}

// ---------------------------------------------------------------------------
// 1. finite-difference gradients

Outcome gradients() {
    constexpr double kTol = 1e-4;
    constexpr int kInstances = 10;
    const auto t0 = Clock::now();
    Rng rng(101);
    std::map<std::string, std::pair<int, double>> worst;  // op -> (instances, max rel error)
    auto note = [&](const std::string& op, double err) {
        auto& w = worst[op];
        ++w.first;
        w.second = std::max(w.second, err);
    };

    for (int i = 0; i < kInstances; ++i) {
        const Index cin = 1 + static_cast<Index>(rng.below(3));
        const Index cout = 1 + static_cast<Index>(rng.below(3));
        const Index k = 1 + 2 * static_cast<Index>(rng.below(2));
        const Index stride = 1 + static_cast<Index>(rng.below(2));
        const Index pad = static_cast<Index>(rng.below(2));
        const Index d = 3 + static_cast<Index>(rng.below(3));
        // every other instance is wide enough for the direct kernel
        const Index w_ext = i % 2 ? 9 : d + 1;
        const Index s = i % 2 ? 1 : stride;
        Tensor x = random_tensor({1 + static_cast<Index>(rng.below(2)), cin, d, d, w_ext}, rng);
        Tensor w = random_tensor({cout, cin, k, k, k}, rng);
        Tensor b = random_tensor({cout}, rng);
        note("conv3d", gradcheck([&] { return conv3d(x, w, b, s, pad); }, {x, w, b}, rng).max_rel_error);
    }
    for (int i = 0; i < kInstances; ++i) {
        const Index c = 1 + static_cast<Index>(rng.below(3));
        Tensor x = random_tensor({2, c, 2, 3, 2}, rng, -2, 2);
        Tensor g = random_tensor({c}, rng, 0.5, 1.5);
        Tensor b = random_tensor({c}, rng);
        BatchNormStats stats(c);
        const Mode mode = i % 2 ? Mode::Eval : Mode::Train;
        note("batchnorm", gradcheck(
                              [&] {
                                  BatchNormStats scratch = stats;
                                  return batchnorm3d(x, g, b, scratch, mode);
                              },
                              {x, g, b}, rng)
                              .max_rel_error);
    }
    for (int i = 0; i < kInstances; ++i) {
        Tensor x = separated_tensor({1, 2, 2, 2, 1 + static_cast<Index>(rng.below(3))}, rng);
        note("relu", gradcheck([&] { return relu(x); }, {x}, rng).max_rel_error);
        Tensor y = random_tensor({3, 1 + static_cast<Index>(rng.below(5))}, rng, -4, 4);
        note("sigmoid", gradcheck([&] { return sigmoid(y); }, {y}, rng).max_rel_error);
    }
    for (int i = 0; i < kInstances; ++i) {
        const Shape shape{1 + static_cast<Index>(rng.below(2)), 1 + static_cast<Index>(rng.below(3)), 2, 3,
                          2 + static_cast<Index>(rng.below(3))};
        Tensor x = separated_tensor(shape, rng);
        for (PoolKind kind : {PoolKind::Avg, PoolKind::Max}) {
            const std::string tag = kind == PoolKind::Avg ? "avg" : "max";
            note("global " + tag + " pool", gradcheck([&] { return global_pool3d(x, kind); }, {x}, rng).max_rel_error);
            note(tag + " pool", gradcheck([&] { return pool3d(x, kind, 2, 1); }, {x}, rng).max_rel_error);
            note("channel " + tag + " pool", gradcheck([&] { return channel_pool(x, kind); }, {x}, rng).max_rel_error);
        }
    }
    for (int i = 0; i < kInstances; ++i) {
        Tensor x = random_tensor({1 + static_cast<Index>(rng.below(4)), 1 + static_cast<Index>(rng.below(6))}, rng);
        Tensor w = random_tensor({1 + static_cast<Index>(rng.below(4)), x.dim(1)}, rng);
        Tensor b = random_tensor({w.dim(0)}, rng);
        note("dense", gradcheck([&] { return dense(x, w, b); }, {x, w, b}, rng).max_rel_error);
    }
    for (int i = 0; i < kInstances; ++i) {
        const CbamOrder order = i % 2 ? CbamOrder::SpatialFirst : CbamOrder::ChannelFirst;
        CbamBlock block("b", 2 + static_cast<Index>(rng.below(3)), rng, order, 4, 3);
        Tensor f = separated_tensor({1, block.channels, 2, 3, 2}, rng, 0.07);
        std::vector<Tensor> inputs{f};
        for (Parameter* p : block.parameters()) inputs.push_back(p->value);
        note("cbam", gradcheck([&] { return cbam_apply(f, block); }, inputs, rng).max_rel_error);
    }
    for (int done = 0; done < kInstances;) {
        Tensor x = random_tensor({3, 4}, rng);
        AngularHead head("h", 4, 2, rng);
        head.renormalize();
        std::vector<int> labels{static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2)),
                                static_cast<int>(rng.below(2))};
        MatrixMap wm(head.weight.value.data().data(), 4, 2);
        bool near_break = false;
        for (Index r = 0; r < 3; ++r) {
            Eigen::Vector4d xi(x[r * 4], x[r * 4 + 1], x[r * 4 + 2], x[r * 4 + 3]);
            const double theta = std::acos(std::clamp(wm.col(labels[static_cast<std::size_t>(r)]).dot(xi.normalized()), -1.0, 1.0));
            for (int k = 1; k < 4; ++k) near_break = near_break || std::abs(theta - k * M_PI / 4) < 0.01;
        }
        if (near_break) continue;
        const std::int64_t step = done % 2 ? 0 : 1'000'000;  // lambda near its initial value, then at its floor
        note("asoftmax (features)",
             gradcheck([&] { return asoftmax_loss(x, labels, head, step); }, {x}, rng).max_rel_error);
        Tensor w = head.weight.value;
        const double lambda = head.schedule.at(step);
        note("asoftmax (weights)",
             gradcheck([&] { return softmax_ce(angular_margin_logits(x, w, labels, 4, lambda), labels); }, {w}, rng)
                 .max_rel_error);
        ++done;
    }

    const double elapsed = seconds_since(t0);
    bool ok = elapsed < 120.0;
    std::ostringstream d;
    for (const auto& [op, w] : worst) {
        ok = ok && w.first >= kInstances && w.second < kTol;
        d << "\n    " << op << ": " << w.first << " instances, max rel err " << std::scientific << std::setprecision(2)
          << w.second;
    }
    return {ok, fmt(elapsed, 1) + " s" + d.str()};
}

// ---------------------------------------------------------------------------
// 2. POP frontier against exhaustive training

Outcome pop_soundness() {
    Rng rng(202);
    int trials = 0, matches = 0, pruning_runs = 0, budget_ok = 0;
    std::size_t largest = 0;
    for (; trials < 120; ++trials) {
        std::vector<int> widths;
        const auto universe = lungnas::testing::random_universe(rng, 200, widths);
        largest = std::max(largest, universe.size());
        const lungnas::testing::MonotoneOracle oracle(universe, widths, rng);
        PopOptions o;
        o.budget = universe.size();
        o.patience = 0;
        o.policy = trials % 2 ? random_order(rng.next()) : smallest_params_first();
        const auto r = pop_search(universe, [&](const ArchSpec& s, std::uint64_t) { return oracle(s); }, o);
        if (lungnas::testing::frontier_specs(r.state.frontier()) ==
            lungnas::testing::frontier_specs(oracle.exhaustive(universe)))
            ++matches;
        if (r.prune_events > 0) {
            ++pruning_runs;
            if (r.evaluations < universe.size()) ++budget_ok;
        }
    }
    const bool ok = matches == trials && budget_ok == pruning_runs && pruning_runs > 0 && largest <= 200;
    return {ok, std::to_string(matches) + "/" + std::to_string(trials) + " frontiers exact, " +
                    std::to_string(budget_ok) + "/" + std::to_string(pruning_runs) +
                    " pruning runs under the universe size, largest universe " + std::to_string(largest)};
}

// ---------------------------------------------------------------------------
// 3. search-space enumeration

std::set<ArchSpec> brute_force_specs(int min_total, int max_total, const std::vector<int>& widths) {
    std::set<ArchSpec> out;
    for (int l = 0; l <= 9; ++l)
        for (int m = 0; m <= 9; ++m)
            for (int n = 0; n <= 9; ++n) {
                const int s = l + m + n;
                if (s < min_total || s > max_total) continue;
                const int lo = std::max(1, s / 4), hi = (s + 1) / 2;
                if (std::min({l, m, n}) < lo || std::max({l, m, n}) > hi) continue;
                // every width assignment as a base-|widths| counter
                std::vector<std::size_t> digit(static_cast<std::size_t>(s), 0);
                while (true) {
                    ArchSpec spec;
                    std::size_t pos = 0;
                    for (int st = 0, len[3] = {l, m, n}; st < 3; ++st)
                        for (int b = 0; b < len[st]; ++b) spec.stages[static_cast<std::size_t>(st)].push_back(widths[digit[pos++]]);
                    out.insert(spec);
                    std::size_t i = 0;
                    while (i < digit.size() && ++digit[i] == widths.size()) digit[i++] = 0;
                    if (i == digit.size()) break;
                }
            }
    return out;
}

Outcome space_completeness() {
    const std::vector<int> widths{4, 8, 16};
    int cases = 0, exact = 0;
    std::size_t biggest = 0;
    for (int lo = 3; lo <= 5; ++lo)
        for (int hi = lo; hi <= 5; ++hi) {
            SpaceConstraints c;
            c.widths = widths;
            c.min_total = lo;
            c.max_total = hi;
            const auto got = enumerate_space(c);
            const std::set<ArchSpec> got_set(got.begin(), got.end());
            ++cases;
            if (got_set.size() == got.size() && got_set == brute_force_specs(lo, hi, widths)) ++exact;
            biggest = std::max(biggest, got.size());
        }
    SpaceConstraints three;
    three.min_total = three.max_total = 3;
    const auto triples = depth_triples(three);
    const bool sum3 = triples.size() == 1 && triples[0] == std::array<int, 3>{1, 1, 1};
    return {exact == cases && sum3, std::to_string(exact) + "/" + std::to_string(cases) +
                                        " depth windows identical to brute force (up to " + std::to_string(biggest) +
                                        " specs); total 3 gives " + (sum3 ? "only (1,1,1)" : "something else")};
}

// ---------------------------------------------------------------------------
// 4. metric identities

Outcome metric_identities() {
    const Metrics m = confusion_metrics({8, 2, 1, 9});
    const bool hand = m.accuracy && m.sensitivity && m.specificity && m.f1 && std::abs(*m.accuracy - 0.85) < 1e-9 &&
                      std::abs(*m.sensitivity - 0.8) < 1e-9 && std::abs(*m.specificity - 0.9) < 1e-9 &&
                      std::abs(*m.f1 - 16.0 / 19.0) < 1e-9 && std::abs(*m.f1 - 0.8421) < 5e-5;
    Rng rng(404);
    int agree = 0, checked = 0;
    for (int i = 0; i < 1000; ++i) {
        const ConfusionCounts c{static_cast<std::int64_t>(rng.below(50)), static_cast<std::int64_t>(rng.below(50)),
                                static_cast<std::int64_t>(rng.below(50)), static_cast<std::int64_t>(rng.below(50))};
        const Metrics r = confusion_metrics(c);
        ++checked;
        const double precision_den = static_cast<double>(c.tp + c.fp);
        if (c.tp == 0) {
            // harmonic mean of a zero recall or precision is zero or undefined
            if (!r.f1 || *r.f1 == 0.0) ++agree;
            continue;
        }
        const double p = static_cast<double>(c.tp) / precision_den;
        const double rec = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
        if (r.f1 && std::abs(*r.f1 - 2.0 * p * rec / (p + rec)) < 1e-12) ++agree;
    }
    return {hand && agree == checked,
            std::string("hand example ") + (hand ? "matches" : "differs") + ", harmonic mean holds on " +
                std::to_string(agree) + "/" + std::to_string(checked) + " random counts"};
}

// ---------------------------------------------------------------------------
// 5. Davies-Bouldin index

Outcome dbi_check() {
    const DbiResult table = dbi_from_parts(0.565, 0.515, 0.470);
    const bool arithmetic = std::abs(table.dbi - 2.298) < 5e-3;
    Rng rng(505);
    int invariant = 0;
    constexpr int kTrials = 50;
    for (int t = 0; t < kTrials; ++t) {
        const Index dim = 2 + static_cast<Index>(rng.below(6));
        FeatureSet set, moved;
        Eigen::MatrixXd a(dim, dim);
        for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
        Vector shift(dim);
        for (Index i = 0; i < dim; ++i) shift[i] = rng.uniform(-10, 10);
        for (int cls = 0; cls < 2; ++cls)
            for (int n = 0; n < 5 + static_cast<int>(rng.below(10)); ++n) {
                Vector v(dim);
                for (Index i = 0; i < dim; ++i) v[i] = rng.normal() + (cls ? 3.0 : 0.0);
                set.add(v, cls);
                moved.add(q * v + shift, cls);
            }
        if (std::abs(dbi(set).dbi - dbi(moved).dbi) < 1e-9 * std::max(1.0, dbi(set).dbi)) ++invariant;
    }
    return {arithmetic && invariant == kTrials, "(0.565+0.515)/0.470 = " + fmt(table.dbi) +
                                                    ", unchanged under rotation+translation in " +
                                                    std::to_string(invariant) + "/" + std::to_string(kTrials)};
}

// ---------------------------------------------------------------------------
// 6. desk-scale pipeline

std::optional<double> ensemble_accuracy(const fs::path& report) {
    std::optional<double> acc;
    for (const auto& line : lines_of(slurp(report)))
        if (line.rfind("accuracy = ", 0) == 0) {
            try {
                acc = std::stod(line.substr(11));
            } catch (const std::exception&) {
                acc.reset();
            }
        }
    return acc;  // the ensemble block comes last
}

bool same_dataset(const fs::path& a, const fs::path& b) {
    if (slurp(a / "manifest") != slurp(b / "manifest")) return false;
    const auto manifest = DatasetManifest::load(a / "manifest");
    for (const auto& e : manifest.entries)
        if (slurp(a / e.path) != slurp(b / e.path)) return false;
    return true;
}

Outcome desk_pipeline(const fs::path& work) {
    const fs::path run = work / "desk";
    fs::remove_all(run);
    const std::string conf = desk_config().string();
    const RunConfig cfg = load_config(desk_config());

    const auto t0 = Clock::now();
    for (const char* step : {"gen-data", "search", "train", "ensemble"}) {
        const auto ts = Clock::now();
        if (run_cli({step, "--out", run.string(), "--config", conf}) != 0)
            return {false, std::string(step) + " failed"};
        std::cerr << "  " << step << " " << fmt(seconds_since(ts), 0) << " s\n";
    }
    const double elapsed = seconds_since(t0);
    const auto acc = ensemble_accuracy(run / "reports" / "ensemble.txt");

    // reproducibility: regenerate, replay a search prefix and retrain a model
    const fs::path again = work / "desk-replay";
    fs::remove_all(again);
    bool data_same = run_cli({"gen-data", "--out", again.string(), "--config", conf}) == 0 && same_dataset(run, again);
    // search.log lines end with a wall-clock timestamp
    auto without_time = [](std::vector<std::string> lines) {
        for (auto& l : lines) l = l.substr(0, l.rfind(' '));
        return lines;
    };
    const auto full_log = without_time(lines_of(slurp(run / "search.log")));
    constexpr int kPrefix = 3;
    bool search_same = run_cli({"search", "--out", again.string(), "--config", conf, "--set",
                                "budget=" + std::to_string(kPrefix)}) == 0;
    const auto prefix_log = without_time(lines_of(slurp(again / "search.log")));
    search_same = search_same && prefix_log.size() == kPrefix && full_log.size() >= kPrefix &&
                  std::equal(prefix_log.begin(), prefix_log.end(), full_log.begin());
    bool train_same = true;
    std::string spec_text;
    for (const auto& entry : fs::directory_iterator(run / "checkpoints")) {
        spec_text = format_spec(load_checkpoint(entry.path()).spec());
        break;
    }
    std::vector<std::string> ckpts;
    for (int attempt = 0; attempt < 2; ++attempt) {
        fs::remove_all(again / "checkpoints");
        train_same = train_same && run_cli({"train", "--out", again.string(), "--config", conf, "--spec", spec_text,
                                            "--set", "epochs=2"}) == 0;
        for (const auto& entry : fs::directory_iterator(again / "checkpoints")) ckpts.push_back(slurp(entry.path()));
    }
    train_same = train_same && ckpts.size() == 2 && ckpts[0] == ckpts[1] && !ckpts[0].empty();

    const bool ok = acc && *acc >= 0.90 && elapsed < 1800.0 && data_same && search_same && train_same;
    std::ostringstream d;
    d << "ensemble of " << cfg.ensemble_size << " held-out accuracy " << (acc ? fmt(*acc) : "missing") << ", "
      << fmt(elapsed / 60.0, 1) << " min on one core; replay: data " << (data_same ? "identical" : "differs")
      << ", search prefix " << (search_same ? "identical" : "differs") << ", 2-epoch " << spec_text
      << " checkpoint " << (train_same ? "identical" : "differs");
    return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 7 and 8. ablation and ensemble sweep on one pool of trained models

struct PoolModel {
    std::string variant;
    std::uint64_t seed = 0;
    double val_f1 = 0.0;
    double val_dbi = std::nan("");
    std::vector<double> test_probs;
};

struct ModelPool {
    std::vector<PoolModel> models;
    std::vector<int> test_labels;
    std::string spec;
    int epochs = 0;
};

double f1_or_zero(std::span<const int> truth, std::span<const double> probs) {
    const auto predicted = threshold_labels(probs);
    const auto m = confusion_metrics(ConfusionCounts::from(truth, predicted));
    return m.f1.value_or(0.0);
}

const ModelPool& model_pool(const fs::path& work) {
    static std::optional<ModelPool> cache;
    if (cache) return *cache;
    cache.emplace();
    ModelPool& pool = *cache;

    const RunConfig cfg = load_config(desk_config());
    const fs::path data_dir = work / "ablation-data";
    if (!fs::exists(data_dir / "manifest"))
        run_cli({"gen-data", "--out", data_dir.string(), "--config", desk_config().string()});
    const auto manifest = DatasetManifest::load(data_dir / "manifest");
    const auto all = load_samples(manifest, data_dir);
    const int held[] = {cfg.test_fold, cfg.val_fold};
    auto pick = [&](const std::vector<std::size_t>& idx) {
        std::vector<VolumeSample> out;
        for (std::size_t i : idx) out.push_back(all[i]);
        return out;
    };
    const auto train = pick(manifest.indices_outside_folds(held));
    const auto val = pick(manifest.indices_in_folds(std::span(held + 1, 1)));
    const auto test = pick(manifest.indices_in_folds(std::span(held, 1)));
    pool.test_labels = labels_of(test);
    const auto val_labels = labels_of(val);

    pool.spec = "[[4],[4],[8]]";
    pool.epochs = 8;
    const ArchSpec spec = parse_spec(pool.spec, cfg.space());
    struct Variant {
        const char* name;
        bool cbam;
        LossKind loss;
    };
    const Variant variants[] = {{"full", true, LossKind::ASoftmax},
                                {"base", false, LossKind::Softmax},
                                {"cbam+softmax", true, LossKind::Softmax}};
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
        for (const Variant& v : variants) {
            NetConfig net = cfg.net_config();
            net.cbam = v.cbam;
            net.loss = v.loss;
            TrainConfig tc;
            tc.epochs = pool.epochs;
            tc.batch = cfg.batch;
            tc.adam = cfg.adam();
            tc.augment = cfg.augment;
            tc.seed = seed;
            const auto ts = Clock::now();
            TrainResult r = train_model(spec, net, train, val, tc);
            PoolModel m;
            m.variant = v.name;
            m.seed = seed;
            m.val_f1 = f1_or_zero(val_labels, predict_probabilities(r.network, val));
            try {
                m.val_dbi = dbi(collect_features(r.network, val)).dbi;
            } catch (const std::exception&) {
            }
            m.test_probs = predict_probabilities(r.network, test);
            std::cerr << "  " << v.name << " seed " << seed << ": val F1 " << fmt(m.val_f1) << ", DBI "
                      << fmt(m.val_dbi) << " (" << fmt(seconds_since(ts), 0) << " s)\n";
            pool.models.push_back(std::move(m));
        }
    return pool;
}

double mean_of(const ModelPool& pool, const std::string& variant, double PoolModel::*field) {
    double sum = 0.0;
    int n = 0;
    for (const auto& m : pool.models)
        if (m.variant == variant && std::isfinite(m.*field)) {
            sum += m.*field;
            ++n;
        }
    return n ? sum / n : std::nan("");
}

Outcome ablation(const fs::path& work) {
    const ModelPool& pool = model_pool(work);
    const double f1_full = mean_of(pool, "full", &PoolModel::val_f1);
    const double f1_base = mean_of(pool, "base", &PoolModel::val_f1);
    const double dbi_angular = mean_of(pool, "full", &PoolModel::val_dbi);
    const double dbi_softmax = mean_of(pool, "cbam+softmax", &PoolModel::val_dbi);
    const bool ok = f1_full >= f1_base - 0.01 && dbi_angular < dbi_softmax;
    return {ok, pool.spec + ", 5 seeds, " + std::to_string(pool.epochs) + " epochs: val F1 CBAM+A-Softmax " +
                    fmt(f1_full) + " vs base " + fmt(f1_base) + "; DBI A-Softmax " + fmt(dbi_angular) +
                    " vs Softmax " + fmt(dbi_softmax)};
}

Outcome ensemble_behaviour(const fs::path& work) {
    const ModelPool& pool = model_pool(work);
    std::vector<std::vector<double>> probs;
    for (const auto& m : pool.models) probs.push_back(m.test_probs);
    const int sizes[] = {1, 3, 5, 7, 9};
    const auto rows = ensemble_sweep(probs, pool.test_labels, sizes, 50, 808);
    std::map<int, double> f1;
    std::ostringstream d;
    d << probs.size() << "-member pool, mean test F1 by size:";
    for (const auto& row : rows) {
        f1[row.size] = row.mean.f1.value_or(std::nan(""));
        d << " n=" << row.size << " " << fmt(f1[row.size]);
    }
    return {probs.size() >= 9 && f1[5] >= f1[1], d.str()};
}

// ---------------------------------------------------------------------------
// 9. binary formats

template <class F>
std::string format_error_of(F&& f) {
    try {
        f();
    } catch (const FormatError& e) {
        return e.what();
    } catch (const std::exception& e) {
        return std::string("wrong exception: ") + e.what();
    }
    return "accepted";
}

Outcome formats(const fs::path& work) {
    fs::create_directories(work);
    int exact = 0, total = 0;
    Rng rng(909);
    for (int i = 0; i < 5; ++i) {
        const VolumeSample v = generate_nodule(rng.next(), i % 2 ? NoduleClass::Malignant : NoduleClass::Benign);
        const fs::path p = work / ("roundtrip" + std::to_string(i) + ".nlv");
        write_volume(v, p);
        const VolumeSample back = read_volume(p);
        const auto bytes = encode_volume(v);
        ++total;
        if (std::memcmp(back.voxels.data(), v.voxels.data(), v.voxels.size() * sizeof(float)) == 0 &&
            back.label == v.label && back.extents == v.extents && encode_volume(back) == bytes)
            ++exact;
    }
    const NetConfig net;
    const char* specs[] = {"[[4],[4],[4]]", "[[4,8],[8],[16,16]]"};
    for (const char* s : specs) {
        Network a = build_network(parse_spec(s), net, rng.next());
        const fs::path p = work / "roundtrip.nlw";
        save_checkpoint(a, p);
        Network b = load_checkpoint(p);
        const auto wa = flatten_weights(a), wb = flatten_weights(b);
        const auto ba = flatten_buffers(a), bb = flatten_buffers(b);
        ++total;
        if (wa.size() == wb.size() && std::memcmp(wa.data(), wb.data(), wa.size() * sizeof(double)) == 0 &&
            ba == bb && encode_checkpoint(b) == read_file_bytes(p))
            ++exact;
    }

    const VolumeSample v = generate_nodule(7, NoduleClass::Malignant);
    auto vbytes = encode_volume(v);
    Network net_a = build_network(parse_spec("[[4],[4],[4]]"), net, 3);
    auto cbytes = encode_checkpoint(net_a);
    std::vector<std::string> errors;
    {
        auto bad = vbytes;
        bad[0] = 'X';
        errors.push_back(format_error_of([&] { decode_volume(bad); }));
        auto cut = vbytes;
        cut.resize(cut.size() - 17);
        errors.push_back(format_error_of([&] { decode_volume(cut); }));
    }
    {
        auto bad = cbytes;
        bad[0] = 'X';
        errors.push_back(format_error_of([&] { decode_checkpoint(bad); }));
        auto cut = cbytes;
        cut.resize(cut.size() - 17);
        errors.push_back(format_error_of([&] { decode_checkpoint(cut); }));
    }
    const bool rejected = errors[0].find("bad magic (expected NLV1)") != std::string::npos &&
                          errors[1].find("truncated") != std::string::npos &&
                          errors[2].find("bad magic (expected NLW1)") != std::string::npos &&
                          errors[3].find("truncated") != std::string::npos;
    std::ostringstream d;
    d << exact << "/" << total << " roundtrips bit-exact; rejections:";
    for (const auto& e : errors) d << "\n    " << e;
    return {exact == total && rejected, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "lungnas-acceptance";
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--workdir" && i + 1 < argc) {
            work = argv[++i];
        } else {
            try {
                wanted.insert(std::stoi(a));
            } catch (const std::exception&) {
                std::cerr << "usage: acceptance [--workdir DIR] [criterion ...]\n";
                return 2;
            }
        }
    }
    fs::create_directories(work);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient oracle", gradients},
        {"POP soundness", pop_soundness},
        {"search-space completeness", space_completeness},
        {"metric identities", metric_identities},
        {"DBI", dbi_check},
        {"desk-scale end to end", [&] { return desk_pipeline(work); }},
        {"ablation direction", [&] { return ablation(work); }},
        {"ensemble size", [&] { return ensemble_behaviour(work); }},
        {"binary formats", [&] { return formats(work / "formats"); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!wanted.empty() && !wanted.contains(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
