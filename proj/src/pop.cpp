#include "lungnas/pop.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "lungnas/binary_io.hpp"
#include "lungnas/network.hpp"
#include "lungnas/rng.hpp"

namespace lungnas {

bool narrower_leq(const ArchSpec& a, const ArchSpec& b) {
    if (a.depths() != b.depths()) return false;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < a.stages[s].size(); ++i)
            if (a.stages[s][i] > b.stages[s][i]) return false;
    return true;
}

bool dominates(const TrainedRecord& a, const TrainedRecord& b) {
    const bool no_worse = a.latency_ms <= b.latency_ms && a.accuracy >= b.accuracy;
    const bool better = a.latency_ms < b.latency_ms || a.accuracy > b.accuracy;
    return no_worse && better;
}

std::vector<TrainedRecord> pareto_frontier(std::span<const TrainedRecord> records) {
    std::vector<TrainedRecord> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        bool keep = true;
        for (std::size_t j = 0; j < records.size() && keep; ++j) {
            if (i == j) continue;
            if (dominates(records[j], records[i])) keep = false;
            // equal on both axes: the earlier record wins
            if (j < i && records[j].latency_ms == records[i].latency_ms && records[j].accuracy == records[i].accuracy)
                keep = false;
        }
        if (keep) out.push_back(records[i]);
    }
    return out;
}

SearchState::SearchState(std::vector<ArchSpec> universe)
    : universe_(std::move(universe)), status_(universe_.size(), Status::Open), order_(universe_.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return universe_[a] < universe_[b]; });
    for (std::size_t i = 1; i < order_.size(); ++i)
        if (universe_[order_[i]] == universe_[order_[i - 1]])
            throw std::invalid_argument("search universe contains " + format_spec(universe_[order_[i]]) + " twice");
}

std::size_t SearchState::index_of(const ArchSpec& spec) const {
    auto it = std::lower_bound(order_.begin(), order_.end(), spec,
                               [&](std::size_t i, const ArchSpec& s) { return universe_[i] < s; });
    if (it == order_.end() || universe_[*it] != spec)
        throw std::out_of_range(format_spec(spec) + " is not in the search universe");
    return *it;
}

std::vector<ArchSpec> SearchState::pruned() const {
    std::vector<ArchSpec> out;
    for (std::size_t i = 0; i < universe_.size(); ++i)
        if (status_[i] == Status::Pruned) out.push_back(universe_[i]);
    return out;
}

void SearchState::record(TrainedRecord record) {
    if (!(record.accuracy >= 0.0 && record.accuracy <= 1.0))
        throw std::invalid_argument("accuracy outside [0, 1] for " + format_spec(record.spec));
    if (!(record.latency_ms > 0.0)) throw std::invalid_argument("non-positive latency for " + format_spec(record.spec));
    const std::size_t i = index_of(record.spec);
    if (status_[i] != Status::Open)
        throw std::logic_error(format_spec(record.spec) + " is already " +
                               (status_[i] == Status::Trained ? "trained" : "pruned"));
    status_[i] = Status::Trained;
    trained_.push_back(std::move(record));
    frontier_ = pareto_frontier(trained_);
}

bool SearchState::prune(std::size_t index) {
    if (status_.at(index) != Status::Open) return false;
    status_[index] = Status::Pruned;
    ++pruned_count_;
    return true;
}

Bounds bounds(const ArchSpec& spec, const SearchState& state) {
    Bounds b;
    for (const TrainedRecord& r : state.trained()) {
        if (r.spec == spec) throw std::invalid_argument(format_spec(spec) + " is already trained");
        if (narrower_leq(spec, r.spec)) b.accuracy_upper = std::min(b.accuracy_upper, r.accuracy);
        if (narrower_leq(r.spec, spec)) b.latency_lower = std::max(b.latency_lower, r.latency_ms);
    }
    return b;
}

std::size_t prune_step(SearchState& state) {
    // Any trained record that bounds-dominates a spec is itself matched or
    // beaten by a frontier record, so scanning the frontier is enough.
    const auto& frontier = state.frontier();
    if (frontier.empty()) return 0;
    std::size_t pruned = 0;
    for (std::size_t i = 0; i < state.universe().size(); ++i) {
        if (state.status(i) != SearchState::Status::Open) continue;
        const Bounds b = bounds(state.universe()[i], state);
        for (const TrainedRecord& t : frontier) {
            if (b.latency_lower >= t.latency_ms && b.accuracy_upper <= t.accuracy) {
                pruned += state.prune(i) ? 1 : 0;
                break;
            }
        }
    }
    return pruned;
}

SelectionPolicy smallest_first(std::function<double(const ArchSpec&)> cost) {
    auto cache = std::make_shared<std::map<std::size_t, double>>();
    return [cost = std::move(cost), cache](const SearchState& state, std::span<const std::size_t> open) {
        std::size_t best = open.front();
        double best_cost = 0.0;
        bool first = true;
        for (std::size_t i : open) {
            auto it = cache->find(i);
            if (it == cache->end()) it = cache->emplace(i, cost(state.universe()[i])).first;
            if (first || it->second < best_cost) {
                best = i;
                best_cost = it->second;
                first = false;
            }
        }
        return best;
    };
}

SelectionPolicy smallest_params_first() {
    return smallest_first([](const ArchSpec& s) { return static_cast<double>(count_params(s, NetConfig{})); });
}

SelectionPolicy random_order(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return [rng](const SearchState&, std::span<const std::size_t> open) { return open[rng->below(open.size())]; };
}

std::uint64_t candidate_seed(std::uint64_t search_seed, const ArchSpec& spec) {
    return mix_seed(search_seed ^ hash_tag(format_spec(spec)));
}

SearchResult pop_search(std::vector<ArchSpec> universe, const Evaluator& evaluate, const PopOptions& options,
                        std::span<const TrainedRecord> prior) {
    if (universe.empty()) throw std::invalid_argument("pop_search needs a non-empty universe");
    SearchResult result{SearchState(std::move(universe))};
    SearchState& state = result.state;
    const SelectionPolicy policy = options.policy ? options.policy : smallest_params_first();
    const std::size_t workers = std::max<std::size_t>(1, options.workers);
    std::size_t stale = 0;

    auto apply = [&](TrainedRecord rec) {
        state.record(rec);
        if (options.on_record) options.on_record(rec);
        if (prune_step(state) > 0) {
            ++result.prune_events;
            stale = 0;
        } else {
            ++stale;
        }
    };
    auto exhausted = [&] {
        return state.trained().size() >= options.budget || state.open_count() == 0 ||
               (options.patience > 0 && stale >= options.patience);
    };

    for (const TrainedRecord& rec : prior) {
        if (exhausted()) break;
        const std::size_t i = state.index_of(rec.spec);
        if (state.status(i) == SearchState::Status::Open) apply(rec);
    }

    while (!exhausted()) {
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < state.universe().size(); ++i)
            if (state.status(i) == SearchState::Status::Open) open.push_back(i);
        const std::size_t batch = std::min({workers, options.budget - state.trained().size(), open.size()});

        std::vector<std::size_t> chosen;
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t pick = policy(state, open);
            chosen.push_back(pick);
            open.erase(std::find(open.begin(), open.end(), pick));
        }

        std::vector<TrainedRecord> records(chosen.size());
        std::vector<std::exception_ptr> errors(chosen.size());
        auto run = [&](std::size_t k) {
            try {
                TrainedRecord& r = records[k];
                r.spec = state.universe()[chosen[k]];
                r.seed = candidate_seed(options.seed, r.spec);
                const Evaluation e = evaluate(r.spec, r.seed);
                r.accuracy = e.accuracy;
                r.latency_ms = e.latency_ms;
                r.params = options.params ? options.params(r.spec) : count_params(r.spec, NetConfig{});
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        if (chosen.size() == 1) {
            run(0);
        } else {
            std::vector<std::thread> threads;
            for (std::size_t k = 0; k < chosen.size(); ++k) threads.emplace_back(run, k);
            for (auto& t : threads) t.join();
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);

        for (auto& r : records) {
            ++result.evaluations;
            apply(std::move(r));
            if (options.patience > 0 && stale >= options.patience) {
                result.stopped_by_patience = true;
                break;
            }
        }
    }
    if (options.patience > 0 && stale >= options.patience) result.stopped_by_patience = true;
    return result;
}

Timer steady_timer() {
    return [](const std::function<void()>& fn) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(stop - start).count();
    };
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double measure_latency(Network& network, const Shape& input_shape, int warmup, int reps, const Timer& timer) {
    if (reps < 1) throw std::invalid_argument("measure_latency needs reps >= 1");
    const Tensor input = Tensor::constant(input_shape, 0.5);
    auto forward = [&] { network.predict_proba(input); };
    for (int i = 0; i < warmup; ++i) timer(forward);
    std::vector<double> times;
    for (int i = 0; i < reps; ++i) times.push_back(timer(forward));
    return median(std::move(times));
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string format_log_line(const TrainedRecord& r, const std::string& timestamp) {
    char buf[128];
    std::snprintf(buf, sizeof buf, " %.17g %.17g %lld %llu ", r.accuracy, r.latency_ms, static_cast<long long>(r.params),
                  static_cast<unsigned long long>(r.seed));
    return format_spec(r.spec) + buf + timestamp;
}

TrainedRecord parse_log_line(const std::string& line) {
    std::istringstream in(line);
    std::string spec, timestamp;
    TrainedRecord r;
    long long params = 0;
    unsigned long long seed = 0;
    if (!(in >> spec >> r.accuracy >> r.latency_ms >> params >> seed >> timestamp))
        throw FormatError("malformed search log line: " + line);
    std::string extra;
    if (in >> extra) throw FormatError("trailing fields in search log line: " + line);
    r.spec = parse_spec(spec);
    r.params = static_cast<Index>(params);
    r.seed = seed;
    return r;
}

void append_search_log(const std::filesystem::path& path, const TrainedRecord& record) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    out << format_log_line(record, utc_timestamp()) << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to " + path.string());
}

std::vector<TrainedRecord> read_search_log(const std::filesystem::path& path) {
    std::vector<TrainedRecord> out;
    if (!std::filesystem::exists(path)) return out;
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::size_t start = 0, lineno = 0;
    while (true) {
        const std::size_t end = text.find('\n', start);
        if (end == std::string::npos) break;
        ++lineno;
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_log_line(line));
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace lungnas
