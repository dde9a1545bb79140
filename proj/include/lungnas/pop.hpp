#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lungnas/arch.hpp"
#include "lungnas/tensor.hpp"

namespace lungnas {

class Network;

struct TrainedRecord {
    ArchSpec spec;
    double accuracy = 0.0;  // in [0, 1]
    double latency_ms = 0.0;
    Index params = 0;
    std::uint64_t seed = 0;
};

/// a is narrower-or-equal to b: same depth triple and every width of a <= the
/// matching width of b.
bool narrower_leq(const ArchSpec& a, const ArchSpec& b);

/// a dominates b: no slower, no less accurate, strictly better on one axis.
bool dominates(const TrainedRecord& a, const TrainedRecord& b);

/// Records not dominated by any other; of records equal on both axes only the
/// first seen is kept. Input order is preserved.
std::vector<TrainedRecord> pareto_frontier(std::span<const TrainedRecord> records);

struct Bounds {
    double accuracy_upper = 1.0;
    double latency_lower = 0.0;
};

class SearchState {
public:
    enum class Status : std::uint8_t { Open, Trained, Pruned };

    explicit SearchState(std::vector<ArchSpec> universe);

    const std::vector<ArchSpec>& universe() const { return universe_; }
    const std::vector<TrainedRecord>& trained() const { return trained_; }
    const std::vector<TrainedRecord>& frontier() const { return frontier_; }
    Status status(std::size_t index) const { return status_[index]; }

    /// Universe index of a spec; throws std::out_of_range when absent.
    std::size_t index_of(const ArchSpec& spec) const;
    bool is_trained(const ArchSpec& spec) const { return status(index_of(spec)) == Status::Trained; }
    bool is_pruned(const ArchSpec& spec) const { return status(index_of(spec)) == Status::Pruned; }
    std::vector<ArchSpec> pruned() const;
    std::size_t pruned_count() const { return pruned_count_; }
    std::size_t open_count() const { return universe_.size() - trained_.size() - pruned_count_; }

    /// Adds an evaluated record for an open spec and refreshes the frontier.
    void record(TrainedRecord record);
    /// Marks an open spec as pruned; returns false if it was not open.
    bool prune(std::size_t index);

private:
    std::vector<ArchSpec> universe_;
    std::vector<Status> status_;
    std::vector<std::size_t> order_;  // universe indices sorted by spec
    std::vector<TrainedRecord> trained_;
    std::vector<TrainedRecord> frontier_;
    std::size_t pruned_count_ = 0;
};

/// Accuracy upper bound from wider-or-equal trained specs and latency lower
/// bound from narrower-or-equal ones. Throws std::invalid_argument if the
/// spec is already trained.
Bounds bounds(const ArchSpec& spec, const SearchState& state);

/// Prunes every open spec whose bounds are dominated by some trained record.
/// Returns how many specs were pruned.
std::size_t prune_step(SearchState& state);

struct Evaluation {
    double accuracy = 0.0;
    double latency_ms = 0.0;
};

/// Trains or scores one candidate. Called concurrently when workers > 1.
using Evaluator = std::function<Evaluation(const ArchSpec& spec, std::uint64_t seed)>;

/// Picks the next spec among the open ones (universe indices, ascending).
using SelectionPolicy = std::function<std::size_t(const SearchState& state, std::span<const std::size_t> open)>;

/// Cheapest-first by a cost function (ties by universe order).
SelectionPolicy smallest_first(std::function<double(const ArchSpec&)> cost);
/// Smallest parameter count under the given network settings.
SelectionPolicy smallest_params_first();
SelectionPolicy random_order(std::uint64_t seed);

struct PopOptions {
    std::size_t budget = 20;
    /// Stop after this many consecutive evaluations that prune nothing; 0 disables.
    std::size_t patience = 5;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    SelectionPolicy policy;  // smallest_params_first() when empty
    std::function<Index(const ArchSpec&)> params;  // recorded with each result
    /// Called after each record is applied, in application order.
    std::function<void(const TrainedRecord&)> on_record;
};

struct SearchResult {
    SearchState state;
    std::size_t evaluations = 0;  // evaluator calls made by this run
    std::size_t prune_events = 0;  // prune steps that pruned something
    bool stopped_by_patience = false;
};

/// Per-candidate training seed derived from the search seed.
std::uint64_t candidate_seed(std::uint64_t search_seed, const ArchSpec& spec);

/// Partial-order-pruning search. `prior` records (e.g. from a resumed log) are
/// applied first and count towards the budget. Throws std::invalid_argument on
/// an empty universe.
SearchResult pop_search(std::vector<ArchSpec> universe, const Evaluator& evaluate, const PopOptions& options,
                        std::span<const TrainedRecord> prior = {});

/// Runs fn once and returns elapsed milliseconds.
using Timer = std::function<double(const std::function<void()>& fn)>;
Timer steady_timer();

/// Median wall time of `reps` single-sample eval forward passes after `warmup`
/// discarded runs. Throws std::invalid_argument when reps < 1.
double measure_latency(Network& network, const Shape& input_shape, int warmup, int reps,
                       const Timer& timer = steady_timer());
double median(std::vector<double> values);

/// Newline-delimited search log: "spec accuracy latency_ms params seed timestamp".
std::string format_log_line(const TrainedRecord& record, const std::string& timestamp);
TrainedRecord parse_log_line(const std::string& line);
void append_search_log(const std::filesystem::path& path, const TrainedRecord& record);
/// Reads a log; a torn final line (no newline) is ignored.
std::vector<TrainedRecord> read_search_log(const std::filesystem::path& path);
std::string utc_timestamp();

}  // namespace lungnas
