#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lungnas {

/// Channel widths of the residual blocks in stages 3, 4 and 5.
struct ArchSpec {
    std::array<std::vector<int>, 3> stages;

    std::array<int, 3> depths() const {
        return {static_cast<int>(stages[0].size()), static_cast<int>(stages[1].size()),
                static_cast<int>(stages[2].size())};
    }
    int total_depth() const { return depths()[0] + depths()[1] + depths()[2]; }
    /// Width of the final residual block, i.e. the feature length.
    int last_width() const { return stages[2].empty() ? 0 : stages[2].back(); }

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
    friend auto operator<=>(const ArchSpec&, const ArchSpec&) = default;
};

/// Bounds on the searchable family.
struct SpaceConstraints {
    std::vector<int> widths{4, 8, 16, 32, 64, 128};
    int min_total = 3;
    int max_total = 9;

    /// max(1, floor(total / 4)) <= depth <= ceil(total / 2) for every stage.
    static int stage_min(int total) { return std::max(1, total / 4); }
    static int stage_max(int total) { return (total + 1) / 2; }
    bool width_allowed(int w) const;
};

enum class SpecViolation { Syntax, StageCount, Width, TotalDepth, StageBalance };

class SpecError : public std::invalid_argument {
public:
    SpecError(SpecViolation kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
    SpecViolation kind() const { return kind_; }

private:
    SpecViolation kind_;
};

/// Parses "[[w,...],[w,...],[w,...]]". The long form with the two fixed
/// stem widths in front ("[4,4,[...],[...],[...]]") is also accepted.
/// Throws SpecError on syntax or constraint violations.
ArchSpec parse_spec(std::string_view text, const SpaceConstraints& constraints = {});

std::string format_spec(const ArchSpec& spec);

/// Throws SpecError naming the violated constraint.
void validate_spec(const ArchSpec& spec, const SpaceConstraints& constraints = {});
bool is_valid_spec(const ArchSpec& spec, const SpaceConstraints& constraints = {});

/// Depth triples (L, M, N) admitted by the constraints, in enumeration order.
std::vector<std::array<int, 3>> depth_triples(const SpaceConstraints& constraints);

/// Number of specs in the space, without enumerating them.
std::uint64_t space_size(const SpaceConstraints& constraints);

/// Visits each legal spec exactly once: by total depth, then depth triple,
/// then widths as an odometer with the last block fastest. Returning false
/// from the visitor stops the walk.
void for_each_spec(const SpaceConstraints& constraints, const std::function<bool(const ArchSpec&)>& visit);

/// Materializes the space. Throws std::length_error above `limit` specs.
std::vector<ArchSpec> enumerate_space(const SpaceConstraints& constraints, std::uint64_t limit = 2'000'000);

}  // namespace lungnas
