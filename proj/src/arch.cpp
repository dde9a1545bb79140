#include "lungnas/arch.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace lungnas {

bool SpaceConstraints::width_allowed(int w) const {
    return std::find(widths.begin(), widths.end(), w) != widths.end();
}

namespace {

// Minimal recursive-descent reader for nested integer lists.
struct Node {
    bool is_list = false;
    int value = 0;
    std::vector<Node> items;
};

class Reader {
public:
    explicit Reader(std::string_view text) : text_(text) {}

    Node parse() {
        Node n = parse_node();
        skip_ws();
        if (pos_ != text_.size()) fail("trailing characters");
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw SpecError(SpecViolation::Syntax,
                        "spec syntax error at offset " + std::to_string(pos_) + ": " + msg + " in '" +
                            std::string(text_) + "'");
    }
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    Node parse_node() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end");
        if (text_[pos_] == '[') {
            ++pos_;
            Node list;
            list.is_list = true;
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == ']') {
                ++pos_;
                return list;
            }
            while (true) {
                list.items.push_back(parse_node());
                skip_ws();
                if (pos_ >= text_.size()) fail("unterminated list");
                if (text_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                if (text_[pos_] == ']') {
                    ++pos_;
                    return list;
                }
                fail("expected ',' or ']'");
            }
        }
        if (!std::isdigit(static_cast<unsigned char>(text_[pos_]))) fail("expected '[' or a width");
        Node leaf;
        long v = 0;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
            v = v * 10 + (text_[pos_++] - '0');
            if (v > 1'000'000) fail("width too large");
        }
        leaf.value = static_cast<int>(v);
        return leaf;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

std::vector<int> as_widths(const Node& n) {
    if (!n.is_list) throw SpecError(SpecViolation::Syntax, "each stage must be a bracketed list of widths");
    std::vector<int> out;
    for (const Node& item : n.items) {
        if (item.is_list) throw SpecError(SpecViolation::Syntax, "stage lists may not nest");
        out.push_back(item.value);
    }
    return out;
}

}  // namespace

ArchSpec parse_spec(std::string_view text, const SpaceConstraints& constraints) {
    Node root = Reader(text).parse();
    if (!root.is_list) throw SpecError(SpecViolation::Syntax, "spec must be a bracketed list");
    std::vector<const Node*> stage_nodes;
    std::size_t i = 0;
    // Optional fixed stem widths before the stage lists.
    std::vector<int> stems;
    while (i < root.items.size() && !root.items[i].is_list) stems.push_back(root.items[i++].value);
    if (!stems.empty()) {
        if (stems.size() != 2 || stems[0] != 4 || stems[1] != 4) {
            throw SpecError(SpecViolation::StageCount, "stem prefix must be exactly '4,4' (stems are fixed at 4 channels)");
        }
    }
    for (; i < root.items.size(); ++i) stage_nodes.push_back(&root.items[i]);
    if (stage_nodes.size() != 3) {
        throw SpecError(SpecViolation::StageCount,
                        "expected 3 searchable stages, got " + std::to_string(stage_nodes.size()));
    }
    ArchSpec spec;
    for (std::size_t s = 0; s < 3; ++s) spec.stages[s] = as_widths(*stage_nodes[s]);
    validate_spec(spec, constraints);
    return spec;
}

std::string format_spec(const ArchSpec& spec) {
    std::ostringstream out;
    out << '[';
    for (std::size_t s = 0; s < 3; ++s) {
        if (s) out << ',';
        out << '[';
        for (std::size_t i = 0; i < spec.stages[s].size(); ++i) {
            if (i) out << ',';
            out << spec.stages[s][i];
        }
        out << ']';
    }
    out << ']';
    return out.str();
}

void validate_spec(const ArchSpec& spec, const SpaceConstraints& constraints) {
    for (const auto& stage : spec.stages) {
        for (int w : stage) {
            if (!constraints.width_allowed(w)) {
                throw SpecError(SpecViolation::Width, "width " + std::to_string(w) + " is not in the legal width set");
            }
        }
    }
    const int total = spec.total_depth();
    if (total < constraints.min_total || total > constraints.max_total) {
        throw SpecError(SpecViolation::TotalDepth, "total block count " + std::to_string(total) + " outside [" +
                                                       std::to_string(constraints.min_total) + ", " +
                                                       std::to_string(constraints.max_total) + "]");
    }
    const int lo = SpaceConstraints::stage_min(total), hi = SpaceConstraints::stage_max(total);
    const auto d = spec.depths();
    for (int s = 0; s < 3; ++s) {
        if (d[s] < lo || d[s] > hi) {
            throw SpecError(SpecViolation::StageBalance,
                            "stage " + std::to_string(s + 3) + " has " + std::to_string(d[s]) +
                                " blocks; per-stage depth must lie in [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "] for total " + std::to_string(total));
        }
    }
}

bool is_valid_spec(const ArchSpec& spec, const SpaceConstraints& constraints) {
    try {
        validate_spec(spec, constraints);
        return true;
    } catch (const SpecError&) {
        return false;
    }
}

std::vector<std::array<int, 3>> depth_triples(const SpaceConstraints& constraints) {
    std::vector<std::array<int, 3>> out;
    for (int total = std::max(constraints.min_total, 3); total <= constraints.max_total; ++total) {
        const int lo = SpaceConstraints::stage_min(total), hi = SpaceConstraints::stage_max(total);
        for (int l = lo; l <= hi; ++l)
            for (int m = lo; m <= hi; ++m) {
                const int n = total - l - m;
                if (n >= lo && n <= hi) out.push_back({l, m, n});
            }
    }
    return out;
}

std::uint64_t space_size(const SpaceConstraints& constraints) {
    std::vector<int> widths = constraints.widths;
    std::sort(widths.begin(), widths.end());
    widths.erase(std::unique(widths.begin(), widths.end()), widths.end());
    std::uint64_t count = 0;
    const auto k = static_cast<std::uint64_t>(widths.size());
    for (const auto& t : depth_triples(constraints)) {
        std::uint64_t c = 1;
        for (int i = 0; i < t[0] + t[1] + t[2]; ++i) c *= k;
        count += c;
    }
    return count;
}

void for_each_spec(const SpaceConstraints& constraints, const std::function<bool(const ArchSpec&)>& visit) {
    std::vector<int> widths = constraints.widths;
    std::sort(widths.begin(), widths.end());
    widths.erase(std::unique(widths.begin(), widths.end()), widths.end());
    if (widths.empty()) return;
    const int k = static_cast<int>(widths.size());
    for (const auto& t : depth_triples(constraints)) {
        const int total = t[0] + t[1] + t[2];
        std::vector<int> digits(static_cast<std::size_t>(total), 0);
        ArchSpec spec;
        for (int s = 0; s < 3; ++s) spec.stages[s].assign(static_cast<std::size_t>(t[s]), widths[0]);
        while (true) {
            std::size_t pos = 0;
            for (int s = 0; s < 3; ++s)
                for (auto& w : spec.stages[s]) w = widths[static_cast<std::size_t>(digits[pos++])];
            if (!visit(spec)) return;
            int i = total - 1;
            while (i >= 0 && ++digits[static_cast<std::size_t>(i)] == k) digits[static_cast<std::size_t>(i--)] = 0;
            if (i < 0) break;
        }
    }
}

std::vector<ArchSpec> enumerate_space(const SpaceConstraints& constraints, std::uint64_t limit) {
    const std::uint64_t n = space_size(constraints);
    if (n > limit) {
        throw std::length_error("search space has " + std::to_string(n) + " specs, above the materialization limit " +
                                std::to_string(limit));
    }
    std::vector<ArchSpec> out;
    out.reserve(static_cast<std::size_t>(n));
    for_each_spec(constraints, [&](const ArchSpec& s) {
        out.push_back(s);
        return true;
    });
    return out;
}

}  // namespace lungnas
