#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "lungnas/checkpoint.hpp"
#include "lungnas/network.hpp"
#include "support/gradcheck.hpp"

using namespace lungnas;

namespace {

// Brute-force oracle written straight from the constraint text: every
// (L, M, N) in [0, 9]^3 filtered by the total and per-stage bounds.
std::set<std::array<int, 3>> brute_force_triples(int min_total, int max_total) {
    std::set<std::array<int, 3>> out;
    for (int l = 0; l <= 9; ++l)
        for (int m = 0; m <= 9; ++m)
            for (int n = 0; n <= 9; ++n) {
                const int s = l + m + n;
                if (s < min_total || s > max_total) continue;
                const int lo = std::max(1, s / 4);
                const int hi = (s + 1) / 2;
                bool ok = true;
                for (int d : {l, m, n}) ok = ok && d >= lo && d <= hi;
                if (ok) out.insert({l, m, n});
            }
    return out;
}

ArchSpec random_legal_spec(Rng& rng) {
    const auto triples = depth_triples(SpaceConstraints{});
    const auto& t = triples[rng.below(triples.size())];
    const int widths[] = {4, 8, 16, 32, 64, 128};
    ArchSpec s;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < t[static_cast<std::size_t>(i)]; ++j) s.stages[static_cast<std::size_t>(i)].push_back(widths[rng.below(6)]);
    return s;
}

NetConfig small_config(bool cbam = true, LossKind loss = LossKind::ASoftmax) {
    NetConfig c;
    c.input_size = 8;
    c.cbam = cbam;
    c.loss = loss;
    return c;
}

}  // namespace

TEST(ArchSpec, ParsesModelOneEncoding) {
    const ArchSpec s = parse_spec("[[4,4],[4,8],[8,8]]");
    EXPECT_EQ(s.stages[0], (std::vector<int>{4, 4}));
    EXPECT_EQ(s.stages[1], (std::vector<int>{4, 8}));
    EXPECT_EQ(s.stages[2], (std::vector<int>{8, 8}));
    EXPECT_EQ(format_spec(s), "[[4,4],[4,8],[8,8]]");
    EXPECT_EQ(parse_spec("[4,4,[4, 4], [4, 8], [8, 8]]"), s);
    EXPECT_EQ(parse_spec(" [ [4 ,4] ,[4,8],[8,8] ] "), s);
}

TEST(ArchSpec, RoundTripsRandomLegalSpecs) {
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
        const ArchSpec s = random_legal_spec(rng);
        EXPECT_EQ(parse_spec(format_spec(s)), s);
    }
}

TEST(ArchSpec, ReportsWhichConstraintFailed) {
    auto kind_of = [](const char* text) {
        try {
            parse_spec(text);
        } catch (const SpecError& e) {
            return e.kind();
        }
        ADD_FAILURE() << "accepted " << text;
        return SpecViolation::Syntax;
    };
    EXPECT_EQ(kind_of("[[4],[4],[4],[4]]"), SpecViolation::StageCount);
    EXPECT_EQ(kind_of("[[4],[4]]"), SpecViolation::StageCount);
    EXPECT_EQ(kind_of("[[4],[4],[5]]"), SpecViolation::Width);
    EXPECT_EQ(kind_of("[[4,4,4,4],[4,4,4],[4,4,4]]"), SpecViolation::TotalDepth);
    EXPECT_EQ(kind_of("[[4,4,4,4],[4],[4]]"), SpecViolation::StageBalance);
    EXPECT_EQ(kind_of("[[4],[],[4,4]]"), SpecViolation::StageBalance);
    EXPECT_EQ(kind_of("[[4],[4],[4]"), SpecViolation::Syntax);
    EXPECT_EQ(kind_of("[[4],[4],[x]]"), SpecViolation::Syntax);
    EXPECT_EQ(kind_of("[8,8,[4],[4],[4]]"), SpecViolation::StageCount);
}

TEST(SearchSpace, SumThreeAdmitsOnlyOneBlockPerStage) {
    SpaceConstraints c;
    c.max_total = 3;
    const auto triples = depth_triples(c);
    ASSERT_EQ(triples.size(), 1u);
    EXPECT_EQ(triples[0], (std::array<int, 3>{1, 1, 1}));
}

TEST(SearchSpace, DepthTriplesMatchBruteForce) {
    for (int lo = 3; lo <= 9; ++lo)
        for (int hi = lo; hi <= 9; ++hi) {
            SpaceConstraints c;
            c.min_total = lo;
            c.max_total = hi;
            const auto got = depth_triples(c);
            const std::set<std::array<int, 3>> got_set(got.begin(), got.end());
            EXPECT_EQ(got_set.size(), got.size());
            EXPECT_EQ(got_set, brute_force_triples(lo, hi));
        }
}

TEST(SearchSpace, EnumerationCompleteAndDuplicateFree) {
    SpaceConstraints c;
    c.widths = {4, 8, 16};
    c.max_total = 5;
    const auto specs = enumerate_space(c);
    EXPECT_EQ(specs.size(), space_size(c));
    std::set<ArchSpec> unique(specs.begin(), specs.end());
    EXPECT_EQ(unique.size(), specs.size());
    std::uint64_t expected = 0;
    for (const auto& t : brute_force_triples(3, 5)) {
        std::uint64_t n = 1;
        for (int i = 0; i < t[0] + t[1] + t[2]; ++i) n *= 3;
        expected += n;
    }
    EXPECT_EQ(specs.size(), expected);
    for (const auto& s : specs) EXPECT_EQ(parse_spec(format_spec(s), c), s);
    EXPECT_EQ(enumerate_space(c), specs);  // deterministic order
}

TEST(SearchSpace, FullSpaceCountAndLimit) {
    SpaceConstraints full;
    std::uint64_t expected = 0;
    for (const auto& t : brute_force_triples(3, 9)) {
        std::uint64_t n = 1;
        for (int i = 0; i < t[0] + t[1] + t[2]; ++i) n *= 6;
        expected += n;
    }
    EXPECT_EQ(space_size(full), expected);
    EXPECT_THROW(enumerate_space(full), std::length_error);
}

TEST(Network, ConvParameterFormula) {
    Rng rng(0);
    Conv3dLayer conv("c", 1, 4, 3, 1, 1, rng);
    EXPECT_EQ(conv.weight.size() + conv.bias.size(), 4 * 27 + 4);
}

TEST(Network, ForwardShapesForModelOne) {
    NetConfig cfg;
    for (LossKind loss : {LossKind::Softmax, LossKind::ASoftmax}) {
        cfg.loss = loss;
        Network net = build_network(parse_spec("[[4,4],[4,8],[8,8]]"), cfg, 1);
        Rng rng(2);
        Tensor x = lungnas::testing::random_tensor({1, 1, 32, 32, 32}, rng, 0, 1);
        Matrix p = net.predict_proba(x);
        EXPECT_EQ(p.rows(), 1);
        EXPECT_EQ(p.cols(), 2);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    }
}

TEST(Network, AnalyticCountMatchesBuiltNetwork) {
    Rng rng(3);
    for (int i = 0; i < 30; ++i) {
        const ArchSpec s = random_legal_spec(rng);
        for (bool cbam : {false, true})
            for (LossKind loss : {LossKind::Softmax, LossKind::ASoftmax}) {
                const NetConfig cfg = small_config(cbam, loss);
                Network net(s, cfg, 0);
                EXPECT_EQ(count_params(net), count_params(s, cfg)) << format_spec(s);
            }
    }
}

TEST(Network, CbamBudgetIsExactDifference) {
    const ArchSpec s = parse_spec("[[4,4],[4,8],[8,8]]");
    const Index with = count_params(Network(s, small_config(true), 0));
    const Index without = count_params(Network(s, small_config(false), 0));
    // CBAM after stage 2 (4 ch), stage 3 (4), stage 4 (8), stage 5 (8)
    const Index budget = CbamBlock::parameter_count(4) * 2 + CbamBlock::parameter_count(8) * 2;
    EXPECT_EQ(with - without, budget);
}

TEST(Network, WideningNeverShrinksCount) {
    Rng rng(4);
    const int widths[] = {4, 8, 16, 32, 64, 128};
    for (int i = 0; i < 200; ++i) {
        ArchSpec s = random_legal_spec(rng);
        ArchSpec wider = s;
        auto& stage = wider.stages[rng.below(3)];
        auto& w = stage[rng.below(stage.size())];
        const auto pos = std::find(std::begin(widths), std::end(widths), w) - std::begin(widths);
        if (pos + 1 < 6) w = widths[pos + 1];
        EXPECT_GE(count_params(wider, NetConfig{}), count_params(s, NetConfig{}));
    }
}

// The published Model-1 has 0.14M parameters. Our kernel choices are fixed at
// 3^3 (1^3 projections), which gives a much smaller count; see README.
TEST(Network, ModelOneParameterBand) {
    const Index n = count_params(parse_spec("[[4,4],[4,8],[8,8]]"), NetConfig{});
    EXPECT_GE(n, 50'000);
    EXPECT_LE(n, 500'000);
}

TEST(Network, BuildIsDeterministicAndValidates) {
    const ArchSpec s = parse_spec("[[8],[8],[16]]");
    Network a = build_network(s, small_config(), 42);
    Network b = build_network(s, small_config(), 42);
    Network c = build_network(s, small_config(), 43);
    EXPECT_EQ(flatten_weights(a), flatten_weights(b));
    EXPECT_NE(flatten_weights(a), flatten_weights(c));
    ArchSpec bad;
    bad.stages = {std::vector<int>{4, 4, 4, 4}, std::vector<int>{4}, std::vector<int>{4}};
    EXPECT_THROW(build_network(bad, small_config(), 0), SpecError);
}

TEST(Network, EveryDepthTripleRunsOnFullSizeInput) {
    NetConfig cfg;
    cfg.cbam = false;
    Rng rng(5);
    Tensor x = lungnas::testing::random_tensor({1, 1, 32, 32, 32}, rng, 0, 1);
    for (const auto& t : depth_triples(SpaceConstraints{})) {
        ArchSpec s;
        for (int i = 0; i < 3; ++i) s.stages[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(t[static_cast<std::size_t>(i)]), 4);
        Network net(s, cfg, 0);
        Tensor f = extract_features(net, x);
        EXPECT_EQ(f.shape(), (Shape{1, 4}));
    }
    EXPECT_EQ(stage_extents(cfg), (std::array<Index, 4>{32, 16, 8, 4}));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const ArchSpec s = parse_spec("[[4],[8],[8,4]]");
    Network net(s, small_config(), 9);
    // Perturb running statistics so they are distinguishable from defaults.
    for (BatchNormStats* st : net.batch_norm_stats()) st->running_mean.setConstant(0.125);
    const auto bytes = encode_checkpoint(net);
    Network back = decode_checkpoint(bytes);
    EXPECT_EQ(back.spec(), s);
    EXPECT_EQ(back.config(), net.config());
    EXPECT_EQ(flatten_weights(back), flatten_weights(net));
    EXPECT_EQ(flatten_buffers(back), flatten_buffers(net));
    EXPECT_EQ(encode_checkpoint(back), bytes);
    EXPECT_EQ(static_cast<Index>(flatten_weights(net).size()), count_params(net));
}

TEST(Checkpoint, FileRoundTripAndCorruption) {
    const auto dir = std::filesystem::temp_directory_path() / "lungnas_ckpt_test";
    std::filesystem::create_directories(dir);
    Network net(parse_spec("[[4],[4],[4]]"), small_config(false, LossKind::Softmax), 1);
    save_checkpoint(net, dir / "a.nlw");
    Network back = load_checkpoint(dir / "a.nlw");
    EXPECT_EQ(flatten_weights(back), flatten_weights(net));
    EXPECT_EQ(read_checkpoint_header(dir / "a.nlw").spec_text, "[[4],[4],[4]]");

    auto bytes = encode_checkpoint(net);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 5);
    EXPECT_THROW(decode_checkpoint(truncated), FormatError);
    auto digest = bytes;
    // magic, spec length, spec text, config length, then the config text
    digest[4 + 4 + 13 + 4 + 2] ^= 1;
    EXPECT_THROW(decode_checkpoint(digest), FormatError);
    std::filesystem::remove_all(dir);
}
