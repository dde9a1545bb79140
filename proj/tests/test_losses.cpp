#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lungnas/losses.hpp"
#include "lungnas/network.hpp"
#include "support/gradcheck.hpp"

using namespace lungnas;
using lungnas::testing::gradcheck;
using lungnas::testing::random_tensor;

namespace {

constexpr double kPi = std::numbers::pi;

// Unit class weights at angles phi0, phi1 in the plane; a feature at angle a
// with norm r. Columns of the (2, 2) weight are the class directions.
Tensor planar_weights(double phi0, double phi1) {
    return Tensor({2, 2}, {std::cos(phi0), std::cos(phi1), std::sin(phi0), std::sin(phi1)});
}

Tensor planar_feature(double angle, double norm = 1.0) {
    return Tensor({1, 2}, {norm * std::cos(angle), norm * std::sin(angle)});
}

double margin_loss(const Tensor& x, const Tensor& w, int label, int m, double lambda) {
    const int labels[] = {label};
    return softmax_ce(angular_margin_logits(x, w, labels, m, lambda), labels).item();
}

}  // namespace

TEST(SoftmaxCe, HandValues) {
    const int zero[] = {0};
    EXPECT_NEAR(softmax_ce(Tensor({1, 2}, {0.3, 0.3}), zero).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(softmax_ce(Tensor({1, 2}, {1.0, 0.0}), zero).item(), std::log(1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_LT(softmax_ce(Tensor({1, 2}, {800.0, 0.0}), zero).item(), 1e-300);
}

TEST(SoftmaxCe, LabelOutOfRange) {
    const int bad[] = {2};
    EXPECT_THROW(softmax_ce(Tensor({1, 2}), bad), std::out_of_range);
}

TEST(SoftmaxCe, GradientMatchesFiniteDifferences) {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const Index batch = 1 + static_cast<Index>(rng.below(5));
        Tensor z = random_tensor({batch, 3}, rng, -3, 3);
        std::vector<int> labels;
        for (Index i = 0; i < batch; ++i) labels.push_back(static_cast<int>(rng.below(3)));
        EXPECT_LT(gradcheck([&] { return softmax_ce(z, labels); }, {z}, rng).max_rel_error, 1e-4);
    }
}

TEST(Psi, ContinuousAtBreakpointsAndMonotone) {
    const int m = 4;
    for (int k = 1; k < m; ++k) {
        const double at = k * kPi / m;
        EXPECT_NEAR(psi(std::nextafter(at, 0.0), m), psi(std::nextafter(at, 4.0), m), 1e-9) << "k=" << k;
    }
    double prev = psi(0.0, m);
    EXPECT_DOUBLE_EQ(prev, 1.0);
    for (int i = 1; i <= 1000; ++i) {
        const double v = psi(kPi * i / 1000.0, m);
        EXPECT_LT(v, prev);
        prev = v;
    }
    EXPECT_NEAR(psi(kPi, m), -2.0 * m + 1.0, 1e-12);
}

TEST(Psi, CosineFormMatchesAngleForm) {
    for (int m : {1, 2, 3, 4}) {
        for (int i = 0; i <= 200; ++i) {
            const double theta = kPi * (i + 0.37) / 201.0;
            const PsiValue p = psi_from_cos(std::cos(theta), m);
            EXPECT_NEAR(p.value, psi(theta, m), 1e-9);
            // d psi / d cos = (d psi / d theta) / (-sin theta)
            const double h = 1e-6;
            const double dtheta = (psi(theta + h, m) - psi(theta - h, m)) / (2 * h);
            EXPECT_NEAR(p.derivative, dtheta / -std::sin(theta), 1e-4 * std::max(1.0, std::abs(p.derivative)));
        }
    }
}

TEST(ASoftmax, MarginOneIsNormalizedSoftmax) {
    Rng rng(2);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({3, 2}, rng);
    const std::vector<int> labels{0, 1, 1, 0};
    const double with_margin = softmax_ce(angular_margin_logits(x, w, labels, 1, 0.0), labels).item();
    const double plain = softmax_ce(cosine_logits(x, w), labels).item();
    EXPECT_NEAR(with_margin, plain, 1e-14);
}

TEST(ASoftmax, OppositeClassDirections) {
    // ||x|| = 1, theta_y = 0, theta_other = pi
    Tensor w = planar_weights(0.0, kPi);
    const double loss = margin_loss(planar_feature(0.0), w, 0, 1, 0.0);
    EXPECT_NEAR(loss, -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0))), 1e-12);
    EXPECT_NEAR(loss, 0.1269, 5e-5);
}

TEST(ASoftmax, LossDecreasesAsTargetCosineGrows) {
    // W_0 = e1, W_1 = e3; the feature rotates in the e1/e2 plane so theta_1
    // stays at pi/2 while theta_0 sweeps from pi down to 0.
    Tensor w({3, 2}, {1.0, 0.0, 0.0, 0.0, 0.0, 1.0});
    for (double lambda : {0.0, 5.0}) {
        double prev = std::numeric_limits<double>::infinity();
        for (int i = 0; i <= 100; ++i) {
            const double a = kPi - kPi * i / 100.0;
            Tensor x({1, 3}, {2.0 * std::cos(a), 2.0 * std::sin(a), 0.0});
            const double loss = margin_loss(x, w, 0, 4, lambda);
            EXPECT_LT(loss, prev) << "angle " << a;
            prev = loss;
        }
    }
}

TEST(ASoftmax, ScalingFeatureKeepsPrediction) {
    Rng rng(3);
    Tensor w = random_tensor({4, 2}, rng);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({1, 4}, rng);
        const double c = rng.uniform(0.1, 10.0);
        Tensor xs({1, 4}, Vector(c * x.data()));
        Tensor a = cosine_logits(x, w), b = cosine_logits(xs, w);
        EXPECT_EQ(a[0] > a[1], b[0] > b[1]);
    }
}

TEST(ASoftmax, MarginMakesCorrectSamplesHarder) {
    Tensor w = planar_weights(0.0, 2.0);
    for (int i = 0; i < 20; ++i) {
        const double theta = (kPi / 8.0) * (i + 0.5) / 20.0;  // theta_y < pi / (2m) at m = 4
        Tensor x = planar_feature(theta, 1.5);
        EXPECT_GE(margin_loss(x, w, 0, 4, 0.0), margin_loss(x, w, 0, 1, 0.0));
        EXPECT_GE(margin_loss(x, w, 0, 4, 5.0), margin_loss(x, w, 0, 1, 5.0));
    }
}

TEST(ASoftmax, ZeroFeatureRejected) {
    Tensor w = planar_weights(0.0, 1.0);
    const int label[] = {0};
    EXPECT_THROW(angular_margin_logits(Tensor({1, 2}), w, label, 4, 0.0), std::domain_error);
}

TEST(ASoftmax, GradientAwayFromBreakpoints) {
    Rng rng(4);
    int checked = 0;
    while (checked < 10) {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 2}, rng);
        std::vector<int> labels{static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2)),
                                static_cast<int>(rng.below(2))};
        // Skip draws whose target angle sits within 0.01 rad of a psi breakpoint.
        bool near_break = false;
        for (Index i = 0; i < 3; ++i) {
            const auto col = w.data();
            Eigen::Vector4d u(col[0 * 2 + labels[i]], col[1 * 2 + labels[i]], col[2 * 2 + labels[i]],
                              col[3 * 2 + labels[i]]);
            Eigen::Vector4d xi(x[i * 4], x[i * 4 + 1], x[i * 4 + 2], x[i * 4 + 3]);
            const double theta = std::acos(u.normalized().dot(xi.normalized()));
            for (int k = 1; k < 4; ++k) near_break = near_break || std::abs(theta - k * kPi / 4) < 0.01;
        }
        if (near_break) continue;
        const double lambda = checked % 2 ? 0.0 : 7.5;
        auto r = gradcheck([&] { return softmax_ce(angular_margin_logits(x, w, labels, 4, lambda), labels); },
                           {x, w}, rng);
        EXPECT_LT(r.max_rel_error, 1e-4) << "draw " << checked;
        ++checked;
    }
}

TEST(ASoftmax, HeadRenormalizesAndSchedules) {
    Rng rng(5);
    AngularHead head("h", 3, 2, rng);
    head.weight.value.data() *= 3.0;
    head.renormalize();
    MatrixMap w(head.weight.value.data().data(), 3, 2);
    EXPECT_NEAR(w.col(0).norm(), 1.0, 1e-15);
    EXPECT_NEAR(w.col(1).norm(), 1.0, 1e-15);
    LambdaSchedule s;
    EXPECT_DOUBLE_EQ(s.at(0), 1000.0);
    EXPECT_DOUBLE_EQ(s.at(10), 1000.0 / 2.2);
    EXPECT_DOUBLE_EQ(s.at(1'000'000), 5.0);
    EXPECT_EQ(head.margin, 4);
    EXPECT_THROW(AngularHead("bad", 3, 2, rng, 0), std::invalid_argument);
}

TEST(Features, ShapeAndDeterminism) {
    NetConfig cfg;
    cfg.input_size = 16;
    const ArchSpec model1 = parse_spec("[[4,4],[4,8],[8,8]]");
    Network net = build_network(model1, cfg, 3);
    Rng rng(6);
    Tensor x = random_tensor({2, 1, 16, 16, 16}, rng, 0, 1);
    Tensor a = extract_features(net, x);
    Tensor b = extract_features(net, x);
    EXPECT_EQ(a.shape(), (Shape{2, 8}));
    EXPECT_EQ(a.data(), b.data());
    EXPECT_EQ(a.dim(1), model1.last_width());
}
