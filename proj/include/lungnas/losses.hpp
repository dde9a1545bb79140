#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lungnas/optim.hpp"
#include "lungnas/rng.hpp"

namespace lungnas {

enum class LossKind { Softmax, ASoftmax };

const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

/// Mean negative log-softmax of the labelled class. logits: (B, K).
Tensor softmax_ce(const Tensor& logits, std::span<const int> labels);

/// Annealed weight of the plain cosine logit mixed into the margined target
/// logit: lambda(step) = max(minimum, initial / (1 + decay * step)).
struct LambdaSchedule {
    double initial = 1000.0;
    double minimum = 5.0;
    double decay = 0.12;

    double at(std::int64_t step) const;
};

/// Monotone extension of cos(m * theta) on [0, pi]:
/// (-1)^k cos(m theta) - 2k for theta in [k pi / m, (k + 1) pi / m].
double psi(double theta, int margin);

/// The same function expressed in c = cos(theta), with its derivative in c.
struct PsiValue {
    double value;
    double derivative;
};
PsiValue psi_from_cos(double cosine, int margin);

/// Bias-free classifier whose logits are ||x|| cos(theta_j). Weight columns are
/// projected to unit length before each forward pass.
struct AngularHead {
    Parameter weight;  // (features, classes); column j is W_j
    int margin = 4;
    LambdaSchedule schedule;

    AngularHead() = default;
    AngularHead(const std::string& name, Index features, Index classes, Rng& rng, int margin = 4,
                LambdaSchedule schedule = {});

    void renormalize();
    void collect(std::vector<Parameter*>& out) { out.push_back(&weight); }
};

/// (B, K) logits: ||x_i|| cos(theta_{j,i}) for j != y_i and
/// ||x_i|| (lambda cos(theta) + psi(theta)) / (1 + lambda) for the labelled
/// class. Columns of `weight` are normalized inside the op, so its gradient is
/// that of the weight-normalized map. Throws std::domain_error on a zero
/// feature vector.
Tensor angular_margin_logits(const Tensor& features, const Tensor& weight, std::span<const int> labels,
                             int margin, double lambda);

/// Unmargined logits ||x|| cos(theta_j), used at inference.
Tensor cosine_logits(const Tensor& features, const Tensor& weight);

/// A-Softmax loss: renormalizes the head, then softmax_ce over the margined logits.
Tensor asoftmax_loss(const Tensor& features, std::span<const int> labels, AngularHead& head, std::int64_t step);

/// Row-wise softmax probabilities of a (B, K) logit matrix, no graph.
Matrix softmax_probabilities(const Tensor& logits);

}  // namespace lungnas
