#include "lungnas/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lungnas {

const char* to_string(LossKind kind) { return kind == LossKind::Softmax ? "softmax" : "asoftmax"; }

LossKind parse_loss_kind(const std::string& text) {
    if (text == "softmax") return LossKind::Softmax;
    if (text == "asoftmax") return LossKind::ASoftmax;
    throw std::invalid_argument("unknown loss kind '" + text + "' (expected softmax or asoftmax)");
}

Matrix softmax_probabilities(const Tensor& logits) {
    ConstMatrixMap z(logits.data().data(), logits.dim(0), logits.dim(1));
    Matrix p = z;
    for (Index i = 0; i < p.rows(); ++i) {
        p.row(i).array() -= p.row(i).maxCoeff();
        p.row(i) = p.row(i).array().exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

Tensor softmax_ce(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_ce: logits must be (batch, classes)");
    const Index batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<Index>(labels.size()) != batch) throw ShapeError("softmax_ce: label count mismatch");
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw std::out_of_range("softmax_ce: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(classes) + ")");
        }
    }
    ConstMatrixMap z(logits.data().data(), batch, classes);
    Matrix probs(batch, classes);
    double loss = 0.0;
    for (Index i = 0; i < batch; ++i) {
        const double top = z.row(i).maxCoeff();
        const double lse = top + std::log((z.row(i).array() - top).exp().sum());
        loss += lse - z(i, labels[static_cast<std::size_t>(i)]);
        probs.row(i) = (z.row(i).array() - lse).exp();
    }
    loss /= static_cast<double>(batch);
    std::vector<int> y(labels.begin(), labels.end());
    Tensor out = Tensor::make_result({1}, Vector::Constant(1, loss), {logits},
                                     [probs = std::move(probs), y = std::move(y)](detail::TensorNode& self) {
                                         Matrix d = probs;
                                         for (Index i = 0; i < d.rows(); ++i) d(i, y[static_cast<std::size_t>(i)]) -= 1.0;
                                         d *= self.grad[0] / static_cast<double>(d.rows());
                                         Tensor::accumulate(*self.parents[0], Eigen::Map<Vector>(d.data(), d.size()));
                                     });
    out.check_finite("softmax_ce");
    return out;
}

double LambdaSchedule::at(std::int64_t step) const {
    return std::max(minimum, initial / (1.0 + decay * static_cast<double>(step)));
}

namespace {

// Chebyshev T_m(c) and U_{m-1}(c) by recurrence; T_m' = m U_{m-1}.
void chebyshev(double c, int m, double& t_m, double& u_m1) {
    double t_prev = 1.0, t_cur = c;  // T_0, T_1
    double u_prev = 0.0, u_cur = 1.0;  // U_{-1}, U_0
    for (int n = 1; n < m; ++n) {
        const double t_next = 2.0 * c * t_cur - t_prev;
        const double u_next = 2.0 * c * u_cur - u_prev;
        t_prev = t_cur;
        t_cur = t_next;
        u_prev = u_cur;
        u_cur = u_next;
    }
    t_m = t_cur;
    u_m1 = u_cur;
}

int psi_segment(double theta, int margin) {
    const int k = static_cast<int>(std::floor(theta * margin / std::numbers::pi));
    return std::clamp(k, 0, margin - 1);
}

}  // namespace

double psi(double theta, int margin) {
    if (margin < 1) throw std::invalid_argument("margin must be >= 1");
    const int k = psi_segment(theta, margin);
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    return sign * std::cos(margin * theta) - 2.0 * k;
}

PsiValue psi_from_cos(double cosine, int margin) {
    if (margin < 1) throw std::invalid_argument("margin must be >= 1");
    const double c = std::clamp(cosine, -1.0, 1.0);
    const int k = psi_segment(std::acos(c), margin);
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    double t_m = 0.0, u_m1 = 0.0;
    chebyshev(cosine, margin, t_m, u_m1);
    return {sign * t_m - 2.0 * k, sign * margin * u_m1};
}

AngularHead::AngularHead(const std::string& name, Index features, Index classes, Rng& rng, int margin_,
                         LambdaSchedule schedule_)
    : weight(name + ".weight", Tensor({features, classes})), margin(margin_), schedule(schedule_) {
    if (margin_ < 1) throw std::invalid_argument("angular margin m must be >= 1");
    for (Index i = 0; i < weight.value.size(); ++i) weight.value[i] = rng.normal();
    renormalize();
}

void AngularHead::renormalize() {
    MatrixMap w(weight.value.data().data(), weight.value.dim(0), weight.value.dim(1));
    for (Index j = 0; j < w.cols(); ++j) {
        const double n = w.col(j).norm();
        if (n > 0.0) w.col(j) /= n;
    }
}

namespace {

void check_features(const Tensor& features, const Tensor& weight) {
    if (features.rank() != 2 || weight.rank() != 2 || features.dim(1) != weight.dim(0)) {
        throw ShapeError("angular logits: features " + shape_string(features.shape()) + " vs weight " +
                         shape_string(weight.shape()));
    }
}

// Shared forward/backward for the angular logits. labels empty => no margin.
Tensor angular_impl(const Tensor& features, const Tensor& weight, std::vector<int> labels, int margin,
                    double lambda) {
    check_features(features, weight);
    const Index batch = features.dim(0), dims = features.dim(1), classes = weight.dim(1);
    ConstMatrixMap x(features.data().data(), batch, dims);
    ConstMatrixMap w(weight.data().data(), dims, classes);
    const Vector w_norm = w.colwise().norm().transpose();
    if ((w_norm.array() <= 0.0).any()) throw std::domain_error("angular logits: zero-norm class weight");
    const Matrix u = w * w_norm.cwiseInverse().asDiagonal();
    const Vector x_norm = x.rowwise().norm();
    for (Index i = 0; i < batch; ++i) {
        if (!(x_norm[i] > 0.0)) {
            throw std::domain_error("angular logits: zero-norm feature vector at row " + std::to_string(i));
        }
    }
    Matrix s = x * u;  // ||x|| cos(theta)
    Matrix out = s;
    // Per-row margin data for the labelled class: mixed value and d/dc.
    Vector mixed_slope = Vector::Zero(batch);
    const bool margined = !labels.empty();
    if (margined) {
        for (Index i = 0; i < batch; ++i) {
            const int y = labels[static_cast<std::size_t>(i)];
            if (y < 0 || y >= classes) throw std::out_of_range("angular logits: label out of range");
            const double c = s(i, y) / x_norm[i];
            const PsiValue p = psi_from_cos(c, margin);
            out(i, y) = x_norm[i] * (lambda * c + p.value) / (1.0 + lambda);
            mixed_slope[i] = (lambda + p.derivative) / (1.0 + lambda);
        }
    }
    Tensor result = Tensor::make_result(
        {batch, classes}, Eigen::Map<Vector>(out.data(), out.size()), {features, weight},
        [=, labels = std::move(labels)](detail::TensorNode& self) {
            ConstMatrixMap dy(self.grad.data(), batch, classes);
            Matrix dx = Matrix::Zero(batch, dims);
            Matrix du = Matrix::Zero(dims, classes);
            for (Index i = 0; i < batch; ++i) {
                const int y = margined ? labels[static_cast<std::size_t>(i)] : -1;
                for (Index j = 0; j < classes; ++j) {
                    const double g = dy(i, j);
                    if (g == 0.0) continue;
                    if (j != y) {
                        dx.row(i) += g * u.col(j).transpose();
                        du.col(j) += g * x.row(i).transpose();
                    } else {
                        // f = ||x|| h(c), h = (lambda c + psi(c)) / (1 + lambda)
                        const double r = x_norm[i];
                        const double c = s(i, j) / r;
                        const double h = out(i, j) / r;
                        const double dh = mixed_slope[i];
                        dx.row(i) += g * (h * x.row(i) / r + dh * (u.col(j).transpose() - c * x.row(i) / r));
                        du.col(j) += g * dh * x.row(i).transpose();
                    }
                }
            }
            // Through the column normalization u = w / ||w||.
            Matrix dw(dims, classes);
            for (Index j = 0; j < classes; ++j) {
                dw.col(j) = (du.col(j) - u.col(j) * u.col(j).dot(du.col(j))) / w_norm[j];
            }
            Tensor::accumulate(*self.parents[0], Eigen::Map<Vector>(dx.data(), dx.size()));
            Tensor::accumulate(*self.parents[1], Eigen::Map<Vector>(dw.data(), dw.size()));
        });
    result.check_finite("angular logits");
    return result;
}

}  // namespace

Tensor angular_margin_logits(const Tensor& features, const Tensor& weight, std::span<const int> labels,
                             int margin, double lambda) {
    if (margin < 1) throw std::invalid_argument("angular margin m must be >= 1");
    if (static_cast<Index>(labels.size()) != features.dim(0)) throw ShapeError("angular logits: label count mismatch");
    return angular_impl(features, weight, std::vector<int>(labels.begin(), labels.end()), margin, lambda);
}

Tensor cosine_logits(const Tensor& features, const Tensor& weight) {
    return angular_impl(features, weight, {}, 1, 0.0);
}

Tensor asoftmax_loss(const Tensor& features, std::span<const int> labels, AngularHead& head, std::int64_t step) {
    head.renormalize();
    return softmax_ce(angular_margin_logits(features, head.weight.value, labels, head.margin, head.schedule.at(step)),
                      labels);
}

}  // namespace lungnas
