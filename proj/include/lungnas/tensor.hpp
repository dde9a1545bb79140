#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lungnas {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Thrown when an operation receives operands whose shapes do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a forward or backward pass produces NaN or Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Global switch for graph recording. Inference paths disable it with NoGradGuard.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool enabled);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

struct TensorNode {
    Shape shape;
    Vector data;
    Vector grad;  // size 0 until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents.
    std::function<void(TensorNode&)> backward;
};

}  // namespace detail

/// Dense row-major array of doubles with an optional gradient and a link into
/// the autodiff graph. Copies share the underlying node (handle semantics);
/// use clone() for an independent value copy.
///
/// Activations use (batch, channel, depth, height, width) ordering.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, Vector data);
    Tensor(Shape shape, std::initializer_list<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor constant(Shape shape, double value) { return Tensor(std::move(shape), value); }

    const Shape& shape() const { return node_->shape; }
    Index dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    Index size() const { return node_->data.size(); }

    Vector& data() { return node_->data; }
    const Vector& data() const { return node_->data; }
    double operator[](Index i) const { return node_->data[i]; }
    double& operator[](Index i) { return node_->data[i]; }
    double item() const;

    bool has_grad() const { return node_->grad.size() == node_->data.size() && node_->data.size() > 0; }
    const Vector& grad() const { return node_->grad; }
    Vector& grad() { return node_->grad; }
    void zero_grad();
    void clear_grad() { node_->grad.resize(0); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag = true);

    /// Reverse-mode sweep from this tensor. A scalar seeds with 1; otherwise
    /// the caller supplies the upstream gradient.
    void backward();
    void backward(const Vector& seed);

    /// Independent copy of the value, detached from the graph.
    Tensor clone() const;
    Tensor detach() const { return clone(); }

    /// Same storage, different shape; records a view node when grads are live.
    Tensor reshape(Shape shape) const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    /// Throws NumericError naming `context` if any value is non-finite.
    void check_finite(const char* context) const;

    // Graph construction hook used by the op implementations.
    static Tensor make_result(Shape shape, Vector data, std::vector<Tensor> parents,
                              std::function<void(detail::TensorNode&)> backward);

    static void accumulate(detail::TensorNode& node, const Vector& contribution);
    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

}  // namespace lungnas
