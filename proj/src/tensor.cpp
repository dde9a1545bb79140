#include "lungnas/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace lungnas {

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) { grad_mode_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index extent : shape) {
        if (extent < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
        n *= extent;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ')';
    return out.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::TensorNode>()) {
    node_->data = Vector::Constant(numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Vector data) : node_(std::make_shared<detail::TensorNode>()) {
    if (numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Vector(Eigen::Map<const Vector>(values.begin(), static_cast<Index>(values.size())))) {}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
}

void Tensor::zero_grad() { node_->grad = Vector::Zero(node_->data.size()); }

Tensor& Tensor::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
}

void Tensor::check_finite(const char* context) const {
    if (!node_->data.allFinite()) {
        throw NumericError(std::string("non-finite value produced by ") + context);
    }
}

Tensor Tensor::clone() const {
    return Tensor(node_->shape, node_->data);
}

Tensor Tensor::reshape(Shape shape) const {
    if (numel(shape) != size()) {
        throw ShapeError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
    }
    return make_result(std::move(shape), node_->data, {*this}, [](detail::TensorNode& self) {
        accumulate(*self.parents[0], self.grad);
    });
}

void Tensor::accumulate(detail::TensorNode& node, const Vector& contribution) {
    if (!node.requires_grad) return;
    if (node.grad.size() != node.data.size()) {
        node.grad = contribution;
    } else {
        node.grad += contribution;
    }
}

Tensor Tensor::make_result(Shape shape, Vector data, std::vector<Tensor> parents,
                           std::function<void(detail::TensorNode&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (Tensor& p : parents) out.node_->parents.push_back(std::move(p.node_));
    out.node_->backward = std::move(backward);
    return out;
}

void Tensor::backward() {
    if (size() != 1) throw ShapeError("backward() without seed requires a scalar, got " + shape_string(shape()));
    backward(Vector::Ones(1));
}

void Tensor::backward(const Vector& seed) {
    if (seed.size() != size()) throw ShapeError("backward seed length mismatch");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> visited;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TensorNode* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    accumulate(*node_, seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* node = *it;
        if (!node->backward || node->grad.size() == 0) continue;
        node->backward(*node);
        if (!node->grad.allFinite()) throw NumericError("non-finite gradient during backward pass");
        // Interior gradients are not needed once propagated.
        if (!node->parents.empty()) node->grad.resize(0);
    }
}

}  // namespace lungnas
