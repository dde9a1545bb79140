#include "lungnas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lungnas {

Parameter::Parameter(std::string name_, Tensor init)
    : name(std::move(name_)),
      value(std::move(init)),
      first_moment(Vector::Zero(value.size())),
      second_moment(Vector::Zero(value.size())) {
    value.set_requires_grad(true);
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& config) {
    for (Parameter* p : params) {
        if (!p->value.has_grad()) throw std::logic_error("adam_step: parameter '" + p->name + "' has no gradient");
    }
    for (Parameter* p : params) {
        const Vector& g = p->value.grad();
        p->step += 1;
        p->first_moment = config.beta1 * p->first_moment + (1.0 - config.beta1) * g;
        p->second_moment = config.beta2 * p->second_moment + (1.0 - config.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(p->step));
        const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(p->step));
        p->value.data().array() -=
            config.lr * (p->first_moment.array() / c1) / ((p->second_moment.array() / c2).sqrt() + config.eps);
        p->value.clear_grad();
    }
}

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->value.clear_grad();
}

}  // namespace lungnas
