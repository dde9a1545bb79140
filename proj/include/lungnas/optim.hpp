#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "lungnas/tensor.hpp"

namespace lungnas {

/// A trainable tensor together with its Adam moment buffers.
struct Parameter {
    std::string name;
    Tensor value;
    Vector first_moment;
    Vector second_moment;
    std::int64_t step = 0;

    Parameter() = default;
    Parameter(std::string name, Tensor init);

    Index size() const { return value.size(); }
};

struct AdamConfig {
    double lr = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then clears grads.
/// Throws std::logic_error if a parameter has no gradient.
void adam_step(std::span<Parameter* const> params, const AdamConfig& config);

void zero_grads(std::span<Parameter* const> params);

}  // namespace lungnas
