#pragma once

#include <span>
#include <vector>

#include "scrollnet/tensor.hpp"

namespace scrollnet {

struct SgdOptions {
    double lr = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + g + weight_decay * theta;  theta <- theta - lr * v
///
/// Only parameters reached by the last backward pass (`touched()`) move, so
/// heads and normalization widths that took no part in a step keep their
/// values and momentum.
class Sgd {
public:
    explicit Sgd(SgdOptions options = {}) : options_(options) {}

    void step(std::span<Tensor> params);
    void reset() { velocity_.clear(); }

    const SgdOptions& options() const noexcept { return options_; }
    void set_lr(double lr);

    const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }
    void set_velocity(std::vector<std::vector<double>> v) { velocity_ = std::move(v); }

private:
    SgdOptions options_;
    std::vector<std::vector<double>> velocity_;  // parallel to the params span; empty = never stepped
};

/// Single-tensor form of the update rule above.
void sgd_step(Tensor& param, std::vector<double>& velocity, const SgdOptions& options);

}  // namespace scrollnet
