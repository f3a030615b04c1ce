#include "scrollnet/optim.hpp"

#include "scrollnet/errors.hpp"

namespace scrollnet {

void sgd_step(Tensor& param, std::vector<double>& velocity, const SgdOptions& options) {
    if (!(options.lr > 0.0)) throw ContractError("sgd: learning rate must be positive");
    auto theta = param.mutable_data();
    if (velocity.size() != theta.size()) velocity.assign(theta.size(), 0.0);
    const auto g = param.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g.empty() ? 0.0 : g[i];
        velocity[i] = options.momentum * velocity[i] + gi + options.weight_decay * theta[i];
        theta[i] -= options.lr * velocity[i];
    }
}

void Sgd::set_lr(double lr) {
    if (!(lr > 0.0)) throw ContractError("sgd: learning rate must be positive");
    options_.lr = lr;
}

void Sgd::step(std::span<Tensor> params) {
    if (velocity_.size() != params.size()) velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].requires_grad() || !params[i].touched()) continue;
        sgd_step(params[i], velocity_[i], options_);
    }
}

}  // namespace scrollnet
