#include "scrollnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "scrollnet/errors.hpp"

namespace scrollnet {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto extent : shape)
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    if (shape_numel(shape) != values.size())
        throw DimensionError("shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                             " values");
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

detail::TensorImpl& Tensor::impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on a tensor of shape " + shape_string(shape()));
    return impl().data[0];
}

std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::mutable_grad() {
    auto& im = impl();
    if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
    return im.grad;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

void Tensor::zero_grad() {
    auto& im = impl();
    std::fill(im.grad.begin(), im.grad.end(), 0.0);
    im.touched = false;
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl().requires_grad = flag; }
bool Tensor::touched() const { return impl().touched; }
bool Tensor::is_leaf() const { return impl().node == nullptr; }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), impl().data, requires_grad); }

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape();
    impl->data = this->impl().data;
    return Tensor(std::move(impl));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           std::function<void(const detail::TensorImpl&)> backward) {
    Tensor out = from(std::move(shape), std::move(values));
    if (!g_grad_enabled) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (!needs) return out;
    auto node = std::make_shared<detail::TapeNode>();
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->requires_grad = true;
    out.impl_->node = std::move(node);
    return out;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("backward() on a loss that is not on the tape");

    // Post-order DFS gives a valid dependency order; each tensor is visited once.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<const detail::TensorImpl*> seen;
    struct Frame {
        detail::TensorImpl* t;
        std::size_t next;
    };
    std::vector<Frame> stack{{&loss.impl(), 0}};
    seen.insert(&loss.impl());
    while (!stack.empty()) {
        auto& top = stack.back();
        const auto* node = top.t->node.get();
        if (node && top.next < node->inputs.size()) {
            const Tensor& in = node->inputs[top.next++];
            if (in.defined() && in.requires_grad() && seen.insert(&in.impl()).second) stack.push_back({&in.impl(), 0});
            continue;
        }
        order.push_back(top.t);
        stack.pop_back();
    }

    for (auto* t : order) {
        if (t->node) t->grad.assign(t->data.size(), 0.0);
        else if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
        t->touched = true;
    }
    loss.impl().grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* t = *it;
        if (t->node) t->node->backward(*t);
    }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace scrollnet
