#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace scrollnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded primitive. `backward` reads the output gradient and accumulates
// into the inputs that require gradients.
struct TapeNode {
    std::vector<Tensor> inputs;
    std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    bool touched = false;      // reached by a backward pass since the last zero_grad
    std::shared_ptr<TapeNode> node;
};

}  // namespace detail

/// Dense row-major double tensor with an optional gradient accumulator.
///
/// Copies share storage (handle semantics); use `clone()` for a deep copy.
/// Operations in ops.hpp record themselves on a dynamic tape whenever one of
/// their inputs requires gradients and grad mode is enabled.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    /// Gradient buffer; empty when nothing has been accumulated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();  // allocates zeros on demand
    bool has_grad() const;
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool touched() const;

    bool is_leaf() const;

    /// Deep copy of data only; the result is a fresh leaf.
    Tensor clone(bool requires_grad = false) const;
    /// Same storage viewed without the recorded history.
    Tensor detach() const;

    bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

    // Used by ops to build the tape.
    detail::TensorImpl& impl() const;
    static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                              std::function<void(const detail::TensorImpl&)> backward);

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are recomputed each call.
void backward(const Tensor& loss);

bool grad_enabled() noexcept;

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace scrollnet
