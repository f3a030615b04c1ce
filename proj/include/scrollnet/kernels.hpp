#pragma once

// Dense inner loops behind the differentiable ops. Two implementations are
// kept: a plain serial reference and an OpenMP version that parallelizes over
// an output dimension. Every output element is accumulated in the same order
// in both, so the backends agree bitwise and results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace scrollnet::kernels {

enum class Backend { serial, parallel };

void set_backend(Backend backend) noexcept;
Backend backend() noexcept;
bool parallel_available() noexcept;

struct LinearDims {
    std::size_t batch, in, out;
};

struct ConvDims {
    std::size_t batch, channels, height, width;
    std::size_t filters, kernel, stride, padding;
    std::size_t out_height, out_width;
};

ConvDims make_conv_dims(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t filters, std::size_t kernel, std::size_t stride, std::size_t padding);

namespace serial {
void linear_forward(const LinearDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void linear_backward_input(const LinearDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void linear_backward_params(const LinearDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb);
void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> k,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> k,
                           std::span<double> gx);
void conv2d_backward_params(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gk, std::span<double> gb);
}  // namespace serial

namespace parallel {
void linear_forward(const LinearDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void linear_backward_input(const LinearDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void linear_backward_params(const LinearDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb);
void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> k,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> k,
                           std::span<double> gx);
void conv2d_backward_params(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gk, std::span<double> gb);
}  // namespace parallel

// Dispatch on the selected backend. `b`/`gb` may be empty (no bias).
// Backward kernels accumulate (+=) into their outputs.
void linear_forward(const LinearDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void linear_backward_input(const LinearDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx);
void linear_backward_params(const LinearDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb);
void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> k,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> k,
                           std::span<double> gx);
void conv2d_backward_params(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gk, std::span<double> gb);

}  // namespace scrollnet::kernels
