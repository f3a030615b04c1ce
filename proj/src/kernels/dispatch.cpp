#include <atomic>

#include "scrollnet/errors.hpp"
#include "scrollnet/kernels.hpp"

namespace scrollnet::kernels {

namespace {
std::atomic<Backend> g_backend{parallel_available() ? Backend::parallel : Backend::serial};
}

bool parallel_available() noexcept {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

void set_backend(Backend b) noexcept { g_backend.store(b, std::memory_order_relaxed); }
Backend backend() noexcept { return g_backend.load(std::memory_order_relaxed); }

ConvDims make_conv_dims(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t filters, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (stride == 0) throw DimensionError("conv2d stride must be positive");
    if (kernel > height + 2 * padding || kernel > width + 2 * padding)
        throw DimensionError("conv2d kernel " + std::to_string(kernel) + " larger than padded input");
    ConvDims d{batch, channels, height, width, filters, kernel, stride, padding, 0, 0};
    d.out_height = (height + 2 * padding - kernel) / stride + 1;
    d.out_width = (width + 2 * padding - kernel) / stride + 1;
    return d;
}

#define SCROLLNET_DISPATCH(name, ...)                  \
    if (backend() == Backend::parallel)                \
        parallel::name(__VA_ARGS__);                   \
    else                                               \
        serial::name(__VA_ARGS__)

void linear_forward(const LinearDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
    SCROLLNET_DISPATCH(linear_forward, d, x, w, b, y);
}
void linear_backward_input(const LinearDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
    SCROLLNET_DISPATCH(linear_backward_input, d, gy, w, gx);
}
void linear_backward_params(const LinearDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb) {
    SCROLLNET_DISPATCH(linear_backward_params, d, gy, x, gw, gb);
}
void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> k,
                    std::span<const double> b, std::span<double> y) {
    SCROLLNET_DISPATCH(conv2d_forward, d, x, k, b, y);
}
void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> k,
                           std::span<double> gx) {
    SCROLLNET_DISPATCH(conv2d_backward_input, d, gy, k, gx);
}
void conv2d_backward_params(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gk, std::span<double> gb) {
    SCROLLNET_DISPATCH(conv2d_backward_params, d, gy, x, gk, gb);
}

#undef SCROLLNET_DISPATCH

}  // namespace scrollnet::kernels
