#include "scrollnet/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scrollnet::kernels::parallel {

namespace {
using index_t = std::ptrdiff_t;

// Work below this many multiply-adds stays on the calling thread.
constexpr std::size_t kMinParallelWork = 1u << 14;
}  // namespace

void linear_forward(const LinearDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
    const auto batch = static_cast<index_t>(d.batch);
#pragma omp parallel for schedule(static) if (d.batch * d.in * d.out >= kMinParallelWork)
    for (index_t n = 0; n < batch; ++n) {
        const double* xr = x.data() + n * d.in;
        double* yr = y.data() + n * d.out;
        for (std::size_t o = 0; o < d.out; ++o) {
            const double* wr = w.data() + o * d.in;
            double acc = 0.0;
            for (std::size_t i = 0; i < d.in; ++i) acc += xr[i] * wr[i];
            yr[o] = b.empty() ? acc : acc + b[o];
        }
    }
}

void linear_backward_input(const LinearDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
    const auto batch = static_cast<index_t>(d.batch);
#pragma omp parallel for schedule(static) if (d.batch * d.in * d.out >= kMinParallelWork)
    for (index_t n = 0; n < batch; ++n) {
        double* gxr = gx.data() + n * d.in;
        for (std::size_t o = 0; o < d.out; ++o) {
            const double g = gy[n * d.out + o];
            const double* wr = w.data() + o * d.in;
            for (std::size_t i = 0; i < d.in; ++i) gxr[i] += g * wr[i];
        }
    }
}

void linear_backward_params(const LinearDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb) {
    const auto out = static_cast<index_t>(d.out);
#pragma omp parallel for schedule(static) if (d.batch * d.in * d.out >= kMinParallelWork)
    for (index_t o = 0; o < out; ++o) {
        for (std::size_t n = 0; n < d.batch; ++n) {
            const double g = gy[n * d.out + o];
            if (!gb.empty()) gb[o] += g;
            if (gw.empty()) continue;
            double* gwr = gw.data() + o * d.in;
            const double* xr = x.data() + n * d.in;
            for (std::size_t i = 0; i < d.in; ++i) gwr[i] += g * xr[i];
        }
    }
}

namespace {

std::size_t conv_work(const ConvDims& d) {
    return d.batch * d.filters * d.out_height * d.out_width * d.channels * d.kernel * d.kernel;
}

// Valid kernel-row range for an output row, so the inner loops carry no bounds checks.
struct Span1 {
    std::size_t lo, hi;
};

Span1 valid_taps(std::size_t out_pos, std::size_t stride, std::size_t padding, std::size_t kernel,
                 std::size_t extent) {
    const auto base = static_cast<index_t>(out_pos * stride) - static_cast<index_t>(padding);
    index_t lo = base < 0 ? -base : 0;
    index_t hi = static_cast<index_t>(extent) - base;
    if (hi > static_cast<index_t>(kernel)) hi = static_cast<index_t>(kernel);
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> k,
                    std::span<const double> b, std::span<double> y) {
    const auto planes = static_cast<index_t>(d.batch * d.filters);
#pragma omp parallel for schedule(static) if (conv_work(d) >= kMinParallelWork)
    for (index_t plane = 0; plane < planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / d.filters;
        const std::size_t f = static_cast<std::size_t>(plane) % d.filters;
        for (std::size_t oh = 0; oh < d.out_height; ++oh) {
            const auto rows = valid_taps(oh, d.stride, d.padding, d.kernel, d.height);
            for (std::size_t ow = 0; ow < d.out_width; ++ow) {
                const auto cols = valid_taps(ow, d.stride, d.padding, d.kernel, d.width);
                double acc = 0.0;
                for (std::size_t c = 0; c < d.channels; ++c)
                    for (std::size_t ki = rows.lo; ki < rows.hi; ++ki) {
                        const std::size_t h = oh * d.stride + ki - d.padding;
                        const double* xr = x.data() + ((n * d.channels + c) * d.height + h) * d.width;
                        const double* kr = k.data() + ((f * d.channels + c) * d.kernel + ki) * d.kernel;
                        for (std::size_t kj = cols.lo; kj < cols.hi; ++kj)
                            acc += xr[ow * d.stride + kj - d.padding] * kr[kj];
                    }
                y[((n * d.filters + f) * d.out_height + oh) * d.out_width + ow] = b.empty() ? acc : acc + b[f];
            }
        }
    }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> k,
                           std::span<double> gx) {
    const auto batch = static_cast<index_t>(d.batch);
#pragma omp parallel for schedule(static) if (conv_work(d) >= kMinParallelWork)
    for (index_t ni = 0; ni < batch; ++ni) {
        const auto n = static_cast<std::size_t>(ni);
        for (std::size_t f = 0; f < d.filters; ++f)
            for (std::size_t oh = 0; oh < d.out_height; ++oh) {
                const auto rows = valid_taps(oh, d.stride, d.padding, d.kernel, d.height);
                for (std::size_t ow = 0; ow < d.out_width; ++ow) {
                    const auto cols = valid_taps(ow, d.stride, d.padding, d.kernel, d.width);
                    const double g = gy[((n * d.filters + f) * d.out_height + oh) * d.out_width + ow];
                    for (std::size_t c = 0; c < d.channels; ++c)
                        for (std::size_t ki = rows.lo; ki < rows.hi; ++ki) {
                            const std::size_t h = oh * d.stride + ki - d.padding;
                            double* gxr = gx.data() + ((n * d.channels + c) * d.height + h) * d.width;
                            const double* kr = k.data() + ((f * d.channels + c) * d.kernel + ki) * d.kernel;
                            for (std::size_t kj = cols.lo; kj < cols.hi; ++kj)
                                gxr[ow * d.stride + kj - d.padding] += g * kr[kj];
                        }
                }
            }
    }
}

void conv2d_backward_params(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gk, std::span<double> gb) {
    const auto filters = static_cast<index_t>(d.filters);
#pragma omp parallel for schedule(static) if (conv_work(d) >= kMinParallelWork)
    for (index_t fi = 0; fi < filters; ++fi) {
        const auto f = static_cast<std::size_t>(fi);
        for (std::size_t n = 0; n < d.batch; ++n)
            for (std::size_t oh = 0; oh < d.out_height; ++oh) {
                const auto rows = valid_taps(oh, d.stride, d.padding, d.kernel, d.height);
                for (std::size_t ow = 0; ow < d.out_width; ++ow) {
                    const auto cols = valid_taps(ow, d.stride, d.padding, d.kernel, d.width);
                    const double g = gy[((n * d.filters + f) * d.out_height + oh) * d.out_width + ow];
                    if (!gb.empty()) gb[f] += g;
                    if (gk.empty()) continue;
                    for (std::size_t c = 0; c < d.channels; ++c)
                        for (std::size_t ki = rows.lo; ki < rows.hi; ++ki) {
                            const std::size_t h = oh * d.stride + ki - d.padding;
                            const double* xr = x.data() + ((n * d.channels + c) * d.height + h) * d.width;
                            double* gkr = gk.data() + ((f * d.channels + c) * d.kernel + ki) * d.kernel;
                            for (std::size_t kj = cols.lo; kj < cols.hi; ++kj)
                                gkr[kj] += g * xr[ow * d.stride + kj - d.padding];
                        }
                }
            }
    }
}

}  // namespace scrollnet::kernels::parallel
