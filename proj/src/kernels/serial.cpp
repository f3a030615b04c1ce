#include "scrollnet/kernels.hpp"

namespace scrollnet::kernels::serial {

void linear_forward(const LinearDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
    for (std::size_t n = 0; n < d.batch; ++n) {
        for (std::size_t o = 0; o < d.out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d.in; ++i) acc += x[n * d.in + i] * w[o * d.in + i];
            y[n * d.out + o] = b.empty() ? acc : acc + b[o];
        }
    }
}

void linear_backward_input(const LinearDims& d, std::span<const double> gy, std::span<const double> w,
                           std::span<double> gx) {
    for (std::size_t n = 0; n < d.batch; ++n) {
        for (std::size_t o = 0; o < d.out; ++o) {
            const double g = gy[n * d.out + o];
            for (std::size_t i = 0; i < d.in; ++i) gx[n * d.in + i] += g * w[o * d.in + i];
        }
    }
}

void linear_backward_params(const LinearDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb) {
    for (std::size_t n = 0; n < d.batch; ++n) {
        for (std::size_t o = 0; o < d.out; ++o) {
            const double g = gy[n * d.out + o];
            if (!gb.empty()) gb[o] += g;
            if (gw.empty()) continue;
            for (std::size_t i = 0; i < d.in; ++i) gw[o * d.in + i] += g * x[n * d.in + i];
        }
    }
}

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> k,
                    std::span<const double> b, std::span<double> y) {
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t f = 0; f < d.filters; ++f)
            for (std::size_t oh = 0; oh < d.out_height; ++oh)
                for (std::size_t ow = 0; ow < d.out_width; ++ow) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < d.channels; ++c)
                        for (std::size_t ki = 0; ki < d.kernel; ++ki) {
                            const auto h = static_cast<std::ptrdiff_t>(oh * d.stride + ki) -
                                           static_cast<std::ptrdiff_t>(d.padding);
                            if (h < 0 || h >= static_cast<std::ptrdiff_t>(d.height)) continue;
                            for (std::size_t kj = 0; kj < d.kernel; ++kj) {
                                const auto wc = static_cast<std::ptrdiff_t>(ow * d.stride + kj) -
                                                static_cast<std::ptrdiff_t>(d.padding);
                                if (wc < 0 || wc >= static_cast<std::ptrdiff_t>(d.width)) continue;
                                acc += x[((n * d.channels + c) * d.height + h) * d.width + wc] *
                                       k[((f * d.channels + c) * d.kernel + ki) * d.kernel + kj];
                            }
                        }
                    y[((n * d.filters + f) * d.out_height + oh) * d.out_width + ow] = b.empty() ? acc : acc + b[f];
                }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> gy, std::span<const double> k,
                           std::span<double> gx) {
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t f = 0; f < d.filters; ++f)
            for (std::size_t oh = 0; oh < d.out_height; ++oh)
                for (std::size_t ow = 0; ow < d.out_width; ++ow) {
                    const double g = gy[((n * d.filters + f) * d.out_height + oh) * d.out_width + ow];
                    for (std::size_t c = 0; c < d.channels; ++c)
                        for (std::size_t ki = 0; ki < d.kernel; ++ki) {
                            const auto h = static_cast<std::ptrdiff_t>(oh * d.stride + ki) -
                                           static_cast<std::ptrdiff_t>(d.padding);
                            if (h < 0 || h >= static_cast<std::ptrdiff_t>(d.height)) continue;
                            for (std::size_t kj = 0; kj < d.kernel; ++kj) {
                                const auto wc = static_cast<std::ptrdiff_t>(ow * d.stride + kj) -
                                                static_cast<std::ptrdiff_t>(d.padding);
                                if (wc < 0 || wc >= static_cast<std::ptrdiff_t>(d.width)) continue;
                                gx[((n * d.channels + c) * d.height + h) * d.width + wc] +=
                                    g * k[((f * d.channels + c) * d.kernel + ki) * d.kernel + kj];
                            }
                        }
                }
}

void conv2d_backward_params(const ConvDims& d, std::span<const double> gy, std::span<const double> x,
                            std::span<double> gk, std::span<double> gb) {
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t f = 0; f < d.filters; ++f)
            for (std::size_t oh = 0; oh < d.out_height; ++oh)
                for (std::size_t ow = 0; ow < d.out_width; ++ow) {
                    const double g = gy[((n * d.filters + f) * d.out_height + oh) * d.out_width + ow];
                    if (!gb.empty()) gb[f] += g;
                    if (gk.empty()) continue;
                    for (std::size_t c = 0; c < d.channels; ++c)
                        for (std::size_t ki = 0; ki < d.kernel; ++ki) {
                            const auto h = static_cast<std::ptrdiff_t>(oh * d.stride + ki) -
                                           static_cast<std::ptrdiff_t>(d.padding);
                            if (h < 0 || h >= static_cast<std::ptrdiff_t>(d.height)) continue;
                            for (std::size_t kj = 0; kj < d.kernel; ++kj) {
                                const auto wc = static_cast<std::ptrdiff_t>(ow * d.stride + kj) -
                                                static_cast<std::ptrdiff_t>(d.padding);
                                if (wc < 0 || wc >= static_cast<std::ptrdiff_t>(d.width)) continue;
                                gk[((f * d.channels + c) * d.kernel + ki) * d.kernel + kj] +=
                                    g * x[((n * d.channels + c) * d.height + h) * d.width + wc];
                            }
                        }
                }
}

}  // namespace scrollnet::kernels::serial
