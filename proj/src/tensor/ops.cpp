#include "scrollnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "scrollnet/errors.hpp"
#include "scrollnet/kernels.hpp"

namespace scrollnet {

namespace {

// Gradient sink of an input, or an empty span when it takes no gradient.
std::span<double> grad_sink(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return {};
    Tensor handle = t;
    return handle.mutable_grad();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
}

std::span<const double> optional_data(const Tensor& t) { return t.defined() ? t.data() : std::span<const double>{}; }

}  // namespace

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const kernels::LinearDims d{input.dim(0), input.dim(1), weight.dim(0)};
    if (weight.dim(1) != d.in)
        throw DimensionError("linear: input " + shape_string(input.shape()) + " vs weight " +
                             shape_string(weight.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.out))
        throw DimensionError("linear: bias " + shape_string(bias.shape()) + " vs " + std::to_string(d.out) +
                             " outputs");
    std::vector<double> out(d.batch * d.out);
    kernels::linear_forward(d, input.data(), weight.data(), optional_data(bias), out);
    return Tensor::make_result({d.batch, d.out}, std::move(out), {input, weight, bias},
                               [input, weight, bias, d](const detail::TensorImpl& o) {
                                   if (auto gx = grad_sink(input); !gx.empty())
                                       kernels::linear_backward_input(d, o.grad, weight.data(), gx);
                                   auto gw = grad_sink(weight);
                                   auto gb = grad_sink(bias);
                                   if (!gw.empty() || !gb.empty())
                                       kernels::linear_backward_params(d, o.grad, input.data(), gw, gb);
                               });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    if (kernel.dim(1) != input.dim(1))
        throw DimensionError("conv2d: input channels " + std::to_string(input.dim(1)) + " vs kernel " +
                             shape_string(kernel.shape()));
    if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv2d: kernel must be square");
    const auto d = kernels::make_conv_dims(input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
                                           kernel.dim(2), stride, padding);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.filters))
        throw DimensionError("conv2d: bias " + shape_string(bias.shape()));
    std::vector<double> out(d.batch * d.filters * d.out_height * d.out_width);
    kernels::conv2d_forward(d, input.data(), kernel.data(), optional_data(bias), out);
    return Tensor::make_result({d.batch, d.filters, d.out_height, d.out_width}, std::move(out),
                               {input, kernel, bias}, [input, kernel, bias, d](const detail::TensorImpl& o) {
                                   if (auto gx = grad_sink(input); !gx.empty())
                                       kernels::conv2d_backward_input(d, o.grad, kernel.data(), gx);
                                   auto gk = grad_sink(kernel);
                                   auto gb = grad_sink(bias);
                                   if (!gk.empty() || !gb.empty())
                                       kernels::conv2d_backward_params(d, o.grad, input.data(), gk, gb);
                               });
}

Tensor relu(const Tensor& x) {
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [x](const detail::TensorImpl& o) {
        auto gx = grad_sink(x);
        auto in = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (in[i] > 0.0) gx[i] += o.grad[i];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const std::size_t planes = x.dim(0) * x.dim(1);
    const std::size_t area = x.dim(2) * x.dim(3);
    auto in = x.data();
    std::vector<double> out(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
        out[p] = acc / static_cast<double>(area);
    }
    return Tensor::make_result({x.dim(0), x.dim(1)}, std::move(out), {x},
                               [x, planes, area](const detail::TensorImpl& o) {
                                   auto gx = grad_sink(x);
                                   for (std::size_t p = 0; p < planes; ++p) {
                                       const double g = o.grad[p] / static_cast<double>(area);
                                       for (std::size_t i = 0; i < area; ++i) gx[p * area + i] += g;
                                   }
                               });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [x](const detail::TensorImpl& o) {
        auto gx = grad_sink(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
    });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, NormStats& stats,
                  const NormOptions& options) {
    if (x.rank() != 2 && x.rank() != 4)
        throw DimensionError("batch_norm expects B×C or B×C×H×W, got " + shape_string(x.shape()));
    const std::size_t batch = x.dim(0);
    const std::size_t channels = x.dim(1);
    const std::size_t area = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (gamma.numel() != channels || beta.numel() != channels || stats.mean.size() != channels ||
        stats.var.size() != channels)
        throw DimensionError("batch_norm: parameters sized for a different channel count than " +
                             shape_string(x.shape()));
    const std::size_t count = batch * area;
    auto in = x.data();
    auto at = [&](std::size_t b, std::size_t c, std::size_t i) { return (b * channels + c) * area + i; };

    auto xhat = std::make_shared<std::vector<double>>(in.size());
    auto inv_std = std::make_shared<std::vector<double>>(channels);
    std::vector<double> out(in.size());
    for (std::size_t c = 0; c < channels; ++c) {
        double mean = 0.0;
        double var = 0.0;
        if (options.training) {
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < area; ++i) mean += in[at(b, c, i)];
            mean /= static_cast<double>(count);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < area; ++i) {
                    const double dev = in[at(b, c, i)] - mean;
                    var += dev * dev;
                }
            var /= static_cast<double>(count);
            const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
            stats.mean[c] = (1.0 - options.momentum) * stats.mean[c] + options.momentum * mean;
            stats.var[c] = (1.0 - options.momentum) * stats.var[c] + options.momentum * unbiased;
        } else {
            mean = stats.mean[c];
            var = stats.var[c];
        }
        const double s = 1.0 / std::sqrt(var + options.eps);
        (*inv_std)[c] = s;
        const double g = gamma.data()[c];
        const double sh = beta.data()[c];
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < area; ++i) {
                const auto k = at(b, c, i);
                (*xhat)[k] = (in[k] - mean) * s;
                out[k] = g * (*xhat)[k] + sh;
            }
    }
    const bool training = options.training;
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat, inv_std, training, batch, channels, area, count](const detail::TensorImpl& o) {
            auto gx = grad_sink(x);
            auto gg = grad_sink(gamma);
            auto gb = grad_sink(beta);
            auto at = [&](std::size_t b, std::size_t c, std::size_t i) { return (b * channels + c) * area + i; };
            for (std::size_t c = 0; c < channels; ++c) {
                double sum_dy = 0.0;
                double sum_dy_xhat = 0.0;
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < area; ++i) {
                        const auto k = at(b, c, i);
                        sum_dy += o.grad[k];
                        sum_dy_xhat += o.grad[k] * (*xhat)[k];
                    }
                if (!gg.empty()) gg[c] += sum_dy_xhat;
                if (!gb.empty()) gb[c] += sum_dy;
                if (gx.empty()) continue;
                const double g = gamma.data()[c];
                const double s = (*inv_std)[c];
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < area; ++i) {
                        const auto k = at(b, c, i);
                        if (training) {
                            const double m = static_cast<double>(count);
                            gx[k] += g * s / m * (m * o.grad[k] - sum_dy - (*xhat)[k] * sum_dy_xhat);
                        } else {
                            gx[k] += g * s * o.grad[k];
                        }
                    }
            }
        });
}

Tensor take(const Tensor& x, const std::optional<IndexList>& rows, const std::optional<IndexList>& cols) {
    if (cols && x.rank() < 2) throw DimensionError("take: column selection on " + shape_string(x.shape()));
    const std::size_t n0 = x.dim(0);
    const std::size_t n1 = x.rank() >= 2 ? x.dim(1) : 1;
    const std::size_t inner = x.numel() / (n0 * n1);
    IndexList r = rows ? *rows : IndexList{};
    IndexList c = cols ? *cols : IndexList{};
    if (!rows) {
        r.resize(n0);
        for (std::size_t i = 0; i < n0; ++i) r[i] = i;
    }
    if (!cols) {
        c.resize(n1);
        for (std::size_t i = 0; i < n1; ++i) c[i] = i;
    }
    for (auto i : r)
        if (i >= n0) throw DimensionError("take: row index " + std::to_string(i) + " out of range");
    for (auto i : c)
        if (i >= n1) throw DimensionError("take: column index " + std::to_string(i) + " out of range");
    if (r.empty() || c.empty()) throw DimensionError("take: empty selection");

    Shape shape = x.shape();
    shape[0] = r.size();
    if (x.rank() >= 2) shape[1] = c.size();
    auto in = x.data();
    std::vector<double> out(r.size() * c.size() * inner);
    for (std::size_t a = 0; a < r.size(); ++a)
        for (std::size_t b = 0; b < c.size(); ++b)
            std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((r[a] * n1 + c[b]) * inner), inner,
                        out.begin() + static_cast<std::ptrdiff_t>((a * c.size() + b) * inner));
    return Tensor::make_result(std::move(shape), std::move(out), {x},
                               [x, r = std::move(r), c = std::move(c), n1, inner](const detail::TensorImpl& o) {
                                   auto gx = grad_sink(x);
                                   for (std::size_t a = 0; a < r.size(); ++a)
                                       for (std::size_t b = 0; b < c.size(); ++b)
                                           for (std::size_t k = 0; k < inner; ++k)
                                               gx[(r[a] * n1 + c[b]) * inner + k] +=
                                                   o.grad[(a * c.size() + b) * inner + k];
                               });
}

Tensor concat_columns(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_columns: no inputs");
    const std::size_t rows = parts.front().dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_columns");
        if (p.dim(0) != rows) throw DimensionError("concat_columns: row counts differ");
        total += p.dim(1);
    }
    std::vector<double> out(rows * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        offset += w;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return Tensor::make_result({rows, total}, std::move(out), inputs,
                               [inputs, rows, total](const detail::TensorImpl& o) {
                                   std::size_t offset = 0;
                                   for (const auto& p : inputs) {
                                       const std::size_t w = p.dim(1);
                                       if (auto g = grad_sink(p); !g.empty())
                                           for (std::size_t r = 0; r < rows; ++r)
                                               for (std::size_t j = 0; j < w; ++j)
                                                   g[r * w + j] += o.grad[r * total + offset + j];
                                       offset += w;
                                   }
                               });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](const detail::TensorImpl& o) {
        for (const Tensor* t : {&a, &b})
            if (auto g = grad_sink(*t); !g.empty())
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
    return Tensor::make_result(x.shape(), std::move(out), {x}, [x, factor](const detail::TensorImpl& o) {
        auto g = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return Tensor::make_result({1}, {acc}, {x}, [x](const detail::TensorImpl& o) {
        auto g = grad_sink(x);
        for (auto& v : g) v += o.grad[0];
    });
}

Tensor sum_squares(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v * v;
    return Tensor::make_result({1}, {acc}, {x}, [x](const detail::TensorImpl& o) {
        auto g = grad_sink(x);
        auto in = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in[i] * o.grad[0];
    });
}

Tensor weighted_squared_distance(const Tensor& x, std::span<const double> anchor, std::span<const double> weights) {
    if (anchor.size() != x.numel() || weights.size() != x.numel())
        throw ContractError("weighted_squared_distance: anchor/weights sized " + std::to_string(anchor.size()) + "/" +
                            std::to_string(weights.size()) + " for " + shape_string(x.shape()));
    double acc = 0.0;
    auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double d = in[i] - anchor[i];
        acc += weights[i] * d * d;
    }
    std::vector<double> a(anchor.begin(), anchor.end());
    std::vector<double> w(weights.begin(), weights.end());
    return Tensor::make_result({1}, {acc}, {x},
                               [x, a = std::move(a), w = std::move(w)](const detail::TensorImpl& o) {
                                   auto g = grad_sink(x);
                                   auto in = x.data();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] += 2.0 * w[i] * (in[i] - a[i]) * o.grad[0];
                               });
}

std::vector<double> softmax_rows(std::span<const double> logits, std::size_t cols, double temperature) {
    if (cols == 0 || logits.size() % cols != 0) throw DimensionError("softmax_rows: ragged logits");
    if (!(temperature > 0.0)) throw InputError("softmax temperature must be positive");
    std::vector<double> out(logits.size());
    for (std::size_t r = 0; r < logits.size() / cols; ++r) {
        const auto row = logits.subspan(r * cols, cols);
        const double mx = *std::max_element(row.begin(), row.end()) / temperature;
        double z = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            out[r * cols + k] = std::exp(row[k] / temperature - mx);
            z += out[r * cols + k];
        }
        for (std::size_t k = 0; k < cols; ++k) out[r * cols + k] /= z;
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != batch)
        throw InputError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
    for (auto l : labels)
        if (l >= classes)
            throw InputError("label " + std::to_string(l) + " out of range [0," + std::to_string(classes) + ")");
    auto in = logits.data();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = in.subspan(b * classes, classes);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        total += (std::log(z) + mx) - row[labels[b]];
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return Tensor::make_result({1}, {total / static_cast<double>(batch)}, {logits},
                               [logits, lab = std::move(lab), batch, classes](const detail::TensorImpl& o) {
                                   auto g = grad_sink(logits);
                                   const auto probs = softmax_rows(logits.data(), classes);
                                   const double s = o.grad[0] / static_cast<double>(batch);
                                   for (std::size_t b = 0; b < batch; ++b)
                                       for (std::size_t k = 0; k < classes; ++k) {
                                           const double onehot = k == lab[b] ? 1.0 : 0.0;
                                           g[b * classes + k] += (probs[b * classes + k] - onehot) * s;
                                       }
                               });
}

Tensor soft_cross_entropy(const Tensor& logits, std::span<const double> target, double temperature) {
    require_rank(logits, 2, "soft_cross_entropy");
    if (target.size() != logits.numel()) throw DimensionError("soft_cross_entropy: target shape mismatch");
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    auto in = logits.data();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = in.subspan(b * classes, classes);
        const double mx = *std::max_element(row.begin(), row.end()) / temperature;
        double z = 0.0;
        for (double v : row) z += std::exp(v / temperature - mx);
        const double lse = std::log(z) + mx;
        for (std::size_t k = 0; k < classes; ++k) {
            const double p = target[b * classes + k];
            if (p != 0.0) total -= p * (row[k] / temperature - lse);
        }
    }
    std::vector<double> tgt(target.begin(), target.end());
    return Tensor::make_result(
        {1}, {total / static_cast<double>(batch)}, {logits},
        [logits, tgt = std::move(tgt), batch, classes, temperature](const detail::TensorImpl& o) {
            auto g = grad_sink(logits);
            const auto q = softmax_rows(logits.data(), classes, temperature);
            const double s = o.grad[0] / (static_cast<double>(batch) * temperature);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += (q[i] - tgt[i]) * s;
        });
}

}  // namespace scrollnet
