#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "scrollnet/tensor.hpp"

namespace scrollnet {

using IndexList = std::vector<std::size_t>;

// ---- dense layers ---------------------------------------------------------

/// y[b,o] = sum_i x[b,i] w[o,i] + bias[o]. `bias` may be undefined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Zero-padded cross-correlation (no kernel flip). input B×C×H×W, kernel F×C×k×k.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor relu(const Tensor& x);

/// B×C×H×W -> B×C mean over the spatial extent.
Tensor global_avg_pool(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// Normalization statistics owned by the caller; updated in training mode only.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> var;
};

struct NormOptions {
    bool training = true;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel normalization over every axis but 1 (B×C or B×C×H×W).
/// Training mode uses batch statistics (biased variance) and folds them into
/// `stats` with the unbiased variance; evaluation mode reads `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, NormStats& stats,
                  const NormOptions& options);

// ---- structural -----------------------------------------------------------

/// Gather along the two leading axes: rows index axis 0, cols index axis 1.
/// nullopt keeps the whole axis. Gradients scatter back to the chosen entries.
Tensor take(const Tensor& x, const std::optional<IndexList>& rows, const std::optional<IndexList>& cols = std::nullopt);

/// Concatenate 2-D tensors with equal row counts along axis 1.
Tensor concat_columns(std::span<const Tensor> parts);

// ---- arithmetic -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// sum_i weights[i] * (x[i] - anchor[i])^2 as a scalar.
Tensor weighted_squared_distance(const Tensor& x, std::span<const double> anchor, std::span<const double> weights);

// ---- losses ---------------------------------------------------------------

/// Row-wise softmax of `logits / temperature`, max-subtracted.
std::vector<double> softmax_rows(std::span<const double> logits, std::size_t cols, double temperature = 1.0);

/// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Mean over the batch of -sum_k target[b,k] log softmax(logits / T)[b,k].
/// `target` is a row-stochastic B×K matrix treated as a constant.
Tensor soft_cross_entropy(const Tensor& logits, std::span<const double> target, double temperature);

}  // namespace scrollnet
