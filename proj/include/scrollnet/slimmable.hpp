#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scrollnet/ops.hpp"
#include "scrollnet/tensor.hpp"

namespace scrollnet {

enum class LayerKind { conv, linear, norm, relu, pool };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One body layer. `out` is the full-width channel/feature extent of conv and
/// linear layers; the other kinds inherit the extent of their input.
struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    std::size_t out = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
    Shape input_shape;                      // per sample: (D) or (C,H,W)
    std::vector<LayerSpec> layers;          // body
    std::vector<std::size_t> head_classes;  // one head per task
    std::size_t splits = 1;                 // N nested widths

    bool operator==(const ModelSpec&) const = default;
};

/// Channels used by sub-network `width` (1..splits) under scroll `offset`:
/// the cyclic block of width*C/N channels starting at offset*C/N. The full
/// width returns 0..C-1 in order regardless of offset.
IndexList active_indices(std::size_t full_extent, std::size_t splits, std::size_t width, std::size_t offset);

/// One scalar coordinate of the parameter store.
struct ParamCoord {
    std::uint32_t tensor;
    std::uint32_t index;
    auto operator<=>(const ParamCoord&) const = default;
};

/// Sorted, duplicate-free.
using ParamIdSet = std::vector<ParamCoord>;

enum class Mode { train, eval };

/// Per-width normalization: affine parameters plus running statistics,
/// indexed by position within the active block.
struct NormWidthState {
    Tensor gamma;
    Tensor beta;
    NormStats stats;
};

/// A layered network executable at `splits` nested widths, with one
/// slimmable head per task and a scroll offset consulted at slicing time.
///
/// Hidden conv/linear layers slice both their output rows and input columns
/// by the active block; the first layer keeps every input channel and heads
/// keep every class output. Parameters never move when the offset changes.
class SlimmableModel {
public:
    /// Validates the architecture and initializes parameters (He-uniform
    /// weights, zero biases, unit norm scale). Throws ConfigError naming the
    /// offending layer when a hidden extent is not divisible by `splits`.
    static SlimmableModel build(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }
    std::size_t splits() const noexcept { return spec_.splits; }
    std::size_t num_heads() const noexcept { return spec_.head_classes.size(); }
    std::size_t offset() const noexcept { return offset_; }
    void set_offset(std::size_t offset);

    /// Width of the penultimate (body output) features at full width.
    std::size_t feature_width() const noexcept { return feature_width_; }

    /// Body at `width`; returns the penultimate activations.
    Tensor features(const Tensor& input, std::size_t width, Mode mode);

    /// Logits of the requested heads, all computed at `width`.
    std::vector<Tensor> forward(const Tensor& input, std::size_t width, std::span<const std::size_t> heads, Mode mode);
    Tensor forward_head(const Tensor& input, std::size_t width, std::size_t head, Mode mode);

    /// Stable-order parameter store; tensor indices of ParamCoord refer to it.
    std::span<Tensor> parameters() noexcept { return params_; }
    std::span<const Tensor> parameters() const noexcept { return params_; }
    const std::vector<std::string>& parameter_names() const noexcept { return names_; }
    std::size_t parameter_count() const;

    /// Coordinates of sub-network `width` at `offset`: the active blocks of
    /// every conv/linear/head tensor plus the private norm parameters of
    /// widths 1..width. Nested in `width`; the full width is everything.
    ParamIdSet param_ids(std::size_t width, std::size_t offset) const;

    void zero_grad();

    /// Deep copy (parameters and norm statistics).
    SlimmableModel clone() const;

    // Norm state for layer `layer` (must be a norm layer), width 1..splits.
    NormWidthState& norm_state(std::size_t layer, std::size_t width);
    const NormWidthState& norm_state(std::size_t layer, std::size_t width) const;

    double norm_momentum = 0.1;
    double norm_eps = 1e-5;

private:
    struct Layer {
        LayerSpec spec;
        std::size_t in_extent = 0;    // full-width input channels/features
        bool sliced_input = false;    // input comes from an earlier slimmable layer
        std::size_t weight = 0;       // parameter indices (conv/linear)
        std::size_t bias = 0;
        std::vector<NormWidthState> norms;  // norm layers, index width-1
        std::vector<std::size_t> norm_extent;
        std::vector<std::size_t> norm_params;  // gamma/beta parameter indices per width
    };
    struct Head {
        std::size_t weight = 0;
        std::size_t bias = 0;
    };

    SlimmableModel() = default;
    void check_width(std::size_t width) const;
    std::pair<Tensor, std::optional<IndexList>> run_body(const Tensor& input, std::size_t width, Mode mode);
    Tensor run_head(const Tensor& features, const std::optional<IndexList>& active, std::size_t width,
                    std::size_t head) const;
    std::size_t add_param(std::string name, Tensor t);

    ModelSpec spec_;
    std::size_t offset_ = 0;
    std::size_t feature_width_ = 0;
    bool feature_sliced_ = false;
    std::vector<Layer> layers_;
    std::vector<Head> heads_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
};

inline SlimmableModel build_model(ModelSpec spec, std::uint64_t seed) { return SlimmableModel::build(std::move(spec), seed); }

/// Per-layer active channel counts at each width, e.g. hidden 6 with N=3 -> (2,4,6).
std::vector<std::size_t> width_extents(std::size_t full_extent, std::size_t splits);

}  // namespace scrollnet
