#include "scrollnet/slimmable.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "scrollnet/errors.hpp"

namespace scrollnet {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::linear: return "linear";
        case LayerKind::norm: return "norm";
        case LayerKind::relu: return "relu";
        case LayerKind::pool: return "pool";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
    for (auto k : {LayerKind::conv, LayerKind::linear, LayerKind::norm, LayerKind::relu, LayerKind::pool})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

IndexList active_indices(std::size_t full_extent, std::size_t splits, std::size_t width, std::size_t offset) {
    if (splits == 0 || width == 0 || width > splits) throw ContractError("active_indices: width out of range");
    if (offset >= splits) throw ContractError("active_indices: offset out of range");
    if (full_extent % splits != 0) throw ContractError("active_indices: extent not divisible by splits");
    IndexList idx;
    if (width == splits) {
        idx.resize(full_extent);
        for (std::size_t i = 0; i < full_extent; ++i) idx[i] = i;
        return idx;
    }
    const std::size_t block = full_extent / splits;
    const std::size_t start = offset * block;
    idx.reserve(width * block);
    for (std::size_t j = 0; j < width * block; ++j) idx.push_back((start + j) % full_extent);
    return idx;
}

std::vector<std::size_t> width_extents(std::size_t full_extent, std::size_t splits) {
    std::vector<std::size_t> out;
    for (std::size_t n = 1; n <= splits; ++n) out.push_back(n * full_extent / splits);
    return out;
}

std::size_t SlimmableModel::add_param(std::string name, Tensor t) {
    params_.push_back(std::move(t));
    names_.push_back(std::move(name));
    return params_.size() - 1;
}

SlimmableModel SlimmableModel::build(ModelSpec spec, std::uint64_t seed) {
    if (spec.splits == 0) throw ConfigError("number of splits must be at least 1");
    if (spec.input_shape.size() != 1 && spec.input_shape.size() != 3)
        throw ConfigError("input shape must be (D) or (C,H,W), got " + shape_string(spec.input_shape));
    if (spec.head_classes.empty()) throw ConfigError("model needs at least one task head");
    for (auto c : spec.head_classes)
        if (c == 0) throw ConfigError("task head with zero classes");

    SlimmableModel m;
    m.spec_ = spec;
    std::mt19937_64 rng(seed);
    auto he_uniform = [&rng](Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = dist(rng);
        return Tensor::from(std::move(shape), std::move(v), true);
    };

    const std::size_t N = spec.splits;
    bool spatial = spec.input_shape.size() == 3;
    std::size_t extent = spec.input_shape[0];
    std::size_t height = spatial ? spec.input_shape[1] : 1;
    std::size_t width = spatial ? spec.input_shape[2] : 1;
    bool sliced = false;

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& ls = spec.layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(ls.kind)) + ")";
        Layer layer;
        layer.spec = ls;
        layer.in_extent = extent;
        layer.sliced_input = sliced;
        switch (ls.kind) {
            case LayerKind::linear:
            case LayerKind::conv: {
                if (ls.out == 0) throw ConfigError(where + ": output extent must be positive");
                if (ls.out % N != 0)
                    throw ConfigError(where + ": width " + std::to_string(ls.out) + " not divisible by splits N=" +
                                      std::to_string(N));
                const std::string base = "layer" + std::to_string(i);
                if (ls.kind == LayerKind::linear) {
                    if (spatial) throw ConfigError(where + ": linear layer needs flat input; add a pool layer");
                    layer.weight = m.add_param(base + ".weight", he_uniform({ls.out, extent}, extent));
                } else {
                    if (!spatial) throw ConfigError(where + ": conv layer needs (C,H,W) input");
                    if (ls.stride == 0 || ls.kernel == 0) throw ConfigError(where + ": kernel and stride must be positive");
                    if (ls.kernel > height + 2 * ls.padding || ls.kernel > width + 2 * ls.padding)
                        throw ConfigError(where + ": kernel larger than padded input");
                    layer.weight = m.add_param(base + ".weight",
                                               he_uniform({ls.out, extent, ls.kernel, ls.kernel},
                                                          extent * ls.kernel * ls.kernel));
                    height = (height + 2 * ls.padding - ls.kernel) / ls.stride + 1;
                    width = (width + 2 * ls.padding - ls.kernel) / ls.stride + 1;
                }
                layer.bias = m.add_param(base + ".bias", Tensor::zeros({ls.out}, true));
                extent = ls.out;
                sliced = true;
                break;
            }
            case LayerKind::norm: {
                for (std::size_t n = 1; n <= N; ++n) {
                    const std::size_t count = sliced ? n * extent / N : extent;
                    NormWidthState st;
                    st.gamma = Tensor::filled({count}, 1.0, true);
                    st.beta = Tensor::zeros({count}, true);
                    st.stats.mean.assign(count, 0.0);
                    st.stats.var.assign(count, 1.0);
                    const std::string base = "layer" + std::to_string(i) + ".norm" + std::to_string(n);
                    layer.norm_params.push_back(m.add_param(base + ".gamma", st.gamma));
                    layer.norm_params.push_back(m.add_param(base + ".beta", st.beta));
                    layer.norm_extent.push_back(count);
                    layer.norms.push_back(std::move(st));
                }
                break;
            }
            case LayerKind::relu: break;
            case LayerKind::pool:
                if (!spatial) throw ConfigError(where + ": pool needs (C,H,W) input");
                spatial = false;
                height = width = 1;
                break;
        }
        m.layers_.push_back(std::move(layer));
    }
    if (spatial) throw ConfigError("body must end in flat features; add a pool layer");
    m.feature_width_ = extent;
    m.feature_sliced_ = sliced;

    for (std::size_t h = 0; h < spec.head_classes.size(); ++h) {
        Head head;
        const std::string base = "head" + std::to_string(h);
        head.weight = m.add_param(base + ".weight", he_uniform({spec.head_classes[h], extent}, extent));
        head.bias = m.add_param(base + ".bias", Tensor::zeros({spec.head_classes[h]}, true));
        m.heads_.push_back(head);
    }
    return m;
}

void SlimmableModel::set_offset(std::size_t offset) {
    if (offset >= spec_.splits) throw ContractError("scroll offset " + std::to_string(offset) + " out of range");
    offset_ = offset;
}

void SlimmableModel::check_width(std::size_t width) const {
    if (width == 0 || width > spec_.splits)
        throw ContractError("width index " + std::to_string(width) + " outside 1.." + std::to_string(spec_.splits));
}

std::size_t SlimmableModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

std::pair<Tensor, std::optional<IndexList>> SlimmableModel::run_body(const Tensor& input, std::size_t width, Mode mode) {
    check_width(width);
    {
        const auto& s = input.shape();
        if (s.size() != spec_.input_shape.size() + 1 || !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(),
                                                                     s.begin() + 1))
            throw DimensionError("model input " + shape_string(s) + " does not match per-sample shape " +
                                 shape_string(spec_.input_shape));
    }
    const bool full = width == spec_.splits;
    Tensor h = input;
    std::optional<IndexList> active;
    for (auto& layer : layers_) {
        const auto& ls = layer.spec;
        switch (ls.kind) {
            case LayerKind::linear:
            case LayerKind::conv: {
                Tensor w = params_[layer.weight];
                Tensor b = params_[layer.bias];
                IndexList out_idx = active_indices(ls.out, spec_.splits, width, offset_);
                if (!full) {
                    w = take(w, out_idx, active);
                    b = take(b, out_idx);
                }
                h = ls.kind == LayerKind::linear ? linear(h, w, b) : conv2d(h, w, b, ls.stride, ls.padding);
                active = std::move(out_idx);
                break;
            }
            case LayerKind::norm: {
                auto& st = layer.norms[width - 1];
                NormOptions opts{mode == Mode::train, norm_momentum, norm_eps};
                h = batch_norm(h, st.gamma, st.beta, st.stats, opts);
                break;
            }
            case LayerKind::relu: h = relu(h); break;
            case LayerKind::pool: h = global_avg_pool(h); break;
        }
    }
    return {h, active};
}

Tensor SlimmableModel::run_head(const Tensor& features, const std::optional<IndexList>& active, std::size_t width,
                                std::size_t head) const {
    if (head >= heads_.size()) throw ContractError("head " + std::to_string(head) + " does not exist");
    Tensor w = params_[heads_[head].weight];
    if (width != spec_.splits && active) w = take(w, std::nullopt, active);
    return linear(features, w, params_[heads_[head].bias]);
}

Tensor SlimmableModel::features(const Tensor& input, std::size_t width, Mode mode) {
    return run_body(input, width, mode).first;
}

std::vector<Tensor> SlimmableModel::forward(const Tensor& input, std::size_t width, std::span<const std::size_t> heads,
                                            Mode mode) {
    for (auto h : heads)
        if (h >= heads_.size()) throw ContractError("head " + std::to_string(h) + " does not exist");
    auto [feat, active] = run_body(input, width, mode);
    std::vector<Tensor> out;
    out.reserve(heads.size());
    for (auto h : heads) out.push_back(run_head(feat, active, width, h));
    return out;
}

Tensor SlimmableModel::forward_head(const Tensor& input, std::size_t width, std::size_t head, Mode mode) {
    const std::size_t heads[] = {head};
    return forward(input, width, heads, mode).front();
}

ParamIdSet SlimmableModel::param_ids(std::size_t width, std::size_t offset) const {
    check_width(width);
    if (offset >= spec_.splits) throw ContractError("param_ids: offset out of range");
    ParamIdSet ids;
    auto add_all = [&](std::size_t t) {
        for (std::size_t i = 0; i < params_[t].numel(); ++i)
            ids.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
    };
    // rows x cols block of a tensor whose trailing axes (after the first two) are kept whole.
    auto add_block = [&](std::size_t t, const IndexList& rows, const std::optional<IndexList>& cols) {
        const auto& s = params_[t].shape();
        const std::size_t n1 = s.size() >= 2 ? s[1] : 1;
        const std::size_t inner = params_[t].numel() / (s[0] * n1);
        IndexList all;
        if (!cols) {
            all.resize(n1);
            for (std::size_t i = 0; i < n1; ++i) all[i] = i;
        }
        const IndexList& c = cols ? *cols : all;
        for (auto r : rows)
            for (auto cc : c)
                for (std::size_t k = 0; k < inner; ++k)
                    ids.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>((r * n1 + cc) * inner + k)});
    };

    std::optional<IndexList> active;
    for (const auto& layer : layers_) {
        switch (layer.spec.kind) {
            case LayerKind::linear:
            case LayerKind::conv: {
                IndexList out_idx = active_indices(layer.spec.out, spec_.splits, width, offset);
                add_block(layer.weight, out_idx, active);
                add_block(layer.bias, out_idx, std::nullopt);
                active = std::move(out_idx);
                break;
            }
            case LayerKind::norm:
                for (std::size_t n = 1; n <= width; ++n) {
                    add_all(layer.norm_params[2 * (n - 1)]);
                    add_all(layer.norm_params[2 * (n - 1) + 1]);
                }
                break;
            default: break;
        }
    }
    for (const auto& head : heads_) {
        IndexList rows(params_[head.weight].dim(0));
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        add_block(head.weight, rows, active);
        add_all(head.bias);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

void SlimmableModel::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

SlimmableModel SlimmableModel::clone() const {
    SlimmableModel m = *this;
    for (auto& p : m.params_) p = p.clone(p.requires_grad());
    for (auto& layer : m.layers_)
        for (std::size_t n = 0; n < layer.norms.size(); ++n) {
            layer.norms[n].gamma = m.params_[layer.norm_params[2 * n]];
            layer.norms[n].beta = m.params_[layer.norm_params[2 * n + 1]];
        }
    return m;
}

NormWidthState& SlimmableModel::norm_state(std::size_t layer, std::size_t width) {
    if (layer >= layers_.size() || layers_[layer].spec.kind != LayerKind::norm)
        throw ContractError("layer " + std::to_string(layer) + " is not a norm layer");
    check_width(width);
    return layers_[layer].norms[width - 1];
}

const NormWidthState& SlimmableModel::norm_state(std::size_t layer, std::size_t width) const {
    return const_cast<SlimmableModel*>(this)->norm_state(layer, width);
}

}  // namespace scrollnet
