#pragma once

// Small random architectures and inputs shared by the unit and acceptance tests.

#include "scrollnet/slimmable.hpp"
#include "support/oracles.hpp"

namespace fixtures {

using namespace scrollnet;

// A random MLP or small CNN whose hidden extents are divisible by `splits`.
inline ModelSpec random_spec(oracle::Rng& rng, std::size_t splits, bool allow_conv = true) {
    ModelSpec spec;
    spec.splits = splits;
    const bool conv = allow_conv && oracle::pick(rng, 0, 2) == 0;
    const bool norm = oracle::pick(rng, 0, 1) == 1;
    const std::size_t depth = oracle::pick(rng, 1, 3);
    if (conv) {
        spec.input_shape = {oracle::pick(rng, 1, 3), oracle::pick(rng, 4, 6), oracle::pick(rng, 4, 6)};
        for (std::size_t i = 0; i < depth; ++i) {
            spec.layers.push_back({LayerKind::conv, splits * oracle::pick(rng, 1, 3), 3, oracle::pick(rng, 1, 2), 1});
            if (norm) spec.layers.push_back({LayerKind::norm});
            spec.layers.push_back({LayerKind::relu});
        }
        spec.layers.push_back({LayerKind::pool});
    } else {
        spec.input_shape = {oracle::pick(rng, 2, 7)};
        for (std::size_t i = 0; i < depth; ++i) {
            spec.layers.push_back({LayerKind::linear, splits * oracle::pick(rng, 1, 4)});
            if (norm) spec.layers.push_back({LayerKind::norm});
            spec.layers.push_back({LayerKind::relu});
        }
    }
    const std::size_t heads = oracle::pick(rng, 1, 3);
    for (std::size_t h = 0; h < heads; ++h) spec.head_classes.push_back(oracle::pick(rng, 2, 4));
    return spec;
}

inline ModelSpec mlp_spec(std::size_t in, std::vector<std::size_t> hidden, std::size_t splits, bool norm,
                          std::vector<std::size_t> heads) {
    ModelSpec spec;
    spec.input_shape = {in};
    spec.splits = splits;
    spec.head_classes = std::move(heads);
    for (auto h : hidden) {
        spec.layers.push_back({LayerKind::linear, h});
        if (norm) spec.layers.push_back({LayerKind::norm});
        spec.layers.push_back({LayerKind::relu});
    }
    return spec;
}

inline Tensor random_input(const ModelSpec& spec, std::size_t batch, oracle::Rng& rng) {
    Shape s{batch};
    s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
    return oracle::random_tensor(std::move(s), rng, false);
}

// Every coordinate of the store, sorted.
inline ParamIdSet all_ids(const SlimmableModel& m) {
    ParamIdSet ids;
    const auto params = m.parameters();
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].numel(); ++i)
            ids.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i)});
    return ids;
}

inline bool contains(const ParamIdSet& ids, ParamCoord c) { return std::binary_search(ids.begin(), ids.end(), c); }

inline bool strict_subset(const ParamIdSet& a, const ParamIdSet& b) {
    return a.size() < b.size() && std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace fixtures
