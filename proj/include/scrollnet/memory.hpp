#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "scrollnet/tensor.hpp"

namespace scrollnet {

/// Greedy herding over `count` feature rows of width `dim`: repeatedly pick
/// the sample that brings the mean of the selection closest (L2) to the
/// class mean. Returns the first min(budget, count) picks in order; ties go
/// to the lowest sample index.
std::vector<std::size_t> herding_select(std::span<const double> features, std::size_t dim, std::size_t budget);

struct Exemplar {
    std::vector<double> input;
    std::size_t task = 0;   // head the sample belongs to
    std::size_t label = 0;  // local label within that head
};

/// Training samples of one class offered to the memory.
struct ClassSamples {
    std::size_t global_class = 0;
    std::size_t task = 0;
    std::size_t label = 0;
    Shape sample_shape;
    std::vector<double> inputs;  // count × numel(sample_shape)

    std::size_t count() const { return inputs.size() / shape_numel(sample_shape); }
};

/// Maps a B×sample batch to B×dim features used for herding.
using FeatureFn = std::function<Tensor(const Tensor& batch)>;

struct RebalanceReport {
    std::size_t quota = 0;
    std::vector<std::size_t> dropped_classes;
};

/// Fixed-budget exemplar store with per-class lists kept in herding order.
class ExemplarMemory {
public:
    ExemplarMemory() = default;
    explicit ExemplarMemory(std::size_t budget) : budget_(budget) {}

    std::size_t budget() const noexcept { return budget_; }
    std::size_t size() const noexcept;
    bool empty() const noexcept { return size() == 0; }
    std::size_t classes() const noexcept { return per_class_.size(); }

    /// Quota floor(M / classes) with a minimum of 1. Existing classes are
    /// truncated to their herding prefix, new classes are herded. When the
    /// budget cannot hold one exemplar per class the highest class indices
    /// are dropped and reported.
    RebalanceReport rebalance(const std::vector<ClassSamples>& new_classes, const FeatureFn& features);

    /// Flat view: exemplars ordered by class index, then herding order.
    const Exemplar& at(std::size_t flat) const;
    const std::map<std::size_t, std::vector<Exemplar>>& per_class() const noexcept { return per_class_; }
    std::map<std::size_t, std::vector<Exemplar>>& per_class() noexcept { return per_class_; }

private:
    std::size_t budget_ = 0;
    std::map<std::size_t, std::vector<Exemplar>> per_class_;
};

/// Training batch; `tasks[i]` is the head of sample i, `labels[i]` its local label.
struct Batch {
    Tensor inputs;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> tasks;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Appends floor(mix_ratio * |batch|) exemplars drawn uniformly with
/// replacement. An empty memory or a zero draw count returns the batch as is.
Batch replay_batch(const Batch& task_batch, const ExemplarMemory& memory, double mix_ratio, std::mt19937_64& rng);

}  // namespace scrollnet
