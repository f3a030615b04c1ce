#include "scrollnet/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "scrollnet/data.hpp"
#include "scrollnet/errors.hpp"

namespace scrollnet {

std::vector<std::size_t> herding_select(std::span<const double> features, std::size_t dim, std::size_t budget) {
    if (dim == 0 || features.empty() || features.size() % dim != 0) throw InputError("herding: malformed features");
    if (budget == 0) throw InputError("herding: budget must be at least 1");
    const std::size_t count = features.size() / dim;
    std::vector<double> mu(dim, 0.0);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < dim; ++j) mu[j] += features[i * dim + j];
    for (auto& v : mu) v /= static_cast<double>(count);

    const std::size_t picks = std::min(budget, count);
    std::vector<std::size_t> order;
    std::vector<bool> taken(count, false);
    std::vector<double> running(dim, 0.0);
    for (std::size_t k = 1; k <= picks; ++k) {
        std::size_t best = count;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < count; ++i) {
            if (taken[i]) continue;
            double dist = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double d = mu[j] - (running[j] + features[i * dim + j]) / static_cast<double>(k);
                dist += d * d;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = i;
            }
        }
        taken[best] = true;
        order.push_back(best);
        for (std::size_t j = 0; j < dim; ++j) running[j] += features[best * dim + j];
    }
    return order;
}

std::size_t ExemplarMemory::size() const noexcept {
    std::size_t n = 0;
    for (const auto& [cls, list] : per_class_) n += list.size();
    return n;
}

const Exemplar& ExemplarMemory::at(std::size_t flat) const {
    for (const auto& [cls, list] : per_class_) {
        if (flat < list.size()) return list[flat];
        flat -= list.size();
    }
    throw ContractError("exemplar index out of range");
}

RebalanceReport ExemplarMemory::rebalance(const std::vector<ClassSamples>& new_classes, const FeatureFn& features) {
    RebalanceReport report;
    if (budget_ == 0) return report;
    std::vector<std::size_t> all;
    for (const auto& [cls, list] : per_class_) all.push_back(cls);
    for (const auto& c : new_classes) all.push_back(c.global_class);
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    if (all.empty()) return report;

    report.quota = std::max<std::size_t>(1, budget_ / all.size());
    const std::size_t kept_classes = std::min(all.size(), budget_ / report.quota);
    const std::vector<std::size_t> keep(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kept_classes));
    report.dropped_classes.assign(all.begin() + static_cast<std::ptrdiff_t>(kept_classes), all.end());

    for (auto it = per_class_.begin(); it != per_class_.end();) {
        if (!std::binary_search(keep.begin(), keep.end(), it->first)) {
            it = per_class_.erase(it);
            continue;
        }
        if (it->second.size() > report.quota) it->second.resize(report.quota);
        ++it;
    }

    for (const auto& c : new_classes) {
        if (!std::binary_search(keep.begin(), keep.end(), c.global_class) || c.count() == 0) continue;
        const std::size_t d = shape_numel(c.sample_shape);
        Shape shape{c.count()};
        shape.insert(shape.end(), c.sample_shape.begin(), c.sample_shape.end());
        const Tensor feats = features(Tensor::from(shape, c.inputs));
        if (feats.rank() != 2 || feats.dim(0) != c.count()) throw ContractError("feature function returned wrong shape");
        const auto order = herding_select(feats.data(), feats.dim(1), report.quota);
        auto& list = per_class_[c.global_class];
        list.clear();
        for (auto i : order) {
            Exemplar e;
            e.input.assign(c.inputs.begin() + static_cast<std::ptrdiff_t>(i * d),
                           c.inputs.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
            e.task = c.task;
            e.label = c.label;
            list.push_back(std::move(e));
        }
    }
    return report;
}

Batch replay_batch(const Batch& task_batch, const ExemplarMemory& memory, double mix_ratio, std::mt19937_64& rng) {
    const std::size_t draws =
        mix_ratio > 0.0 ? static_cast<std::size_t>(std::floor(mix_ratio * static_cast<double>(task_batch.size()))) : 0;
    if (memory.empty() || draws == 0) return task_batch;
    const std::size_t stored = memory.size();
    const std::size_t d = task_batch.inputs.numel() / task_batch.size();

    Batch out;
    out.labels = task_batch.labels;
    out.tasks = task_batch.tasks;
    std::vector<double> values(task_batch.inputs.data().begin(), task_batch.inputs.data().end());
    values.reserve(values.size() + draws * d);
    for (std::size_t k = 0; k < draws; ++k) {
        const auto& e = memory.at(uniform_index(stored, rng));
        if (e.input.size() != d) throw ContractError("exemplar shape differs from batch samples");
        values.insert(values.end(), e.input.begin(), e.input.end());
        out.labels.push_back(e.label);
        out.tasks.push_back(e.task);
    }
    Shape shape = task_batch.inputs.shape();
    shape[0] = out.labels.size();
    out.inputs = Tensor::from(std::move(shape), std::move(values));
    return out;
}

}  // namespace scrollnet
