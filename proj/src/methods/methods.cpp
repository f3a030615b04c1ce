#include "scrollnet/methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scrollnet/errors.hpp"

namespace scrollnet {

std::string_view to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::ft: return "ft";
        case StrategyKind::ewc: return "ewc";
        case StrategyKind::mas: return "mas";
        case StrategyKind::lwf: return "lwf";
    }
    return "?";
}

StrategyKind parse_strategy(std::string_view name) {
    for (auto k : {StrategyKind::ft, StrategyKind::ewc, StrategyKind::mas, StrategyKind::lwf})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown strategy '" + std::string(name) + "' (expected ft, ewc, mas or lwf)");
}

double StrategyConfig::effective_lambda() const {
    if (lambda > 0.0) return lambda;
    switch (kind) {
        case StrategyKind::ewc: return 5000.0;
        case StrategyKind::mas:
        case StrategyKind::lwf: return 1.0;
        case StrategyKind::ft: return 0.0;
    }
    return 0.0;
}

Tensor classification_loss(std::span<const Tensor> head_logits, const Batch& batch) {
    if (batch.size() == 0) throw InputError("empty batch");
    if (batch.tasks.size() != batch.size()) throw InputError("batch task list does not match labels");
    const std::size_t first = batch.tasks.front();
    const bool single = std::all_of(batch.tasks.begin(), batch.tasks.end(), [&](auto t) { return t == first; });
    if (single) {
        if (first >= head_logits.size()) throw ContractError("logits for head " + std::to_string(first) + " missing");
        return softmax_cross_entropy(head_logits[first], batch.labels);
    }
    const std::size_t last = *std::max_element(batch.tasks.begin(), batch.tasks.end());
    if (last >= head_logits.size()) throw ContractError("logits for head " + std::to_string(last) + " missing");
    std::vector<std::size_t> offsets(last + 1, 0);
    for (std::size_t h = 1; h <= last; ++h) offsets[h] = offsets[h - 1] + head_logits[h - 1].dim(1);
    std::vector<std::size_t> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch.labels[i] >= head_logits[batch.tasks[i]].dim(1))
            throw InputError("label " + std::to_string(batch.labels[i]) + " out of range for head " +
                             std::to_string(batch.tasks[i]));
        labels[i] = offsets[batch.tasks[i]] + batch.labels[i];
    }
    return softmax_cross_entropy(concat_columns(head_logits.first(last + 1)), labels);
}

DynamicLoss dynamic_loss(SlimmableModel& model, const Batch& batch, std::size_t task, const FullWidthTerm& extra,
                         Mode mode) {
    if (batch.size() == 0) throw InputError("dynamic_loss: empty batch");
    if (task >= model.num_heads()) throw ContractError("dynamic_loss: no head for task " + std::to_string(task));
    for (auto t : batch.tasks)
        if (t > task) throw ContractError("dynamic_loss: batch holds samples of a future task");
    const bool mixed = std::any_of(batch.tasks.begin(), batch.tasks.end(), [&](auto t) { return t != task; });

    std::vector<std::size_t> all_heads(task + 1);
    std::iota(all_heads.begin(), all_heads.end(), std::size_t{0});
    const std::size_t current[] = {task};

    const std::size_t N = model.splits();
    DynamicLoss out;
    for (std::size_t n = 1; n <= N; ++n) {
        const bool full_term = n == N && static_cast<bool>(extra);
        const bool want_all = mixed || full_term;
        const auto logits = model.forward(batch.inputs, n, want_all ? std::span<const std::size_t>(all_heads)
                                                                     : std::span<const std::size_t>(current),
                                          mode);
        Tensor ce = mixed ? classification_loss(logits, batch) : softmax_cross_entropy(logits.back(), batch.labels);
        out.width_terms.push_back(ce);
        Tensor term = ce;
        if (full_term) {
            out.strategy_term = extra(logits);
            term = add(ce, out.strategy_term);
        }
        out.total = n == 1 ? term : add(out.total, term);
    }
    return out;
}

namespace {

template <typename LossFn, typename Accumulate>
ImportanceState per_sample_importance(SlimmableModel& model, const LabeledDataset& data, std::size_t sample_cap,
                                      LossFn loss_fn, Accumulate accumulate) {
    if (data.size() == 0) throw InputError("importance estimation on an empty dataset");
    const std::size_t count = sample_cap == 0 ? data.size() : std::min(sample_cap, data.size());
    auto params = model.parameters();
    ImportanceState state;
    state.weights.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) state.weights[p].assign(params[p].numel(), 0.0);

    for (std::size_t i = 0; i < count; ++i) {
        model.zero_grad();
        const std::size_t idx[] = {i};
        const Tensor x = data.batch(idx);
        backward(loss_fn(x, data.labels[i]));
        for (std::size_t p = 0; p < params.size(); ++p) {
            const auto g = params[p].grad();
            if (g.empty()) continue;
            auto& w = state.weights[p];
            for (std::size_t k = 0; k < w.size(); ++k) w[k] += accumulate(g[k]);
        }
    }
    model.zero_grad();
    for (auto& w : state.weights)
        for (auto& v : w) v /= static_cast<double>(count);
    state.anchor.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p)
        state.anchor[p].assign(params[p].data().begin(), params[p].data().end());
    return state;
}

}  // namespace

ImportanceState ewc_fisher(SlimmableModel& model, const LabeledDataset& data, std::size_t task, std::size_t sample_cap) {
    const std::size_t N = model.splits();
    return per_sample_importance(
        model, data, sample_cap,
        [&](const Tensor& x, std::size_t label) {
            const std::size_t labels[] = {label};
            return softmax_cross_entropy(model.forward_head(x, N, task, Mode::eval), labels);
        },
        [](double g) { return g * g; });
}

ImportanceState mas_importance(SlimmableModel& model, const LabeledDataset& data, std::size_t task,
                               std::size_t sample_cap) {
    const std::size_t N = model.splits();
    std::vector<std::size_t> heads(task + 1);
    std::iota(heads.begin(), heads.end(), std::size_t{0});
    return per_sample_importance(
        model, data, sample_cap,
        [&](const Tensor& x, std::size_t) {
            const auto logits = model.forward(x, N, heads, Mode::eval);
            return sum_squares(logits.size() == 1 ? logits.front() : concat_columns(logits));
        },
        [](double g) { return std::abs(g); });
}

ImportanceState accumulate_importance(const std::optional<ImportanceState>& previous, ImportanceState next) {
    if (!previous) return next;
    if (previous->weights.size() != next.weights.size())
        throw ContractError("importance states cover different parameter sets");
    for (std::size_t p = 0; p < next.weights.size(); ++p) {
        if (previous->weights[p].size() != next.weights[p].size())
            throw ContractError("importance states have mismatched shapes");
        for (std::size_t k = 0; k < next.weights[p].size(); ++k) next.weights[p][k] += previous->weights[p][k];
    }
    return next;
}

Tensor quadratic_penalty(std::span<const Tensor> params, const ImportanceState& state) {
    if (params.size() != state.weights.size() || params.size() != state.anchor.size())
        throw ContractError("penalty: importance state has " + std::to_string(state.weights.size()) +
                            " tensors, model has " + std::to_string(params.size()));
    Tensor total;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor term = weighted_squared_distance(params[p], state.anchor[p], state.weights[p]);
        total = total.defined() ? add(total, term) : term;
    }
    if (!total.defined()) return Tensor::scalar(0.0);
    return scale(total, state.lambda / 2.0);
}

Tensor distillation_loss(std::span<const Tensor> student_logits, std::span<const Tensor> teacher_logits,
                         double temperature) {
    if (student_logits.size() != teacher_logits.size() || student_logits.empty())
        throw ContractError("distillation: student and teacher cover different heads");
    Tensor total;
    for (std::size_t h = 0; h < student_logits.size(); ++h) {
        if (student_logits[h].shape() != teacher_logits[h].shape())
            throw DimensionError("distillation: head " + std::to_string(h) + " shape mismatch");
        const auto target = softmax_rows(teacher_logits[h].data(), teacher_logits[h].dim(1), temperature);
        Tensor term = soft_cross_entropy(student_logits[h], target, temperature);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

Tensor lwf_loss(TeacherSnapshot& teacher, const Batch& batch, std::span<const Tensor> student_logits, double lambda) {
    if (teacher.heads == 0) throw ContractError("lwf: teacher has no old heads");
    if (student_logits.size() < teacher.heads) throw ContractError("lwf: student logits miss old heads");
    std::vector<std::size_t> heads(teacher.heads);
    std::iota(heads.begin(), heads.end(), std::size_t{0});
    std::vector<Tensor> targets;
    {
        NoGradGuard guard;
        targets = teacher.model.forward(batch.inputs, teacher.model.splits(), heads, Mode::eval);
    }
    return scale(distillation_loss(student_logits.first(teacher.heads), targets, teacher.temperature), lambda);
}

}  // namespace scrollnet
