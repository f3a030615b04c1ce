#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "scrollnet/data.hpp"
#include "scrollnet/memory.hpp"
#include "scrollnet/slimmable.hpp"

namespace scrollnet {

enum class StrategyKind { ft, ewc, mas, lwf };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view name);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::ft;
    double lambda = 0.0;          // 0 selects the per-strategy default
    double temperature = 2.0;     // LwF distillation
    std::size_t sample_cap = 2048;  // Fisher / MAS samples per task
    std::size_t memory_budget = 0;  // exemplar replay when > 0
    double mix_ratio = 0.5;         // exemplars drawn per current-task sample

    /// lambda, or 5000 for EWC and 1 for MAS/LwF when unset.
    double effective_lambda() const;
};

/// Diagonal importance weights with the parameter values they anchor to.
/// Used for both the EWC Fisher diagonal and MAS importance.
struct ImportanceState {
    std::vector<std::vector<double>> weights;  // parallel to the model parameters
    std::vector<std::vector<double>> anchor;
    double lambda = 0.0;
};

/// Frozen copy of the model after the previous task.
struct TeacherSnapshot {
    SlimmableModel model;
    double temperature = 2.0;
    std::size_t heads = 0;  // old heads it distills (tasks 0..heads-1)
};

struct StrategyState {
    std::optional<ImportanceState> importance;
    std::optional<TeacherSnapshot> teacher;
    ExemplarMemory memory;
};

/// Cross-entropy of a batch whose samples may belong to several heads.
/// `head_logits[h]` must hold the logits of head h for every h the batch
/// touches. A batch drawn from one task uses that head alone; a mixed batch
/// (replay) scores over the concatenation of heads 0..max task, each label
/// routed to its own head's slot.
Tensor classification_loss(std::span<const Tensor> head_logits, const Batch& batch);

/// Extra full-width objective term; receives the full-width logits of heads 0..task.
using FullWidthTerm = std::function<Tensor(std::span<const Tensor> head_logits)>;

struct DynamicLoss {
    Tensor total;
    std::vector<Tensor> width_terms;  // cross-entropy at widths 1..N
    Tensor strategy_term;             // undefined when no term was attached
};

/// Sum over widths n = 1..N of the cross-entropy at width n, accumulated in
/// that order, with `extra` added to the n = N term only.
DynamicLoss dynamic_loss(SlimmableModel& model, const Batch& batch, std::size_t task, const FullWidthTerm& extra = {},
                         Mode mode = Mode::train);

/// Mean over samples of the squared per-sample gradient of the task-head
/// cross-entropy at full width, plus a snapshot of the parameters.
ImportanceState ewc_fisher(SlimmableModel& model, const LabeledDataset& data, std::size_t task, std::size_t sample_cap);

/// Mean over samples of |d ||f(x)||^2 / d theta|, where f(x) concatenates the
/// full-width logits of heads 0..task. Labels are not used.
ImportanceState mas_importance(SlimmableModel& model, const LabeledDataset& data, std::size_t task,
                               std::size_t sample_cap);

/// Sums importance weights across tasks and re-anchors at `next` (online accumulation).
ImportanceState accumulate_importance(const std::optional<ImportanceState>& previous, ImportanceState next);

/// (lambda / 2) * sum_i F_i (theta_i - anchor_i)^2 over every parameter.
Tensor quadratic_penalty(std::span<const Tensor> params, const ImportanceState& state);

/// Sum over heads of the soft cross-entropy between temperature-softened
/// teacher and student distributions.
Tensor distillation_loss(std::span<const Tensor> student_logits, std::span<const Tensor> teacher_logits,
                         double temperature);

/// lambda * distillation of the teacher's old heads (full width, evaluation
/// mode) into `student_logits` (which must cover heads 0..teacher.heads-1).
Tensor lwf_loss(TeacherSnapshot& teacher, const Batch& batch, std::span<const Tensor> student_logits, double lambda);

}  // namespace scrollnet
