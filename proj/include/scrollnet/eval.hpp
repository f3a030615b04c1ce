#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "scrollnet/data.hpp"
#include "scrollnet/slimmable.hpp"

namespace scrollnet {

enum class Protocol { task_aware, task_agnostic };

std::string_view to_string(Protocol protocol);

/// Lowest index among the maxima of `row`.
std::size_t argmax_lowest(std::span<const double> row);

/// Per-task test accuracy with the task identity given: argmax over that
/// task's head only. Full width, evaluation mode; `upto` counts tasks.
std::vector<double> evaluate_task_aware(SlimmableModel& model, const TaskStream& stream, std::size_t upto);

/// Per-task test accuracy without the task identity: argmax over the
/// concatenated logits of heads 0..upto-1; correct iff head and class match.
std::vector<double> evaluate_task_agnostic(SlimmableModel& model, const TaskStream& stream, std::size_t upto);

/// Task-aware accuracy of sub-network `width` (diagnostic only).
std::vector<double> evaluate_width(SlimmableModel& model, const TaskStream& stream, std::size_t upto,
                                   std::size_t width);

/// Accuracy matrices indexed [t_eval][t_task] (0-based, t_task <= t_eval).
struct MetricsReport {
    std::vector<std::vector<double>> task_aware;
    std::vector<std::vector<double>> task_agnostic;

    std::size_t tasks() const noexcept { return task_aware.size(); }
    const std::vector<std::vector<double>>& matrix(Protocol p) const {
        return p == Protocol::task_aware ? task_aware : task_agnostic;
    }
    void append(std::vector<double> aware, std::vector<double> agnostic);
};

/// Unweighted mean of row `after_task` (1-based count of trained tasks).
double average_accuracy(const MetricsReport& report, Protocol protocol, std::size_t after_task);

/// Forgetting of each earlier task after `after_task` tasks: best earlier
/// accuracy minus the current one. The latest task itself is excluded.
std::vector<double> forgetting(const MetricsReport& report, Protocol protocol, std::size_t after_task);

}  // namespace scrollnet
