#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scrollnet/data.hpp"
#include "scrollnet/eval.hpp"
#include "scrollnet/methods.hpp"
#include "scrollnet/optim.hpp"
#include "scrollnet/scroll.hpp"
#include "scrollnet/slimmable.hpp"

namespace scrollnet {

struct TrainConfig {
    std::size_t epochs = 60;
    double lr = 0.1;
    double lr_decay = 0.1;
    std::vector<std::size_t> milestones{24, 36};
    std::size_t batch_size = 64;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    std::size_t splits = 1;  // N
    std::size_t step = 1;    // S
    StrategyConfig strategy;
    bool width_diagnostics = true;

    void validate() const;
};

/// lr * decay^(number of milestones <= epoch), epochs counted from 0.
double lr_at_epoch(const TrainConfig& config, std::size_t epoch);

/// Everything needed to continue a run bitwise from an epoch boundary.
struct RunState {
    SlimmableModel model;
    ScrollState scroll;
    StrategyState strategy;
    MetricsReport metrics;
    std::mt19937_64 rng;
    std::size_t task = 0;   // 0-based task in progress (== tasks done when between tasks)
    std::size_t epoch = 0;  // next epoch of `task` to run
    std::vector<std::vector<double>> velocity;
};

struct EpochRecord {
    std::size_t task = 0;  // 0-based
    std::size_t epoch = 0;
    std::size_t offset = 0;
    double lr = 0.0;
    std::vector<double> width_losses;  // batch means of the width-n cross-entropy
    double strategy_loss = 0.0;
    double total_loss = 0.0;
};

struct TaskRecord {
    std::size_t task = 0;
    std::size_t offset = 0;
    std::vector<std::size_t> ranking;
    std::vector<double> task_aware;
    std::vector<double> task_agnostic;
    std::vector<std::vector<double>> width_accuracy;  // [width-1][task], diagnostics
    std::vector<std::size_t> dropped_classes;
};

/// Callbacks fired by the trainer. `on_epoch` sees the state at an epoch
/// boundary (resumable point); `on_task` fires after evaluation.
struct RunHooks {
    virtual ~RunHooks() = default;
    virtual void on_epoch(const EpochRecord&, const RunState&) {}
    virtual void on_task(const TaskRecord&, const RunState&) {}
};

/// Fresh run: model built from `body` with one head per task of `stream`.
RunState init_run(const TaskStream& stream, const std::vector<LayerSpec>& body, const TrainConfig& config);

/// Runs the remaining epochs of `run.task` and then the post-task strategy
/// hooks (importance snapshot, teacher freeze, memory rebalance). The scroll
/// state must already point at this task. Throws DivergenceError on a
/// non-finite loss.
RebalanceReport train_task(RunState& run, const TaskStream& stream, const TrainConfig& config,
                           RunHooks* hooks = nullptr);

/// Scroll, train, evaluate for each task from `run.task` on.
MetricsReport run_sequence(RunState& run, const TaskStream& stream, const TrainConfig& config,
                           RunHooks* hooks = nullptr);

MetricsReport run_sequence(const TaskStream& stream, const std::vector<LayerSpec>& body, const TrainConfig& config,
                           RunHooks* hooks = nullptr);

/// Minibatches of `task` for one epoch in the order the trainer visits them.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, std::mt19937_64& rng);

}  // namespace scrollnet
