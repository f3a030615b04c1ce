#include "scrollnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "scrollnet/errors.hpp"

namespace scrollnet {

namespace {

constexpr std::uint64_t kRunStream = 0x9E3779B97F4A7C15ULL;

Tensor normalized_features(SlimmableModel& model, const Tensor& x) {
    NoGradGuard guard;
    const Tensor f = model.features(x, model.splits(), Mode::eval);
    const std::size_t rows = f.dim(0);
    const std::size_t dim = f.numel() / rows;
    std::vector<double> out(f.data().begin(), f.data().end());
    for (std::size_t i = 0; i < rows; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) norm += out[i * dim + j] * out[i * dim + j];
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (std::size_t j = 0; j < dim; ++j) out[i * dim + j] /= norm;
    }
    return Tensor::from({rows, dim}, std::move(out));
}

std::vector<ClassSamples> class_samples(const LabeledDataset& data, const TaskStream& stream, std::size_t task) {
    std::vector<ClassSamples> out(stream.classes_in(task));
    const std::size_t d = data.sample_numel();
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j].global_class = stream.global_class(task, j);
        out[j].task = task;
        out[j].label = j;
        out[j].sample_shape = data.sample_shape;
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto s = data.sample(i);
        auto& dst = out[data.labels[i]].inputs;
        dst.insert(dst.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(d));
    }
    return out;
}

std::string divergence_dump(const RunState& run, std::size_t batch_index, double lr, const DynamicLoss& loss) {
    nlohmann::json j;
    j["task"] = run.task;
    j["epoch"] = run.epoch;
    j["batch"] = batch_index;
    j["offset"] = run.model.offset();
    j["lr"] = lr;
    std::vector<double> widths;
    for (const auto& w : loss.width_terms) widths.push_back(w.item());
    j["width_losses"] = widths;
    j["strategy_loss"] = loss.strategy_term.defined() ? loss.strategy_term.item() : 0.0;
    auto& norms = j["parameter_norms"];
    const auto params = run.model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        double s = 0.0;
        for (double v : params[p].data()) s += v * v;
        norms[run.model.parameter_names()[p]] = std::sqrt(s);
    }
    // NaN serializes as null, which is what we want in the dump.
    return j.dump(2);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("train.epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive and finite");
    if (!(lr_decay > 0.0)) throw ConfigError("train.lr_decay must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
    for (auto m : milestones)
        if (m >= epochs)
            throw ConfigError("train.milestones: " + std::to_string(m) + " is not below epochs=" + std::to_string(epochs));
    if (!std::is_sorted(milestones.begin(), milestones.end())) throw ConfigError("train.milestones must be ascending");
    if (splits == 0) throw ConfigError("splits must be at least 1");
    if (step == 0) throw ConfigError("step must be at least 1");
    if (strategy.temperature <= 0.0) throw ConfigError("strategy.temperature must be positive");
    if (strategy.lambda < 0.0) throw ConfigError("strategy.lambda must be non-negative");
    if (strategy.mix_ratio < 0.0) throw ConfigError("strategy.mix_ratio must be non-negative");
}

double lr_at_epoch(const TrainConfig& config, std::size_t epoch) {
    const auto passed = std::count_if(config.milestones.begin(), config.milestones.end(),
                                      [&](std::size_t m) { return m <= epoch; });
    return config.lr * std::pow(config.lr_decay, static_cast<double>(passed));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, std::mt19937_64& rng) {
    const auto order = shuffled_indices(samples, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < samples; start += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(samples, start + batch_size)));
    return out;
}

RunState init_run(const TaskStream& stream, const std::vector<LayerSpec>& body, const TrainConfig& config) {
    config.validate();
    if (stream.size() == 0) throw InputError("task stream is empty");
    ModelSpec spec;
    spec.input_shape = stream.sample_shape();
    spec.layers = body;
    spec.head_classes = stream.head_sizes();
    spec.splits = config.splits;
    RunState run{SlimmableModel::build(std::move(spec), config.seed),
                 ScrollState::initial(config.splits, config.step),
                 StrategyState{},
                 MetricsReport{},
                 std::mt19937_64(config.seed ^ kRunStream),
                 0,
                 0,
                 {}};
    run.strategy.memory = ExemplarMemory(config.strategy.memory_budget);
    return run;
}

RebalanceReport train_task(RunState& run, const TaskStream& stream, const TrainConfig& config, RunHooks* hooks) {
    const std::size_t t = run.task;
    if (t >= stream.size()) throw ContractError("train_task: no task " + std::to_string(t) + " in the stream");
    if (run.scroll.task != t + 1) throw ContractError("train_task: scroll state not advanced for this task");
    const auto& data = stream.train(t);
    if (data.size() == 0) throw InputError("train_task: task " + std::to_string(t) + " has no training data");

    auto& model = run.model;
    model.set_offset(run.scroll.offset);
    const std::size_t N = model.splits();
    const double lambda = config.strategy.effective_lambda();

    Sgd sgd(SgdOptions{config.lr, config.momentum, config.weight_decay});
    if (run.epoch > 0) sgd.set_velocity(run.velocity);

    FullWidthTerm extra;
    Batch current;
    switch (config.strategy.kind) {
        case StrategyKind::ewc:
        case StrategyKind::mas:
            if (run.strategy.importance)
                extra = [&](std::span<const Tensor>) {
                    return quadratic_penalty(model.parameters(), *run.strategy.importance);
                };
            break;
        case StrategyKind::lwf:
            if (run.strategy.teacher && lambda > 0.0)
                extra = [&](std::span<const Tensor> logits) {
                    return lwf_loss(*run.strategy.teacher, current, logits, lambda);
                };
            break;
        case StrategyKind::ft: break;
    }

    for (; run.epoch < config.epochs;) {
        const double lr = lr_at_epoch(config, run.epoch);
        sgd.set_lr(lr);
        EpochRecord record;
        record.task = t;
        record.epoch = run.epoch;
        record.offset = model.offset();
        record.lr = lr;
        record.width_losses.assign(N, 0.0);

        const auto batches = epoch_batches(data.size(), config.batch_size, run.rng);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            Batch batch;
            batch.inputs = data.batch(batches[b]);
            for (auto i : batches[b]) batch.labels.push_back(data.labels[i]);
            batch.tasks.assign(batch.labels.size(), t);
            current = run.strategy.memory.empty()
                          ? std::move(batch)
                          : replay_batch(batch, run.strategy.memory, config.strategy.mix_ratio, run.rng);

            model.zero_grad();
            const DynamicLoss loss = dynamic_loss(model, current, t, extra, Mode::train);
            const double total = loss.total.item();
            if (!std::isfinite(total))
                throw DivergenceError("non-finite loss at task " + std::to_string(t + 1) + ", epoch " +
                                          std::to_string(run.epoch) + ", batch " + std::to_string(b),
                                      divergence_dump(run, b, lr, loss));
            backward(loss.total);
            sgd.step(model.parameters());

            for (std::size_t n = 0; n < N; ++n) record.width_losses[n] += loss.width_terms[n].item();
            if (loss.strategy_term.defined()) record.strategy_loss += loss.strategy_term.item();
            record.total_loss += total;
        }
        const double count = static_cast<double>(batches.size());
        for (auto& v : record.width_losses) v /= count;
        record.strategy_loss /= count;
        record.total_loss /= count;

        ++run.epoch;
        run.velocity = sgd.velocity();
        if (hooks) hooks->on_epoch(record, run);
    }
    model.zero_grad();

    switch (config.strategy.kind) {
        case StrategyKind::ewc:
        case StrategyKind::mas: {
            ImportanceState next = config.strategy.kind == StrategyKind::ewc
                                       ? ewc_fisher(model, data, t, config.strategy.sample_cap)
                                       : mas_importance(model, data, t, config.strategy.sample_cap);
            next.lambda = lambda;
            run.strategy.importance = accumulate_importance(run.strategy.importance, std::move(next));
            break;
        }
        case StrategyKind::lwf:
            run.strategy.teacher = TeacherSnapshot{model.clone(), config.strategy.temperature, t + 1};
            break;
        case StrategyKind::ft: break;
    }

    RebalanceReport report;
    if (run.strategy.memory.budget() > 0)
        report = run.strategy.memory.rebalance(class_samples(data, stream, t),
                                               [&](const Tensor& x) { return normalized_features(model, x); });
    return report;
}

MetricsReport run_sequence(RunState& run, const TaskStream& stream, const TrainConfig& config, RunHooks* hooks) {
    if (stream.size() == 0) throw InputError("run_sequence: empty task stream");
    if (run.model.num_heads() < stream.size()) throw ContractError("run_sequence: model has fewer heads than tasks");
    while (run.task < stream.size()) {
        const std::size_t t = run.task;
        while (run.scroll.task < t + 1) run.scroll = run.scroll.advanced();
        if (run.epoch == 0) run.velocity.clear();

        const RebalanceReport rebalance = train_task(run, stream, config, hooks);

        TaskRecord record;
        record.task = t;
        record.offset = run.scroll.offset;
        record.ranking = run.scroll.ranking();
        record.task_aware = evaluate_task_aware(run.model, stream, t + 1);
        record.task_agnostic = evaluate_task_agnostic(run.model, stream, t + 1);
        if (config.width_diagnostics)
            for (std::size_t n = 1; n <= run.model.splits(); ++n)
                record.width_accuracy.push_back(evaluate_width(run.model, stream, t + 1, n));
        record.dropped_classes = rebalance.dropped_classes;
        run.metrics.append(record.task_aware, record.task_agnostic);

        run.task = t + 1;
        run.epoch = 0;
        run.velocity.clear();
        if (hooks) hooks->on_task(record, run);
    }
    return run.metrics;
}

MetricsReport run_sequence(const TaskStream& stream, const std::vector<LayerSpec>& body, const TrainConfig& config,
                           RunHooks* hooks) {
    RunState run = init_run(stream, body, config);
    return run_sequence(run, stream, config, hooks);
}

}  // namespace scrollnet
