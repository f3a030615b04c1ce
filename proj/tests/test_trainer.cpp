#include <cmath>
#include <numeric>

#include "doctest.h"
#include "json.hpp"
#include "scrollnet/checkpoint.hpp"
#include "scrollnet/errors.hpp"
#include "scrollnet/trainer.hpp"
#include "support/oracles.hpp"

using namespace scrollnet;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TaskStream small_stream(std::size_t tasks, std::uint64_t seed = 3, double separation = 3.0, std::size_t per_class = 24) {
    SyntheticSpec s;
    s.tasks = tasks;
    s.classes_per_task = 2;
    s.dim = 6;
    s.separation = separation;
    s.train_per_class = per_class;
    s.test_per_class = 10;
    s.seed = seed;
    return synthetic_gaussian_tasks(s);
}

std::vector<LayerSpec> mlp(std::vector<std::size_t> hidden, bool norm) {
    std::vector<LayerSpec> body;
    for (auto h : hidden) {
        body.push_back({LayerKind::linear, h});
        if (norm) body.push_back({LayerKind::norm});
        body.push_back({LayerKind::relu});
    }
    return body;
}

TrainConfig quick_config(std::size_t splits, StrategyKind kind = StrategyKind::ft) {
    TrainConfig c;
    c.epochs = 4;
    c.milestones = {2};
    c.batch_size = 16;
    c.lr = 0.05;
    c.splits = splits;
    c.seed = 11;
    c.strategy.kind = kind;
    c.strategy.lambda = kind == StrategyKind::ewc ? 10.0 : 0.0;
    c.strategy.sample_cap = 32;
    return c;
}

std::vector<std::vector<double>> all_params(const SlimmableModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters()) out.push_back(values(p));
    return out;
}

struct Recorder : RunHooks {
    std::vector<EpochRecord> epochs;
    std::vector<TaskRecord> tasks;
    void on_epoch(const EpochRecord& r, const RunState&) override { epochs.push_back(r); }
    void on_task(const TaskRecord& r, const RunState&) override { tasks.push_back(r); }
};

}  // namespace

TEST_CASE("N=1 fine-tuning is a plain network training loop") {
    const auto stream = small_stream(3);
    for (bool norm : {false, true}) {
        auto config = quick_config(1);
        const auto body = mlp({8, 8}, norm);
        RunState run = init_run(stream, body, config);

        // independent loop over the same initial parameters, written with the raw ops
        auto ref = run.model.clone();
        auto P = ref.parameters();
        std::vector<NormStats> stats(2, NormStats{std::vector<double>(8, 0.0), std::vector<double>(8, 1.0)});
        const std::size_t stride = norm ? 4 : 2;  // weight, bias (, gamma, beta) per hidden layer
        auto forward = [&](const Tensor& x, std::size_t head) {
            Tensor h = x;
            for (std::size_t l = 0; l < 2; ++l) {
                h = linear(h, P[l * stride], P[l * stride + 1]);
                if (norm) h = batch_norm(h, P[l * stride + 2], P[l * stride + 3], stats[l], {true, 0.1, 1e-5});
                h = relu(h);
            }
            return linear(h, P[2 * stride + 2 * head], P[2 * stride + 2 * head + 1]);
        };
        std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
        for (std::size_t t = 0; t < stream.size(); ++t) {
            Sgd sgd({config.lr, config.momentum, config.weight_decay});
            const auto& data = stream.train(t);
            for (std::size_t e = 0; e < config.epochs; ++e) {
                sgd.set_lr(lr_at_epoch(config, e));
                for (const auto& idx : epoch_batches(data.size(), config.batch_size, rng)) {
                    std::vector<std::size_t> labels;
                    for (auto i : idx) labels.push_back(data.labels[i]);
                    for (auto& p : P) p.zero_grad();
                    backward(softmax_cross_entropy(forward(data.batch(idx), t), labels));
                    sgd.step(P);
                }
            }
        }

        run_sequence(run, stream, config);
        const auto a = all_params(run.model), b = all_params(ref);
        for (std::size_t p = 0; p < a.size(); ++p) CHECK(oracle::relative_error(a[p], b[p]) < 1e-10);
    }
}

TEST_CASE("separable task is learned to near-perfect training accuracy") {
    const auto stream = small_stream(1, 5, 8.0, 100);
    auto config = quick_config(2);
    config.epochs = 50;
    config.milestones = {30, 40};
    config.lr = 0.05;
    RunState run = init_run(stream, mlp({16}, true), config);
    run_sequence(run, stream, config);
    const auto& data = stream.train(0);
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    NoGradGuard guard;
    const auto logits = run.model.forward_head(data.batch(idx), 2, 0, Mode::eval);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += argmax_lowest(logits.data().subspan(i * 2, 2)) == data.labels[i];
    CHECK(static_cast<double>(correct) / static_cast<double>(data.size()) > 0.99);
}

TEST_CASE("fixed seed gives bitwise identical runs") {
    const auto stream = small_stream(3);
    for (auto kind : {StrategyKind::ft, StrategyKind::ewc, StrategyKind::mas, StrategyKind::lwf}) {
        auto config = quick_config(2, kind);
        config.strategy.memory_budget = kind == StrategyKind::ft ? 12 : 0;
        RunState a = init_run(stream, mlp({8}, true), config), b = init_run(stream, mlp({8}, true), config);
        const auto ma = run_sequence(a, stream, config), mb = run_sequence(b, stream, config);
        CHECK(all_params(a.model) == all_params(b.model));
        CHECK(ma.task_aware == mb.task_aware);
        CHECK(ma.task_agnostic == mb.task_agnostic);
    }
}

TEST_CASE("single task: no scrolling and one report row") {
    const auto stream = small_stream(1);
    Recorder rec;
    const auto report = run_sequence(stream, mlp({8}, false), quick_config(4), &rec);
    CHECK(report.tasks() == 1);
    CHECK(report.task_aware[0].size() == 1);
    for (const auto& e : rec.epochs) CHECK(e.offset == 0);
}

TEST_CASE("offsets advance once per task before training") {
    const auto stream = small_stream(4);
    Recorder rec;
    auto config = quick_config(4);
    config.epochs = 2;
    config.milestones = {};
    run_sequence(stream, mlp({8}, true), config, &rec);
    REQUIRE(rec.tasks.size() == 4);
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(rec.tasks[t].offset == t);
        CHECK(rec.tasks[t].ranking.front() == t);
        CHECK(rec.tasks[t].width_accuracy.size() == 4);
    }
    for (const auto& e : rec.epochs) CHECK(e.offset == e.task);

    config.step = 2;
    Recorder rec2;
    run_sequence(stream, mlp({8}, true), config, &rec2);
    for (std::size_t t = 0; t < 4; ++t) CHECK(rec2.tasks[t].offset == (2 * t) % 4);
}

TEST_CASE("training reads only the current task's data") {
    const auto stream = small_stream(3);
    for (auto [kind, budget] : {std::pair{StrategyKind::ewc, std::size_t{0}}, std::pair{StrategyKind::ft, std::size_t{10}},
                                std::pair{StrategyKind::lwf, std::size_t{0}}}) {
        struct Audit : RunHooks {
            std::size_t task = 0;
            bool evaluating = false;  // set once the last epoch of the task finished
            std::size_t epoch_count = 0, epochs = 0;
            std::vector<std::string> violations;
            void on_epoch(const EpochRecord& r, const RunState&) override {
                task = r.task;
                if (++epoch_count % epochs == 0) evaluating = true;
            }
            void on_task(const TaskRecord& r, const RunState&) override {
                task = r.task + 1;
                evaluating = false;
            }
        } audit;
        auto config = quick_config(2, kind);
        config.strategy.memory_budget = budget;
        audit.epochs = config.epochs;
        stream.set_observer([&](DataSplit split, std::size_t t) {
            if (split == DataSplit::train && t != audit.task)
                audit.violations.push_back("train split of task " + std::to_string(t) + " read during task " +
                                           std::to_string(audit.task));
            if (split == DataSplit::test && (!audit.evaluating || t > audit.task))
                audit.violations.push_back("test split of task " + std::to_string(t) + " read during training");
        });
        run_sequence(stream, mlp({8}, true), config, &audit);
        stream.set_observer({});
        CHECK(audit.violations.empty());
        if (!audit.violations.empty()) MESSAGE(audit.violations.front());
    }
}

TEST_CASE("runs resume bitwise from an epoch boundary") {
    const auto stream = small_stream(3);
    for (auto kind : {StrategyKind::ft, StrategyKind::ewc, StrategyKind::lwf}) {
        auto config = quick_config(2, kind);
        config.strategy.memory_budget = kind == StrategyKind::ft ? 12 : 0;
        struct Snap : RunHooks {
            std::string saved;
            void on_epoch(const EpochRecord& r, const RunState& run) override {
                if (r.task == 1 && r.epoch == 1) saved = serialize_run(run);
            }
        } snap;
        RunState full = init_run(stream, mlp({8}, true), config);
        const auto expect = run_sequence(full, stream, config, &snap);
        REQUIRE(!snap.saved.empty());

        RunState resumed = deserialize_run(snap.saved);
        CHECK(resumed.task == 1);
        CHECK(resumed.epoch == 2);
        const auto got = run_sequence(resumed, stream, config);
        CHECK(got.task_aware == expect.task_aware);
        CHECK(got.task_agnostic == expect.task_agnostic);
        CHECK(all_params(resumed.model) == all_params(full.model));
        CHECK(serialize_run(resumed) == serialize_run(full));
    }
}

TEST_CASE("summed loss and per-width backward agree") {
    oracle::Rng rng(70);
    const auto stream = small_stream(1);
    auto config = quick_config(4);
    for (int k = 0; k < 5; ++k) {
        RunState run = init_run(stream, mlp({8, 8}, k % 2 == 0), config);
        run.model.set_offset(k % 4);
        const auto& data = stream.train(0);
        std::vector<std::size_t> idx;
        for (int i = 0; i < 16; ++i) idx.push_back(oracle::pick(rng, 0, data.size() - 1));
        Batch b{data.batch(idx), {}, std::vector<std::size_t>(idx.size(), 0)};
        for (auto i : idx) b.labels.push_back(data.labels[i]);

        auto twin = run.model.clone();
        twin.set_offset(run.model.offset());
        backward(dynamic_loss(run.model, b, 0, {}, Mode::eval).total);
        for (std::size_t n = 1; n <= 4; ++n)
            backward(softmax_cross_entropy(twin.forward_head(b.inputs, n, 0, Mode::eval), b.labels));
        for (std::size_t p = 0; p < twin.parameters().size(); ++p) {
            std::vector<double> a(run.model.parameters()[p].grad().begin(), run.model.parameters()[p].grad().end());
            std::vector<double> c(twin.parameters()[p].grad().begin(), twin.parameters()[p].grad().end());
            CHECK(oracle::relative_error(a, c) < 1e-12);
        }
    }
}

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.epochs = 60;
    c.lr = 0.1;
    c.lr_decay = 0.1;
    c.milestones = {24, 36};
    for (std::size_t e = 0; e < 60; ++e) {
        const int passed = (e >= 24) + (e >= 36);
        CHECK(lr_at_epoch(c, e) == c.lr * std::pow(0.1, passed));
    }
    const auto stream = small_stream(1);
    Recorder rec;
    auto q = quick_config(2);
    run_sequence(stream, mlp({8}, false), q, &rec);
    for (const auto& e : rec.epochs) CHECK(e.lr == lr_at_epoch(q, e.epoch));
    CHECK(rec.epochs.size() == q.epochs);
}

TEST_CASE("post-task strategy state") {
    const auto stream = small_stream(2);
    {
        auto config = quick_config(2, StrategyKind::ewc);
        RunState run = init_run(stream, mlp({8}, true), config);
        run_sequence(run, stream, config);
        REQUIRE(run.strategy.importance.has_value());
        CHECK(run.strategy.importance->lambda == 10.0);
        CHECK(run.strategy.importance->anchor[0] == values(run.model.parameters()[0]));
    }
    {
        auto config = quick_config(2, StrategyKind::lwf);
        RunState run = init_run(stream, mlp({8}, true), config);
        run_sequence(run, stream, config);
        REQUIRE(run.strategy.teacher.has_value());
        CHECK(run.strategy.teacher->heads == 2);
        CHECK(all_params(run.strategy.teacher->model) == all_params(run.model));
    }
    {
        auto config = quick_config(2);
        config.strategy.memory_budget = 8;
        RunState run = init_run(stream, mlp({8}, true), config);
        run_sequence(run, stream, config);
        CHECK(run.strategy.memory.size() == 8);
        CHECK(run.strategy.memory.classes() == 4);
    }
}

TEST_CASE("non-finite loss aborts with a state dump") {
    const auto stream = small_stream(1);
    auto config = quick_config(2);
    config.lr = 1e150;
    config.momentum = 0.0;
    try {
        run_sequence(stream, mlp({8}, false), config);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        const auto dump = nlohmann::json::parse(e.dump());
        CHECK(dump.contains("task"));
        CHECK(dump.contains("epoch"));
        CHECK(dump.contains("offset"));
        CHECK(dump["lr"].get<double>() == 1e150);
        CHECK(dump["width_losses"].size() == 2);
        CHECK(dump["parameter_norms"].contains("layer0.weight"));
    }
}

TEST_CASE("config validation") {
    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    bad([](TrainConfig& c) { c.epochs = 0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.lr = -1; });
    bad([](TrainConfig& c) { c.momentum = 1.0; });
    bad([](TrainConfig& c) { c.milestones = {70}; });
    bad([](TrainConfig& c) { c.milestones = {30, 20}; });
    bad([](TrainConfig& c) { c.splits = 0; });
    bad([](TrainConfig& c) { c.strategy.temperature = 0; });
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("epoch batches partition the samples") {
    std::mt19937_64 rng(4);
    const auto batches = epoch_batches(50, 16, rng);
    CHECK(batches.size() == 4);
    CHECK(batches.back().size() == 2);
    std::vector<std::size_t> seen;
    for (const auto& b : batches) seen.insert(seen.end(), b.begin(), b.end());
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(50);
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(seen == all);
}
