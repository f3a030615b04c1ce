// Acceptance suite: one PASS/FAIL line per criterion, exit 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "scrollnet/cli.hpp"
#include "scrollnet/config.hpp"
#include "scrollnet/memory.hpp"
#include "scrollnet/methods.hpp"
#include "scrollnet/optim.hpp"
#include "scrollnet/selftest.hpp"
#include "scrollnet/trainer.hpp"
#include "support/fixtures.hpp"

#ifndef SCROLLNET_CONFIG_DIR
#error "SCROLLNET_CONFIG_DIR must point at the configs directory"
#endif

using namespace scrollnet;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds, pinned here.
constexpr double kGradientMinutes = 2.0;       // gradient suite runtime budget
constexpr double kDegeneracyTol = 1e-10;       // N=1 vs a plain training loop, relative
constexpr double kPinnedDriftRatio = 0.01;     // pinned drift over free drift
constexpr double kPinLambda = 1e6;
constexpr double kPinLr = 1e-6;                // lambda * lr = 1 keeps the pinned coordinate stable
constexpr double kDistillGradTol = 1e-12;
constexpr std::size_t kNestingTriples = 100;
constexpr std::size_t kLossBatches = 50;
constexpr std::size_t kLocalityModels = 20;
constexpr std::size_t kHerdingSets = 50;
constexpr std::size_t kHerdingMaxPoints = 12;
constexpr std::size_t kHerdingMaxBudget = 5;
constexpr std::size_t kTrendSeedWins = 2;      // of 3 seeds
constexpr double kTrendMinutes = 15.0;

struct Outcome {
    bool passed = true;
    std::string detail;
};

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> grad_or_zero(const Tensor& t) {
    std::vector<double> g(t.grad().begin(), t.grad().end());
    if (g.empty()) g.assign(t.numel(), 0.0);
    return g;
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double minutes_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
}

Outcome gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    std::size_t cases = 0, failed = 0, ops = 0;
    for (const auto& r : run_selftest())
        if (r.suite == "gradient") {
            ++ops;
            cases += r.cases;
            failed += !r.passed || r.cases < 20;
        }
    const double took = minutes_since(start);
    return {ops > 0 && failed == 0 && took < kGradientMinutes,
            std::to_string(ops) + " ops, " + std::to_string(cases) + " cases, " + std::to_string(failed) +
                " failing ops, " + fixed4(took * 60.0) + " s"};
}

Outcome nesting() {
    oracle::Rng rng(1001);
    std::size_t bad = 0;
    for (std::size_t k = 0; k < kNestingTriples; ++k) {
        const std::size_t N = oracle::pick(rng, 1, 4);
        const auto m = build_model(fixtures::random_spec(rng, N), k);
        const std::size_t o = oracle::pick(rng, 0, N - 1);
        for (std::size_t n = 1; n < N; ++n) bad += !fixtures::strict_subset(m.param_ids(n, o), m.param_ids(n + 1, o));
        bad += m.param_ids(N, o) != fixtures::all_ids(m);
    }
    return {bad == 0, std::to_string(kNestingTriples) + " random (N, o, n) triples, " + std::to_string(bad) + " violations"};
}

Outcome scrolling() {
    std::size_t bad = 0, states = 0;
    for (std::size_t N = 1; N <= 4; ++N)
        for (std::size_t S = 1; S <= 3; ++S) {
            auto s = ScrollState::initial(N, S);
            const std::size_t period = s.period();
            bad += period != N / std::gcd(N, S);
            // smallest period of the offset sequence, measured
            std::size_t p = 1;
            while (offset_for_task(1 + p, N, S) != offset_for_task(1, N, S)) ++p;
            bad += p != period;
            for (std::size_t t = 0; t < 2 * period + 1; ++t, s = s.advanced()) {
                ++states;
                const auto r = s.ranking();
                std::vector<std::size_t> sorted = r;
                std::sort(sorted.begin(), sorted.end());
                std::vector<std::size_t> ids(N);
                std::iota(ids.begin(), ids.end(), std::size_t{0});
                bad += sorted != ids;
                bad += r[0] != s.offset;
                bad += s.offset != offset_for_task(s.task, N, S);
                bad += s.offset != offset_for_task(s.task + period, N, S);
                const auto next = s.advanced().ranking();
                for (std::size_t j = 0; j < N; ++j) bad += next[j] != (r[j] + S) % N;
                if (N == 1) bad += r != std::vector<std::size_t>{0};
            }
        }
    return {bad == 0, std::to_string(states) + " scroll states, " + std::to_string(bad) + " violations"};
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

Outcome degeneracy() {
    SyntheticSpec spec;
    spec.tasks = 2;
    spec.dim = 6;
    spec.train_per_class = 24;
    spec.test_per_class = 10;
    spec.seed = 3;
    const auto stream = synthetic_gaussian_tasks(spec);
    double worst = 0.0;
    for (bool norm : {false, true}) {
        TrainConfig config;
        config.epochs = 4;
        config.milestones = {2};
        config.batch_size = 16;
        config.lr = 0.05;
        config.seed = 11;
        RunState run = init_run(stream, mlp({8, 8}, norm), config);

        auto ref = run.model.clone();
        auto P = ref.parameters();
        std::vector<NormStats> stats(2, NormStats{std::vector<double>(8, 0.0), std::vector<double>(8, 1.0)});
        const std::size_t stride = norm ? 4 : 2;
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
        for (std::size_t p = 0; p < P.size(); ++p)
            worst = std::max(worst, oracle::relative_error(values(run.model.parameters()[p]), values(P[p])));
    }
    return {worst <= kDegeneracyTol, "max relative parameter error " + sci(worst) + " (tol " + sci(kDegeneracyTol) + ")"};
}

Batch random_batch(oracle::Rng& rng, std::size_t n, std::size_t dim, std::size_t classes, std::size_t task) {
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = oracle::pick(rng, 0, classes - 1);
    return {Tensor::from({n, dim}, oracle::uniform(n * dim, rng, -2.0, 2.0)), labels, std::vector<std::size_t>(n, task)};
}

Outcome loss_identity() {
    oracle::Rng rng(1005);
    std::size_t bad = 0;
    for (std::size_t k = 0; k < kLossBatches; ++k) {
        const std::size_t N = oracle::pick(rng, 1, 4);
        auto m = build_model(fixtures::mlp_spec(5, {4 * N, 2 * N}, N, k % 2 == 0, {3, 2}), k);
        m.set_offset(oracle::pick(rng, 0, N - 1));
        auto twin = m.clone();
        twin.set_offset(m.offset());
        const auto b = random_batch(rng, 6, 5, 2, 1);
        const auto dyn = dynamic_loss(m, b, 1);
        double sum = 0.0;
        for (std::size_t n = 1; n <= N; ++n)
            sum += softmax_cross_entropy(twin.forward_head(b.inputs, n, 1, Mode::train), b.labels).item();
        bad += dyn.total.item() != sum;
    }
    return {bad == 0, std::to_string(kLossBatches) + " batches, bitwise, " + std::to_string(bad) + " mismatches"};
}

Outcome locality() {
    oracle::Rng rng(1006);
    std::size_t leaks = 0, terms = 0;
    for (std::size_t k = 0; k < kLocalityModels; ++k) {
        const std::size_t N = oracle::pick(rng, 2, 4);
        auto m = build_model(fixtures::random_spec(rng, N), 300 + k);
        const std::size_t o = oracle::pick(rng, 0, N - 1);
        m.set_offset(o);
        const std::size_t head = oracle::pick(rng, 0, m.num_heads() - 1);
        const auto x = fixtures::random_input(m.spec(), 4, rng);
        std::vector<std::size_t> labels(4);
        for (auto& l : labels) l = oracle::pick(rng, 0, m.spec().head_classes[head] - 1);
        const Batch b{x, labels, std::vector<std::size_t>(4, head)};
        const auto dyn = dynamic_loss(m, b, head);
        for (std::size_t n = 1; n < N; ++n, ++terms) {
            m.zero_grad();
            backward(dyn.width_terms[n - 1]);
            const auto ids = m.param_ids(n, o);
            const auto params = m.parameters();
            for (std::uint32_t t = 0; t < params.size(); ++t) {
                const auto g = params[t].grad();
                for (std::uint32_t i = 0; i < g.size(); ++i) leaks += g[i] != 0.0 && !fixtures::contains(ids, {t, i});
            }
        }
    }
    return {leaks == 0, std::to_string(terms) + " narrow terms on " + std::to_string(kLocalityModels) + " models, " +
                            std::to_string(leaks) + " gradients outside the sub-network"};
}

Outcome ewc_mechanics() {
    // penalty vanishes at the snapshot
    oracle::Rng rng(1007);
    auto a = oracle::random_tensor({3, 4}, rng);
    ImportanceState at{{oracle::uniform(12, rng, 0.0, 2.0)}, {values(a)}, 5000.0};
    Tensor params[] = {a};
    const double at_snapshot = quadratic_penalty(params, at).item();

    // loss (a-3)^2 + (b-3)^2 from a snapshot at 0 with importance (1, 0)
    auto theta = Tensor::from({2}, {0.0, 0.0}, true);
    const ImportanceState s{{{1.0, 0.0}}, {{0.0, 0.0}}, kPinLambda};
    Tensor tp[] = {theta};
    Sgd sgd({kPinLr, 0.0, 0.0});
    for (int step = 0; step < 1000; ++step) {
        theta.zero_grad();
        backward(add(weighted_squared_distance(theta, std::vector<double>{3.0, 3.0}, std::vector<double>{1.0, 1.0}),
                     quadratic_penalty(tp, s)));
        sgd.step(tp);
    }
    const double pinned = std::abs(theta.at(0)), free = std::abs(theta.at(1));
    const double ratio = free > 0.0 ? pinned / free : INFINITY;
    return {at_snapshot == 0.0 && ratio < kPinnedDriftRatio,
            "penalty at snapshot " + sci(at_snapshot) + ", pinned/free drift " + sci(ratio) + " at lambda " +
                sci(kPinLambda) + " (need < " + sci(kPinnedDriftRatio) + ")"};
}

Outcome lwf_mechanics() {
    oracle::Rng rng(1008);
    auto m = build_model(fixtures::mlp_spec(4, {6}, 2, true, {2, 2}), 6);
    TeacherSnapshot teacher{m.clone(), 2.0, 1};
    m.set_offset(1);
    const auto b = random_batch(rng, 6, 4, 2, 1);
    auto twin = m.clone();
    twin.set_offset(1);
    const auto plain = dynamic_loss(twin, b, 1);
    const auto with = dynamic_loss(m, b, 1, [&](std::span<const Tensor> l) { return lwf_loss(teacher, b, l, 0.0); });
    bool same = with.total.item() == plain.total.item();
    backward(plain.total);
    backward(with.total);
    for (std::size_t p = 0; p < m.parameters().size(); ++p)
        same = same && grad_or_zero(m.parameters()[p]) == grad_or_zero(twin.parameters()[p]);

    // identical student and teacher logits give a zero distillation gradient
    auto logits = oracle::random_tensor({5, 3}, rng);
    const Tensor student[] = {logits}, target[] = {Tensor::from({5, 3}, values(logits))};
    backward(distillation_loss(student, target, 2.0));
    double worst = 0.0;
    for (double g : logits.grad()) worst = std::max(worst, std::abs(g));
    return {same && worst < kDistillGradTol, std::string("lambda 0 loss and gradients ") + (same ? "equal" : "differ") +
                                       ", self-distillation gradient " + sci(worst)};
}

Outcome herding() {
    oracle::Rng rng(1009);
    std::size_t bad = 0;
    for (std::size_t k = 0; k < kHerdingSets; ++k) {
        const std::size_t n = oracle::pick(rng, 1, kHerdingMaxPoints), dim = oracle::pick(rng, 1, 8);
        const std::size_t budget = oracle::pick(rng, 1, kHerdingMaxBudget);
        const auto pts = oracle::uniform(n * dim, rng);
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < n; ++i) rows.emplace_back(pts.begin() + i * dim, pts.begin() + (i + 1) * dim);
        bad += herding_select(pts, dim, budget) != oracle::herding(rows, budget);
    }
    return {bad == 0, std::to_string(kHerdingSets) + " sets, " + std::to_string(bad) + " mismatches"};
}

struct TrendRun {
    std::string config;
    std::uint64_t seed;
    MetricsReport metrics;
};

std::vector<TrendRun> trend_runs;

MetricsReport run_config(const std::string& name, std::uint64_t seed) {
    const auto c = load_config(std::string(SCROLLNET_CONFIG_DIR) + "/" + name + ".json");
    auto train = c.train;
    train.seed = seed;
    train.width_diagnostics = false;
    const auto stream = build_stream(c.dataset, seed);
    return run_sequence(stream, c.body(), train);
}

Outcome trend() {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    for (const char* method : {"ft", "ewc"}) {
        const std::string base = std::string("desk_") + method;
        const auto seeds = load_config(std::string(SCROLLNET_CONFIG_DIR) + "/" + base + "_n1.json").seeds;
        std::size_t wins = 0;
        double mean[2] = {0.0, 0.0};
        for (auto seed : seeds) {
            double final_acc[2];
            for (int i = 0; i < 2; ++i) {
                const std::string name = base + (i == 0 ? "_n1" : "_n4");
                auto report = run_config(name, seed);
                final_acc[i] = average_accuracy(report, Protocol::task_aware, report.tasks());
                mean[i] += final_acc[i] / static_cast<double>(seeds.size());
                trend_runs.push_back({name, seed, std::move(report)});
            }
            wins += final_acc[1] >= final_acc[0];
        }
        ok = ok && seeds.size() == 3 && wins >= kTrendSeedWins;
        detail += std::string(detail.empty() ? "" : "; ") + method + " N=4 >= N=1 in " + std::to_string(wins) + "/" +
                  std::to_string(seeds.size()) + " seeds (means " + fixed4(mean[0]) + " vs " + fixed4(mean[1]) + ")";
    }
    const double took = minutes_since(start);
    return {ok && took < kTrendMinutes, detail + ", " + fixed4(took * 60.0) + " s"};
}

Outcome dominance() {
    std::size_t cells = 0, bad = 0;
    for (const auto& r : trend_runs)
        for (std::size_t e = 0; e < r.metrics.tasks(); ++e)
            for (std::size_t t = 0; t < r.metrics.task_aware[e].size(); ++t, ++cells)
                bad += r.metrics.task_agnostic[e][t] > r.metrics.task_aware[e][t];
    return {cells > 0 && bad == 0, std::to_string(trend_runs.size()) + " runs, " + std::to_string(cells) +
                                       " accuracy cells, " + std::to_string(bad) + " with agnostic above aware"};
}

Outcome cli_determinism() {
    const auto root = fs::temp_directory_path() / ("scrollnet-acceptance-" + std::to_string(std::random_device{}()));
    std::ostringstream sink;
    auto run_into = [&](const std::string& sub) {
        RunOptions o;
        o.config_path = std::string(SCROLLNET_CONFIG_DIR) + "/minimal.json";
        o.out = (root / sub).string();
        o.quiet = true;
        return cmd_run(o, sink, sink);
    };
    const int a = run_into("a"), b = run_into("b");
    std::size_t files = 0, differ = 0;
    if (a == 0 && b == 0)
        for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
            const auto name = e.path().filename().string();
            if (!e.is_regular_file() || (name != "metrics.csv" && name != "aggregate.csv")) continue;
            ++files;
            differ += read(e.path()) != read(root / "b" / fs::relative(e.path(), root / "a"));
        }
    fs::remove_all(root);
    return {a == 0 && b == 0 && files >= 3 && differ == 0,
            "exit codes " + std::to_string(a) + "/" + std::to_string(b) + ", " + std::to_string(files) +
                " csv files compared, " + std::to_string(differ) + " differ"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient check suite", gradient_suite},
        {"parameter nesting", nesting},
        {"scrolling permutation", scrolling},
        {"N=1 degenerates to plain training", degeneracy},
        {"dynamic loss identity", loss_identity},
        {"update locality", locality},
        {"EWC mechanics", ewc_mechanics},
        {"LwF mechanics", lwf_mechanics},
        {"herding selection", herding},
        {"directional trend N=4 over N=1", trend},
        {"task-agnostic never exceeds task-aware", dominance},
        {"cli run determinism", cli_determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.passed;
        std::printf("%s %2zu %s: %s\n", o.passed ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
