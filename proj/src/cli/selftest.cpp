#include "scrollnet/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>

#include "scrollnet/errors.hpp"
#include "scrollnet/kernels.hpp"
#include "scrollnet/methods.hpp"
#include "scrollnet/ops.hpp"
#include "scrollnet/scroll.hpp"
#include "scrollnet/slimmable.hpp"

namespace scrollnet {

Fault parse_fault(std::string_view name) {
    if (name == "none") return Fault::none;
    if (name == "gradient") return Fault::gradient;
    if (name == "nesting") return Fault::nesting;
    if (name == "scrolling") return Fault::scrolling;
    if (name == "loss") return Fault::loss;
    throw ConfigError("unknown fault '" + std::string(name) + "' (expected gradient, nesting, scrolling or loss)");
}

namespace {

using Rng = std::mt19937_64;
using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

std::vector<double> uniform(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    const auto n = shape_numel(shape);
    return Tensor::from(std::move(shape), uniform(n, rng, lo, hi), true);
}

// Values bounded away from zero so relu kinks stay outside the difference step.
Tensor away_from_zero(Shape shape, Rng& rng) {
    auto v = uniform(shape_numel(shape), rng, 0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& x : v)
        if (sign(rng)) x = -x;
    return Tensor::from(std::move(shape), std::move(v), true);
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Random quadratic read-out so every output coordinate reaches the loss with a
// distinct weight.
Fn project(Fn f, Rng& rng, std::size_t outputs) {
    auto anchor = std::make_shared<std::vector<double>>(uniform(outputs, rng));
    auto weights = std::make_shared<std::vector<double>>(uniform(outputs, rng, 0.5, 1.5));
    return [f = std::move(f), anchor, weights](const std::vector<Tensor>& in) {
        return weighted_squared_distance(f(in), *anchor, *weights);
    };
}

// Relative error ||a - n|| / (||a|| + ||n||) of the analytic gradient against
// central differences, over all inputs jointly.
double gradient_error(std::vector<Tensor>& inputs, const Fn& f, bool inject) {
    for (auto& t : inputs) t.zero_grad();
    backward(f(inputs));
    std::vector<double> analytic, numeric;
    const double eps = 1e-6;
    for (auto& t : inputs) {
        const auto g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) analytic.push_back(g.empty() ? 0.0 : g[i]);
        NoGradGuard guard;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            auto d = t.mutable_data();
            const double keep = d[i];
            d[i] = keep + eps;
            const double up = f(inputs).item();
            d[i] = keep - eps;
            const double down = f(inputs).item();
            d[i] = keep;
            numeric.push_back((up - down) / (2 * eps));
        }
    }
    if (inject && !analytic.empty()) analytic[0] += 1e-2 * (1.0 + std::abs(analytic[0]));
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    return denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

struct GradOp {
    std::string name;
    std::function<std::pair<std::vector<Tensor>, Fn>(Rng&)> make;
};

std::vector<GradOp> gradient_ops() {
    std::vector<GradOp> ops;
    ops.push_back({"linear", [](Rng& rng) {
                       const auto B = pick(rng, 1, 4), I = pick(rng, 1, 5), O = pick(rng, 1, 4);
                       std::vector<Tensor> in{random_tensor({B, I}, rng), random_tensor({O, I}, rng),
                                              random_tensor({O}, rng)};
                       Fn f = [](const std::vector<Tensor>& x) { return linear(x[0], x[1], x[2]); };
                       return std::pair{in, project(f, rng, B * O)};
                   }});
    ops.push_back({"conv2d", [](Rng& rng) {
                       const auto B = pick(rng, 1, 2), C = pick(rng, 1, 3), H = pick(rng, 3, 5), W = pick(rng, 3, 5);
                       const auto F = pick(rng, 1, 3), K = pick(rng, 1, 3), S = pick(rng, 1, 2), P = pick(rng, 0, 1);
                       std::vector<Tensor> in{random_tensor({B, C, H, W}, rng), random_tensor({F, C, K, K}, rng),
                                              random_tensor({F}, rng)};
                       const auto dims = kernels::make_conv_dims(B, C, H, W, F, K, S, P);
                       Fn f = [S, P](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2], S, P); };
                       return std::pair{in, project(f, rng, B * F * dims.out_height * dims.out_width)};
                   }});
    ops.push_back({"relu", [](Rng& rng) {
                       const auto n = pick(rng, 1, 12);
                       std::vector<Tensor> in{away_from_zero({n}, rng)};
                       Fn f = [](const std::vector<Tensor>& x) { return relu(x[0]); };
                       return std::pair{in, project(f, rng, n)};
                   }});
    ops.push_back({"global_avg_pool", [](Rng& rng) {
                       const auto B = pick(rng, 1, 3), C = pick(rng, 1, 3), H = pick(rng, 1, 4), W = pick(rng, 1, 4);
                       std::vector<Tensor> in{random_tensor({B, C, H, W}, rng)};
                       Fn f = [](const std::vector<Tensor>& x) { return global_avg_pool(x[0]); };
                       return std::pair{in, project(f, rng, B * C)};
                   }});
    for (bool spatial : {false, true})
        for (bool training : {true, false})
            ops.push_back({std::string("batch_norm_") + (spatial ? "4d" : "2d") + (training ? "_train" : "_eval"),
                           [spatial, training](Rng& rng) {
                               const auto B = pick(rng, 2, 4), C = pick(rng, 1, 3);
                               Shape s = spatial ? Shape{B, C, pick(rng, 1, 3), pick(rng, 1, 3)} : Shape{B, C};
                               const auto n = shape_numel(s);
                               std::vector<Tensor> in{random_tensor(s, rng), random_tensor({C}, rng, 0.5, 1.5),
                                                      random_tensor({C}, rng)};
                               auto stats = std::make_shared<NormStats>(NormStats{uniform(C, rng), uniform(C, rng, 0.5, 2.0)});
                               Fn f = [stats, training](const std::vector<Tensor>& x) {
                                   NormStats copy = *stats;
                                   return batch_norm(x[0], x[1], x[2], copy, NormOptions{training, 0.1, 1e-5});
                               };
                               return std::pair{in, project(f, rng, n)};
                           }});
    ops.push_back({"take", [](Rng& rng) {
                       const auto R = pick(rng, 1, 5), C = pick(rng, 1, 5);
                       IndexList rows, cols;
                       for (std::size_t i = 0, k = pick(rng, 1, R); i < k; ++i) rows.push_back(pick(rng, 0, R - 1));
                       for (std::size_t i = 0, k = pick(rng, 1, C); i < k; ++i) cols.push_back(pick(rng, 0, C - 1));
                       std::vector<Tensor> in{random_tensor({R, C}, rng)};
                       Fn f = [rows, cols](const std::vector<Tensor>& x) { return take(x[0], rows, cols); };
                       return std::pair{in, project(f, rng, rows.size() * cols.size())};
                   }});
    ops.push_back({"concat_columns", [](Rng& rng) {
                       const auto B = pick(rng, 1, 3), a = pick(rng, 1, 3), b = pick(rng, 1, 3);
                       std::vector<Tensor> in{random_tensor({B, a}, rng), random_tensor({B, b}, rng)};
                       Fn f = [](const std::vector<Tensor>& x) { return concat_columns(x); };
                       return std::pair{in, project(f, rng, B * (a + b))};
                   }});
    ops.push_back({"add_scale", [](Rng& rng) {
                       const auto n = pick(rng, 1, 6);
                       const double c = uniform(1, rng, -2.0, 2.0)[0];
                       std::vector<Tensor> in{random_tensor({n}, rng), random_tensor({n}, rng)};
                       Fn f = [c](const std::vector<Tensor>& x) { return add(x[0], scale(x[1], c)); };
                       return std::pair{in, project(f, rng, n)};
                   }});
    ops.push_back({"sum", [](Rng& rng) {
                       const auto n = pick(rng, 1, 6);
                       std::vector<Tensor> in{random_tensor({n}, rng)};
                       Fn f = [](const std::vector<Tensor>& x) { return sum(x[0]); };
                       return std::pair{in, project(f, rng, 1)};
                   }});
    ops.push_back({"sum_squares", [](Rng& rng) {
                       std::vector<Tensor> in{random_tensor({pick(rng, 1, 3), pick(rng, 1, 3)}, rng)};
                       Fn f = [](const std::vector<Tensor>& x) { return sum_squares(x[0]); };
                       return std::pair{in, f};
                   }});
    ops.push_back({"reshape", [](Rng& rng) {
                       const auto a = pick(rng, 1, 3), b = pick(rng, 1, 3);
                       std::vector<Tensor> in{random_tensor({a, b}, rng)};
                       Fn f = [a, b](const std::vector<Tensor>& x) { return reshape(x[0], {b, a}); };
                       return std::pair{in, project(f, rng, a * b)};
                   }});
    ops.push_back({"softmax_cross_entropy", [](Rng& rng) {
                       const auto B = pick(rng, 1, 4), K = pick(rng, 2, 5);
                       std::vector<std::size_t> labels(B);
                       for (auto& l : labels) l = pick(rng, 0, K - 1);
                       std::vector<Tensor> in{random_tensor({B, K}, rng, -3.0, 3.0)};
                       Fn f = [labels](const std::vector<Tensor>& x) { return softmax_cross_entropy(x[0], labels); };
                       return std::pair{in, f};
                   }});
    ops.push_back({"soft_cross_entropy", [](Rng& rng) {
                       const auto B = pick(rng, 1, 4), K = pick(rng, 2, 5);
                       const double T = uniform(1, rng, 0.5, 4.0)[0];
                       const auto target = softmax_rows(uniform(B * K, rng, -2.0, 2.0), K, 1.0);
                       std::vector<Tensor> in{random_tensor({B, K}, rng, -3.0, 3.0)};
                       Fn f = [target, T](const std::vector<Tensor>& x) { return soft_cross_entropy(x[0], target, T); };
                       return std::pair{in, f};
                   }});
    return ops;
}

CheckResult gradient_suite(const GradOp& op, Rng& rng, bool inject) {
    CheckResult r{"gradient", op.name, true, 0, ""};
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        auto [inputs, f] = op.make(rng);
        worst = std::max(worst, gradient_error(inputs, f, inject));
        ++r.cases;
    }
    r.passed = worst < 1e-4;
    r.detail = "max relative error " + sci(worst);
    return r;
}

ModelSpec random_spec(Rng& rng, std::size_t N) {
    ModelSpec spec;
    const bool spatial = pick(rng, 0, 1) == 1;
    const std::size_t depth = pick(rng, 1, 3);
    if (spatial) {
        spec.input_shape = {pick(rng, 1, 2), pick(rng, 3, 4), pick(rng, 3, 4)};
        for (std::size_t d = 0; d < depth; ++d) {
            spec.layers.push_back({LayerKind::conv, N * pick(rng, 1, 2), 3, 1, 1});
            if (pick(rng, 0, 1)) spec.layers.push_back({LayerKind::norm});
            spec.layers.push_back({LayerKind::relu});
        }
        spec.layers.push_back({LayerKind::pool});
    } else {
        spec.input_shape = {pick(rng, 1, 5)};
        for (std::size_t d = 0; d < depth; ++d) {
            spec.layers.push_back({LayerKind::linear, N * pick(rng, 1, 3)});
            if (pick(rng, 0, 1)) spec.layers.push_back({LayerKind::norm});
            spec.layers.push_back({LayerKind::relu});
        }
    }
    const std::size_t heads = pick(rng, 1, 3);
    for (std::size_t h = 0; h < heads; ++h) spec.head_classes.push_back(pick(rng, 2, 4));
    spec.splits = N;
    return spec;
}

CheckResult nesting_suite(Rng& rng, bool inject) {
    CheckResult r{"nesting", "param_ids nested and full width covers all", true, 0, ""};
    std::size_t violations = 0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t N = pick(rng, 1, 4);
        const auto spec = random_spec(rng, N);
        const auto model = SlimmableModel::build(spec, rng());
        const std::size_t o = pick(rng, 0, N - 1);
        for (std::size_t n = 1; n < N; ++n) {
            const auto small = model.param_ids(n, o), big = model.param_ids(n + 1, o);
            if (!std::includes(big.begin(), big.end(), small.begin(), small.end()) || small.size() >= big.size())
                ++violations;
        }
        auto full = model.param_ids(N, o);
        if (inject && !full.empty()) full.pop_back();
        if (full.size() != model.parameter_count()) ++violations;
        ++r.cases;
    }
    r.passed = violations == 0;
    r.detail = std::to_string(violations) + " violations";
    return r;
}

CheckResult scrolling_suite(bool inject) {
    CheckResult r{"scrolling", "offset period and ranking bijection", true, 0, ""};
    std::size_t violations = 0;
    auto check = [&](std::size_t N, std::size_t S) {
        ScrollState s = ScrollState::initial(N, S);
        std::vector<std::size_t> offsets;
        const std::size_t horizon = 3 * N;
        for (std::size_t t = 1; t <= horizon; ++t) {
            offsets.push_back(s.offset);
            if (s.offset != offset_for_task(t, N, S)) ++violations;
            auto rank = s.ranking();
            if (inject && rank.size() > 1) rank[1] = rank[0];
            auto sorted = rank;
            std::sort(sorted.begin(), sorted.end());
            for (std::size_t j = 0; j < N; ++j)
                if (sorted.size() != N || sorted[j] != j) {
                    ++violations;
                    break;
                }
            s = s.advanced();
        }
        std::size_t period = 0;
        for (std::size_t p = 1; p <= horizon && period == 0; ++p) {
            bool ok = true;
            for (std::size_t t = 0; t + p < horizon; ++t) ok = ok && offsets[t] == offsets[t + p];
            if (ok) period = p;
        }
        if (period != N / std::gcd(N, S) || period != s.period()) ++violations;
        ++r.cases;
    };
    for (std::size_t N : {2, 3, 4})
        for (std::size_t S : {1, 2, 3}) check(N, S);
    ScrollState one = ScrollState::initial(1, 1);
    for (int t = 0; t < 5; ++t, one = one.advanced()) {
        if (one.offset != 0 || one.ranking() != std::vector<std::size_t>{0}) ++violations;
        if (active_indices(6, 1, 1, one.offset) != IndexList{0, 1, 2, 3, 4, 5}) ++violations;
    }
    ++r.cases;
    r.passed = violations == 0;
    r.detail = std::to_string(violations) + " violations";
    return r;
}

CheckResult loss_suite(Rng& rng, bool inject) {
    CheckResult r{"loss", "width-sum equals accumulated per-width terms", true, 0, ""};
    std::size_t violations = 0;
    double worst_grad = 0.0;
    for (int k = 0; k < 20; ++k) {
        const std::size_t N = pick(rng, 1, 4);
        const auto spec = random_spec(rng, N);
        auto model = SlimmableModel::build(spec, rng());
        model.set_offset(pick(rng, 0, N - 1));
        const std::size_t task = pick(rng, 0, spec.head_classes.size() - 1);
        Batch batch;
        const std::size_t B = pick(rng, 2, 5);
        Shape shape{B};
        shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
        batch.inputs = Tensor::from(shape, uniform(shape_numel(shape), rng));
        for (std::size_t i = 0; i < B; ++i) batch.labels.push_back(pick(rng, 0, spec.head_classes[task] - 1));
        batch.tasks.assign(B, task);

        model.zero_grad();
        auto reference = model.clone();
        const DynamicLoss loss = dynamic_loss(model, batch, task);
        double recomposed = 0.0;
        for (std::size_t n = 0; n < loss.width_terms.size(); ++n)
            recomposed = n == 0 ? loss.width_terms[0].item() : recomposed + loss.width_terms[n].item();
        if (inject) recomposed += 1e-9;
        if (recomposed != loss.total.item()) ++violations;

        backward(loss.total);
        reference.zero_grad();
        const std::size_t heads[] = {task};
        for (std::size_t n = 1; n <= N; ++n)
            backward(softmax_cross_entropy(reference.forward(batch.inputs, n, heads, Mode::train).front(), batch.labels));
        // Relative error over the whole gradient vector: per-element ratios are
        // meaningless for coordinates whose exact gradient is zero (biases
        // feeding a norm layer) and carry only rounding noise.
        const auto a = model.parameters();
        const auto b = reference.parameters();
        double diff = 0.0, norm = 0.0;
        for (std::size_t p = 0; p < a.size(); ++p) {
            const auto ga = a[p].grad(), gb = b[p].grad();
            for (std::size_t i = 0; i < a[p].numel(); ++i) {
                const double x = ga.empty() ? 0.0 : ga[i], y = gb.empty() ? 0.0 : gb[i];
                diff += (x - y) * (x - y);
                norm += x * x;
            }
        }
        worst_grad = std::max(worst_grad, norm > 0.0 ? std::sqrt(diff / norm) : std::sqrt(diff));
        ++r.cases;
    }
    if (worst_grad > 1e-12) ++violations;
    r.passed = violations == 0;
    r.detail = std::to_string(violations) + " violations, max gradient rel diff " + sci(worst_grad);
    return r;
}

}  // namespace

std::vector<CheckResult> run_selftest(Fault fault, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> out;
    for (const auto& op : gradient_ops()) out.push_back(gradient_suite(op, rng, fault == Fault::gradient));
    out.push_back(nesting_suite(rng, fault == Fault::nesting));
    out.push_back(scrolling_suite(fault == Fault::scrolling));
    out.push_back(loss_suite(rng, fault == Fault::loss));
    return out;
}

int cmd_selftest(Fault fault, std::ostream& out, std::ostream& err) {
    std::vector<CheckResult> results;
    try {
        results = run_selftest(fault);
    } catch (const std::exception& e) {
        err << "selftest crashed: " << e.what() << '\n';
        return 1;
    }
    bool ok = true;
    for (const auto& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.suite << ": " << r.name << " (" << r.cases << " cases, "
            << r.detail << ")\n";
        ok = ok && r.passed;
    }
    for (const auto& r : results)
        if (!r.passed) err << "failed check: " << r.suite << ": " << r.name << '\n';
    return ok ? 0 : 1;
}

}  // namespace scrollnet
