#include "scrollnet/eval.hpp"

#include <algorithm>
#include <numeric>

#include "scrollnet/errors.hpp"

namespace scrollnet {

std::string_view to_string(Protocol protocol) {
    return protocol == Protocol::task_aware ? "task_aware" : "task_agnostic";
}

std::size_t argmax_lowest(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = k;
    return best;
}

namespace {

constexpr std::size_t kEvalBatch = 256;

void check_heads(const SlimmableModel& model, const TaskStream& stream, std::size_t upto) {
    if (upto == 0 || upto > stream.size()) throw ContractError("evaluation range outside the task stream");
    if (upto > model.num_heads()) throw ContractError("model has no head for task " + std::to_string(model.num_heads()));
}

// Calls fn(logits per requested head, first, last) over consecutive test batches.
template <typename Fn>
void for_test_batches(SlimmableModel& model, const LabeledDataset& test, std::size_t width,
                      std::span<const std::size_t> heads, Fn fn) {
    NoGradGuard guard;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < test.size(); start += kEvalBatch) {
        const std::size_t stop = std::min(test.size(), start + kEvalBatch);
        idx.resize(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto logits = model.forward(test.batch(idx), width, heads, Mode::eval);
        fn(logits, start, stop);
    }
}

std::vector<double> aware_at_width(SlimmableModel& model, const TaskStream& stream, std::size_t upto,
                                   std::size_t width) {
    check_heads(model, stream, upto);
    std::vector<double> acc(upto, 0.0);
    for (std::size_t t = 0; t < upto; ++t) {
        const auto& test = stream.test(t);
        if (test.size() == 0) continue;
        std::size_t correct = 0;
        const std::size_t heads[] = {t};
        for_test_batches(model, test, width, heads,
                         [&](const std::vector<Tensor>& logits, std::size_t start, std::size_t stop) {
                             const std::size_t k = logits[0].dim(1);
                             for (std::size_t i = start; i < stop; ++i)
                                 if (argmax_lowest(logits[0].data().subspan((i - start) * k, k)) == test.labels[i])
                                     ++correct;
                         });
        acc[t] = static_cast<double>(correct) / static_cast<double>(test.size());
    }
    return acc;
}

}  // namespace

std::vector<double> evaluate_task_aware(SlimmableModel& model, const TaskStream& stream, std::size_t upto) {
    return aware_at_width(model, stream, upto, model.splits());
}

std::vector<double> evaluate_width(SlimmableModel& model, const TaskStream& stream, std::size_t upto,
                                   std::size_t width) {
    return aware_at_width(model, stream, upto, width);
}

std::vector<double> evaluate_task_agnostic(SlimmableModel& model, const TaskStream& stream, std::size_t upto) {
    check_heads(model, stream, upto);
    std::vector<std::size_t> heads(upto);
    std::iota(heads.begin(), heads.end(), std::size_t{0});
    std::vector<std::size_t> offsets(upto, 0);
    for (std::size_t h = 1; h < upto; ++h) offsets[h] = offsets[h - 1] + stream.classes_in(h - 1);
    const std::size_t total = offsets.back() + stream.classes_in(upto - 1);

    std::vector<double> acc(upto, 0.0);
    std::vector<double> row(total);
    for (std::size_t t = 0; t < upto; ++t) {
        const auto& test = stream.test(t);
        if (test.size() == 0) continue;
        std::size_t correct = 0;
        for_test_batches(model, test, model.splits(), heads,
                         [&](const std::vector<Tensor>& logits, std::size_t start, std::size_t stop) {
                             for (std::size_t i = start; i < stop; ++i) {
                                 for (std::size_t h = 0; h < upto; ++h) {
                                     const std::size_t k = logits[h].dim(1);
                                     const auto src = logits[h].data().subspan((i - start) * k, k);
                                     std::copy(src.begin(), src.end(),
                                               row.begin() + static_cast<std::ptrdiff_t>(offsets[h]));
                                 }
                                 if (argmax_lowest(row) == offsets[t] + test.labels[i]) ++correct;
                             }
                         });
        acc[t] = static_cast<double>(correct) / static_cast<double>(test.size());
    }
    return acc;
}

void MetricsReport::append(std::vector<double> aware, std::vector<double> agnostic) {
    if (aware.size() != tasks() + 1 || agnostic.size() != tasks() + 1)
        throw ContractError("metrics row must cover exactly the tasks seen so far");
    task_aware.push_back(std::move(aware));
    task_agnostic.push_back(std::move(agnostic));
}

double average_accuracy(const MetricsReport& report, Protocol protocol, std::size_t after_task) {
    if (after_task == 0 || after_task > report.tasks()) throw ContractError("average_accuracy: task not trained yet");
    const auto& row = report.matrix(protocol)[after_task - 1];
    double s = 0.0;
    for (double v : row) s += v;
    return s / static_cast<double>(row.size());
}

std::vector<double> forgetting(const MetricsReport& report, Protocol protocol, std::size_t after_task) {
    if (after_task == 0 || after_task > report.tasks()) throw ContractError("forgetting: task not trained yet");
    const auto& m = report.matrix(protocol);
    std::vector<double> out;
    for (std::size_t j = 0; j + 1 < after_task; ++j) {
        double best = 0.0;
        for (std::size_t t = j; t + 1 < after_task; ++t) best = std::max(best, m[t][j]);
        out.push_back(best - m[after_task - 1][j]);
    }
    return out;
}

}  // namespace scrollnet
