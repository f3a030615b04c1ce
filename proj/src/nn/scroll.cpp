#include "scrollnet/scroll.hpp"

#include <numeric>
#include <string>

#include "scrollnet/errors.hpp"

namespace scrollnet {

std::size_t offset_for_task(std::size_t task, std::size_t splits, std::size_t step) {
    if (task == 0) throw ContractError("task indices are 1-based");
    if (splits == 0 || step == 0) throw ContractError("splits and scroll step must be positive");
    return ((task - 1) * step) % splits;
}

ScrollState ScrollState::initial(std::size_t splits, std::size_t step) {
    ScrollState s{splits, step, 1, 0};
    s.validate();
    return s;
}

ScrollState ScrollState::advanced() const {
    validate();
    ScrollState next = *this;
    next.task = task + 1;
    next.offset = offset_for_task(next.task, splits, step);
    return next;
}

std::vector<std::size_t> ScrollState::ranking() const {
    validate();
    std::vector<std::size_t> order(splits);
    for (std::size_t j = 0; j < splits; ++j) order[j] = (offset + j) % splits;
    return order;
}

std::size_t ScrollState::period() const { return splits / std::gcd(splits, step); }

void ScrollState::validate() const {
    if (splits == 0) throw ContractError("scroll state: splits must be at least 1");
    if (step == 0) throw ContractError("scroll state: step must be at least 1");
    if (task == 0) throw ContractError("scroll state: task indices are 1-based");
    if (offset != offset_for_task(task, splits, step))
        throw ContractError("scroll state: offset " + std::to_string(offset) + " inconsistent with task " +
                            std::to_string(task));
}

}  // namespace scrollnet
