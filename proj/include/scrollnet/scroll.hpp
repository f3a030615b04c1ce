#pragma once

#include <cstddef>
#include <vector>

namespace scrollnet {

/// Block offset anchoring the most important sub-network at task `task`
/// (1-based): ((task - 1) * step) mod splits. Task 1 keeps the initial order.
std::size_t offset_for_task(std::size_t task, std::size_t splits, std::size_t step = 1);

/// Importance ranking across tasks: N equal parameter blocks, cyclically
/// reassigned by `step` blocks at every task boundary.
struct ScrollState {
    std::size_t splits = 1;
    std::size_t step = 1;
    std::size_t task = 1;
    std::size_t offset = 0;

    static ScrollState initial(std::size_t splits, std::size_t step = 1);

    /// Next task; the offset is recomputed from the task index.
    ScrollState advanced() const;

    /// Block indices (0-based) from most to least important: block
    /// (offset + j) mod N has rank j + 1.
    std::vector<std::size_t> ranking() const;

    /// Number of tasks before the ranking repeats: N / gcd(N, S).
    std::size_t period() const;

    void validate() const;

    bool operator==(const ScrollState&) const = default;
};

}  // namespace scrollnet
