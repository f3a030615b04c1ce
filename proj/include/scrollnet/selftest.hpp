#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace scrollnet {

/// Deliberate defects for checking that the suites can fail.
enum class Fault { none, gradient, nesting, scrolling, loss };

Fault parse_fault(std::string_view name);

struct CheckResult {
    std::string suite;
    std::string name;
    bool passed = true;
    std::size_t cases = 0;
    std::string detail;
};

/// Gradient-check, nesting, scrolling-permutation and loss-decomposition suites.
std::vector<CheckResult> run_selftest(Fault fault = Fault::none, std::uint64_t seed = 7);

/// Prints one line per check; exit code 0 when all pass, 1 otherwise.
int cmd_selftest(Fault fault, std::ostream& out, std::ostream& err);

}  // namespace scrollnet
