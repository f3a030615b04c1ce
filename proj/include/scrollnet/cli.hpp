#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scrollnet/config.hpp"
#include "scrollnet/eval.hpp"

namespace scrollnet {

inline constexpr const char* kOutputRootEnv = "SCROLLNET_OUTPUT_ROOT";

struct RunOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;  // replaces the config's seed list
    std::optional<std::string> out;     // replaces output_dir (and ignores the env root)
    bool force = false;                 // overwrite existing result directories
    bool quiet = false;
};

/// Exit codes: 0 success, 1 training aborted, 2 invalid config or usage.
int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);

/// Runs every seed of an already parsed config into `root`.
int run_experiment(const ExperimentConfig& config, const std::string& root, bool force, bool quiet, std::ostream& out,
                   std::ostream& err);

int cmd_compare(const std::vector<std::string>& dirs, const std::optional<std::string>& csv_path, std::ostream& out,
                std::ostream& err);

/// Resolved output directory: --out, else output_dir under $SCROLLNET_OUTPUT_ROOT
/// when that is set and output_dir is relative, else output_dir.
std::string resolve_output_root(const ExperimentConfig& config, const std::optional<std::string>& out);

/// Metrics CSV text (versioned header, one row per (t_eval, t_task, protocol)).
std::string metrics_csv(const MetricsReport& report);

struct SeedSummary {
    std::uint64_t seed = 0;
    std::size_t tasks = 0;
    double final_aware = 0.0;
    double final_agnostic = 0.0;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation, 0 for one value
};

Aggregate aggregate(const std::vector<double>& values);

}  // namespace scrollnet
