#include "scrollnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "scrollnet/checkpoint.hpp"
#include "scrollnet/errors.hpp"
#include "scrollnet/trainer.hpp"

namespace scrollnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
    if (!out) throw InputError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

class ArtifactHooks : public RunHooks {
public:
    ArtifactHooks(fs::path dir, bool checkpoints, std::uint64_t seed, std::size_t tasks, bool quiet, std::ostream& out)
        : dir_(std::move(dir)), checkpoints_(checkpoints), seed_(seed), tasks_(tasks), quiet_(quiet), out_(out),
          log_(dir_ / "run_log.jsonl", std::ios::binary | std::ios::trunc) {
        if (!log_) throw InputError("cannot write " + (dir_ / "run_log.jsonl").string());
    }

    void on_epoch(const EpochRecord& r, const RunState&) override {
        json j{{"type", "epoch"},
               {"task", r.task + 1},
               {"epoch", r.epoch},
               {"offset", r.offset},
               {"lr", r.lr},
               {"width_losses", r.width_losses},
               {"strategy_loss", r.strategy_loss},
               {"total_loss", r.total_loss}};
        log_ << j.dump() << '\n';
    }

    void on_task(const TaskRecord& r, const RunState& run) override {
        json j{{"type", "task"},
               {"task", r.task + 1},
               {"offset", r.offset},
               {"ranking", r.ranking},
               {"task_aware", r.task_aware},
               {"task_agnostic", r.task_agnostic},
               {"dropped_classes", r.dropped_classes}};
        log_ << j.dump() << '\n';
        log_.flush();
        width_accuracy_.push_back(r.width_accuracy);
        if (checkpoints_) {
            fs::create_directories(dir_ / "checkpoints");
            save_checkpoint(run, (dir_ / "checkpoints" / ("task-" + std::to_string(r.task + 1) + ".json")).string());
        }
        if (!quiet_) {
            const std::size_t upto = r.task + 1;
            out_ << "seed " << seed_ << " task " << upto << "/" << tasks_ << ": offset " << r.offset
                 << ", task-aware " << fixed(average_accuracy(run.metrics, Protocol::task_aware, upto), 4)
                 << ", task-agnostic " << fixed(average_accuracy(run.metrics, Protocol::task_agnostic, upto), 4)
                 << '\n';
        }
    }

    const std::vector<std::vector<std::vector<double>>>& width_accuracy() const { return width_accuracy_; }

private:
    fs::path dir_;
    bool checkpoints_;
    std::uint64_t seed_;
    std::size_t tasks_;
    bool quiet_;
    std::ostream& out_;
    std::ofstream log_;
    std::vector<std::vector<std::vector<double>>> width_accuracy_;
};

json protocol_curve(const MetricsReport& report, Protocol p) {
    std::vector<double> curve;
    for (std::size_t t = 1; t <= report.tasks(); ++t) curve.push_back(average_accuracy(report, p, t));
    return curve;
}

json summary_json(const MetricsReport& report, std::uint64_t seed, const json& config,
                  const std::vector<std::vector<std::vector<double>>>& widths) {
    const std::size_t T = report.tasks();
    json j;
    j["seed"] = seed;
    j["tasks"] = T;
    for (auto p : {Protocol::task_aware, Protocol::task_agnostic}) {
        const std::string name(to_string(p));
        j["final_average_accuracy"][name] = average_accuracy(report, p, T);
        j["average_accuracy"][name] = protocol_curve(report, p);
        j["forgetting"][name] = forgetting(report, p, T);
        j["accuracy_matrix"][name] = report.matrix(p);
    }
    j["diagnostics"]["width_accuracy"] = widths;
    j["config"] = config;
    return j;
}

void write_manifest(const fs::path& dir, std::uint64_t seed, const std::string& config_text, const std::string& status) {
    json m;
    m["tool"] = "scrollnet";
    m["format"] = 1;
    m["seed"] = seed;
    m["config_hash"] = hex(fnv1a(config_text));
    m["status"] = status;
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            files.push_back(fs::relative(e.path(), dir).generic_string());
    std::sort(files.begin(), files.end());
    m["files"] = files;
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

struct LoadedResult {
    std::string name;
    std::size_t tasks = 0;
    std::vector<double> aware;
    std::vector<double> agnostic;
};

LoadedResult load_result(const std::string& dir) {
    const fs::path p(dir);
    LoadedResult r;
    r.name = dir;
    if (fs::exists(p / "aggregate.json")) {
        const json j = json::parse(read_file(p / "aggregate.json"));
        r.tasks = j.at("tasks").get<std::size_t>();
        r.aware = j.at("task_aware").at("per_seed").get<std::vector<double>>();
        r.agnostic = j.at("task_agnostic").at("per_seed").get<std::vector<double>>();
    } else if (fs::exists(p / "summary.json")) {
        const json j = json::parse(read_file(p / "summary.json"));
        r.tasks = j.at("tasks").get<std::size_t>();
        r.aware = {j.at("final_average_accuracy").at("task_aware").get<double>()};
        r.agnostic = {j.at("final_average_accuracy").at("task_agnostic").get<double>()};
    } else {
        throw InputError(dir + ": no aggregate.json or summary.json");
    }
    if (r.aware.empty()) throw InputError(dir + ": no results");
    return r;
}

std::string signed_fixed(double v) { return (v >= 0 ? "+" : "") + fixed(v, 4); }

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
    std::string out = "# scrollnet-metrics v1\nt_eval,t_task,protocol,accuracy\n";
    for (std::size_t e = 0; e < report.tasks(); ++e)
        for (auto p : {Protocol::task_aware, Protocol::task_agnostic}) {
            const auto& row = report.matrix(p)[e];
            for (std::size_t t = 0; t < row.size(); ++t)
                out += std::to_string(e + 1) + "," + std::to_string(t + 1) + "," + std::string(to_string(p)) + "," +
                       fixed(row[t]) + "\n";
        }
    return out;
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

std::string resolve_output_root(const ExperimentConfig& config, const std::optional<std::string>& out) {
    if (out) return *out;
    const char* env = std::getenv(kOutputRootEnv);
    if (env && *env && fs::path(config.output_dir).is_relative()) return (fs::path(env) / config.output_dir).string();
    return config.output_dir;
}

int run_experiment(const ExperimentConfig& config, const std::string& root, bool force, bool quiet, std::ostream& out,
                   std::ostream& err) {
    const fs::path base(root);
    for (auto seed : config.seeds) {
        const fs::path dir = base / ("seed-" + std::to_string(seed));
        if (fs::exists(dir / "manifest.json") && !force) {
            err << "error: " << dir.string() << " already holds results; pass --force to overwrite\n";
            return 2;
        }
    }

    std::vector<SeedSummary> summaries;
    std::vector<json> curves_aware, curves_agnostic;
    for (auto seed : config.seeds) {
        const fs::path dir = base / ("seed-" + std::to_string(seed));
        if (force && fs::exists(dir)) fs::remove_all(dir);
        fs::create_directories(dir);

        ExperimentConfig one = config;
        one.seeds = {seed};
        const std::string config_text = dump_config(one);
        write_file(dir / "config.json", config_text);
        write_manifest(dir, seed, config_text, "running");

        TrainConfig train = config.train;
        train.seed = seed;
        TaskStream stream;
        RunState run = [&] {
            try {
                stream = build_stream(config.dataset, seed);
                return init_run(stream, config.body(), train);
            } catch (const ConfigError&) {
                throw;
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }();

        ArtifactHooks hooks(dir, config.checkpoints, seed, stream.size(), quiet, out);
        try {
            run_sequence(run, stream, train, &hooks);
        } catch (const DivergenceError& e) {
            write_file(dir / "divergence.json", e.dump() + "\n");
            write_manifest(dir, seed, config_text, "aborted");
            err << "error: seed " << seed << ": " << e.what() << " (state dump in "
                << (dir / "divergence.json").string() << ")\n";
            return 1;
        }

        write_file(dir / "metrics.csv", metrics_csv(run.metrics));
        write_file(dir / "summary.json",
                   summary_json(run.metrics, seed, json::parse(config_text), hooks.width_accuracy()).dump(2) + "\n");
        write_manifest(dir, seed, config_text, "complete");

        const std::size_t T = run.metrics.tasks();
        summaries.push_back({seed, T, average_accuracy(run.metrics, Protocol::task_aware, T),
                             average_accuracy(run.metrics, Protocol::task_agnostic, T)});
        curves_aware.push_back(protocol_curve(run.metrics, Protocol::task_aware));
        curves_agnostic.push_back(protocol_curve(run.metrics, Protocol::task_agnostic));
    }

    std::vector<double> aware, agnostic;
    for (const auto& s : summaries) {
        aware.push_back(s.final_aware);
        agnostic.push_back(s.final_agnostic);
    }
    const std::size_t T = summaries.front().tasks;
    const Aggregate a = aggregate(aware), g = aggregate(agnostic);

    std::string csv = "# scrollnet-aggregate v1\nseed,tasks,task_aware,task_agnostic\n";
    for (const auto& s : summaries)
        csv += std::to_string(s.seed) + "," + std::to_string(T) + "," + fixed(s.final_aware) + "," +
               fixed(s.final_agnostic) + "\n";
    csv += "mean," + std::to_string(T) + "," + fixed(a.mean) + "," + fixed(g.mean) + "\n";
    csv += "std," + std::to_string(T) + "," + fixed(a.stddev) + "," + fixed(g.stddev) + "\n";
    write_file(base / "aggregate.csv", csv);

    json agg;
    agg["tasks"] = T;
    agg["seeds"] = config.seeds;
    auto curve_mean = [](const std::vector<json>& curves) {
        std::vector<double> mean(curves.front().size(), 0.0);
        for (const auto& c : curves)
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += c[i].get<double>();
        for (auto& v : mean) v /= static_cast<double>(curves.size());
        return mean;
    };
    agg["task_aware"] = {{"per_seed", aware}, {"mean", a.mean}, {"std", a.stddev}, {"curve_mean", curve_mean(curves_aware)}};
    agg["task_agnostic"] = {
        {"per_seed", agnostic}, {"mean", g.mean}, {"std", g.stddev}, {"curve_mean", curve_mean(curves_agnostic)}};
    write_file(base / "aggregate.json", agg.dump(2) + "\n");

    if (!quiet)
        out << "final average accuracy over " << summaries.size() << " seed(s): task-aware " << fixed(a.mean, 4)
            << " ± " << fixed(a.stddev, 4) << ", task-agnostic " << fixed(g.mean, 4) << " ± " << fixed(g.stddev, 4)
            << '\n';
    return 0;
}

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
    ExperimentConfig config;
    try {
        config = load_config(options.config_path);
        if (options.seed) config.seeds = {*options.seed};
        if (options.out) config.output_dir = *options.out;
        config.validate();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    }
    try {
        return run_experiment(config, resolve_output_root(config, options.out), options.force, options.quiet, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_compare(const std::vector<std::string>& dirs, const std::optional<std::string>& csv_path, std::ostream& out,
                std::ostream& err) {
    if (dirs.size() < 2) {
        err << "error: compare needs at least two result directories\n";
        return 2;
    }
    std::vector<LoadedResult> results;
    try {
        for (const auto& d : dirs) results.push_back(load_result(d));
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    for (const auto& r : results)
        if (r.tasks != results.front().tasks) {
            err << "error: task counts differ (" << results.front().name << ": " << results.front().tasks << ", "
                << r.name << ": " << r.tasks << ")\n";
            return 2;
        }

    const Aggregate base_a = aggregate(results.front().aware), base_g = aggregate(results.front().agnostic);
    std::string csv = "result,tasks,seeds,task_aware_mean,task_aware_std,task_agnostic_mean,task_agnostic_std,"
                      "delta_task_aware,delta_task_agnostic\n";
    std::size_t width = 6;
    for (const auto& r : results) width = std::max(width, r.name.size());
    out << std::left << std::setw(static_cast<int>(width)) << "result"
        << "  seeds  task-aware         task-agnostic      d-aware  d-agnostic\n";
    for (const auto& r : results) {
        const Aggregate a = aggregate(r.aware), g = aggregate(r.agnostic);
        out << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(5) << r.aware.size()
            << "  " << fixed(a.mean, 4) << " ± " << fixed(a.stddev, 4) << "  " << fixed(g.mean, 4) << " ± "
            << fixed(g.stddev, 4) << "  " << std::setw(7) << signed_fixed(a.mean - base_a.mean) << "  "
            << signed_fixed(g.mean - base_g.mean) << '\n';
        csv += r.name + "," + std::to_string(r.tasks) + "," + std::to_string(r.aware.size()) + "," + fixed(a.mean) +
               "," + fixed(a.stddev) + "," + fixed(g.mean) + "," + fixed(g.stddev) + "," +
               fixed(a.mean - base_a.mean) + "," + fixed(g.mean - base_g.mean) + "\n";
    }
    if (csv_path) {
        try {
            write_file(*csv_path, csv);
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return 1;
        }
    }
    return 0;
}

}  // namespace scrollnet
