#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scrollnet/cli.hpp"
#include "scrollnet/errors.hpp"
#include "scrollnet/kernels.hpp"
#include "scrollnet/selftest.hpp"

int main(int argc, char** argv) {
    CLI::App app{"scrollnet: continual learning with scrolled slimmable sub-networks"};
    app.require_subcommand(1);

    std::string backend = "auto";
    app.add_option("--backend", backend, "kernel backend: auto, serial or parallel")
        ->check(CLI::IsMember({"auto", "serial", "parallel"}));

    scrollnet::RunOptions run;
    std::uint64_t seed = 0;
    std::string out_dir;
    auto* run_cmd = app.add_subcommand("run", "train every configured seed and write result artifacts");
    run_cmd->add_option("--config", run.config_path, "experiment config (JSON)")->required();
    auto* seed_opt = run_cmd->add_option("--seed", seed, "run only this seed");
    auto* out_opt = run_cmd->add_option("--out", out_dir, "output directory (overrides output_dir)");
    run_cmd->add_flag("--force", run.force, "overwrite existing result directories");
    run_cmd->add_flag("--quiet", run.quiet, "no progress output");

    std::vector<std::string> dirs;
    std::string csv;
    auto* cmp_cmd = app.add_subcommand("compare", "tabulate final average accuracy of result directories");
    cmp_cmd->add_option("dirs", dirs, "result directories; the first is the baseline")->required();
    auto* csv_opt = cmp_cmd->add_option("--csv", csv, "also write the table as CSV");

    std::string fault = "none";
    auto* self_cmd = app.add_subcommand("selftest", "gradient, nesting, scrolling and loss-identity checks");
    self_cmd->add_option("--inject-fault", fault, "deliberately break one suite")
        ->check(CLI::IsMember({"none", "gradient", "nesting", "scrolling", "loss"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (backend == "serial") scrollnet::kernels::set_backend(scrollnet::kernels::Backend::serial);
    else if (backend == "parallel" || (backend == "auto" && scrollnet::kernels::parallel_available()))
        scrollnet::kernels::set_backend(scrollnet::kernels::Backend::parallel);

    if (*run_cmd) {
        if (*seed_opt) run.seed = seed;
        if (*out_opt) run.out = out_dir;
        return scrollnet::cmd_run(run, std::cout, std::cerr);
    }
    if (*cmp_cmd) return scrollnet::cmd_compare(dirs, *csv_opt ? std::optional<std::string>(csv) : std::nullopt,
                                                std::cout, std::cerr);
    return scrollnet::cmd_selftest(scrollnet::parse_fault(fault), std::cout, std::cerr);
}
