#include "trackmpc/experiments.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

using namespace trackmpc;

namespace {

struct GlobalFlags {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int jobs = 1;
};

void apply(const GlobalFlags& flags, ExperimentConfig& config) {
    if (flags.seed) {
        config.seed = *flags.seed;
        config.constants.seed = *flags.seed;
    }
    if (flags.out) {
        config.output_dir = *flags.out;
    }
    config.constants.jobs = flags.jobs;
}

void print_summary(const ExperimentSummary& summary) {
    std::cout << std::setprecision(10);
    for (const SweepRow& row : summary.rows) {
        std::cout << row.scheme << " N=" << row.N << " eta=" << row.eta << " J=" << row.J << " sup_r=" << row.sup_r
                  << " status=" << row.status << "\n";
    }
    if (summary.oracle) {
        std::cout << "oracle J_inf=" << summary.oracle->J_inf << " K_used=" << summary.oracle->K_used << "\n";
    }
    for (const std::string& f : summary.files) {
        std::cout << "wrote " << f << "\n";
    }
}

int run_config(ExperimentConfig config, const GlobalFlags& flags) {
    apply(flags, config);
    const ExperimentSummary summary = run_experiment(config, RunOptions{flags.jobs});
    print_summary(summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MPC for tracking experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags flags;
    std::uint64_t seed = 0;
    std::string out;
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed for sampling");
    auto* out_opt = app.add_option("--out", out, "output directory");
    app.add_option("--jobs", flags.jobs, "worker threads")->check(CLI::PositiveNumber);

    std::string config_path;
    std::string preset_name;
    bool dump = false;

    auto* run = app.add_subcommand("run", "run every cell of a config file");
    run->add_option("config", config_path, "config file")->required();
    auto* pre = app.add_subcommand("preset", "run a named preset");
    pre->add_option("name", preset_name, "preset name")->required();
    pre->add_flag("--dump", dump, "print the preset config instead of running it");
    auto* constants = app.add_subcommand("constants", "estimate the assumption constants");
    constants->add_option("config", config_path, "config file")->required();
    auto* oracle = app.add_subcommand("oracle", "compute the infinite-horizon oracle");
    oracle->add_option("config", config_path, "config file")->required();
    auto* validate = app.add_subcommand("validate", "parse and check a config file");
    validate->add_option("config", config_path, "config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }
    if (*seed_opt) {
        flags.seed = seed;
    }
    if (*out_opt) {
        flags.out = out;
    }

    try {
        if (*run) {
            return run_config(load_config(config_path), flags);
        }
        if (*pre) {
            ExperimentConfig config = preset(preset_name);
            if (dump) {
                apply(flags, config);
                std::cout << serialize_config(config);
                return 0;
            }
            return run_config(config, flags);
        }
        if (*validate) {
            const ExperimentConfig config = load_config(config_path);
            config.validate();
            std::cout << "ok: " << config.name << " (" << config.model << ")\n";
            return 0;
        }
        if (*constants) {
            ExperimentConfig config = load_config(config_path);
            apply(flags, config);
            const ExperimentSetup setup = make_setup(config);
            const ConstantsEstimate estimate =
                estimate_constants(setup.model, setup.spec, setup.cost, setup.T, config.constants);
            std::filesystem::create_directories(config.output_dir);
            std::ofstream file(std::filesystem::path(config.output_dir) / "constants.txt");
            write_report(estimate, file);
            write_report(estimate, std::cout);
            return 0;
        }
        if (*oracle) {
            ExperimentConfig config = load_config(config_path);
            apply(flags, config);
            const ExperimentSetup setup = make_setup(config);
            const OracleResult result =
                infinite_horizon_oracle(setup.model, setup.spec, setup.cost, setup.r_d, config.x0, config.oracle);
            std::filesystem::create_directories(config.output_dir);
            const std::string path = (std::filesystem::path(config.output_dir) / "oracle.csv").string();
            write_oracle_csv(result, setup.cost, setup.r_d, path);
            std::cout << std::setprecision(17) << "J_inf = " << result.J_inf << "\nK_used = " << result.K_used
                      << "\ntail = " << result.tail << "\nwrote " << path << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << app.help();
    return 1;
}
