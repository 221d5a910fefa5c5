#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "sparselab/config.hpp"
#include "sparselab/experiments.hpp"

namespace sparselab {

inline const char* kCliUsage =
    "usage: sparselab <experiment> [--config <path>] [--<key> <value> ...]\n"
    "\n"
    "experiments:\n"
    "  grad-skew    active-entry gradient ratio vs sparsity, with/without batch norm\n"
    "  ham-sim      one/multi neuron student-teacher flows and their invariants\n"
    "  dst-train    sparse training loop with SET/RigL mask updates\n"
    "  ln-check     layer-norm gradient ratio under uniform sparsity\n"
    "  itop-report  paired RigL runs comparing regrowth gradient sources\n"
    "\n"
    "options:\n"
    "  --config <path>   load `key = value` lines first\n"
    "  --<key> <value>   override any config key (see README for the key list)\n";

// Parses argv, resolves the configuration (defaults < config file < flags),
// echoes it, and dispatches. Returns 0 on success, 1 on configuration errors,
// 2 on runtime failures.
inline int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "-h") {
        std::cout << kCliUsage;
        return args.empty() ? 1 : 0;
    }

    ExperimentConfig cfg;
    try {
        cfg.experiment = args[0];

        // First pass: config file, if any.
        for (std::size_t i = 1; i < args.size(); ++i) {
            if (args[i] == "--config") {
                if (i + 1 >= args.size()) throw ConfigError("config: --config needs a path");
                config_load_file(cfg, args[++i]);
            }
        }
        // Second pass: per-key overrides.
        for (std::size_t i = 1; i < args.size(); ++i) {
            std::string arg = args[i];
            if (arg == "--config") {
                ++i;
                continue;
            }
            if (arg.rfind("--", 0) != 0) throw ConfigError("config: unexpected argument '" + arg + "'");
            arg = arg.substr(2);
            std::string value;
            const std::size_t eq = arg.find('=');
            if (eq != std::string::npos) {
                value = arg.substr(eq + 1);
                arg = arg.substr(0, eq);
            } else {
                if (i + 1 >= args.size()) throw ConfigError("config: flag '--" + arg + "' needs a value");
                value = args[++i];
            }
            config_set(cfg, arg, value);
        }
        cfg.experiment = args[0];  // the subcommand wins over any config line
        config_validate(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    std::cout << "# resolved configuration\n" << config_serialize(cfg) << std::flush;

    try {
        if (cfg.experiment == "grad-skew")
            run_grad_skew(cfg);
        else if (cfg.experiment == "ham-sim")
            run_ham_sim(cfg);
        else if (cfg.experiment == "dst-train")
            run_dst_train(cfg, &std::cout);
        else if (cfg.experiment == "ln-check")
            run_ln_check(cfg);
        else if (cfg.experiment == "itop-report")
            run_itop_report(cfg, &std::cout);
        std::cout << "wrote artifacts to " << cfg.out_dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace sparselab
