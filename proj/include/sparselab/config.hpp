#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/csv.hpp"

namespace sparselab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat experiment configuration. Every field maps to one `key = value` line;
// unused keys are harmless for a given experiment but always round-trip.
struct ExperimentConfig {
    std::string experiment = "dst-train";
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    // data
    std::string dataset = "synthetic-classification";  // synthetic-gaussian | synthetic-classification | idx-files
    std::string images_path;
    std::string labels_path;
    std::size_t n_train = 3200;
    std::size_t n_test = 1024;
    std::size_t classes = 8;
    double class_std = 0.3;

    // model
    std::vector<std::size_t> model_dims = {784, 64, 10};
    double sparsity = 0.9;
    std::string sparsity_distribution = "erk";  // erk | uniform
    std::string normalization = "batchnorm";    // batchnorm | layernorm | none
    std::string init_scheme = "dense-kaiming";  // dense-kaiming | sparse-aware
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    // optimizer
    std::string optimizer = "sgd";  // sgd | sparseopt | sgd+ham | sparseopt+ham
    double momentum = 0.9;
    double weight_decay = 0.0;
    double ham_alpha = 4.0;
    bool renormalize_grads = false;

    // schedule
    std::string schedule = "cifar-style";  // imagenet-style | cifar-style
    double eta_base = 0.1;
    double eta_init = 1e-5;
    double eta_end = 1e-6;
    long long warmup_epochs = 5;
    long long batch_scale_ref = 256;

    // training loop
    long long epochs = 10;
    std::size_t batch_size = 64;
    long long eval_every = 1;  // epochs between test evaluations

    // dst
    std::string dst_method = "rigl";  // set | rigl | static
    double drop_fraction = 0.3;
    long long update_every = 100;
    double stop_after = 0.75;
    std::string regrow_source = "original";         // original | corrected
    std::string drop_fraction_decay = "constant";  // constant | cosine

    // grad-skew / ln-check
    std::vector<double> s_values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
    long long n_batches = 100;
    bool include_preconditioned = true;

    // ham-sim / flows
    std::string flow = "both";               // gf | ham | both
    std::string flow_variant = "one-neuron";  // one-neuron | multi-neuron
    double eta = 0.01;
    double alpha = 4.0;
    long long flow_steps = 10000;
    std::string flow_scaling = "both";  // off | on | both
    bool opposite_sign = true;
    double flow_eps = 1e-8;
    std::size_t flow_dim = 10;
    std::size_t flow_samples = 200;
    std::size_t flow_redundant = 8;
    long long record_every = 1;

    bool emit_svg = false;

    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

struct ConfigField {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("config: key '" + key + "' has an empty list element");
        out.push_back(parse(key, item));
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' expects a comma-separated list");
    return out;
}

template <typename T>
std::string join_list(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_same_v<T, double>)
            out += fmt_double(xs[i]);
        else
            out += std::to_string(xs[i]);
    }
    return out;
}

inline const std::vector<ConfigField>& config_fields() {
    auto str_field = [](const char* key, std::string ExperimentConfig::* member) {
        return ConfigField{key, [member](const ExperimentConfig& c) { return c.*member; },
                           [member](ExperimentConfig& c, const std::string& v) { c.*member = v; }};
    };
    auto dbl_field = [](const char* key, double ExperimentConfig::* member) {
        return ConfigField{key, [member](const ExperimentConfig& c) { return fmt_double(c.*member); },
                           [key, member](ExperimentConfig& c, const std::string& v) {
                               c.*member = parse_double(key, v);
                           }};
    };
    auto int_field = [](const char* key, long long ExperimentConfig::* member) {
        return ConfigField{key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
                           [key, member](ExperimentConfig& c, const std::string& v) {
                               c.*member = parse_int(key, v);
                           }};
    };
    auto size_field = [](const char* key, std::size_t ExperimentConfig::* member) {
        return ConfigField{key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
                           [key, member](ExperimentConfig& c, const std::string& v) {
                               c.*member = static_cast<std::size_t>(parse_u64(key, v));
                           }};
    };
    auto bool_field = [](const char* key, bool ExperimentConfig::* member) {
        return ConfigField{key, [member](const ExperimentConfig& c) { return c.*member ? "true" : "false"; },
                           [key, member](ExperimentConfig& c, const std::string& v) {
                               c.*member = parse_bool(key, v);
                           }};
    };

    static const std::vector<ConfigField> fields = {
        str_field("experiment", &ExperimentConfig::experiment),
        ConfigField{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                    [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
        str_field("out", &ExperimentConfig::out_dir),
        str_field("dataset", &ExperimentConfig::dataset),
        str_field("images_path", &ExperimentConfig::images_path),
        str_field("labels_path", &ExperimentConfig::labels_path),
        size_field("n_train", &ExperimentConfig::n_train),
        size_field("n_test", &ExperimentConfig::n_test),
        size_field("classes", &ExperimentConfig::classes),
        dbl_field("class_std", &ExperimentConfig::class_std),
        ConfigField{"model_dims",
                    [](const ExperimentConfig& c) { return join_list(c.model_dims); },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.model_dims = parse_list<std::size_t>("model_dims", v, [](const std::string& k,
                                                                                   const std::string& s) {
                            return static_cast<std::size_t>(parse_u64(k, s));
                        });
                    }},
        dbl_field("sparsity", &ExperimentConfig::sparsity),
        str_field("sparsity_distribution", &ExperimentConfig::sparsity_distribution),
        str_field("normalization", &ExperimentConfig::normalization),
        str_field("init_scheme", &ExperimentConfig::init_scheme),
        dbl_field("bn_eps", &ExperimentConfig::bn_eps),
        dbl_field("bn_momentum", &ExperimentConfig::bn_momentum),
        str_field("optimizer", &ExperimentConfig::optimizer),
        dbl_field("momentum", &ExperimentConfig::momentum),
        dbl_field("weight_decay", &ExperimentConfig::weight_decay),
        dbl_field("ham_alpha", &ExperimentConfig::ham_alpha),
        bool_field("renormalize_grads", &ExperimentConfig::renormalize_grads),
        str_field("schedule", &ExperimentConfig::schedule),
        dbl_field("eta_base", &ExperimentConfig::eta_base),
        dbl_field("eta_init", &ExperimentConfig::eta_init),
        dbl_field("eta_end", &ExperimentConfig::eta_end),
        int_field("warmup_epochs", &ExperimentConfig::warmup_epochs),
        int_field("batch_scale_ref", &ExperimentConfig::batch_scale_ref),
        int_field("epochs", &ExperimentConfig::epochs),
        size_field("batch_size", &ExperimentConfig::batch_size),
        int_field("eval_every", &ExperimentConfig::eval_every),
        str_field("dst_method", &ExperimentConfig::dst_method),
        dbl_field("drop_fraction", &ExperimentConfig::drop_fraction),
        int_field("update_every", &ExperimentConfig::update_every),
        dbl_field("stop_after", &ExperimentConfig::stop_after),
        str_field("regrow_source", &ExperimentConfig::regrow_source),
        str_field("drop_fraction_decay", &ExperimentConfig::drop_fraction_decay),
        ConfigField{"s_values",
                    [](const ExperimentConfig& c) { return join_list(c.s_values); },
                    [](ExperimentConfig& c, const std::string& v) {
                        c.s_values = parse_list<double>("s_values", v, parse_double);
                    }},
        int_field("n_batches", &ExperimentConfig::n_batches),
        bool_field("include_preconditioned", &ExperimentConfig::include_preconditioned),
        str_field("flow", &ExperimentConfig::flow),
        str_field("flow_variant", &ExperimentConfig::flow_variant),
        dbl_field("eta", &ExperimentConfig::eta),
        dbl_field("alpha", &ExperimentConfig::alpha),
        int_field("flow_steps", &ExperimentConfig::flow_steps),
        str_field("flow_scaling", &ExperimentConfig::flow_scaling),
        bool_field("opposite_sign", &ExperimentConfig::opposite_sign),
        dbl_field("flow_eps", &ExperimentConfig::flow_eps),
        size_field("flow_dim", &ExperimentConfig::flow_dim),
        size_field("flow_samples", &ExperimentConfig::flow_samples),
        size_field("flow_redundant", &ExperimentConfig::flow_redundant),
        int_field("record_every", &ExperimentConfig::record_every),
        bool_field("emit_svg", &ExperimentConfig::emit_svg),
    };
    return fields;
}

}  // namespace detail

inline void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : detail::config_fields()) {
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

// `key = value` lines, '#' comments.
inline void config_apply_text(ExperimentConfig& cfg, std::istream& in, const std::string& origin) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        config_set(cfg, key, value);
    }
}

inline void config_load_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open config file '" + path + "'");
    config_apply_text(cfg, in, path);
}

// Fully-resolved `key = value` dump; parsing it back yields an equal config.
inline std::string config_serialize(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

inline ExperimentConfig config_parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    config_apply_text(cfg, in, "<string>");
    return cfg;
}

inline void config_validate(const ExperimentConfig& cfg) {
    auto one_of = [](const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
        for (const char* a : allowed)
            if (v == a) return;
        std::string msg = "config: key '" + key + "' has invalid value '" + v + "' (allowed:";
        for (const char* a : allowed) msg += std::string(" ") + a;
        throw ConfigError(msg + ")");
    };
    one_of("experiment", cfg.experiment, {"grad-skew", "ham-sim", "dst-train", "ln-check", "itop-report"});
    one_of("dataset", cfg.dataset, {"synthetic-gaussian", "synthetic-classification", "idx-files"});
    one_of("sparsity_distribution", cfg.sparsity_distribution, {"erk", "uniform"});
    one_of("normalization", cfg.normalization, {"batchnorm", "layernorm", "none"});
    one_of("init_scheme", cfg.init_scheme, {"dense-kaiming", "sparse-aware"});
    one_of("optimizer", cfg.optimizer, {"sgd", "sparseopt", "sgd+ham", "sparseopt+ham"});
    one_of("schedule", cfg.schedule, {"imagenet-style", "cifar-style"});
    one_of("dst_method", cfg.dst_method, {"set", "rigl", "static"});
    one_of("regrow_source", cfg.regrow_source, {"original", "corrected"});
    one_of("drop_fraction_decay", cfg.drop_fraction_decay, {"constant", "cosine"});
    one_of("flow", cfg.flow, {"gf", "ham", "both"});
    one_of("flow_variant", cfg.flow_variant, {"one-neuron", "multi-neuron"});
    one_of("flow_scaling", cfg.flow_scaling, {"off", "on", "both"});
    if (cfg.sparsity < 0.0 || cfg.sparsity >= 1.0)
        throw ConfigError("config: sparsity must be in [0,1)");
    if (cfg.model_dims.size() < 2) throw ConfigError("config: model_dims needs at least input,output");
    if (cfg.batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
    if (cfg.epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (cfg.dst_method != "static" && (cfg.drop_fraction <= 0.0 || cfg.drop_fraction >= 1.0))
        throw ConfigError("config: drop_fraction must be in (0,1)");
    if (cfg.update_every < 1) throw ConfigError("config: update_every must be >= 1");
    // grad-skew falls back to synthetic data when the files are missing, so
    // only the other experiments reject absent paths up front.
    if (cfg.dataset == "idx-files" && cfg.experiment != "grad-skew") {
        for (const std::string* p : {&cfg.images_path, &cfg.labels_path}) {
            if (p->empty()) throw ConfigError("config: idx-files dataset needs images_path and labels_path");
            std::ifstream probe(*p);
            if (!probe) throw ConfigError("config: referenced file does not exist: '" + *p + "'");
        }
    }
    for (double s : cfg.s_values)
        if (s < 0.0 || s >= 1.0) throw ConfigError("config: s_values entries must be in [0,1)");
}

}  // namespace sparselab
