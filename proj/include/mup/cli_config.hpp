#pragma once
// Flag container for the command-line tool plus the JSON config-file merge.
// Config keys are the bare flag names; command-line flags win over the file,
// and any key the subcommand does not accept is an error.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mup/network.hpp"

namespace mup {

struct CliConfig {
    int width = 0;           // 0: subcommand default
    std::vector<int> widths;  // full profile incl. n_0 and n_out; overrides width
    int depth = 0;
    double eta = -1.0;  // < 0: subcommand default (explicit non-positive rates are rejected)
    long long replicates = 0;
    std::uint64_t seed = 1;
    int workers = 1;
    std::string format = "csv";
    std::string init = "mean-field-exact-he";
    std::vector<int> layers;
    std::string output;

    std::vector<int> depths;  // solve-lr sweep values
    int nets = 0;             // check-gradients
    bool refine = false;      // solve-lr
    std::string corrupt = "none";
    std::string x_file;  // verify-init fixed input
    bool stub_cubic = false;
    bool stub_unit_mean = false;
};

inline InitVariant parse_init_variant(const std::string& s) {
    if (s == "mean-field-exact-he") return InitVariant::MeanFieldExactHe;
    if (s == "mean-field-paper") return InitVariant::MeanFieldPaper;
    throw std::invalid_argument("unknown init variant: " + s);
}

namespace detail {

inline std::vector<int> json_int_list(const nlohmann::json& v, const std::string& key) {
    if (!v.is_array()) throw std::invalid_argument("config key '" + key + "' must be an array");
    std::vector<int> out;
    for (const auto& e : v) {
        if (!e.is_number_integer())
            throw std::invalid_argument("config key '" + key + "' must hold integers");
        out.push_back(e.get<int>());
    }
    return out;
}

template <typename T>
T json_number(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw std::invalid_argument("config key '" + key + "' must be a number");
    return v.get<T>();
}

inline std::string json_string(const nlohmann::json& v, const std::string& key) {
    if (!v.is_string()) throw std::invalid_argument("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

inline bool json_bool(const nlohmann::json& v, const std::string& key) {
    if (!v.is_boolean()) throw std::invalid_argument("config key '" + key + "' must be a bool");
    return v.get<bool>();
}

}  // namespace detail

// Applies a parsed config file onto cfg. `allowed` is the key set the active
// subcommand accepts; `pinned` holds keys already fixed on the command line,
// which the file must not override.
inline void apply_config_json(CliConfig& cfg, const nlohmann::json& j,
                              const std::set<std::string>& allowed,
                              const std::set<std::string>& pinned) {
    if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw std::invalid_argument("unknown config key: " + key);
        if (pinned.count(key)) continue;
        if (key == "width")
            cfg.width = detail::json_number<int>(value, key);
        else if (key == "widths")
            cfg.widths = detail::json_int_list(value, key);
        else if (key == "depth")
            cfg.depth = detail::json_number<int>(value, key);
        else if (key == "eta")
            cfg.eta = detail::json_number<double>(value, key);
        else if (key == "replicates")
            cfg.replicates = detail::json_number<long long>(value, key);
        else if (key == "seed")
            cfg.seed = value.is_string() ? std::stoull(value.get<std::string>())
                                         : detail::json_number<std::uint64_t>(value, key);
        else if (key == "workers")
            cfg.workers = detail::json_number<int>(value, key);
        else if (key == "format")
            cfg.format = detail::json_string(value, key);
        else if (key == "init")
            cfg.init = detail::json_string(value, key);
        else if (key == "layers")
            cfg.layers = detail::json_int_list(value, key);
        else if (key == "output")
            cfg.output = detail::json_string(value, key);
        else if (key == "depths")
            cfg.depths = detail::json_int_list(value, key);
        else if (key == "nets")
            cfg.nets = detail::json_number<int>(value, key);
        else if (key == "refine")
            cfg.refine = detail::json_bool(value, key);
        else if (key == "corrupt")
            cfg.corrupt = detail::json_string(value, key);
        else if (key == "x-file")
            cfg.x_file = detail::json_string(value, key);
        else if (key == "stub-cubic")
            cfg.stub_cubic = detail::json_bool(value, key);
        else if (key == "stub-unit-mean")
            cfg.stub_unit_mean = detail::json_bool(value, key);
        else
            throw std::logic_error("key allowed but not handled: " + key);
    }
}

inline const std::set<std::string>& common_config_keys() {
    static const std::set<std::string> keys{"width",      "widths", "depth",  "eta",
                                            "replicates", "seed",   "workers", "format",
                                            "init",       "layers", "output"};
    return keys;
}

inline std::set<std::string> config_keys_for(const std::string& subcommand) {
    std::set<std::string> keys = common_config_keys();
    if (subcommand == "check-gradients") {
        keys.insert("nets");
        keys.insert("corrupt");
    } else if (subcommand == "verify-init") {
        keys.insert("x-file");
    } else if (subcommand == "sweep-depth") {
        keys.insert("stub-cubic");
    } else if (subcommand == "solve-lr") {
        keys.insert("depths");
        keys.insert("refine");
        keys.insert("stub-unit-mean");
    } else if (subcommand == "verify-lemmas") {
        keys.insert("corrupt");
    } else {
        throw std::invalid_argument("unknown subcommand: " + subcommand);
    }
    return keys;
}

// Validation shared by every subcommand; throws invalid_argument (exit 2).
inline void validate_common(const CliConfig& cfg) {
    if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (cfg.replicates < 0) throw std::invalid_argument("replicates must be positive");
    if (cfg.width < 0) throw std::invalid_argument("width must be positive");
    if (cfg.depth < 0) throw std::invalid_argument("depth must be positive");
    if (cfg.format != "csv" && cfg.format != "json")
        throw std::invalid_argument("format must be csv or json");
    parse_init_variant(cfg.init);
    for (int w : cfg.widths)
        if (w < 1) throw std::invalid_argument("widths entries must be positive");
    for (int l : cfg.layers)
        if (l < 1) throw std::invalid_argument("layers entries must be positive");
    for (int d : cfg.depths)
        if (d < 1) throw std::invalid_argument("depths entries must be positive");
}

// The width profile a subcommand should run: explicit --widths wins, else a
// uniform profile of the given width and depth with scalar output.
inline std::vector<int> resolve_widths(const CliConfig& cfg, int default_width,
                                       int default_depth) {
    if (!cfg.widths.empty()) {
        if (cfg.widths.size() < 3)
            throw std::invalid_argument("widths must list n_0, hidden layers, and n_out");
        return cfg.widths;
    }
    const int n = cfg.width > 0 ? cfg.width : default_width;
    const int L = cfg.depth > 0 ? cfg.depth : default_depth;
    std::vector<int> w(static_cast<size_t>(L) + 1, n);
    w.push_back(1);
    return w;
}

}  // namespace mup
