#pragma once

// Flat key=value configuration with one section per experiment.
//
//   # comment
//   seed=12345            keys before any section apply to every experiment
//   [weak-error]
//   h=1e-3,1e-2           comma-separated lists where a list is expected
//
// Values from the section for the requested experiment override global keys;
// command-line overrides (--set key=value and dedicated flags) override both.
// Unknown keys for an experiment are rejected so typos fail loudly.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdeassim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

class ExperimentConfig {
public:
    ExperimentConfig() = default;

    static ExperimentConfig from_file(const std::string& path, const std::string& section) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        ExperimentConfig cfg;
        std::string line, current;
        int lineno = 0;
        std::map<std::string, std::string> globals, sect;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (t.front() == '[' && t.back() == ']') {
                current = detail::trim(t.substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            const std::string key = detail::trim(t.substr(0, eq));
            const std::string val = detail::trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
            if (current.empty()) {
                globals[key] = val;
            } else if (current == section) {
                sect[key] = val;
            }
        }
        cfg.values_ = std::move(globals);
        for (auto& [k, v] : sect) cfg.values_[k] = v;
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // accepts "key=value"
    void apply_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("override must look like key=value: " + assignment);
        set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
    }

    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) > 0; }

    [[nodiscard]] std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    [[nodiscard]] double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : parse_double(key, it->second);
    }

    [[nodiscard]] std::int64_t get_int(const std::string& key, std::int64_t def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : parse_int(key, it->second);
    }

    [[nodiscard]] bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        const std::string& v = it->second;
        if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
        if (v == "off" || v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("key '" + key + "': expected on/off, got '" + v + "'");
    }

    [[nodiscard]] std::vector<double> get_double_list(const std::string& key,
                                                      const std::vector<double>& def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::vector<double> out;
        for (const auto& tok : split(it->second)) out.push_back(parse_double(key, tok));
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    [[nodiscard]] std::vector<std::int64_t> get_int_list(
        const std::string& key, const std::vector<std::int64_t>& def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::vector<std::int64_t> out;
        for (const auto& tok : split(it->second)) out.push_back(parse_int(key, tok));
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    [[nodiscard]] std::vector<std::string> get_string_list(
        const std::string& key, const std::vector<std::string>& def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        auto out = split(it->second);
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    // reject keys that no experiment understands so typos do not pass silently
    void ensure_known(const std::set<std::string>& allowed) const {
        for (const auto& [k, _] : values_) {
            if (!allowed.count(k)) throw ConfigError("unknown config key: " + k);
        }
    }

    [[nodiscard]] const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = detail::trim(tok);
            if (!tok.empty()) out.push_back(tok);
        }
        return out;
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': cannot parse number '" + v + "'");
        }
    }

    static std::int64_t parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const std::int64_t x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': cannot parse integer '" + v + "'");
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace sdeassim
