// config.hpp - flat key=value configuration files ('#' comments, blank
// lines ignored). Typed getters fall back to built-in defaults.
#pragma once

#include <map>
#include <string>
#include <vector>

namespace warpchain {

class Config {
public:
    Config() = default;

    static Config load(const std::string& path);
    static Config parse(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const;
    double get(const std::string& key, double fallback) const;
    int get(const std::string& key, int fallback) const;
    bool get(const std::string& key, bool fallback) const;

    // comma-separated list of reals, e.g. classical.sigmas = 6, 3, 1.5
    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& fallback) const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace warpchain
