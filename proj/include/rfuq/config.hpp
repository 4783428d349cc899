#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfuq {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` file with `[table]` headers and `#` comments. Keys are
/// addressed as "table.key"; keys before the first header live in table "".
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<config>");
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    /// Applies an override of the form "table.key=value".
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated list; empty value gives an empty list.
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

/// Parses a full real number; throws ConfigError naming `what` otherwise.
double parse_double(const std::string& s, const std::string& what);

} // namespace rfuq
