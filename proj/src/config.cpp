#include "rfuq/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace rfuq {

namespace {

std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s)
{
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

bool valid_name(const std::string& s)
{
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

} // namespace

double parse_double(const std::string& s, const std::string& what)
{
    std::string t = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ConfigError(what + ": expected a number, got '" + t + "'");
    return v;
}

Config Config::parse(const std::string& text, const std::string& origin)
{
    Config cfg;
    std::istringstream in(text);
    std::string line, table;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated table header");
            table = trim(line.substr(1, line.size() - 2));
            if (!valid_name(table)) throw ConfigError(where + ": bad table name '" + table + "'");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (!valid_name(key)) throw ConfigError(where + ": bad key '" + key + "'");
        std::string full = table.empty() ? key : table + "." + key;
        if (cfg.values_.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
        cfg.values_[full] = unquote(trim(line.substr(eq + 1)));
    }
    return cfg;
}

Config Config::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

void Config::set(const std::string& assignment)
{
    auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like table.key=value");
    std::string key = trim(assignment.substr(0, eq));
    if (!valid_name(key)) throw ConfigError("bad override key '" + key + "'");
    values_[key] = unquote(trim(assignment.substr(eq + 1)));
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const
{
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const
{
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(it->second, key);
}

long long Config::get_int(const std::string& key, long long fallback) const
{
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& s = it->second;
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(key + ": expected an integer, got '" + s + "'");
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const
{
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + it->second + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const
{
    std::vector<std::string> out;
    auto it = values_.find(key);
    if (it == values_.end()) return out;
    std::string s = it->second;
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = unquote(trim(item));
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const
{
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(parse_double(s, key));
    return out;
}

} // namespace rfuq
