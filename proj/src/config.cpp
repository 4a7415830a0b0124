#include "hsr/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "hsr/common.hpp"
#include "hsr/csv.hpp"

namespace hsr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw Error(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = lower(trim(t.substr(1, t.size() - 2)));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = lower(trim(t.substr(0, eq)));
        if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.values_[section][key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::string Config::env_name(const std::string& section, const std::string& key) {
    std::string name = section.empty() ? key : section + "_" + key;
    for (char& c : name) {
        c = (c == '-' || c == '.') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return name;
}

void Config::apply_environment(char** envp) {
    if (!envp) return;
    for (char** e = envp; *e; ++e) {
        const std::string kv(*e);
        const auto eq = kv.find('=');
        if (eq != std::string::npos) env_[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    values_[lower(section)][lower(key)] = value;
}

bool Config::has(const std::string& section, const std::string& key) const { return raw(section, key).has_value(); }

std::optional<std::string> Config::raw(const std::string& section, const std::string& key) const {
    if (const auto e = env_.find(env_name(section, key)); e != env_.end()) return e->second;
    const auto s = values_.find(section);
    if (s == values_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
}

std::string Config::get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
    return raw(section, key).value_or(fallback);
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
    const auto v = raw(section, key);
    if (!v) return fallback;
    try {
        return parse_number(*v);
    } catch (const Error&) {
        throw Error("config [" + section + "] " + key + ": '" + *v + "' is not a number");
    }
}

std::int64_t Config::get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
    const auto v = raw(section, key);
    if (!v) return fallback;
    std::int64_t out = 0;
    const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
        throw Error("config [" + section + "] " + key + ": '" + *v + "' is not an integer");
    }
    return out;
}

std::size_t Config::get_size(const std::string& section, const std::string& key, std::size_t fallback) const {
    const auto v = get_int(section, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw Error("config [" + section + "] " + key + ": must be >= 0");
    return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const auto v = raw(section, key);
    if (!v) return fallback;
    const std::string s = lower(*v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error("config [" + section + "] " + key + ": '" + *v + "' is not a boolean");
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key,
                                        const std::vector<double>& fallback) const {
    const auto v = raw(section, key);
    if (!v) return fallback;
    std::vector<double> out;
    std::string item;
    std::istringstream ss(*v);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(parse_number(item));
        } catch (const Error&) {
            throw Error("config [" + section + "] " + key + ": '" + item + "' is not a number");
        }
    }
    return out;
}

}  // namespace hsr
