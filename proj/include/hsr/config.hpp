#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hsr {

/// Sectioned key=value settings. Lines starting with '#' or ';' are comments.
/// Keys outside any section live in section "".
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& path);

    /// Later lookups of [section] key prefer the variable SECTION_KEY (upper case, '-' and '.' mapped to '_').
    void apply_environment(char** envp);
    void set(const std::string& section, const std::string& key, const std::string& value);

    bool has(const std::string& section, const std::string& key) const;
    std::optional<std::string> raw(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
    std::size_t get_size(const std::string& section, const std::string& key, std::size_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    const std::vector<double>& fallback) const;

    static std::string env_name(const std::string& section, const std::string& key);

private:
    std::map<std::string, std::map<std::string, std::string>> values_;
    std::map<std::string, std::string> env_;
};

}  // namespace hsr
