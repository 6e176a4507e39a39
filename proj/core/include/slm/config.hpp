#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace slm {

// Flat `key = value` configuration text. Lines starting with '#' and blank
// lines are ignored. Values are untyped strings until accessed; lists are
// comma-separated. Command-line overrides land via set().
class Config {
public:
    Config() = default;

    static Config parse_file(const std::filesystem::path& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");

    void set(const std::string& key, const std::string& value);
    // Applies a "key=value" override as passed to --set.
    void set_from_override(const std::string& assignment);

    bool has(const std::string& key) const;

    // Accessors throw ConfigError when the key is missing (no-default forms)
    // or the value does not parse as the requested type.
    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& key) const;
    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           const std::vector<std::int64_t>& fallback) const;

    // Keys in sorted order, for deterministic config echoes in reports.
    std::vector<std::pair<std::string, std::string>> entries() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace slm
