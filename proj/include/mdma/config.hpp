#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace mdma {

/// Flat "key = value" experiment configuration. '#' starts a comment; blank
/// lines are ignored. Keys are dotted lower-case names.
class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(const std::string& text);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;  // throws when missing
    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace mdma
