#include "mdma/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mdma {

namespace {

std::string trim(const std::string& s) {
    const std::size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const std::size_t end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
    KeyValueConfig config;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        const std::string trimmed = trim(line);
        if (trimmed.empty()) {
            continue;
        }
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected 'key = value'");
        }
        const std::string key = trim(trimmed.substr(0, eq));
        const std::string value = trim(trimmed.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
        }
        config.values_[key] = value;
    }
    return config;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file: " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_string(text.str());
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KeyValueConfig::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw std::runtime_error("missing config key: '" + key + "'");
    }
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key) const {
    const std::string value = get_string(key);
    try {
        return std::stoi(value);
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': '" + value + "' is not an integer");
    }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
    const std::string value = get_string(key);
    try {
        return std::stod(value);
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': '" + value + "' is not a number");
    }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) {
        return fallback;
    }
    const std::string value = get_string(key);
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw std::runtime_error("config key '" + key + "': '" + value + "' is not a boolean");
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) {
        return fallback;
    }
    const std::string value = get_string(key);
    try {
        return std::stoull(value);
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': '" + value +
                                 "' is not an unsigned integer");
    }
}

}  // namespace mdma
