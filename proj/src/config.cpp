#include "edgereg/config.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "edgereg/errors.hpp"

namespace edgereg {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

KVConfig KVConfig::parse_text(const std::string& text) {
    KVConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw format_error("config: line " + std::to_string(lineno) + " has no '='");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw format_error("config: line " + std::to_string(lineno) + " has empty key");
        cfg.values_[key] = value;
    }
    return cfg;
}

KVConfig KVConfig::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

std::string KVConfig::get_str(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), "config: missing key '" + key + "'");
    return it->second;
}

std::string KVConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long long KVConfig::get_int(const std::string& key) const {
    const std::string s = get_str(key);
    try {
        size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw format_error("config: key '" + key + "' is not an integer: '" + s + "'");
    }
}

long long KVConfig::get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double KVConfig::get_double(const std::string& key) const {
    const std::string s = get_str(key);
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw format_error("config: key '" + key + "' is not a number: '" + s + "'");
    }
}

double KVConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KVConfig::get_bool(const std::string& key) const {
    const std::string s = get_str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw format_error("config: key '" + key + "' is not a boolean: '" + s + "'");
}

bool KVConfig::get_bool(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::string KVConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

std::string KVConfig::hash_hex() const {
    const std::string c = canonical();
    const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(c.data()), uInt(c.size()));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

} // namespace edgereg
