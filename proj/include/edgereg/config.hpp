#pragma once

#include <map>
#include <string>

namespace edgereg {

// Flat `key = value` configuration text: UTF-8, one pair per line, `#` starts a
// comment, blank lines ignored. Later assignments override earlier ones.
class KVConfig {
  public:
    KVConfig() = default;

    static KVConfig parse_text(const std::string& text);
    static KVConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Canonical serialization (keys sorted, `key = value` lines) and a stable
    // CRC32 hash of it, used to stamp checkpoints with their training config.
    std::string canonical() const;
    std::string hash_hex() const;

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

} // namespace edgereg
