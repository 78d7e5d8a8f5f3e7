#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace expfuse::evalcli {

// `key = value` lines; `#` starts a comment. Keys that no reader asked for are
// reported by `require_all_used` so typos fail loudly.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "config");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated integers.
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  // Throws ValidationError listing keys never read.
  void require_all_used() const;

 private:
  const std::string* find(const std::string& key) const;

  std::string origin_ = "config";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace expfuse::evalcli
