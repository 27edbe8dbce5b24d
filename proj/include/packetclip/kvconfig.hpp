#pragma once

#include <map>
#include <string>
#include <vector>

namespace packetclip {

// Flat "key = value" config file. '#' starts a comment, keys use dotted
// sections (train.steps, grouping.syn_flood), values are strings until typed
// access. The same format backs the pipeline config and CSV schema maps.
class KvConfig {
public:
  KvConfig() = default;

  static KvConfig parse_text(const std::string& text);
  static KvConfig parse_file(const std::string& path);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback = "") const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_real(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma separated

  // keys under "prefix." with the prefix stripped
  std::map<std::string, std::string> section(const std::string& prefix) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

  // sorted "key = value" lines; basis for the config hash
  std::string canonical_text() const;

private:
  std::map<std::string, std::string> kv_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char delim);

}  // namespace packetclip
