#include "packetclip/kvconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "packetclip/error.hpp"

namespace packetclip {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

KvConfig KvConfig::parse_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(Err::config, "config line " + std::to_string(lineno) + " is not 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) fail(Err::config, "empty key at config line " + std::to_string(lineno));
    cfg.kv_[key] = val;
  }
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::io, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  char* end = nullptr;
  long long v = std::strtoll(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    fail(Err::config, "config key '" + key + "' is not an integer: " + it->second);
  return v;
}

double KvConfig::get_real(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  char* end = nullptr;
  double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    fail(Err::config, "config key '" + key + "' is not a number: " + it->second);
  return v;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(Err::config, "config key '" + key + "' is not a boolean: " + v);
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return {};
  std::vector<std::string> out;
  for (auto& part : split(it->second, ',')) {
    std::string t = trim(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::map<std::string, std::string> KvConfig::section(const std::string& prefix) const {
  std::map<std::string, std::string> out;
  std::string p = prefix + ".";
  for (auto& [k, v] : kv_) {
    if (k.rfind(p, 0) == 0) out[k.substr(p.size())] = v;
  }
  return out;
}

std::string KvConfig::canonical_text() const {
  std::ostringstream ss;
  for (auto& [k, v] : kv_) ss << k << " = " << v << "\n";
  return ss.str();
}

}  // namespace packetclip
