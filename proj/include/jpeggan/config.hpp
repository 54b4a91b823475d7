#pragma once

// Flat key-value configuration with [sections]. Keys are addressed as
// "section.key". Later sources override earlier ones: file, environment
// (JPEGGAN_SECTION_KEY), then explicit settings such as command-line flags.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace jpeggan {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  static constexpr const char* kEnvPrefix = "JPEGGAN_";

  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    std::vector<std::string> errors;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          errors.push_back(origin + ":" + std::to_string(lineno) + ": unterminated section header");
          continue;
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        errors.push_back(origin + ":" + std::to_string(lineno) + ": expected key = value");
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) {
        errors.push_back(origin + ":" + std::to_string(lineno) + ": empty key");
        continue;
      }
      c.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
    }
    if (!errors.empty()) throw ConfigError(join(errors));
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  // Applies JPEGGAN_<SECTION>_<KEY> for every key in `known` that is set.
  void apply_environment(const std::vector<std::string>& known) {
    for (const auto& key : known) {
      if (const char* v = std::getenv(env_name(key).c_str())) values_[key] = v;
    }
  }

  static std::string env_name(const std::string& key) {
    std::string s = kEnvPrefix;
    for (char ch : key) s += (ch == '.' || ch == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  // Typed reads record failures instead of throwing so that every problem
  // can be reported at once through check().
  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      errors_.push_back(key + ": '" + s + "' is not an integer");
      return fallback;
    }
    return v;
  }

  double get_real(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    errors_.push_back(key + ": '" + it->second + "' is not a number");
    return fallback;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string s = it->second;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    errors_.push_back(key + ": '" + it->second + "' is not a boolean");
    return fallback;
  }

  // Comma-separated list.
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  void add_error(const std::string& e) const { errors_.push_back(e); }

  void check() const {
    if (!errors_.empty()) {
      const std::string msg = join(errors_);
      errors_.clear();
      throw ConfigError(msg);
    }
  }

  // Sectioned text that parse() reads back to the same values.
  std::string dump() const {
    std::map<std::string, std::map<std::string, std::string>> by_section;
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      if (dot == std::string::npos) by_section[""][k] = v;
      else by_section[k.substr(0, dot)][k.substr(dot + 1)] = v;
    }
    std::ostringstream os;
    for (const auto& [sec, kv] : by_section) {
      if (!sec.empty()) os << '[' << sec << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
      os << '\n';
    }
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : "; ") + s;
    return out;
  }

  std::map<std::string, std::string> values_;
  mutable std::vector<std::string> errors_;
};

}  // namespace jpeggan
