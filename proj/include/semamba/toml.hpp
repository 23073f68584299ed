// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "semamba/tensor.hpp"

namespace semamba {

// Minimal TOML subset: [section] headers (dotted), key = value with strings,
// booleans, integers, floats and single-line homogeneous arrays. Covers the
// config grammar this toolkit emits and consumes.

struct TomlValue {
  enum class Kind { kBool, kInt, kFloat, kString, kArray };
  Kind kind = Kind::kInt;
  bool b = false;
  long long i = 0;
  double f = 0.0;
  std::string s;
  std::vector<TomlValue> arr;

  double number() const {
    if (kind == Kind::kInt) return double(i);
    if (kind == Kind::kFloat) return f;
    throw ConfigError("toml: expected a number");
  }
};

class Toml {
 public:
  static Toml parse(const std::string& text, const std::string& origin = "<string>") {
    Toml t;
    std::istringstream in(text);
    std::string line, prefix;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_comment(line);
      std::string s = trim(line);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(lineno) +
                            ": malformed section header");
        prefix = trim(s.substr(1, s.size() - 2));
        if (prefix.empty())
          throw ConfigError(origin + ":" + std::to_string(lineno) +
                            ": empty section name");
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string val = trim(s.substr(eq + 1));
      if (key.empty() || val.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": empty key or value");
      std::string full = prefix.empty() ? key : prefix + "." + key;
      if (t.entries_.count(full))
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": duplicate key '" + full + "'");
      t.entries_[full] = parse_value(val, origin, lineno);
    }
    return t;
  }

  static Toml parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("toml: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  const TomlValue& at(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
      throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
  }

  bool get_bool(const std::string& key, bool dflt) const {
    if (!has(key)) return dflt;
    const TomlValue& v = at(key);
    if (v.kind != TomlValue::Kind::kBool)
      throw ConfigError("config: '" + key + "' must be a boolean");
    return v.b;
  }

  long get_int(const std::string& key, long dflt) const {
    if (!has(key)) return dflt;
    const TomlValue& v = at(key);
    if (v.kind != TomlValue::Kind::kInt)
      throw ConfigError("config: '" + key + "' must be an integer");
    return long(v.i);
  }

  double get_double(const std::string& key, double dflt) const {
    if (!has(key)) return dflt;
    return at(key).number();
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    if (!has(key)) return dflt;
    const TomlValue& v = at(key);
    if (v.kind != TomlValue::Kind::kString)
      throw ConfigError("config: '" + key + "' must be a string");
    return v.s;
  }

  std::vector<double> get_double_array(const std::string& key) const {
    const TomlValue& v = at(key);
    if (v.kind != TomlValue::Kind::kArray)
      throw ConfigError("config: '" + key + "' must be an array");
    std::vector<double> out;
    for (const auto& e : v.arr) out.push_back(e.number());
    return out;
  }

  std::vector<long> get_int_array(const std::string& key) const {
    const TomlValue& v = at(key);
    if (v.kind != TomlValue::Kind::kArray)
      throw ConfigError("config: '" + key + "' must be an array");
    std::vector<long> out;
    for (const auto& e : v.arr) {
      if (e.kind != TomlValue::Kind::kInt)
        throw ConfigError("config: '" + key + "' must hold integers");
      out.push_back(long(e.i));
    }
    return out;
  }

  std::vector<std::string> get_string_array(const std::string& key) const {
    const TomlValue& v = at(key);
    if (v.kind != TomlValue::Kind::kArray)
      throw ConfigError("config: '" + key + "' must be an array");
    std::vector<std::string> out;
    for (const auto& e : v.arr) {
      if (e.kind != TomlValue::Kind::kString)
        throw ConfigError("config: '" + key + "' must hold strings");
      out.push_back(e.s);
    }
    return out;
  }

  // Keys under "section." — used for strict unknown-key validation. An
  // empty section lists the top-level keys.
  std::vector<std::string> section_keys(const std::string& section) const {
    std::vector<std::string> out;
    std::string p = section.empty() ? "" : section + ".";
    for (const auto& [k, v] : entries_)
      if (k.rfind(p, 0) == 0 && k.find('.', p.size()) == std::string::npos)
        out.push_back(k.substr(p.size()));
    return out;
  }

  const std::map<std::string, TomlValue>& entries() const { return entries_; }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static void strip_comment(std::string& line) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line.erase(i);
        return;
      }
    }
  }

  static TomlValue parse_value(const std::string& raw, const std::string& origin,
                               long lineno) {
    auto fail = [&](const std::string& why) -> ConfigError {
      return ConfigError(origin + ":" + std::to_string(lineno) + ": " + why);
    };
    TomlValue v;
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"') throw fail("unterminated string");
      v.kind = TomlValue::Kind::kString;
      for (size_t i = 1; i + 1 < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\' && i + 2 < raw.size()) {
          char n = raw[++i];
          if (n == 'n') c = '\n';
          else if (n == 't') c = '\t';
          else if (n == '"') c = '"';
          else if (n == '\\') c = '\\';
          else throw fail("unsupported escape");
        }
        v.s.push_back(c);
      }
      return v;
    }
    if (raw == "true" || raw == "false") {
      v.kind = TomlValue::Kind::kBool;
      v.b = raw == "true";
      return v;
    }
    if (raw.front() == '[') {
      if (raw.back() != ']') throw fail("arrays must close on the same line");
      v.kind = TomlValue::Kind::kArray;
      std::string body = raw.substr(1, raw.size() - 2);
      std::string cur;
      bool in_str = false;
      auto flush = [&] {
        std::string e = trim(cur);
        cur.clear();
        if (!e.empty()) v.arr.push_back(parse_value(e, origin, lineno));
      };
      for (char c : body) {
        if (c == '"') in_str = !in_str;
        if (c == ',' && !in_str) {
          flush();
          continue;
        }
        cur.push_back(c);
      }
      flush();
      return v;
    }
    // number
    bool looks_float = raw.find('.') != std::string::npos ||
                       raw.find('e') != std::string::npos ||
                       raw.find('E') != std::string::npos;
    try {
      size_t used = 0;
      if (looks_float) {
        v.kind = TomlValue::Kind::kFloat;
        v.f = std::stod(raw, &used);
      } else {
        v.kind = TomlValue::Kind::kInt;
        v.i = std::stoll(raw, &used, 10);
      }
      if (used != raw.size()) throw fail("trailing characters after number");
    } catch (const std::logic_error&) {
      throw fail("cannot parse value '" + raw + "'");
    }
    return v;
  }

  std::map<std::string, TomlValue> entries_;
};

}  // namespace semamba
