#pragma once

#include "lcbs/core.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace lcbs {

class ConfigError : public UsageError {
public:
  using UsageError::UsageError;
};

enum class ValueType { Real, Integer, Bool, String, RealList, IntegerList, StringList };

struct ConfigKey {
  std::string name;
  ValueType type;
  std::string default_value;
  std::string doc;
};

using ConfigSchema = std::vector<ConfigKey>;
using RawConfig = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

inline bool parse_real(const std::string &s, double &out) {
  const std::string t = trim(s);
  if (t == "inf" || t == "+inf") {
    out = kInf;
    return true;
  }
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size() && !std::isnan(out);
}

inline bool parse_integer(const std::string &s, long long &out) {
  const std::string t = trim(s);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

inline bool parse_bool(const std::string &s, bool &out) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") {
    out = true;
    return true;
  }
  if (t == "false" || t == "0" || t == "no" || t == "off") {
    out = false;
    return true;
  }
  return false;
}

inline bool valid_value(ValueType type, const std::string &v) {
  double r;
  long long i;
  bool b;
  switch (type) {
  case ValueType::Real:
    return parse_real(v, r);
  case ValueType::Integer:
    return parse_integer(v, i);
  case ValueType::Bool:
    return parse_bool(v, b);
  case ValueType::String:
    return true;
  case ValueType::RealList: {
    const auto items = split_list(v);
    return std::all_of(items.begin(), items.end(),
                       [&](const std::string &x) { return parse_real(x, r); });
  }
  case ValueType::IntegerList: {
    const auto items = split_list(v);
    return std::all_of(items.begin(), items.end(),
                       [&](const std::string &x) { return parse_integer(x, i); });
  }
  case ValueType::StringList:
    return true;
  }
  return false;
}

inline const char *type_name(ValueType type) {
  switch (type) {
  case ValueType::Real:
    return "real";
  case ValueType::Integer:
    return "integer";
  case ValueType::Bool:
    return "bool";
  case ValueType::String:
    return "string";
  case ValueType::RealList:
    return "list of reals";
  case ValueType::IntegerList:
    return "list of integers";
  case ValueType::StringList:
    return "list of strings";
  }
  return "?";
}

inline void flatten(const boost::property_tree::ptree &tree, const std::string &prefix,
                    RawConfig &out) {
  for (const auto &[key, child] : tree) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (child.empty()) {
      if (out.count(name)) {
        throw ConfigError("duplicate config key '" + name + "'");
      }
      out[name] = trim(child.data());
    } else {
      flatten(child, name, out);
    }
  }
}

} // namespace detail

/// Reads a flat `key = value` file. '#' and ';' start comment lines;
/// `[section]` headers prefix the keys that follow with "section.".
inline RawConfig parse_config(std::istream &in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error &e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  RawConfig out;
  detail::flatten(tree, "", out);
  return out;
}

inline RawConfig parse_config_text(const std::string &text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline RawConfig read_config_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  return parse_config(in);
}

/// A config with every schema key present and type-checked.
class Config {
public:
  Config() = default;

  static Config resolve(const ConfigSchema &schema, const RawConfig &raw) {
    Config c;
    for (const auto &k : schema) {
      c.types_[k.name] = k.type;
      c.values_[k.name] = k.default_value;
    }
    for (const auto &[key, value] : raw) {
      const auto it = c.types_.find(key);
      if (it == c.types_.end()) {
        throw ConfigError("unknown config key '" + key + "'");
      }
      if (!detail::valid_value(it->second, value)) {
        throw ConfigError("config key '" + key + "' expects a " +
                          detail::type_name(it->second) + ", got '" + value + "'");
      }
      c.values_[key] = value;
    }
    return c;
  }

  bool has(const std::string &key) const { return values_.count(key) > 0; }

  double real(const std::string &key) const {
    double v = 0.0;
    detail::parse_real(raw(key), v);
    return v;
  }

  long long integer(const std::string &key) const {
    long long v = 0;
    detail::parse_integer(raw(key), v);
    return v;
  }

  std::size_t count(const std::string &key) const {
    const long long v = integer(key);
    if (v < 0) {
      throw ConfigError("config key '" + key + "' must be nonnegative");
    }
    return static_cast<std::size_t>(v);
  }

  bool boolean(const std::string &key) const {
    bool v = false;
    detail::parse_bool(raw(key), v);
    return v;
  }

  std::string string(const std::string &key) const { return raw(key); }

  std::vector<double> reals(const std::string &key) const {
    std::vector<double> out;
    for (const auto &item : detail::split_list(raw(key))) {
      double v = 0.0;
      detail::parse_real(item, v);
      out.push_back(v);
    }
    return out;
  }

  std::vector<long long> integers(const std::string &key) const {
    std::vector<long long> out;
    for (const auto &item : detail::split_list(raw(key))) {
      long long v = 0;
      detail::parse_integer(item, v);
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> strings(const std::string &key) const {
    return detail::split_list(raw(key));
  }

  void set(const std::string &key, const std::string &value) {
    const auto it = types_.find(key);
    if (it == types_.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    if (!detail::valid_value(it->second, value)) {
      throw ConfigError("config key '" + key + "' expects a " +
                        detail::type_name(it->second));
    }
    values_[key] = value;
  }

  /// Resolved `key = value` lines in sorted key order.
  std::string echo() const {
    std::ostringstream out;
    for (const auto &[key, value] : values_) {
      out << key << " = " << value << '\n';
    }
    return out.str();
  }

private:
  const std::string &raw(const std::string &key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
      throw ConfigError("config key '" + key + "' is not defined");
    }
    return it->second;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, ValueType> types_;
};

} // namespace lcbs
