#include "covreg/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "covreg/errors.hpp"

namespace covreg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  return true;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(d)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long u = 0;
  try {
    if (!v.empty() && v[0] != '-') u = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return u;
}

}  // namespace

ConfigTree ConfigTree::parse(const std::string& text, const std::string& origin) {
  ConfigTree t;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_name(section)) throw ConfigError(where + "bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_name(key)) throw ConfigError(where + "bad key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (t.values_.count(full)) throw ConfigError(where + "duplicate key '" + full + "'");
    t.values_[full] = trim(line.substr(eq + 1));
  }
  if (t.has("version")) {
    const auto v = t.get_uint("version", 1);
    if (v != 1) throw ConfigError(origin + ": unsupported config version " + std::to_string(v));
  }
  return t;
}

ConfigTree ConfigTree::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ConfigTree t = parse(ss.str(), path.string());
  if (!t.has("version")) throw ConfigError(path.string() + ": missing 'version' key");
  return t;
}

void ConfigTree::set(const std::string& key, const std::string& value) {
  if (!valid_name(key)) throw ConfigError("bad key '" + key + "'");
  values_[key] = trim(value);
  used_.erase(key);
}

void ConfigTree::apply_override(const std::string& assignment) {
  std::string a = assignment;
  while (!a.empty() && a.front() == '-') a.erase(0, 1);
  const auto eq = a.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form --section.key=value");
  set(a.substr(0, eq), a.substr(eq + 1));
}

std::optional<std::string> ConfigTree::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string ConfigTree::get_string(const std::string& key, const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

double ConfigTree::get_double(const std::string& key, double fallback) const {
  const auto v = raw(key);
  return v ? to_double(key, *v) : fallback;
}

std::uint64_t ConfigTree::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto v = raw(key);
  return v ? to_uint(key, *v) : fallback;
}

bool ConfigTree::get_bool(const std::string& key, bool fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + *v + "'");
}

std::vector<double> ConfigTree::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*v)) out.push_back(to_double(key, item));
  return out;
}

std::vector<std::uint64_t> ConfigTree::get_uints(const std::string& key,
                                                 const std::vector<std::uint64_t>& fallback) const {
  const auto v = raw(key);
  if (!v) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(*v)) out.push_back(to_uint(key, item));
  return out;
}

std::optional<double> ConfigTree::get_optional_double(const std::string& key) const {
  const auto v = raw(key);
  if (!v || *v == "auto" || v->empty()) return std::nullopt;
  return to_double(key, *v);
}

std::vector<std::string> ConfigTree::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) out.push_back(k);
  return out;
}

std::string ConfigTree::to_text() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_)
    if (k.find('.') == std::string::npos) out << k << " = " << v << "\n";
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string s = k.substr(0, dot);
    if (s != section) {
      out << "\n[" << s << "]\n";
      section = s;
    }
    out << k.substr(dot + 1) << " = " << v << "\n";
  }
  return out.str();
}

}  // namespace covreg
