#include "patchwork/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "patchwork/errors.hpp"

namespace fs = std::filesystem;

namespace patchwork {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::declare(const std::string& key, const std::string& default_value) {
  values_[key] = default_value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const size_t eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value, got '" +
                        text + "'");
    }
    set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  it->second = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  return static_cast<int>(get_int64(key));
}

int64_t RunConfig::get_int64(const std::string& key) const {
  const std::string& v = get(key);
  int64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "' needs an integer, got '" + v + "'");
  }
  return out;
}

uint64_t RunConfig::get_uint64(const std::string& key) const {
  const std::string& v = get(key);
  uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "' needs an unsigned integer, got '" + v + "'");
  }
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "' needs a boolean, got '" + v + "'");
}

std::string RunConfig::resolved(const std::vector<std::string>& exclude) const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) {
    if (std::find(exclude.begin(), exclude.end(), key) != exclude.end()) continue;
    os << key << " = " << value << "\n";
  }
  return os.str();
}

void RunConfig::write_resolved(const std::string& dir,
                               const std::vector<std::string>& exclude) const {
  const std::string path = (fs::path(dir) / "config.resolved").string();
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write " + path);
  out << resolved(exclude);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + path);
}

}  // namespace patchwork
