#pragma once

#include <map>
#include <string>
#include <vector>

namespace patchwork {

// Flat key = value run configuration. Every key must be declared up front;
// unknown keys in files or overrides are hard errors. Precedence: declared
// default < config file < explicit override.
class RunConfig {
 public:
  void declare(const std::string& key, const std::string& default_value);

  // '#' starts a comment; blank lines are skipped.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  int64_t get_int64(const std::string& key) const;
  uint64_t get_uint64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Sorted key = value lines; keys listed in exclude are omitted (the output
  // directory stays out so runs into different directories compare equal).
  std::string resolved(const std::vector<std::string>& exclude = {}) const;
  void write_resolved(const std::string& dir, const std::vector<std::string>& exclude = {}) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace patchwork
