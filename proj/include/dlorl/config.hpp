#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dlorl {

// Flat key=value configuration ('#' starts a comment). Dotted keys group
// parameters by module, e.g. material.young_modulus=2.5e6.
class Config {
 public:
  Config() = default;
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  // FNV-1a over the sorted canonical key=value lines
  std::uint64_t hash() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Every CLI run records how it was produced: config hash, seed, and the
// artifact format versions.
void write_manifest(const std::string& path, const Config& config, std::uint64_t seed,
                    const std::string& command);

}  // namespace dlorl
