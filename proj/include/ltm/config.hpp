#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltm/samplers.hpp"
#include "ltm/training.hpp"
#include "ltm/transport.hpp"

namespace ltm {

/// Invalid configuration; the message names the key and, for file input, the line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `section.key` settings read from TOML-style files:
///
///   [lattice]
///   L = 8
///
/// Values are integers, reals, quoted strings or comma-separated lists in
/// quotes. Only keys from the built-in schema are accepted.
class RunConfig {
 public:
  /// All schema defaults.
  RunConfig();

  /// Overrides with the reduced smoke profile.
  void apply_smoke();
  /// Merges a file; throws ConfigError with the line number on bad input.
  void merge_file(const std::string& path);
  void merge_stream(std::istream& in, const std::string& source);
  /// Sets one `section.key=value` override.
  void set(const std::string& key, const std::string& value, const std::string& source = "command line");

  bool is_set(const std::string& key) const;  // given explicitly (file, smoke or override)
  void require(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Effective configuration in the file format, sections in schema order.
  void write(std::ostream& out) const;

  /// Cross-field checks (known names, even L for checkerboard, ranges).
  void validate() const;

  LatticeGeometry geometry() const;
  PhiFourParams couplings() const;
  MapSpec map_spec(const std::string& ordering, int neighborhood) const;
  MapSpec map_spec() const;
  TrainConfig train_config() const;
  HmcConfig hmc_config() const;
  ImhConfig imh_config() const;
  std::uint64_t seed() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

}  // namespace ltm
