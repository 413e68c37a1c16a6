#pragma once

#include <string>
#include <vector>

namespace ltm {

/// "ltm-v1" parameter container: the magic line "ltm-v1\n", a little-endian
/// u64 header length, a JSON header, then little-endian float64 parameters.
struct Container {
  std::string header_json;
  std::vector<double> params;
};

inline constexpr const char* kContainerVersion = "ltm-v1";

void write_container(const std::string& path, const Container& container);
/// Throws std::runtime_error on a bad magic, truncated file or size mismatch.
Container read_container(const std::string& path);

}  // namespace ltm
