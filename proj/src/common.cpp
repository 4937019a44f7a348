#include "camo/common.hpp"

#include <cstdio>

namespace camo {

void warn(const std::string& module_name, const std::string& message) {
  std::fprintf(stderr, "[camokit:%s] warning: %s\n", module_name.c_str(), message.c_str());
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  return fnv1a(s.data(), s.size(), seed);
}

std::string version_string() { return "camokit 0.1.0"; }

}  // namespace camo
