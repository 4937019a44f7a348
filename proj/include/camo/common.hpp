#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace camo {

// All camokit failures derive from Error; `module_name` feeds the CLI's
// module-attributed exit messages.
class Error : public std::runtime_error {
 public:
  Error(std::string module_name, const std::string& message)
      : std::runtime_error(module_name + ": " + message),
        module_(std::move(module_name)) {}

  const std::string& module_name() const { return module_; }

 private:
  std::string module_;
};

// Warnings go to stderr; kept free of timestamps so logs diff cleanly.
void warn(const std::string& module_name, const std::string& message);

// FNV-1a, used for config hashes and seed-stream derivation.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 14695981039346656037ull);

std::string version_string();

}  // namespace camo
