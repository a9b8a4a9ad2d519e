#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fuse3d {

// Error taxonomy mirrors the CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Plain Error covers usage and shape contract violations.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

namespace detail {

template <typename... Parts>
std::string concat(const Parts&... parts) {
  std::ostringstream out;
  (out << ... << parts);
  return out.str();
}

}  // namespace detail

template <typename E = Error, typename... Parts>
[[noreturn]] void raise(const Parts&... parts) {
  throw E(detail::concat(parts...));
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace fuse3d

#define FUSE3D_CHECK(cond, ...) \
  do {                          \
    if (!(cond)) ::fuse3d::raise<::fuse3d::Error>(__VA_ARGS__); \
  } while (0)

#define FUSE3D_CHECK_CFG(cond, ...) \
  do {                              \
    if (!(cond)) ::fuse3d::raise<::fuse3d::ConfigError>(__VA_ARGS__); \
  } while (0)

#define FUSE3D_CHECK_DATA(cond, ...) \
  do {                               \
    if (!(cond)) ::fuse3d::raise<::fuse3d::DataError>(__VA_ARGS__); \
  } while (0)
