#ifndef KWLOC_COMMON_HPP
#define KWLOC_COMMON_HPP

#include <stdexcept>
#include <string>

namespace kwloc {

// Error taxonomy, mapped to CLI exit codes in tools/kwloc.cpp:
//   ConfigError / InputError -> 2, DataError -> 3, IncompatError -> 4,
//   anything else -> 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller passed an out-of-range or malformed runtime value.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or unreadable data on disk.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Byte-level format violation; message names the offending offset or line.
struct FormatError : DataError {
  explicit FormatError(const std::string& msg) : DataError(msg) {}
};

// Localisation method not applicable to the model architecture.
struct IncompatError : std::runtime_error {
  explicit IncompatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InternalError : std::logic_error {
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace kwloc

#endif  // KWLOC_COMMON_HPP
