#pragma once

#include <stdexcept>
#include <string>

namespace bioflux {

// I/O failures carry the offending path in the message and map to CLI exit
// code 2; std::invalid_argument maps to exit code 1.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bioflux
