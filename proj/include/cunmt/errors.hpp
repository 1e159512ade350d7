#pragma once

#include <stdexcept>
#include <string>

namespace cunmt {

// Error categories. The values double as process exit codes and as the
// status codes of the C API, so they must stay distinct and nonzero.
enum class Errc : int {
  config = 2,    // malformed or inconsistent configuration
  data = 3,      // bad corpus files, capacity overruns, contaminated sets
  contract = 4,  // violated operation precondition (shape mismatch, etc.)
  io = 5,        // filesystem failures
  internal = 6,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(Errc::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(Errc::data, what) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(Errc::contract, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(Errc::io, what) {}
};

}  // namespace cunmt
