#pragma once

#include <stdexcept>
#include <string>

namespace nest {

// Error taxonomy. Each category is its own type so call sites (and tests)
// can catch precisely what they expect.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct DegenerateRowError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ConsistencyError : Error {
  using Error::Error;
};
struct EncodingError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};
struct OracleError : Error {
  using Error::Error;
};
struct BenchmarkError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace nest
