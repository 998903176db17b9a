#pragma once

#include <stdexcept>
#include <string>

namespace fedpoison {

// Every failure the library reports is one of these; the CLI maps them to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct IngestionError : Error { using Error::Error; };
struct OversamplingError : Error { using Error::Error; };
struct PartitionError : Error { using Error::Error; };
struct AttackError : Error { using Error::Error; };
struct RankingError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };

}  // namespace fedpoison
