#pragma once

#include <stdexcept>

namespace srscn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct UndefinedMetricError : Error { using Error::Error; };

}  // namespace srscn
