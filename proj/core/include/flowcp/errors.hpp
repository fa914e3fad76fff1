#pragma once

#include <stdexcept>
#include <string>

namespace flowcp {

/// Base of the library's error family; everything thrown here derives from
/// it so callers can catch the whole family at one boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/vector dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (empty input, nonpositive scale, bad fraction...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value; message names the site.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Optimization failed (non-finite gradient or divergent loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Federated protocol violation (mismatched deltas, all clients failed).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Data ingestion failure (missing column, no usable rows).
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowcp
