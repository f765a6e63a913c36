#pragma once

#include <stdexcept>
#include <string>

namespace causex {

// Base for every error raised by the engine. Subclasses map onto the failure
// categories the CLI reports as per-image statuses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something malformed: shape mismatch, bad mask, bad flag.
class InputError : public Error {
 public:
  using Error::Error;
};

// The configuration cannot produce meaningful explanations, e.g. the baseline
// classifies the same as the image.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Model backend unreachable, crashed or timed out.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Backend answered, but the answer is malformed (non-finite, wrong length,
// unknown id).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A search ran to exhaustion without meeting its stopping condition.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Exhaustive computation refused because the instance exceeds its bound.
class RefusalError : public Error {
 public:
  using Error::Error;
};

// Malformed taxonomy input (cycle, several roots, dangling reference).
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Query for something the loaded data does not contain.
class LookupError : public Error {
 public:
  using Error::Error;
};

}  // namespace causex
