#pragma once

#include <stdexcept>
#include <string>

namespace flex {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments or violated operation preconditions.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Backend does not declare the capability an operation needs.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Network-level failure; the only retryable class.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Malformed or rejected server reply. Not retryable.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Invariant broken mid-run (e.g. embedding dimension drift). Aborts the stage.
class FatalError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class UnsupportedConstraint : public Error {
 public:
  using Error::Error;
};

// Missing or tampered pipeline artifact.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

// Concurrent state mutation rejected (e.g. a cluster finalized twice).
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace flex
