#pragma once

#include <stdexcept>
#include <string>

namespace qfa {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Zero-norm vector where a direction is required.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// A value violates a domain invariant (bad prompt, charset, config...).
class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class SimplexError : public Error {
 public:
  using Error::Error;
};

/// Backend lacks a required capability (gradients, image modality).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class SpaceTooLargeError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// The embedding service answered with an error payload.
class RemoteError : public Error {
 public:
  RemoteError(int status, const std::string& message)
      : Error("remote error (HTTP " + std::to_string(status) + "): " + message),
        status_(status),
        message_(message) {}

  int status() const noexcept { return status_; }
  const std::string& service_message() const noexcept { return message_; }

 private:
  int status_;
  std::string message_;
};

/// Malformed input file. line() is 1-based, 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace qfa
