#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace road {

/// Base class for every error the engine raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an input value does not hold (empty batch, bad config field).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Protocol text could not be parsed. line() is 1-based; 0 when the whole document is at fault.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Network or HTTP failure after the retry budget was spent.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The scripted backend has no (or more than one) entry for a request.
class ScriptError : public Error {
 public:
  using Error::Error;
};

/// An agent reply carried no parsable JSON payload.
class MalformedOutput : public Error {
 public:
  MalformedOutput(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// A JSON payload parsed but does not match the named schema.
class SchemaViolation : public Error {
 public:
  SchemaViolation(std::string field, const std::string& what)
      : Error("schema violation at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

/// Reading or writing the run directory failed.
class PersistenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace road
