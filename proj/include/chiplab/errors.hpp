#pragma once

#include <stdexcept>
#include <string>

namespace chiplab {

/// Base of every error raised by the library. `code()` is a short stable
/// identifier used by the service API and by the CLI exit-status mapping.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config_error", w) {}
};

struct PlacementError : Error {
  explicit PlacementError(const std::string& w) : Error("placement_error", w) {}
};

struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error("index_error", w) {}
};

struct LookupError : Error {
  explicit LookupError(const std::string& w) : Error("lookup_error", w) {}
};

struct AliasingError : Error {
  explicit AliasingError(const std::string& w) : Error("aliasing_error", w) {}
};

struct TypeError : Error {
  explicit TypeError(const std::string& w) : Error("type_error", w) {}
};

struct RangeError : Error {
  explicit RangeError(const std::string& w) : Error("range_error", w) {}
};

struct AcquisitionError : Error {
  explicit AcquisitionError(const std::string& w) : Error("acquisition_error", w) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error("precondition_error", w) {}
};

/// Schema violation in a scenario document or service command. `path` is a
/// JSON-pointer-like location such as `/steps/2/dwell_s`.
class ValidationError : public Error {
 public:
  ValidationError(std::string path, const std::string& msg)
      : Error("validation_error", (path.empty() ? std::string("/") : path) + ": " + msg),
        path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct NotFoundError : Error {
  explicit NotFoundError(const std::string& w) : Error("not_found", w) {}
};

}  // namespace chiplab
