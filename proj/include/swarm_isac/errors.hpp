#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace swarm_isac {

enum class ErrorKind {
  DegenerateGeometry,
  NumericalFailure,
  SingularFim,
  StepFailure,
  ProtocolError,
  GenerationFailure,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::SingularFim: return "SingularFim";
    case ErrorKind::StepFailure: return "StepFailure";
    case ErrorKind::ProtocolError: return "ProtocolError";
    case ErrorKind::GenerationFailure: return "GenerationFailure";
  }
  return "Unknown";
}

/// Base of every domain failure. The optimizer loops attach the failing
/// iteration index before rethrowing, so callers can report where a run broke.
class Error : public std::exception {
 public:
  Error(ErrorKind kind, std::string detail) : kind_(kind), detail_(std::move(detail)) {
    rebuild();
  }

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }
  std::optional<long> iteration() const noexcept { return iteration_; }

  void set_iteration(long iter) {
    iteration_ = iter;
    rebuild();
  }

  const char* what() const noexcept override { return message_.c_str(); }

 private:
  void rebuild() {
    message_ = std::string(to_string(kind_)) + ": " + detail_;
    if (iteration_) message_ += " (iteration " + std::to_string(*iteration_) + ")";
  }

  ErrorKind kind_;
  std::string detail_;
  std::optional<long> iteration_;
  std::string message_;
};

class DegenerateGeometry : public Error {
 public:
  explicit DegenerateGeometry(std::string detail, long uav = -1, long antenna = -1)
      : Error(ErrorKind::DegenerateGeometry, std::move(detail)), uav_(uav), antenna_(antenna) {}
  long uav() const noexcept { return uav_; }
  long antenna() const noexcept { return antenna_; }

 private:
  long uav_;
  long antenna_;
};

class NumericalFailure : public Error {
 public:
  explicit NumericalFailure(std::string detail) : Error(ErrorKind::NumericalFailure, std::move(detail)) {}
};

class SingularFim : public Error {
 public:
  SingularFim(std::string detail, double min_eigenvalue)
      : Error(ErrorKind::SingularFim, std::move(detail)), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const noexcept { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

class StepFailure : public Error {
 public:
  explicit StepFailure(std::string detail) : Error(ErrorKind::StepFailure, std::move(detail)) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(std::string detail) : Error(ErrorKind::ProtocolError, std::move(detail)) {}
};

class GenerationFailure : public Error {
 public:
  explicit GenerationFailure(std::string detail) : Error(ErrorKind::GenerationFailure, std::move(detail)) {}
};

}  // namespace swarm_isac
