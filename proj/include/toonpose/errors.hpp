#pragma once

#include <stdexcept>
#include <string>

namespace toonpose {

// Bad arguments, flags or request contents. Maps to CLI exit status 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable/unwritable files and malformed inputs on disk. Exit status 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ill-conditioned or otherwise failed numerical solves. Exit status 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Annotation workflow violations (filtered group, re-inspection, ...).
class AnnotationError : public std::logic_error {
 public:
  AnnotationError(std::string reason, const std::string& what)
      : std::logic_error(what), reason_(std::move(reason)) {}
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
};

}  // namespace toonpose
