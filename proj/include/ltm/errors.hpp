#pragma once

#include <stdexcept>
#include <string>

namespace ltm {

/// A computation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A map component produced a non-finite value; `label()` identifies it.
class ComponentError : public NumericalError {
 public:
  ComponentError(int label, const std::string& what)
      : NumericalError("component " + std::to_string(label) + ": " + what), label_(label) {}
  int label() const { return label_; }

 private:
  int label_;
};

}  // namespace ltm
