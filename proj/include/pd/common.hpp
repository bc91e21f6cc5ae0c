#pragma once

#include <stdexcept>
#include <string>

namespace pd {

/// Which side of the adversarial flow a computation refers to.
/// Generator descends the energy; Discriminator ascends it.
enum class Direction { Generator, Discriminator };

inline const char* to_string(Direction d) {
  return d == Direction::Generator ? "generator" : "discriminator";
}

/// Thrown when a singular kernel is evaluated below its radius floor in strict mode.
struct SingularPair : std::runtime_error {
  explicit SingularPair(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when an evaluation produces a non-finite value (overflow).
struct NonFiniteValue : std::runtime_error {
  explicit NonFiniteValue(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown on tensor/batch dimension disagreements.
struct ShapeMismatch : std::invalid_argument {
  explicit ShapeMismatch(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown on file-output failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pd
