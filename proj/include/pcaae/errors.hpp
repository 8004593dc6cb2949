#pragma once

#include <stdexcept>
#include <string>

namespace pcaae {

/// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Value outside an operation's mathematical domain (e.g. log of a non-positive number).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A normalization batch whose variance collapsed.
struct DegenerateBatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A correlation input with zero variance: a constant attribute or a dead latent.
struct DegenerateVarianceError : std::runtime_error {
  DegenerateVarianceError(const std::string& what, int component = -1)
      : std::runtime_error(what), component(component) {}
  int component;
};

/// Non-finite loss or gradient during optimization.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad or inconsistent run configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pcaae
