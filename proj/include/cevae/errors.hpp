#pragma once

#include <stdexcept>
#include <string>

namespace cevae {

// Malformed slice files, manifests, checkpoints.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values in losses, gradients or posteriors.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that makes an operation undefined (zero variance, single-class labels).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric undefined for the given labels (e.g. ROC-AUC with a single class).
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cevae
