#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dodti {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad command-line usage or invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, schemes, shapes).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value or hit a singular system.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Per-voxel fit failure; carries the linear voxel index.
class FitError : public NumericalError {
 public:
  FitError(std::size_t voxel, const std::string& what)
      : NumericalError("voxel " + std::to_string(voxel) + ": " + what), voxel_(voxel) {}
  std::size_t voxel() const { return voxel_; }

 private:
  std::size_t voxel_;
};

}  // namespace dodti
