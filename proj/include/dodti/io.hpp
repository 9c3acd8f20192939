#pragma once

#include "dodti/dti_core.hpp"
#include "dodti/error.hpp"
#include "dodti/estimators.hpp"
#include "dodti/types.hpp"

#include <array>
#include <filesystem>
#include <optional>

namespace dodti {

// NIfTI-1 subset: single file (.nii / .nii.gz), 3D or 4D, little-endian,
// datatype 4 (int16) or 16 (float32) on read, float32 on write.

struct NiftiMagicError : DataError {
  using DataError::DataError;
};
struct NiftiUnsupportedError : DataError {
  using DataError::DataError;
};
struct NiftiTruncatedError : DataError {
  using DataError::DataError;
};

struct VolumeMeta {
  std::array<float, 3> voxel_size{1.f, 1.f, 1.f};
  /// Voxel -> world rows (sform). Identity when the file carries none.
  std::array<std::array<float, 4>, 3> affine{{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
  int datatype = 16;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
};

struct VolumeFile {
  Volume volume;  // channels = 4th dimension (1 for 3D files)
  VolumeMeta meta;
};

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

VolumeFile read_volume(const std::filesystem::path& path);

/// Writes float32. Paths ending in ".gz" are gzip-compressed.
void write_volume(const Volume& volume, const std::filesystem::path& path, const VolumeMeta* meta_template = nullptr);

/// Nonzero voxels of a 3D volume.
Mask read_mask(const std::filesystem::path& path, std::optional<Dims> expected = std::nullopt);
void write_mask(const Mask& mask, const Dims& dims, const std::filesystem::path& path,
                const VolumeMeta* meta_template = nullptr);

/// Parameter fields travel as 7-volume files in channel order
/// (ln S0, D11, D22, D33, D12, D23, D13).
void write_param_field(const ParamField& field, const std::filesystem::path& path,
                       const VolumeMeta* meta_template = nullptr);
ParamField read_param_field(const std::filesystem::path& path, Mask mask = {});

/// b < 50 is read as b = 0; b > 0 directions with norm in [0.9, 1.1]
/// are renormalised, anything else is rejected.
GradientScheme read_gradients(const std::filesystem::path& bvals, const std::filesystem::path& bvecs);
void write_gradients(const GradientScheme& scheme, const std::filesystem::path& bvals,
                     const std::filesystem::path& bvecs);

constexpr double kFslB0Threshold = 50.0;

}  // namespace dodti
