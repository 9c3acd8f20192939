#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dodti {

/// Voxel grid extent. Voxels are linearised x-fastest, matching NIfTI.
struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const { return std::size_t(nx) * std::size_t(ny) * std::size_t(nz); }
  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) + std::size_t(nx) * (std::size_t(y) + std::size_t(ny) * std::size_t(z));
  }
  bool operator==(const Dims&) const = default;
};

/// Per-voxel boolean field; an empty mask means "every voxel".
using Mask = std::vector<std::uint8_t>;

inline bool in_mask(const Mask& mask, std::size_t v) { return mask.empty() || mask[v] != 0; }
std::size_t mask_count(const Mask& mask, std::size_t voxels);

/// Multi-channel volume stored channels x voxels (column-major, so one
/// voxel's channel vector is contiguous).
struct Volume {
  Dims dims;
  Eigen::MatrixXd data;

  Volume() = default;
  Volume(Dims d, int channels) : dims(d), data(Eigen::MatrixXd::Zero(channels, Eigen::Index(d.voxels()))) {}

  int channels() const { return int(data.rows()); }
  std::size_t voxels() const { return dims.voxels(); }
};

/// Number of channels of a parameter map: ln S0, D11, D22, D33, D12, D23, D13.
inline constexpr int kParamChannels = 7;

using ParamVector = Eigen::Matrix<double, kParamChannels, 1>;

/// 7-channel parameter map X. Tensor entries are in mm^2/s, ln S0 on the
/// normalised signal scale. Voxels outside the mask hold zeros.
struct ParamField {
  Dims dims;
  Eigen::MatrixXd values;  // 7 x voxels
  Mask mask;

  ParamField() = default;
  ParamField(Dims d, Mask m = {})
      : dims(d), values(Eigen::MatrixXd::Zero(kParamChannels, Eigen::Index(d.voxels()))), mask(std::move(m)) {}

  std::size_t voxels() const { return dims.voxels(); }
  ParamVector voxel(std::size_t v) const { return values.col(Eigen::Index(v)); }

  /// Zeroes every voxel outside the mask.
  void apply_mask();
};

}  // namespace dodti
