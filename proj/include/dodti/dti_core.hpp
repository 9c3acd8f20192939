#pragma once

#include "dodti/types.hpp"

#include <Eigen/Core>

#include <vector>

namespace dodti {

/// One acquisition: diffusion weighting b (s/mm^2) and unit direction g.
struct GradientEntry {
  double b = 0.0;
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
};

struct GradientScheme {
  std::vector<GradientEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t b0_count() const;
  /// Index of the first b=0 entry; throws DataError if there is none.
  std::size_t first_b0() const;
};

/// Checks unit norms of weighted directions. With `for_fitting`, also
/// requires M >= 7, a b=0 entry and a rank-7 design matrix.
void validate_scheme(const GradientScheme& scheme, bool for_fitting);

/// M x 7 design matrix mapping [ln s0, D11, D22, D33, D12, D23, D13] to
/// log signals.
using DesignMatrix = Eigen::Matrix<double, Eigen::Dynamic, kParamChannels>;

enum class RankCheck { none, require_full };

DesignMatrix build_design_matrix(const GradientScheme& scheme, RankCheck check = RankCheck::none);

/// Numerical rank of A (column-pivoted QR with relative threshold 1e-10).
int design_rank(const DesignMatrix& A);

/// exp(A x): noise-free signals on the normalised scale.
Eigen::VectorXd predict_signals(const ParamVector& x, const DesignMatrix& A);

Eigen::Matrix3d tensor_from_params(const ParamVector& x);
ParamVector params_from_tensor(double ln_s0, const Eigen::Matrix3d& D);

struct SymEigen {
  Eigen::Vector3d values;   // descending
  Eigen::Matrix3d vectors;  // column k pairs with values[k]
};

/// Eigendecomposition of a symmetric 3x3 matrix. Closed-form trigonometric
/// roots with eigenvectors from cross products, followed by Jacobi polishing
/// whenever the eigenvalue gaps are tiny or the closed form leaves residual
/// off-diagonal mass.
SymEigen eig3_sym(const Eigen::Matrix3d& D);

struct TensorScalars {
  double fa = 0.0;
  double md = 0.0;
  double ad = 0.0;
  double rd = 0.0;
};

/// FA/MD/AD/RD from descending eigenvalues; negative eigenvalues are
/// clamped to zero when `clamp_negative` is set.
TensorScalars tensor_scalars(const Eigen::Vector3d& eigenvalues, bool clamp_negative = true);

struct ScalarMaps {
  Dims dims;
  std::vector<double> fa, md, ad, rd;
};

ScalarMaps scalar_maps(const ParamField& field, bool clamp_negative = true);

/// Replaces the tensor by R D R^T. Throws DataError unless R is a proper
/// rotation (orthonormal, det +1, within 1e-8).
ParamVector rotate_tensor(const ParamVector& x, const Eigen::Matrix3d& R);

Eigen::Matrix3d rotation_z(double degrees);

}  // namespace dodti
