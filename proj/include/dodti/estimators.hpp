#pragma once

#include "dodti/dti_core.hpp"
#include "dodti/types.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace dodti {

/// Measured magnitudes are clamped here (normalised scale) before the log.
inline constexpr double kLogClampFloor = 1e-8;

/// Default brain-mask threshold on the mean b=0 magnitude (normalised scale).
inline constexpr double kDefaultMaskThreshold = 0.05;

/// Default number of reweighting rounds for iterated WLLS.
inline constexpr int kDefaultWllsIterations = 2;

/// 4D dMRI magnitudes (channels = scheme entries) plus the gradient scheme.
struct DwiStack {
  Volume signals;
  GradientScheme scheme;

  Dims dims() const { return signals.dims; }
};

Eigen::VectorXd log_signals(const Eigen::Ref<const Eigen::VectorXd>& magnitudes, double floor = kLogClampFloor);

/// Ordinary least squares on log signals via Householder QR.
ParamVector lls_fit(const Eigen::VectorXd& y, const DesignMatrix& A);

/// argmin ||W (A x - y)||^2 with W = diag(w), solved by QR of W A.
ParamVector wlls_fit(const Eigen::VectorXd& y, const DesignMatrix& A, const Eigen::VectorXd& w);

/// Model-based weights exp(A x). The exponent is clamped to +-300 so the
/// weights stay finite and positive for any finite x.
Eigen::VectorXd reweight(const ParamVector& x, const DesignMatrix& A);

/// LLS start followed by `iters` rounds of reweight + WLLS.
ParamVector iwlls_fit(const Eigen::VectorXd& y, const DesignMatrix& A, int iters = kDefaultWllsIterations);

/// Precomputed QR of A shared by every voxel of an LLS field fit.
class LlsSolver {
 public:
  explicit LlsSolver(const DesignMatrix& A);
  ParamVector solve(const Eigen::VectorXd& y) const;

 private:
  Eigen::MatrixXd q_;  // M x 7 thin Q
  Eigen::Matrix<double, kParamChannels, kParamChannels> r_;
};

enum class FitMethod { lls, wlls };

struct FitFailure {
  std::size_t voxel = 0;
  std::string message;
};

struct FitReport {
  std::size_t fitted = 0;
  std::vector<FitFailure> failures;

  bool ok() const { return failures.empty(); }
};

struct FieldFit {
  ParamField field;
  FitReport report;
};

/// Voxels whose mean b=0 magnitude exceeds `threshold`.
Mask default_mask(const DwiStack& stack, double threshold = kDefaultMaskThreshold);

/// Per-voxel fit over the grid. `mask` empty selects default_mask(stack).
/// Failing voxels are zeroed and listed in the report.
FieldFit fit_field(const DwiStack& stack, FitMethod method, int iters = kDefaultWllsIterations, Mask mask = {});

/// Log-signal field (M x voxels) of a stack.
Eigen::MatrixXd log_signal_field(const DwiStack& stack, double floor = kLogClampFloor);

}  // namespace dodti
