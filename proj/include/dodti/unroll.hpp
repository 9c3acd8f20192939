#pragma once

#include "dodti/denoiser.hpp"
#include "dodti/dti_core.hpp"
#include "dodti/estimators.hpp"
#include "dodti/types.hpp"

#include <Eigen/Core>

#include <memory>
#include <vector>

namespace dodti {

/// Solver defaults: 8 stages, one inner fixed-point iteration, rho 0.001, lambda 0.1.
struct UnrollConfig {
  double rho = 1e-3;
  double lambda = 0.1;
  int ns = 8;
  int nt = 1;
  std::shared_ptr<const Denoiser> denoiser;  // null = identity
  bool train_rho_lambda = true;
  /// Tensor channels are carried in units of `tensor_unit` mm^2/s inside
  /// the solver, so all seven channels of X, Z and beta are O(1).
  double tensor_unit = 1e-3;
  bool record_trace = true;

  void validate() const;
};

/// A DTI estimation problem in solver coordinates.
struct UnrollProblem {
  Dims dims;
  Mask mask;              // never empty; all-ones when every voxel is fitted
  DesignMatrix A;         // tensor columns scaled by tensor_unit
  Eigen::MatrixXd Y;      // M x voxels log signals
  double tensor_unit = 1.0;
};

UnrollProblem make_problem(const DwiStack& stack, Mask mask = {}, double tensor_unit = 1e-3);

/// Converts a parameter matrix between mm^2/s and solver units.
Eigen::MatrixXd to_solver_units(const Eigen::MatrixXd& x, double tensor_unit);
Eigen::MatrixXd from_solver_units(const Eigen::MatrixXd& x, double tensor_unit);

/// ADMM state (X, Z, beta) plus the per-voxel weights W (M x voxels).
struct UnrollState {
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  Eigen::MatrixXd beta;
  Eigen::MatrixXd W;
};

/// X0 = LLS fit, Z0 = X0, beta0 = 0, W = exp(A X0).
UnrollState init_state(const UnrollProblem& problem);

/// Per voxel: X = (A'W'WA + rho I)^-1 [A'W'W Y + rho (Z - beta)] by Cholesky.
/// Voxels whose system is not positive definite are reported and zeroed.
Eigen::MatrixXd fitting_block(const UnrollState& state, const UnrollProblem& problem, double rho,
                              FitReport* report = nullptr);

/// W = exp(A X) per masked voxel (ones elsewhere).
Eigen::MatrixXd refresh_weights(const Eigen::MatrixXd& X, const UnrollProblem& problem);

struct AuxOutput {
  Eigen::MatrixXd Z;
  Eigen::MatrixXd denoised_first;  // D(Z^{n-1}) from the first inner iteration
};

/// Z^{n,0} = Z^{n-1}; Z^{n,t} = [rho (X + beta) + lambda D(Z^{n,t-1})] / (rho + lambda).
AuxOutput aux_block(const UnrollState& state, const UnrollProblem& problem, double rho, double lambda, int nt,
                    const Denoiser& denoiser);

/// beta + X - Z.
Eigen::MatrixXd multiplier_block(const UnrollState& state);

struct StageTrace {
  Eigen::MatrixXd X;
  Eigen::MatrixXd denoised_prev;  // D(Z^{n-1})
  Eigen::MatrixXd Z;
};

struct UnrollResult {
  Eigen::MatrixXd X;                 // solver units
  std::vector<StageTrace> trace;     // one entry per stage when recorded
  std::vector<Eigen::MatrixXd> weights_used;  // W entering each stage's fitting block
  FitReport report;
};

/// Runs init_state then ns stages of fitting -> aux -> multiplier.
/// `frozen_weights`, when given, replaces the per-stage weight refresh
/// (one M x voxels matrix per stage); used to evaluate the stop-gradient
/// surrogate that training differentiates.
UnrollResult run_unroll(const UnrollProblem& problem, const UnrollConfig& cfg,
                        const std::vector<Eigen::MatrixXd>* frozen_weights = nullptr);

/// Convenience wrapper on a stack: returns the final X as a ParamField in mm^2/s.
ParamField run_unroll_field(const DwiStack& stack, const UnrollConfig& cfg, Mask mask = {},
                            UnrollResult* details = nullptr);

}  // namespace dodti
