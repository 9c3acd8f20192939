#include "dodti/unroll.hpp"

#include "dodti/error.hpp"
#include "dodti/parallel.hpp"

#include <Eigen/Cholesky>

#include <mutex>

namespace dodti {

namespace {

const IdentityDenoiser kIdentity;

void zero_outside(Eigen::MatrixXd& m, const Mask& mask) {
  for (std::size_t v = 0; v < mask.size(); ++v)
    if (!mask[v]) m.col(Eigen::Index(v)).setZero();
}

}  // namespace

void UnrollConfig::validate() const {
  if (!(rho > 0)) throw UsageError("unroll: rho must be > 0");
  if (!(lambda >= 0)) throw UsageError("unroll: lambda must be >= 0");
  if (ns < 1 || nt < 1) throw UsageError("unroll: ns and nt must be >= 1");
  if (!(tensor_unit > 0)) throw UsageError("unroll: tensor_unit must be > 0");
}

Eigen::MatrixXd to_solver_units(const Eigen::MatrixXd& x, double tensor_unit) {
  Eigen::MatrixXd out = x;
  out.bottomRows(6) /= tensor_unit;
  return out;
}

Eigen::MatrixXd from_solver_units(const Eigen::MatrixXd& x, double tensor_unit) {
  Eigen::MatrixXd out = x;
  out.bottomRows(6) *= tensor_unit;
  return out;
}

UnrollProblem make_problem(const DwiStack& stack, Mask mask, double tensor_unit) {
  validate_scheme(stack.scheme, /*for_fitting=*/true);
  if (std::size_t(stack.signals.channels()) != stack.scheme.size())
    throw DataError("stack volume count does not match the gradient scheme");
  if (!(tensor_unit > 0)) throw UsageError("tensor_unit must be > 0");
  UnrollProblem p;
  p.dims = stack.dims();
  p.mask = mask.empty() ? default_mask(stack) : std::move(mask);
  if (p.mask.size() != p.dims.voxels()) throw DataError("mask size does not match the volume");
  p.A = build_design_matrix(stack.scheme);
  p.A.rightCols(6) *= tensor_unit;
  p.Y = log_signal_field(stack);
  p.tensor_unit = tensor_unit;
  return p;
}

Eigen::MatrixXd refresh_weights(const Eigen::MatrixXd& X, const UnrollProblem& problem) {
  Eigen::MatrixXd W = Eigen::MatrixXd::Ones(problem.A.rows(), X.cols());
  parallel_for(std::size_t(X.cols()), [&](std::size_t v) {
    if (!problem.mask[v]) return;
    const ParamVector x = X.col(Eigen::Index(v));
    W.col(Eigen::Index(v)) = reweight(x, problem.A);
  });
  return W;
}

UnrollState init_state(const UnrollProblem& problem) {
  const LlsSolver lls(problem.A);
  const Eigen::Index n = problem.Y.cols();
  UnrollState s;
  s.X = Eigen::MatrixXd::Zero(kParamChannels, n);
  parallel_for(std::size_t(n), [&](std::size_t v) {
    if (!problem.mask[v]) return;
    s.X.col(Eigen::Index(v)) = lls.solve(problem.Y.col(Eigen::Index(v)));
  });
  if (!s.X.allFinite()) throw NumericalError("initial LLS fit produced non-finite values");
  s.Z = s.X;
  s.beta = Eigen::MatrixXd::Zero(kParamChannels, n);
  s.W = refresh_weights(s.X, problem);
  return s;
}

Eigen::MatrixXd fitting_block(const UnrollState& state, const UnrollProblem& problem, double rho, FitReport* report) {
  if (rho < 0) throw UsageError("fitting_block: rho must be >= 0");
  const Eigen::Index n = problem.Y.cols();
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(kParamChannels, n);
  std::mutex failures_mutex;
  parallel_for(std::size_t(n), [&](std::size_t v) {
    if (!problem.mask[v]) return;
    const auto j = Eigen::Index(v);
    const Eigen::VectorXd w2 = state.W.col(j).cwiseAbs2();
    Eigen::Matrix<double, kParamChannels, kParamChannels> H = problem.A.transpose() * w2.asDiagonal() * problem.A;
    H.diagonal().array() += rho;
    ParamVector rhs = problem.A.transpose() * w2.cwiseProduct(problem.Y.col(j));
    rhs += rho * (state.Z.col(j) - state.beta.col(j));
    Eigen::LLT<Eigen::Matrix<double, kParamChannels, kParamChannels>> llt(H);
    if (llt.info() != Eigen::Success) {
      if (report) {
        std::lock_guard lock(failures_mutex);
        report->failures.push_back({v, "fitting block system is not positive definite"});
      }
      return;
    }
    X.col(j) = llt.solve(rhs);
  });
  return X;
}

AuxOutput aux_block(const UnrollState& state, const UnrollProblem& problem, double rho, double lambda, int nt,
                    const Denoiser& denoiser) {
  if (!(rho > 0) || !(lambda >= 0) || nt < 1) throw UsageError("aux_block: requires rho > 0, lambda >= 0, nt >= 1");
  AuxOutput out;
  const Eigen::MatrixXd anchor = state.X + state.beta;
  Eigen::MatrixXd Z = state.Z;
  for (int t = 1; t <= nt; ++t) {
    Eigen::MatrixXd D = denoiser.apply(problem.dims, Z, problem.mask);
    zero_outside(D, problem.mask);
    if (lambda == 0)
      Z = anchor;
    else
      Z = (rho * anchor + lambda * D) / (rho + lambda);
    if (t == 1) out.denoised_first = std::move(D);
  }
  zero_outside(Z, problem.mask);
  out.Z = std::move(Z);
  return out;
}

Eigen::MatrixXd multiplier_block(const UnrollState& state) {
  if (state.beta.rows() != state.X.rows() || state.beta.cols() != state.X.cols() || state.Z.cols() != state.X.cols())
    throw DataError("multiplier_block: shape mismatch");
  return state.beta + (state.X - state.Z);
}

UnrollResult run_unroll(const UnrollProblem& problem, const UnrollConfig& cfg,
                        const std::vector<Eigen::MatrixXd>* frozen_weights) {
  cfg.validate();
  if (frozen_weights && int(frozen_weights->size()) < cfg.ns)
    throw UsageError("run_unroll: frozen weights must cover every stage");
  const Denoiser& denoiser = cfg.denoiser ? *cfg.denoiser : kIdentity;

  UnrollResult result;
  UnrollState state = init_state(problem);
  for (int n = 1; n <= cfg.ns; ++n) {
    if (frozen_weights) state.W = (*frozen_weights)[std::size_t(n - 1)];
    if (cfg.record_trace) result.weights_used.push_back(state.W);

    FitReport stage_report;
    state.X = fitting_block(state, problem, cfg.rho, &stage_report);
    for (auto& f : stage_report.failures) {
      f.message = "stage " + std::to_string(n) + ": " + f.message;
      result.report.failures.push_back(f);
    }
    if (!state.X.allFinite()) throw NumericalError("stage " + std::to_string(n) + ": fitting block produced non-finite values");
    state.W = refresh_weights(state.X, problem);

    AuxOutput aux = aux_block(state, problem, cfg.rho, cfg.lambda, cfg.nt, denoiser);
    if (!aux.Z.allFinite()) throw NumericalError("stage " + std::to_string(n) + ": auxiliary block produced non-finite values");
    state.Z = std::move(aux.Z);
    state.beta = multiplier_block(state);

    if (cfg.record_trace) result.trace.push_back({state.X, std::move(aux.denoised_first), state.Z});
  }
  result.report.fitted = mask_count(problem.mask, problem.dims.voxels());
  result.X = std::move(state.X);
  return result;
}

ParamField run_unroll_field(const DwiStack& stack, const UnrollConfig& cfg, Mask mask, UnrollResult* details) {
  const UnrollProblem problem = make_problem(stack, std::move(mask), cfg.tensor_unit);
  UnrollResult result = run_unroll(problem, cfg);
  ParamField field(problem.dims, problem.mask);
  field.values = from_solver_units(result.X, cfg.tensor_unit);
  if (details) *details = std::move(result);
  return field;
}

}  // namespace dodti
