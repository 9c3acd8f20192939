#include "dodti/estimators.hpp"

#include "dodti/error.hpp"
#include "dodti/parallel.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <mutex>

namespace dodti {

namespace {

void require_fittable(const DesignMatrix& A, std::size_t rows) {
  if (std::size_t(A.rows()) != rows) throw DataError("signal count does not match design matrix rows");
  if (A.rows() < kParamChannels || design_rank(A) < kParamChannels)
    throw NumericalError("design matrix is rank deficient; the tensor is under-determined");
}

ParamVector weighted_solve(const Eigen::VectorXd& y, const DesignMatrix& A, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd WA = w.asDiagonal() * A;
  const Eigen::VectorXd Wy = w.cwiseProduct(y);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(WA);
  return qr.solve(Wy);
}

ParamVector unweighted_solve(const Eigen::VectorXd& y, const DesignMatrix& A) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  return qr.solve(y);
}

ParamVector iwlls_unchecked(const Eigen::VectorXd& y, const DesignMatrix& A, int iters, ParamVector x) {
  for (int k = 0; k < iters; ++k) x = weighted_solve(y, A, reweight(x, A));
  return x;
}

}  // namespace

Eigen::VectorXd log_signals(const Eigen::Ref<const Eigen::VectorXd>& magnitudes, double floor) {
  return magnitudes.cwiseMax(floor).array().log();
}

ParamVector lls_fit(const Eigen::VectorXd& y, const DesignMatrix& A) {
  require_fittable(A, std::size_t(y.size()));
  return unweighted_solve(y, A);
}

ParamVector wlls_fit(const Eigen::VectorXd& y, const DesignMatrix& A, const Eigen::VectorXd& w) {
  require_fittable(A, std::size_t(y.size()));
  if (w.size() != A.rows()) throw DataError("weight count does not match design matrix rows");
  if (!(w.array() > 0).all() || !w.allFinite()) throw DataError("WLLS weights must be positive and finite");
  return weighted_solve(y, A, w);
}

Eigen::VectorXd reweight(const ParamVector& x, const DesignMatrix& A) {
  return (A * x).cwiseMax(-300.0).cwiseMin(300.0).array().exp();
}

ParamVector iwlls_fit(const Eigen::VectorXd& y, const DesignMatrix& A, int iters) {
  if (iters < 1) throw UsageError("iwlls_fit: iters must be >= 1");
  require_fittable(A, std::size_t(y.size()));
  return iwlls_unchecked(y, A, iters, unweighted_solve(y, A));
}

LlsSolver::LlsSolver(const DesignMatrix& A) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  q_ = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), kParamChannels);
  r_ = qr.matrixQR().topRows(kParamChannels).triangularView<Eigen::Upper>();
}

ParamVector LlsSolver::solve(const Eigen::VectorXd& y) const {
  const ParamVector qty = q_.transpose() * y;
  return r_.triangularView<Eigen::Upper>().solve(qty);
}

Mask default_mask(const DwiStack& stack, double threshold) {
  const std::size_t n = stack.signals.voxels();
  std::vector<Eigen::Index> b0;
  for (std::size_t i = 0; i < stack.scheme.size(); ++i)
    if (stack.scheme.entries[i].b == 0.0) b0.push_back(Eigen::Index(i));
  if (b0.empty()) throw DataError("cannot build a default mask without b=0 volumes");
  Mask mask(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    double mean = 0;
    for (auto c : b0) mean += stack.signals.data(c, Eigen::Index(v));
    mask[v] = (mean / double(b0.size()) > threshold) ? 1 : 0;
  }
  return mask;
}

Eigen::MatrixXd log_signal_field(const DwiStack& stack, double floor) {
  return stack.signals.data.cwiseMax(floor).array().log();
}

FieldFit fit_field(const DwiStack& stack, FitMethod method, int iters, Mask mask) {
  validate_scheme(stack.scheme, /*for_fitting=*/true);
  if (std::size_t(stack.signals.channels()) != stack.scheme.size())
    throw DataError("stack has " + std::to_string(stack.signals.channels()) + " volumes but the scheme has " +
                    std::to_string(stack.scheme.size()) + " entries");
  if (method == FitMethod::wlls && iters < 1) throw UsageError("fit_field: iters must be >= 1");
  const std::size_t n = stack.signals.voxels();
  if (mask.empty()) mask = default_mask(stack);
  if (mask.size() != n) throw DataError("mask size does not match the volume");

  const DesignMatrix A = build_design_matrix(stack.scheme);
  const LlsSolver lls(A);

  FieldFit out{ParamField(stack.dims(), mask), {}};
  std::mutex failures_mutex;
  parallel_for(n, [&](std::size_t v) {
    if (!mask[v]) return;
    const Eigen::VectorXd y = log_signals(stack.signals.data.col(Eigen::Index(v)));
    ParamVector x = lls.solve(y);
    if (method == FitMethod::wlls) x = iwlls_unchecked(y, A, iters, x);
    if (!x.allFinite()) {
      std::lock_guard lock(failures_mutex);
      out.report.failures.push_back({v, "non-finite fit"});
      return;
    }
    out.field.values.col(Eigen::Index(v)) = x;
  });
  std::sort(out.report.failures.begin(), out.report.failures.end(),
            [](const FitFailure& a, const FitFailure& b) { return a.voxel < b.voxel; });
  out.report.fitted = mask_count(mask, n) - out.report.failures.size();
  return out;
}

}  // namespace dodti
