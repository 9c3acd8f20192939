#include "test_util.hpp"

#include "dodti/metrics.hpp"
#include "dodti/parallel.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace dodti;

namespace {

// Monte-Carlo voxel: Rician magnitudes of a known tensor.
Eigen::VectorXd noisy_log_signals(const ParamVector& x, const DesignMatrix& A, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, sigma);
  const Eigen::VectorXd s = predict_signals(x, A);
  Eigen::VectorXd m(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double a = s[i] + n(rng), b = n(rng);
    m[i] = std::sqrt(a * a + b * b);
  }
  return log_signals(m);
}

}  // namespace

TEST_SUITE("estimators") {
  TEST_CASE("lls recovers noise-free parameters") {
    std::mt19937_64 rng(1);
    const auto A = build_design_matrix(testing::dsm6());
    for (int i = 0; i < 200; ++i) {
      const ParamVector x = testing::random_params(rng);
      const ParamVector est = lls_fit(log_signals(predict_signals(x, A)), A);
      CHECK((est - x).norm() <= 1e-10 * x.norm());
    }
  }

  TEST_CASE("square system interpolates") {
    std::mt19937_64 rng(2);
    const auto A = build_design_matrix(testing::dsm6());
    REQUIRE(A.rows() == 7);
    Eigen::VectorXd y = Eigen::VectorXd::Random(7);
    CHECK((A * lls_fit(y, A) - y).norm() < 1e-10);
  }

  TEST_CASE("fits reject six rows") {
    GradientScheme s = testing::dsm6();
    s.entries.pop_back();
    const auto A = build_design_matrix(s);
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(6);
    CHECK_THROWS_AS(lls_fit(y, A), NumericalError);
    CHECK_THROWS_AS(wlls_fit(y, A, Eigen::VectorXd::Ones(6)), NumericalError);
  }

  TEST_CASE("wlls weight properties") {
    std::mt19937_64 rng(4);
    SchemeRequest req;
    req.kind = SchemeKind::jones_n;
    req.n_dw = 15;
    const auto A = build_design_matrix(make_scheme(req));
    const Eigen::VectorXd y = Eigen::VectorXd::Random(A.rows()) - 2.0 * Eigen::VectorXd::Ones(A.rows());
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(A.rows());
    CHECK((wlls_fit(y, A, ones) - lls_fit(y, A)).norm() <= 1e-12 * lls_fit(y, A).norm());
    const Eigen::VectorXd w = (Eigen::VectorXd::Random(A.rows()).array() + 1.5).matrix();
    const ParamVector base = wlls_fit(y, A, w);
    for (double c : {2.0, 1e-3, 7.5, 1e4})
      CHECK((wlls_fit(y, A, c * w) - base).norm() <= 1e-12 * base.norm());
    CHECK((wlls_fit(y, A, 2.0 * ones) - wlls_fit(y, A, ones)).norm() <= 1e-12 * base.norm());

    // Noise-free data is reproduced for any positive weights.
    const ParamVector x = testing::random_params(rng);
    const Eigen::VectorXd y0 = log_signals(predict_signals(x, A));
    CHECK((wlls_fit(y0, A, w) - x).norm() <= 1e-10 * x.norm());

    Eigen::VectorXd bad = w;
    bad[3] = 0;
    CHECK_THROWS_AS(wlls_fit(y, A, bad), DataError);
    bad[3] = -1;
    CHECK_THROWS_AS(wlls_fit(y, A, bad), DataError);
  }

  TEST_CASE("wlls matches the normal-equation closed form") {
    std::mt19937_64 rng(6);
    const auto A = build_design_matrix(testing::dsm6(1200));
    for (int i = 0; i < 50; ++i) {
      const ParamVector x = testing::random_params(rng);
      const Eigen::VectorXd y = noisy_log_signals(x, A, 0.02, rng);
      const Eigen::VectorXd w = reweight(lls_fit(y, A), A);
      const Eigen::MatrixXd W2 = w.cwiseAbs2().asDiagonal();
      const Eigen::MatrixXd At = A.transpose();
      const ParamVector ref = (At * W2 * A).ldlt().solve(At * W2 * y);
      CHECK((wlls_fit(y, A, w) - ref).norm() <= 1e-8 * ref.norm());
    }
  }

  TEST_CASE("reweight examples") {
    const auto A = build_design_matrix(testing::dsm6());
    CHECK(reweight(ParamVector::Zero(), A).isOnes());
    ParamVector iso;
    iso << 0, 1e-3, 1e-3, 1e-3, 0, 0, 0;
    const auto w = reweight(iso, A);
    CHECK(w[0] == 1.0);
    for (Eigen::Index i = 1; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    std::mt19937_64 rng(7);
    const ParamVector x = testing::random_params(rng);
    CHECK((reweight(x, A) - predict_signals(x, A)).norm() == 0);
    ParamVector huge = ParamVector::Zero();
    huge[0] = 1e6;
    const auto wh = reweight(huge, A);
    CHECK(wh.allFinite());
    CHECK((wh.array() > 0).all());
  }

  TEST_CASE("iwlls fixed point at truth and determinism") {
    std::mt19937_64 rng(8);
    const auto A = build_design_matrix(testing::dsm6());
    const ParamVector x = testing::random_params(rng);
    const Eigen::VectorXd y = log_signals(predict_signals(x, A));
    const ParamVector a = iwlls_fit(y, A, 1), b = iwlls_fit(y, A, 2);
    CHECK((a - x).norm() <= 1e-10 * x.norm());
    CHECK((a - b).norm() <= 1e-12 * x.norm());
    const Eigen::VectorXd yn = noisy_log_signals(x, A, 0.03, rng);
    const ParamVector r1 = iwlls_fit(yn, A), r2 = iwlls_fit(yn, A);
    CHECK(std::memcmp(r1.data(), r2.data(), sizeof(double) * 7) == 0);
    CHECK_THROWS_AS(iwlls_fit(yn, A, 0), UsageError);
  }

  TEST_CASE("iwlls beats lls in mean squared error (Monte Carlo)") {
    // 1e4 voxels at SNR 20; compare per-voxel squared tensor errors with a
    // paired one-sided test at the 5% level.
    std::mt19937_64 rng(9);
    SchemeRequest req;
    req.kind = SchemeKind::jones_n;
    req.n_dw = 15;
    const auto A = build_design_matrix(make_scheme(req));
    ParamVector x;
    x << 0.0, 1.7e-3, 0.2e-3, 0.2e-3, 0, 0, 0;
    const int n = 10000;
    double sum = 0, sum2 = 0, mse_l = 0, mse_w = 0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd y = noisy_log_signals(x, A, 0.05, rng);
      const double el = (lls_fit(y, A) - x).tail<6>().squaredNorm();
      const double ew = (iwlls_fit(y, A) - x).tail<6>().squaredNorm();
      mse_l += el;
      mse_w += ew;
      sum += el - ew;
      sum2 += (el - ew) * (el - ew);
    }
    const double mean = sum / n, sd = std::sqrt(sum2 / n - mean * mean);
    const double z = mean / (sd / std::sqrt(double(n)));
    MESSAGE("lls mse " << mse_l / n << ", iwlls mse " << mse_w / n << ", z " << z);
    CHECK(z > 1.645);
  }

  TEST_CASE("iwlls mean MD is nearly unbiased (Monte Carlo)") {
    std::mt19937_64 rng(10);
    const auto A = build_design_matrix(testing::dsm6());
    ParamVector x;
    x << 0.0, 1.7e-3, 0.2e-3, 0.2e-3, 0, 0, 0;
    const double md_true = 0.7e-3;
    const int n = 100000;
    double md_sum = 0;
    for (int i = 0; i < n; ++i) {
      const ParamVector e = iwlls_fit(noisy_log_signals(x, A, 0.02, rng), A);
      md_sum += (e[1] + e[2] + e[3]) / 3;
    }
    // sigma 0.02 gives SNR >= 5 on every channel (smallest signal exp(-1.7) = 0.18).
    CHECK(std::abs(md_sum / n - md_true) <= 0.02 * md_true);
  }

  TEST_CASE("LlsSolver agrees with lls_fit") {
    std::mt19937_64 rng(12);
    SchemeRequest req;
    req.kind = SchemeKind::jones_n;
    req.n_dw = 25;
    const auto A = build_design_matrix(make_scheme(req));
    const LlsSolver solver(A);
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd y = noisy_log_signals(testing::random_params(rng), A, 0.03, rng);
      CHECK((solver.solve(y) - lls_fit(y, A)).norm() <= 1e-12 * lls_fit(y, A).norm());
    }
  }

  TEST_CASE("field fit round trip, masking and zero stack") {
    const Dims dims{10, 9, 8};
    ParamField gt = testing::random_field(dims, 5);
    const auto scheme = testing::dsm6();
    const DwiStack clean = synthesize_dwi(gt, scheme);
    const auto fit = fit_field(clean, FitMethod::wlls, 2, Mask(dims.voxels(), 1));
    CHECK(fit.report.ok());
    const auto a = scalar_maps(fit.field), b = scalar_maps(gt);
    CHECK(nrmse(a.fa, b.fa, gt.mask) < 1e-6);
    CHECK(nrmse(a.md, b.md, gt.mask) < 1e-6);

    Mask half(dims.voxels(), 0);
    for (std::size_t v = 0; v < half.size() / 2; ++v) half[v] = 1;
    const auto hf = fit_field(clean, FitMethod::lls, 2, half);
    for (std::size_t v = 0; v < half.size(); ++v) {
      if (half[v]) CHECK((hf.field.voxel(v) - gt.voxel(v)).norm() <= 1e-8 * gt.voxel(v).norm());
      else CHECK(hf.field.voxel(v).isZero(0));
    }

    DwiStack zero = clean;
    zero.signals.data.setZero();
    const auto zf = fit_field(zero, FitMethod::wlls);
    CHECK(zf.field.values.isZero(0));
    CHECK(zf.report.fitted == 0);
  }

  TEST_CASE("default mask thresholds the b0 mean") {
    const Dims dims{4, 4, 4};
    DwiStack s;
    s.scheme = testing::dsm6();
    s.signals = Volume(dims, 7);
    s.signals.data.row(0).setConstant(0.04);
    s.signals.data(0, 5) = 0.06;
    const Mask m = default_mask(s);
    CHECK(mask_count(m, dims.voxels()) == 1);
    CHECK(m[5] == 1);
  }

  TEST_CASE("field fit is independent of thread count") {
    const Dims dims{12, 10, 9};
    const ParamField gt = testing::random_field(dims, 6);
    const DwiStack noisy = testing::noisy_stack(gt, testing::dsm6(), 0.03, 3);
    set_thread_count(1);
    const auto a = fit_field(noisy, FitMethod::wlls);
    set_thread_count(3);
    const auto b = fit_field(noisy, FitMethod::wlls);
    set_thread_count(0);
    CHECK(std::memcmp(a.field.values.data(), b.field.values.data(), sizeof(double) * a.field.values.size()) == 0);
  }
}
