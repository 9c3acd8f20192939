#include "dodti/dti_core.hpp"

#include "dodti/error.hpp"
#include "dodti/parallel.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dodti {

std::size_t mask_count(const Mask& mask, std::size_t voxels) {
  if (mask.empty()) return voxels;
  return std::size_t(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

void ParamField::apply_mask() {
  if (mask.empty()) return;
  for (std::size_t v = 0; v < mask.size(); ++v)
    if (!mask[v]) values.col(Eigen::Index(v)).setZero();
}

std::size_t GradientScheme::b0_count() const {
  return std::size_t(std::count_if(entries.begin(), entries.end(), [](const GradientEntry& e) { return e.b == 0.0; }));
}

std::size_t GradientScheme::first_b0() const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].b == 0.0) return i;
  throw DataError("gradient scheme has no b=0 entry");
}

void validate_scheme(const GradientScheme& scheme, bool for_fitting) {
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const auto& e = scheme.entries[i];
    if (!std::isfinite(e.b) || e.b < 0) throw DataError("entry " + std::to_string(i) + ": invalid b-value");
    if (e.b > 0 && std::abs(e.g.norm() - 1.0) > 1e-6)
      throw DataError("entry " + std::to_string(i) + ": direction is not unit length");
  }
  if (!for_fitting) return;
  if (scheme.size() < 7) throw DataError("scheme has fewer than 7 entries");
  if (scheme.b0_count() == 0) throw DataError("scheme has no b=0 entry");
  if (design_rank(build_design_matrix(scheme)) < kParamChannels)
    throw DataError("scheme does not determine the tensor (design matrix rank < 7)");
}

DesignMatrix build_design_matrix(const GradientScheme& scheme, RankCheck check) {
  DesignMatrix A(Eigen::Index(scheme.size()), kParamChannels);
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const double b = scheme.entries[i].b;
    const Eigen::Vector3d& g = scheme.entries[i].g;
    auto row = A.row(Eigen::Index(i));
    if (b == 0.0) {
      row << 1, 0, 0, 0, 0, 0, 0;
      continue;
    }
    row << 1, -b * g[0] * g[0], -b * g[1] * g[1], -b * g[2] * g[2], -2 * b * g[0] * g[1], -2 * b * g[1] * g[2],
        -2 * b * g[0] * g[2];
  }
  if (check == RankCheck::require_full && design_rank(A) < kParamChannels)
    throw DataError("design matrix is rank deficient (rank " + std::to_string(design_rank(A)) + " < 7)");
  return A;
}

int design_rank(const DesignMatrix& A) {
  if (A.rows() == 0) return 0;
  // Column scaling makes the threshold meaningful despite b ~ 1e3.
  Eigen::MatrixXd scaled = A;
  for (Eigen::Index c = 0; c < scaled.cols(); ++c) {
    const double n = scaled.col(c).norm();
    if (n > 0) scaled.col(c) /= n;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-10);
  return int(qr.rank());
}

Eigen::VectorXd predict_signals(const ParamVector& x, const DesignMatrix& A) { return (A * x).array().exp(); }

Eigen::Matrix3d tensor_from_params(const ParamVector& x) {
  Eigen::Matrix3d D;
  D << x[1], x[4], x[6],
       x[4], x[2], x[5],
       x[6], x[5], x[3];
  return D;
}

ParamVector params_from_tensor(double ln_s0, const Eigen::Matrix3d& D) {
  ParamVector x;
  x << ln_s0, D(0, 0), D(1, 1), D(2, 2), D(0, 1), D(1, 2), D(0, 2);
  return x;
}

namespace {

Eigen::Vector3d null_vector(const Eigen::Matrix3d& A, double lambda) {
  Eigen::Matrix3d M = A - lambda * Eigen::Matrix3d::Identity();
  const Eigen::Vector3d r0 = M.row(0), r1 = M.row(1), r2 = M.row(2);
  const Eigen::Vector3d c01 = r0.cross(r1), c02 = r0.cross(r2), c12 = r1.cross(r2);
  const double n01 = c01.squaredNorm(), n02 = c02.squaredNorm(), n12 = c12.squaredNorm();
  if (n01 >= n02 && n01 >= n12 && n01 > 0) return c01 / std::sqrt(n01);
  if (n02 >= n12 && n02 > 0) return c02 / std::sqrt(n02);
  if (n12 > 0) return c12 / std::sqrt(n12);
  return Eigen::Vector3d::UnitX();
}

void orthogonal_complement(const Eigen::Vector3d& w, Eigen::Vector3d& u, Eigen::Vector3d& v) {
  if (std::abs(w[0]) > std::abs(w[1])) {
    u = Eigen::Vector3d(-w[2], 0, w[0]) / std::sqrt(w[0] * w[0] + w[2] * w[2]);
  } else {
    u = Eigen::Vector3d(0, w[2], -w[1]) / std::sqrt(w[1] * w[1] + w[2] * w[2]);
  }
  v = w.cross(u);
}

// Eigenvector for `lambda` restricted to the plane orthogonal to `known`.
Eigen::Vector3d second_vector(const Eigen::Matrix3d& A, const Eigen::Vector3d& known, double lambda) {
  Eigen::Vector3d u, v;
  orthogonal_complement(known, u, v);
  const Eigen::Vector3d Au = A * u, Av = A * v;
  double m00 = u.dot(Au) - lambda, m01 = u.dot(Av), m11 = v.dot(Av) - lambda;
  const double a00 = std::abs(m00), a01 = std::abs(m01), a11 = std::abs(m11);
  if (a00 >= a11) {
    if (std::max(a00, a01) == 0) return u;
    if (a00 >= a01) {
      m01 /= m00;
      m00 = 1 / std::sqrt(1 + m01 * m01);
      m01 *= m00;
    } else {
      m00 /= m01;
      m01 = 1 / std::sqrt(1 + m00 * m00);
      m00 *= m01;
    }
    return m01 * u - m00 * v;
  }
  if (std::max(a11, a01) == 0) return u;
  if (a11 >= a01) {
    m01 /= m11;
    m11 = 1 / std::sqrt(1 + m01 * m01);
    m01 *= m11;
  } else {
    m11 /= m01;
    m01 = 1 / std::sqrt(1 + m11 * m11);
    m11 *= m01;
  }
  return m11 * u - m01 * v;
}

// Cyclic Jacobi on B = V^T A V, rotating V alongside.
void jacobi_polish(Eigen::Matrix3d& B, Eigen::Matrix3d& V) {
  const double scale = std::max(B.cwiseAbs().maxCoeff(), 1e-300);
  for (int sweep = 0; sweep < 8; ++sweep) {
    const double off = std::abs(B(0, 1)) + std::abs(B(0, 2)) + std::abs(B(1, 2));
    if (off <= 1e-17 * scale) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (B(p, q) == 0) continue;
        const double theta = (B(q, q) - B(p, p)) / (2 * B(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        Eigen::Matrix3d J = Eigen::Matrix3d::Identity();
        J(p, p) = c;
        J(q, q) = c;
        J(p, q) = s;
        J(q, p) = -s;
        B = J.transpose() * B * J;
        V = V * J;
      }
    }
  }
}

}  // namespace

SymEigen eig3_sym(const Eigen::Matrix3d& input) {
  SymEigen out;
  const double scale = input.cwiseAbs().maxCoeff();
  if (scale == 0 || !std::isfinite(scale)) {
    out.values.setConstant(scale == 0 ? 0.0 : std::numeric_limits<double>::quiet_NaN());
    out.vectors.setIdentity();
    return out;
  }
  const Eigen::Matrix3d A = 0.5 * (input + input.transpose()) / scale;

  const double off = A(0, 1) * A(0, 1) + A(0, 2) * A(0, 2) + A(1, 2) * A(1, 2);
  double e[3];
  Eigen::Matrix3d V;
  if (off == 0) {
    e[0] = A(0, 0);
    e[1] = A(1, 1);
    e[2] = A(2, 2);
    V.setIdentity();
  } else {
    const double q = A.trace() / 3;
    const double p2 = (A(0, 0) - q) * (A(0, 0) - q) + (A(1, 1) - q) * (A(1, 1) - q) + (A(2, 2) - q) * (A(2, 2) - q) +
                      2 * off;
    const double p = std::sqrt(p2 / 6);
    const Eigen::Matrix3d B = (A - q * Eigen::Matrix3d::Identity()) / p;
    const double r = std::clamp(B.determinant() / 2, -1.0, 1.0);
    const double phi = std::acos(r) / 3;
    e[0] = q + 2 * p * std::cos(phi);
    e[2] = q + 2 * p * std::cos(phi + 2 * std::numbers::pi / 3);
    e[1] = 3 * q - e[0] - e[2];

    Eigen::Vector3d v0, v1, v2;
    if (e[0] - e[1] >= e[1] - e[2]) {
      v0 = null_vector(A, e[0]);
      v1 = second_vector(A, v0, e[1]);
      v2 = v0.cross(v1);
    } else {
      v2 = null_vector(A, e[2]);
      v1 = second_vector(A, v2, e[1]);
      v0 = v1.cross(v2);
    }
    V.col(0) = v0;
    V.col(1) = v1;
    V.col(2) = v2;

    Eigen::Matrix3d R = V.transpose() * A * V;
    const double resid = std::abs(R(0, 1)) + std::abs(R(0, 2)) + std::abs(R(1, 2));
    const double min_gap = std::min(e[0] - e[1], e[1] - e[2]);
    if (min_gap < 1e-12 || resid > 1e-15) jacobi_polish(R, V);
    // Rayleigh quotients are more accurate than the trigonometric roots.
    for (int k = 0; k < 3; ++k) e[k] = R(k, k);
  }

  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int a, int b) { return e[a] > e[b]; });
  for (int k = 0; k < 3; ++k) {
    out.values[k] = e[order[k]] * scale;
    out.vectors.col(k) = V.col(order[k]).normalized();
  }
  return out;
}

TensorScalars tensor_scalars(const Eigen::Vector3d& eigenvalues, bool clamp_negative) {
  Eigen::Vector3d l = eigenvalues;
  if (clamp_negative) l = l.cwiseMax(0.0);
  std::sort(l.data(), l.data() + 3, std::greater<>());
  TensorScalars s;
  s.md = (l[0] + l[1] + l[2]) / 3;
  s.ad = l[0];
  s.rd = (l[1] + l[2]) / 2;
  const double norm2 = l.squaredNorm();
  if (norm2 > 0) {
    const double spread = (l[0] - l[1]) * (l[0] - l[1]) + (l[1] - l[2]) * (l[1] - l[2]) + (l[2] - l[0]) * (l[2] - l[0]);
    s.fa = std::sqrt(0.5 * spread / norm2);
    if (clamp_negative) s.fa = std::min(s.fa, 1.0);
  }
  return s;
}

ScalarMaps scalar_maps(const ParamField& field, bool clamp_negative) {
  const std::size_t n = field.voxels();
  ScalarMaps maps;
  maps.dims = field.dims;
  maps.fa.assign(n, 0.0);
  maps.md.assign(n, 0.0);
  maps.ad.assign(n, 0.0);
  maps.rd.assign(n, 0.0);
  parallel_for(n, [&](std::size_t v) {
    if (!in_mask(field.mask, v)) return;
    const ParamVector x = field.voxel(v);
    if (!x.allFinite()) return;
    const auto s = tensor_scalars(eig3_sym(tensor_from_params(x)).values, clamp_negative);
    maps.fa[v] = s.fa;
    maps.md[v] = s.md;
    maps.ad[v] = s.ad;
    maps.rd[v] = s.rd;
  });
  return maps;
}

ParamVector rotate_tensor(const ParamVector& x, const Eigen::Matrix3d& R) {
  if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-8 ||
      std::abs(R.determinant() - 1.0) > 1e-8)
    throw DataError("rotate_tensor: matrix is not a proper rotation");
  const Eigen::Matrix3d D = tensor_from_params(x);
  return params_from_tensor(x[0], R * D * R.transpose());
}

Eigen::Matrix3d rotation_z(double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  Eigen::Matrix3d R;
  R << std::cos(t), -std::sin(t), 0,
       std::sin(t), std::cos(t), 0,
       0, 0, 1;
  return R;
}

}  // namespace dodti
