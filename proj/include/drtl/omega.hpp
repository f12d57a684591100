#pragma once

#include <array>
#include <string>

#include "drtl/error.hpp"
#include "drtl/tensor.hpp"

namespace drtl {

/// Dense 4x4 matrix, row-major.
struct Mat4 {
  std::array<double, 16> a{};

  double& operator()(std::size_t i, std::size_t j) { return a[i * 4 + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * 4 + j]; }

  static Mat4 identity(double scale = 1.0);
  static Mat4 diagonal(const std::array<double, 4>& d);

  Mat4 transposed() const;
  double trace() const;
  friend Mat4 operator*(const Mat4& x, const Mat4& y);
  friend Mat4 operator+(const Mat4& x, const Mat4& y);
  friend Mat4 operator-(const Mat4& x, const Mat4& y);
  friend Mat4 operator*(double s, const Mat4& x);
  friend bool operator==(const Mat4&, const Mat4&) = default;
};

double max_abs(const Mat4& m);

/// Eigen-decomposition A = V diag(values) V^T with eigenvalues descending and
/// eigenvectors in the columns of V.
struct SymEig {
  std::array<double, 4> values{};
  Mat4 vectors;
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is below
/// 1e-14 (relative to the matrix norm). Rejects ||A - A^T||_max >= 1e-9.
SymEig sym_eig(const Mat4& A);

/// V diag(sqrt(max(lambda, 0))) V^T. Eigenvalues in (-1e-6, 0) are clamped;
/// anything lower is rejected as a genuinely indefinite input.
Mat4 psd_sqrt(const Mat4& A);

/// Columns of W in the fixed order W_s, W_sc, W_t, W_tc.
constexpr std::array<const char*, 4> kOmegaLabels = {"W_s", "W_sc", "W_t", "W_tc"};

/// (W^T W)^{1/2} for W [n x 4], computed from the singular value decomposition of W.
Mat4 gram_sqrt(const Tensor& stacked_w);

/// Minimiser of tr(W Omega^-1 W^T) over PSD, unit-trace Omega:
/// (W^T W)^{1/2} / tr((W^T W)^{1/2}). W is [n x 4]. W = 0 yields I/4.
Mat4 update_omega(const Tensor& stacked_w);

/// (Omega + ridge I)^{-1} through the eigen-decomposition.
Mat4 omega_inverse(const Mat4& omega, double ridge = 1e-6);

/// tr(W M W^T) for W [n x 4].
double trace_form(const Tensor& stacked_w, const Mat4& m);

/// W^T W for W [n x 4].
Mat4 gram(const Tensor& stacked_w);

/// Checks symmetry (1e-12), eigenvalues >= -1e-10 and unit trace (1e-10).
bool is_valid_omega(const Mat4& omega, std::string* why = nullptr);

struct CorrelationReport {
  /// rho_ij = Omega_ij / sqrt(Omega_ii Omega_jj); NaN where a diagonal entry is not positive.
  Mat4 rho;
  /// sign(rho) * sqrt(|rho|), element-wise.
  Mat4 sqrt_rho;

  /// Fixed-width text tables, rows and columns labelled W_s, W_sc, W_t, W_tc.
  std::string render_text() const;
  /// `rho.<row>.<col>=<value>` and `sqrt_rho.<row>.<col>=<value>` lines.
  std::string render_key_values() const;
};

CorrelationReport correlation_report(const Mat4& omega);

}  // namespace drtl
