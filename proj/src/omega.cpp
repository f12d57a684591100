#include "drtl/omega.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

namespace drtl {

Mat4 Mat4::identity(double scale) {
  Mat4 m;
  for (std::size_t i = 0; i < 4; ++i) m(i, i) = scale;
  return m;
}

Mat4 Mat4::diagonal(const std::array<double, 4>& d) {
  Mat4 m;
  for (std::size_t i = 0; i < 4; ++i) m(i, i) = d[i];
  return m;
}

Mat4 Mat4::transposed() const {
  Mat4 t;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) t(j, i) = (*this)(i, j);
  return t;
}

double Mat4::trace() const { return a[0] + a[5] + a[10] + a[15]; }

Mat4 operator*(const Mat4& x, const Mat4& y) {
  Mat4 r;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 4; ++j) r(i, j) += x(i, k) * y(k, j);
  return r;
}

Mat4 operator+(const Mat4& x, const Mat4& y) {
  Mat4 r;
  for (std::size_t i = 0; i < 16; ++i) r.a[i] = x.a[i] + y.a[i];
  return r;
}

Mat4 operator-(const Mat4& x, const Mat4& y) {
  Mat4 r;
  for (std::size_t i = 0; i < 16; ++i) r.a[i] = x.a[i] - y.a[i];
  return r;
}

Mat4 operator*(double s, const Mat4& x) {
  Mat4 r;
  for (std::size_t i = 0; i < 16; ++i) r.a[i] = s * x.a[i];
  return r;
}

double max_abs(const Mat4& m) {
  double worst = 0.0;
  for (double v : m.a) worst = std::max(worst, std::abs(v));
  return worst;
}

// ---------------------------------------------------------------------------

SymEig sym_eig(const Mat4& A) {
  if (max_abs(A - A.transposed()) >= 1e-9) throw ShapeError("sym_eig: matrix is not symmetric");
  for (double v : A.a) {
    if (!std::isfinite(v)) throw NumericError("sym_eig: non-finite matrix entry");
  }
  Mat4 D = 0.5 * (A + A.transposed());
  Mat4 V = Mat4::identity();
  double norm = 0.0;
  for (double v : D.a) norm += v * v;
  norm = std::sqrt(norm);
  auto off = [&D] {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (i != j) s += D(i, j) * D(i, j);
    return std::sqrt(s);
  };
  const double tol = 1e-14 * std::max(norm, std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < 100 && off() > tol; ++sweep) {
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t q = p + 1; q < 4; ++q) {
        const double apq = D(p, q);
        if (apq == 0.0) continue;
        // rotation angle zeroing D(p,q)
        const double theta = (D(q, q) - D(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < 4; ++k) {
          const double dkp = D(k, p), dkq = D(k, q);
          D(k, p) = c * dkp - s * dkq;
          D(k, q) = s * dkp + c * dkq;
        }
        for (std::size_t k = 0; k < 4; ++k) {
          const double dpk = D(p, k), dqk = D(q, k);
          D(p, k) = c * dpk - s * dqk;
          D(q, k) = s * dpk + c * dqk;
        }
        for (std::size_t k = 0; k < 4; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&D](std::size_t x, std::size_t y) { return D(x, x) > D(y, y); });
  SymEig out;
  for (std::size_t j = 0; j < 4; ++j) {
    out.values[j] = D(order[j], order[j]);
    for (std::size_t i = 0; i < 4; ++i) out.vectors(i, j) = V(i, order[j]);
  }
  return out;
}

namespace {

Mat4 from_eig(const Mat4& V, const std::array<double, 4>& d) {
  Mat4 r;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += V(i, k) * d[k] * V(j, k);
      r(i, j) = s;
    }
  return r;
}

}  // namespace

Mat4 psd_sqrt(const Mat4& A) {
  const SymEig e = sym_eig(A);
  std::array<double, 4> root{};
  for (std::size_t k = 0; k < 4; ++k) {
    if (e.values[k] < -1e-6) {
      throw ShapeError("psd_sqrt: matrix is not positive semi-definite (eigenvalue " + std::to_string(e.values[k]) + ")");
    }
    root[k] = std::sqrt(std::max(e.values[k], 0.0));
  }
  return from_eig(e.vectors, root);
}

Mat4 gram(const Tensor& w) {
  if (w.rank() != 2 || w.dim(1) != 4) throw ShapeError("stacked W must be [n x 4], got " + shape_string(w.shape()));
  Mat4 g;
  const std::size_t n = w.dim(0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) g(i, j) += w[r * 4 + i] * w[r * 4 + j];
  return g;
}

Mat4 gram_sqrt(const Tensor& w) {
  if (w.rank() != 2 || w.dim(1) != 4) throw ShapeError("stacked W must be [n x 4], got " + shape_string(w.shape()));
  const std::size_t n = w.dim(0);
  // One-sided Jacobi: rotate column pairs of U = W V until mutually orthogonal.
  // Singular values then come from column norms, which stay accurate (and
  // scale with W) even when W^T W is rank deficient.
  std::vector<double> u(w.values());
  Mat4 V = Mat4::identity();
  for (double v : u) {
    if (!std::isfinite(v)) throw NumericError("gram_sqrt: non-finite entry in W");
  }
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t q = p + 1; q < 4; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          alpha += u[r * 4 + p] * u[r * 4 + p];
          beta += u[r * 4 + q] * u[r * 4 + q];
          gamma += u[r * 4 + p] * u[r * 4 + q];
        }
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < n; ++r) {
          const double up = u[r * 4 + p], uq = u[r * 4 + q];
          u[r * 4 + p] = c * up - s * uq;
          u[r * 4 + q] = s * up + c * uq;
        }
        for (std::size_t k = 0; k < 4; ++k) {
          const double vp = V(k, p), vq = V(k, q);
          V(k, p) = c * vp - s * vq;
          V(k, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
  std::array<double, 4> sigma{};
  for (std::size_t k = 0; k < 4; ++k) {
    double sq = 0.0;
    for (std::size_t r = 0; r < n; ++r) sq += u[r * 4 + k] * u[r * 4 + k];
    sigma[k] = std::sqrt(sq);
  }
  return from_eig(V, sigma);
}

Mat4 update_omega(const Tensor& stacked_w) {
  const Mat4 g = gram(stacked_w);
  if (max_abs(g) == 0.0) return Mat4::identity(0.25);
  const Mat4 root = gram_sqrt(stacked_w);
  const double tr = root.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) throw NumericError("update_omega: degenerate trace of (W^T W)^{1/2}");
  Mat4 omega = (1.0 / tr) * root;
  // exact symmetry
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) {
      const double avg = 0.5 * (omega(i, j) + omega(j, i));
      omega(i, j) = omega(j, i) = avg;
    }
  return omega;
}

Mat4 omega_inverse(const Mat4& omega, double ridge) {
  const SymEig e = sym_eig(omega);
  std::array<double, 4> inv{};
  for (std::size_t k = 0; k < 4; ++k) {
    const double v = std::max(e.values[k], 0.0) + ridge;
    if (!(v > 0.0)) throw NumericError("omega_inverse: singular matrix; use a positive ridge");
    inv[k] = 1.0 / v;
  }
  return from_eig(e.vectors, inv);
}

double trace_form(const Tensor& w, const Mat4& m) {
  if (w.rank() != 2 || w.dim(1) != 4) throw ShapeError("stacked W must be [n x 4], got " + shape_string(w.shape()));
  double total = 0.0;
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) total += w[r * 4 + i] * m(i, j) * w[r * 4 + j];
  return total;
}

bool is_valid_omega(const Mat4& omega, std::string* why) {
  auto fail = [why](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (max_abs(omega - omega.transposed()) > 1e-12) return fail("not symmetric");
  if (std::abs(omega.trace() - 1.0) > 1e-10) return fail("trace " + std::to_string(omega.trace()) + " != 1");
  const SymEig e = sym_eig(omega);
  if (e.values[3] < -1e-10) return fail("negative eigenvalue " + std::to_string(e.values[3]));
  return true;
}

// ---------------------------------------------------------------------------

CorrelationReport correlation_report(const Mat4& omega) {
  CorrelationReport r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double dii = omega(i, i), djj = omega(j, j);
      if (!(dii > 0.0) || !(djj > 0.0)) {
        r.rho(i, j) = nan;
        r.sqrt_rho(i, j) = nan;
        continue;
      }
      const double rho = omega(i, j) / std::sqrt(dii * djj);
      r.rho(i, j) = rho;
      r.sqrt_rho(i, j) = std::copysign(std::sqrt(std::abs(rho)), rho);
    }
  return r;
}

namespace {

std::string format_entry(double v) {
  if (std::isnan(v)) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void render_table(std::ostringstream& out, const char* title, const Mat4& m) {
  char buf[64];
  out << title << '\n';
  std::snprintf(buf, sizeof buf, "%-6s", "");
  out << buf;
  for (const char* label : kOmegaLabels) {
    std::snprintf(buf, sizeof buf, "%10s", label);
    out << buf;
  }
  out << '\n';
  for (std::size_t i = 0; i < 4; ++i) {
    std::snprintf(buf, sizeof buf, "%-6s", kOmegaLabels[i]);
    out << buf;
    for (std::size_t j = 0; j < 4; ++j) {
      std::snprintf(buf, sizeof buf, "%10s", format_entry(m(i, j)).c_str());
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace

std::string CorrelationReport::render_text() const {
  std::ostringstream out;
  render_table(out, "correlation (rho)", rho);
  out << '\n';
  render_table(out, "signed square root (sign(rho) * sqrt|rho|)", sqrt_rho);
  return out.str();
}

std::string CorrelationReport::render_key_values() const {
  std::ostringstream out;
  char buf[48];
  for (const auto& [name, m] : {std::pair<const char*, const Mat4*>{"rho", &rho}, {"sqrt_rho", &sqrt_rho}}) {
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double v = (*m)(i, j);
        if (std::isnan(v)) {
          out << name << '.' << kOmegaLabels[i] << '.' << kOmegaLabels[j] << "=undefined\n";
        } else {
          std::snprintf(buf, sizeof buf, "%.17g", v);
          out << name << '.' << kOmegaLabels[i] << '.' << kOmegaLabels[j] << '=' << buf << '\n';
        }
      }
  }
  return out.str();
}

}  // namespace drtl
