// Two-qubit states and the metrics every other module leans on.
//
// Basis ordering is {|00>, |01>, |10>, |11>}; the first tensor factor is
// the signal qubit, the second the idler.

#ifndef PATHENT_QSTATE_HPP
#define PATHENT_QSTATE_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <json.hpp>

namespace pathent {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using Matrix2c = Eigen::Matrix2cd;
using Matrix4c = Eigen::Matrix4cd;
using Ket2 = Eigen::Vector2cd;
using Ket4 = Eigen::Vector4cd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr Complex kI{0.0, 1.0};

/// Thrown when a matrix fails the density-matrix checks.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace tolerance {
inline constexpr double hermiticity = 1e-12;
inline constexpr double trace = 1e-12;
inline constexpr double negative_eigenvalue = 1e-10;
}  // namespace tolerance

inline ComplexMatrix tensor(const ComplexMatrix& a, const ComplexMatrix& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

inline Matrix4c tensor(const Matrix2c& a, const Matrix2c& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

inline Ket4 tensor(const Ket2& a, const Ket2& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

/// Frobenius-norm comparison.
inline bool approx_equal(const ComplexMatrix& a, const ComplexMatrix& b, double tol) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a - b).norm() <= tol;
}

namespace pauli {
inline Matrix2c identity() { return Matrix2c::Identity(); }
inline Matrix2c x() { return (Matrix2c() << 0, 1, 1, 0).finished(); }
inline Matrix2c y() { return (Matrix2c() << 0, -kI, kI, 0).finished(); }
inline Matrix2c z() { return (Matrix2c() << 1, 0, 0, -1).finished(); }
}  // namespace pauli

namespace kets {
inline Ket2 zero() { return Ket2(1, 0); }
inline Ket2 one() { return Ket2(0, 1); }
inline Ket2 plus() { return Ket2(1, 1) / std::sqrt(2.0); }
inline Ket2 minus() { return Ket2(1, -1) / std::sqrt(2.0); }
inline Ket2 plus_i() { return Ket2(1, kI) / std::sqrt(2.0); }
inline Ket2 minus_i() { return Ket2(1, -kI) / std::sqrt(2.0); }
inline Ket4 phi_plus() { return Ket4(1, 0, 0, 1) / std::sqrt(2.0); }
}  // namespace kets

struct ValidationReport {
  double hermiticity_error = 0.0;  // ||rho - rho^dagger||_F
  double trace_error = 0.0;        // |Tr rho - 1|
  double min_eigenvalue = 0.0;

  bool ok() const {
    return hermiticity_error <= tolerance::hermiticity && trace_error <= tolerance::trace &&
           min_eigenvalue >= -tolerance::negative_eigenvalue;
  }
  std::string describe() const {
    return "hermiticity error " + std::to_string(hermiticity_error) + ", trace error " +
           std::to_string(trace_error) + ", min eigenvalue " + std::to_string(min_eigenvalue);
  }
};

inline ValidationReport validate(const Matrix4c& m) {
  ValidationReport r;
  r.hermiticity_error = (m - m.adjoint()).norm();
  r.trace_error = std::abs(m.trace() - Complex(1.0, 0.0));
  const Matrix4c h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix4c> es(h, Eigen::EigenvaluesOnly);
  r.min_eigenvalue = es.eigenvalues().minCoeff();
  return r;
}

/// A validated 4x4 two-qubit density matrix. Immutable once built.
class DensityMatrix {
 public:
  explicit DensityMatrix(const Matrix4c& m) : m_(m) {
    const auto report = validate(m_);
    if (!report.ok()) throw StateError("not a density matrix: " + report.describe());
  }

  static DensityMatrix from_ket(const Ket4& psi) {
    const double n = psi.norm();
    if (n == 0.0) throw StateError("zero ket");
    const Ket4 u = psi / n;
    return DensityMatrix(u * u.adjoint());
  }

  static DensityMatrix maximally_mixed() { return DensityMatrix(Matrix4c::Identity() / 4.0); }

  const Matrix4c& matrix() const { return m_; }
  Complex operator()(int row, int col) const { return m_(row, col); }

 private:
  Matrix4c m_;
};

/// Hermitian eigendecomposition with the noise clamp applied: eigenvalues in
/// [-1e-10, 0) become 0, anything below throws.
template <typename Matrix>
Eigen::SelfAdjointEigenSolver<Matrix> psd_eigen(const Matrix& m) {
  const Matrix h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) throw StateError("eigendecomposition failed");
  if (es.eigenvalues().minCoeff() < -tolerance::negative_eigenvalue)
    throw StateError("matrix is not positive semi-definite (eigenvalue " +
                     std::to_string(es.eigenvalues().minCoeff()) + ")");
  return es;
}

template <typename Matrix>
Matrix matrix_sqrt(const Matrix& psd) {
  const auto es = psd_eigen(psd);
  const auto roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().adjoint();
}

inline Matrix4c matrix_sqrt(const DensityMatrix& rho) { return matrix_sqrt(rho.matrix()); }

inline double purity(const DensityMatrix& rho) {
  return (rho.matrix() * rho.matrix()).trace().real();
}

/// Root fidelity Tr sqrt(sqrt(a) b sqrt(a)), in [0, 1].
inline double fidelity(const Matrix4c& a, const Matrix4c& b) {
  psd_eigen(b);
  const Matrix4c sa = matrix_sqrt(a);
  const Matrix4c inner = sa * b * sa;
  const auto es = psd_eigen(inner);
  const double f = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::clamp(f, 0.0, 1.0);
}

inline double fidelity(const DensityMatrix& a, const DensityMatrix& b) {
  return fidelity(a.matrix(), b.matrix());
}

// {"re": [[...]x4]x4, "im": [[...]x4]x4}, row-major.
inline nlohmann::json to_json(const Matrix4c& m) {
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    nlohmann::json rr = nlohmann::json::array(), ir = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) {
      rr.push_back(m(r, c).real());
      ir.push_back(m(r, c).imag());
    }
    re.push_back(rr);
    im.push_back(ir);
  }
  return {{"re", re}, {"im", im}};
}

inline nlohmann::json to_json(const DensityMatrix& rho) { return to_json(rho.matrix()); }

inline DensityMatrix density_matrix_from_json(const nlohmann::json& j) {
  if (!j.contains("re") || !j.contains("im")) throw StateError("density matrix JSON needs 're' and 'im'");
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (re.size() != 4 || im.size() != 4) throw StateError("density matrix JSON must be 4x4");
  Matrix4c m;
  for (int r = 0; r < 4; ++r) {
    if (re[r].size() != 4 || im[r].size() != 4) throw StateError("density matrix JSON must be 4x4");
    for (int c = 0; c < 4; ++c) m(r, c) = Complex(re[r][c].get<double>(), im[r][c].get<double>());
  }
  return DensityMatrix(m);
}

}  // namespace pathent

#endif  // PATHENT_QSTATE_HPP
