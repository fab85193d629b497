// Small dense Levenberg-Marquardt for least-squares problems with a handful
// of parameters.

#ifndef PATHENT_DETAIL_LEVENBERG_MARQUARDT_HPP
#define PATHENT_DETAIL_LEVENBERG_MARQUARDT_HPP

#include <cmath>
#include <functional>

#include <Eigen/Dense>

namespace pathent::detail {

struct LmOptions {
  int max_iterations = 10000;
  double objective_tolerance = 1e-12;  // stop once an accepted step improves less than this
  double initial_damping = 1e-3;
};

struct LmResult {
  Eigen::VectorXd params;
  double objective = 0.0;  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& f, const Eigen::VectorXd& x) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(k)));
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

inline LmResult levenberg_marquardt(const ResidualFn& residuals, const JacobianFn& jacobian, Eigen::VectorXd x,
                                    const LmOptions& opt = {}) {
  Eigen::VectorXd r = residuals(x);
  double f = r.squaredNorm();
  double lambda = opt.initial_damping;
  LmResult out;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const Eigen::MatrixXd j = jacobian(x);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < 1e-300 || f == 0.0) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      const Eigen::VectorXd xn = x + step;
      const Eigen::VectorXd rn = residuals(xn);
      const double fn = rn.squaredNorm();
      if (std::isfinite(fn) && fn <= f) {
        const double gain = f - fn;
        x = xn;
        r = rn;
        f = fn;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (gain < opt.objective_tolerance) out.converged = true;
        break;
      }
      lambda *= 4.0;
    }
    // No downhill step at any damping: stationary to working precision.
    if (!accepted) out.converged = true;
    if (out.converged) break;
  }
  out.params = x;
  out.objective = f;
  out.iterations = it;
  return out;
}

inline LmResult levenberg_marquardt(const ResidualFn& residuals, Eigen::VectorXd x, const LmOptions& opt = {}) {
  return levenberg_marquardt(
      residuals, [&](const Eigen::VectorXd& p) { return numeric_jacobian(residuals, p); }, std::move(x), opt);
}

}  // namespace pathent::detail

#endif  // PATHENT_DETAIL_LEVENBERG_MARQUARDT_HPP
