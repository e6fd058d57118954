#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "posepipe/salm_solver.h"

namespace posepipe::testing {

// Zero-residual system whose solution set is a known manifold of positive
// dimension, so J is rank deficient on it.
struct DegenerateSystem {
  std::string name;
  int num_residuals;
  int num_parameters;
  DenseSystem::ResidualFn residual;
  DenseSystem::JacobianFn jacobian;
  std::function<double(const Eigen::VectorXd&)> distance;
  Eigen::VectorXd start;

  DenseSystem Make() const {
    return DenseSystem(num_residuals, num_parameters, residual, jacobian);
  }
};

inline std::vector<DegenerateSystem> DegenerateSuite() {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  std::vector<DegenerateSystem> suite;

  // Unit sphere in R^3.
  suite.push_back(
      {"sphere", 1, 3,
       [](const VectorXd& x) {
         VectorXd f(1);
         f << x.squaredNorm() - 1.0;
         return f;
       },
       [](const VectorXd& x) {
         MatrixXd j = 2.0 * x.transpose();
         return j;
       },
       [](const VectorXd& x) { return std::abs(x.norm() - 1.0); },
       (VectorXd(3) << 0.9, 0.5, 0.3).finished()});

  // Line x1 + x2 = 2 observed through three nonlinear residuals.
  suite.push_back(
      {"line", 3, 2,
       [](const VectorXd& x) {
         const double s = x[0] + x[1] - 2.0;
         VectorXd f(3);
         f << s, s * s, std::sin(s);
         return f;
       },
       [](const VectorXd& x) {
         const double s = x[0] + x[1] - 2.0;
         MatrixXd j(3, 2);
         j << 1.0, 1.0, 2.0 * s, 2.0 * s, std::cos(s), std::cos(s);
         return j;
       },
       [](const VectorXd& x) {
         return std::abs(x[0] + x[1] - 2.0) / std::sqrt(2.0);
       },
       (VectorXd(2) << 1.4, 0.9).finished()});

  // Circle: radius-2 sphere cut by the plane z = 1.
  suite.push_back(
      {"circle", 2, 3,
       [](const VectorXd& x) {
         VectorXd f(2);
         f << x.squaredNorm() - 4.0, x[2] - 1.0;
         return f;
       },
       [](const VectorXd& x) {
         MatrixXd j(2, 3);
         j << 2.0 * x[0], 2.0 * x[1], 2.0 * x[2], 0.0, 0.0, 1.0;
         return j;
       },
       [](const VectorXd& x) {
         const double rho = std::hypot(x[0], x[1]);
         return std::hypot(rho - std::sqrt(3.0), x[2] - 1.0);
       },
       (VectorXd(3) << 1.5, 0.6, 1.2).finished()});

  // Diagonal x1 = x2 observed through an exponential.
  suite.push_back(
      {"exp", 2, 2,
       [](const VectorXd& x) {
         const double d = x[0] - x[1];
         VectorXd f(2);
         f << d, std::exp(d) - 1.0;
         return f;
       },
       [](const VectorXd& x) {
         const double e = std::exp(x[0] - x[1]);
         MatrixXd j(2, 2);
         j << 1.0, -1.0, e, -e;
         return j;
       },
       [](const VectorXd& x) { return std::abs(x[0] - x[1]) / std::sqrt(2.0); },
       (VectorXd(2) << 0.7, 0.2).finished()});

  // Plane a.x = 1 in R^4.
  const Eigen::Vector4d a(1.0, -2.0, 0.5, 3.0);
  suite.push_back(
      {"plane", 2, 4,
       [a](const VectorXd& x) {
         const double u = a.dot(x) - 1.0;
         VectorXd f(2);
         f << u + 0.5 * u * u, std::tanh(u);
         return f;
       },
       [a](const VectorXd& x) {
         const double u = a.dot(x) - 1.0;
         const double sech = 1.0 / std::cosh(u);
         MatrixXd j(2, 4);
         j.row(0) = (1.0 + u) * a.transpose();
         j.row(1) = sech * sech * a.transpose();
         return j;
       },
       [a](const VectorXd& x) { return std::abs(a.dot(x) - 1.0) / a.norm(); },
       (VectorXd(4) << 0.3, 0.1, 0.4, 0.5).finished()});
  return suite;
}

// Slope of log e_{k+1} against log e_k over the last `window` errors above
// `floor`. Returns NaN when fewer than three such errors exist.
inline double ConvergenceOrder(const std::vector<double>& errors, int window,
                               double floor) {
  std::vector<double> usable;
  for (const double e : errors) {
    if (e > floor) usable.push_back(e);
  }
  if (usable.size() < 3) return std::nan("");
  const std::size_t n = std::min<std::size_t>(window, usable.size());
  const std::vector<double> tail(usable.end() - n, usable.end());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(tail.size() - 1);
  for (std::size_t k = 0; k + 1 < tail.size(); ++k) {
    const double x = std::log(tail[k]);
    const double y = std::log(tail[k + 1]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

inline SolverConfig ZeroResidualConfig(int eta) {
  SolverConfig config;
  config.eta = eta;
  config.gradient_tolerance = 0.0;
  config.cost_tolerance = 0.0;
  config.step_tolerance = 0.0;
  config.max_iterations = 100;
  return config;
}

}  // namespace posepipe::testing
