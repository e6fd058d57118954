#include "posepipe/salm_solver.h"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include "posepipe/error.h"

namespace posepipe {
namespace {

int CeilLog2(int eta) {
  int bits = 0;
  while ((1LL << bits) < eta) ++bits;
  return bits;
}

bool AllFinite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

void SolverConfig::Validate() const {
  std::ostringstream msg;
  if (!(lambda > 0.0 && lambda <= 2.0)) {
    msg << "lambda must lie in (0, 2] (got " << lambda << ")";
  } else if (!(nu > 0.0 && nu < 1.0)) {
    msg << "nu must lie in (0, 1) (got " << nu << ")";
  } else if (!(xi > 0.0 && xi <= 1.0)) {
    msg << "xi must lie in (0, 1] (got " << xi << ")";
  } else if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) {
    msg << "alpha0 must be positive (got " << alpha0 << ")";
  } else if (eta < 2) {
    msg << "eta must be an integer > 1 (got " << eta << ")";
  } else if (max_iterations < 0) {
    msg << "max_iterations must be non-negative";
  } else if (!(mu_cap_factor > 0.0)) {
    msg << "mu_cap_factor must be positive";
  } else {
    return;
  }
  throw Error(ErrorCode::kInvalidArgument, msg.str());
}

double RhoUpdate(double alpha, double nu_k, const SolverConfig& config) {
  const double diff = nu_k - config.nu;
  if (diff == 0.0) {
    return alpha;
  }
  const int power = 2 * CeilLog2(config.eta) - 1;
  const double scale =
      std::pow(static_cast<double>(config.eta), std::ceil(1.0 / config.nu));
  double term = scale * std::pow(diff, power);
  if (std::isnan(term)) {
    term = std::copysign(std::numeric_limits<double>::infinity(), diff);
  }
  const double factor = std::max(config.xi, 1.0 - term);
  return std::min(alpha * factor, std::numeric_limits<double>::max());
}

DenseLinearization::DenseLinearization(Eigen::MatrixXd jacobian,
                                       Eigen::VectorXd residuals)
    : jacobian_(std::move(jacobian)), residuals_(std::move(residuals)) {}

Eigen::VectorXd DenseLinearization::Gradient() const {
  return jacobian_.transpose() * residuals_;
}

double DenseLinearization::MaxHessianDiagonal() const {
  if (jacobian_.cols() == 0) return 0.0;
  return jacobian_.colwise().squaredNorm().maxCoeff();
}

bool DenseLinearization::SolveDamped(double mu, Eigen::VectorXd* step) {
  if (!jacobian_.allFinite() || !residuals_.allFinite()) {
    return false;
  }
  if (!factored_) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        jacobian_, Eigen::ComputeThinU | Eigen::ComputeThinV);
    v_ = svd.matrixV();
    singular_values_ = svd.singularValues();
    projected_residuals_ = svd.matrixU().transpose() * residuals_;
    factored_ = true;
  }
  const double s_max =
      singular_values_.size() > 0 ? singular_values_.maxCoeff() : 0.0;
  const double cutoff = DBL_EPSILON * s_max *
                        static_cast<double>(std::max(jacobian_.rows(),
                                                     jacobian_.cols()));
  Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(singular_values_.size());
  for (Eigen::Index i = 0; i < singular_values_.size(); ++i) {
    const double s = singular_values_[i];
    if (s <= cutoff) continue;
    coeffs[i] = -s * projected_residuals_[i] / (s * s + mu);
  }
  *step = v_ * coeffs;
  if (step->size() != jacobian_.cols()) {
    step->conservativeResize(jacobian_.cols());
  }
  return step->allFinite();
}

double DenseLinearization::ModelCost(const Eigen::VectorXd& step) const {
  return (residuals_ + jacobian_ * step).squaredNorm();
}

DenseSystem::DenseSystem(int num_residuals, int num_parameters,
                         ResidualFn residual, JacobianFn jacobian)
    : num_residuals_(num_residuals),
      num_parameters_(num_parameters),
      residual_(std::move(residual)),
      jacobian_(std::move(jacobian)) {}

bool DenseSystem::Evaluate(const Eigen::VectorXd& x,
                           Eigen::VectorXd* f) const {
  *f = residual_(x);
  return f->size() == num_residuals_ && f->allFinite();
}

std::unique_ptr<Linearization> DenseSystem::Linearize(
    const Eigen::VectorXd& x, const Eigen::VectorXd& f) const {
  return std::make_unique<DenseLinearization>(jacobian_(x), f);
}

std::string_view StopReasonName(StopReason reason) {
  switch (reason) {
    case StopReason::kZeroResidual: return "zero_residual";
    case StopReason::kGradientTolerance: return "gradient_tolerance";
    case StopReason::kCostTolerance: return "cost_tolerance";
    case StopReason::kStepTolerance: return "step_tolerance";
    case StopReason::kNoPredictedDecrease: return "no_predicted_decrease";
    case StopReason::kMaxIterations: return "max_iterations";
    case StopReason::kMuCap: return "mu_cap";
  }
  return "unknown";
}

SolverResult Solve(const ResidualSystem& system, const Eigen::VectorXd& x0,
                   const SolverConfig& config, SolveOptions options) {
  config.Validate();
  constexpr double kZeroCost = 1e-30;
  const bool adaptive = config.mode == DampingMode::kSelfAdaptive;
  const double mu_cap = config.MuCap();

  SolverResult result;
  result.x = x0;
  Eigen::VectorXd f;
  if (!AllFinite(x0) || !system.Evaluate(x0, &f)) {
    throw Error(ErrorCode::kNonFiniteResidual,
                "initial state cannot be evaluated");
  }
  double cost = f.squaredNorm();
  result.initial_cost = cost;
  if (options.record_iterates) result.iterates.push_back(x0);

  double alpha = config.alpha0;
  double standard_mu = -1.0;
  int stall = 0;

  auto finish = [&](SolverStatus status, StopReason reason) {
    result.final_cost = cost;
    result.status = status;
    result.reason = reason;
    return result;
  };

  for (;;) {
    if (cost <= kZeroCost) {
      return finish(SolverStatus::kConverged, StopReason::kZeroResidual);
    }
    if (result.iterations >= config.max_iterations) {
      return finish(SolverStatus::kMaxIterations, StopReason::kMaxIterations);
    }
    std::unique_ptr<Linearization> lin = system.Linearize(result.x, f);
    const Eigen::VectorXd gradient = lin->Gradient();
    if (!gradient.allFinite()) {
      throw Error(ErrorCode::kNonFiniteResidual, "non-finite gradient");
    }
    if (gradient.norm() < config.gradient_tolerance) {
      return finish(SolverStatus::kConverged, StopReason::kGradientTolerance);
    }

    double mu;
    if (adaptive) {
      mu = alpha * std::pow(std::sqrt(cost), config.lambda);
    } else {
      if (standard_mu < 0.0) {
        standard_mu = config.standard_tau *
                      std::max(lin->MaxHessianDiagonal(), DBL_MIN);
      }
      mu = standard_mu;
    }
    if (!(mu <= mu_cap)) {
      return finish(SolverStatus::kDiverged, StopReason::kMuCap);
    }

    Eigen::VectorXd step;
    while (!lin->SolveDamped(mu, &step)) {
      mu *= 10.0;
      spdlog::debug("linear solve failed; retrying with mu={}", mu);
      if (!(mu <= mu_cap)) {
        return finish(SolverStatus::kDiverged, StopReason::kMuCap);
      }
    }

    const double predicted = cost - lin->ModelCost(step);
    if (!(predicted > 0.0)) {
      return finish(SolverStatus::kConverged,
                    StopReason::kNoPredictedDecrease);
    }
    if (step.norm() <=
        config.step_tolerance * (result.x.norm() + config.step_tolerance)) {
      return finish(SolverStatus::kConverged, StopReason::kStepTolerance);
    }

    const Eigen::VectorXd candidate = system.Plus(result.x, step);
    Eigen::VectorXd candidate_f;
    double nu_k = 0.0;
    double candidate_cost = cost;
    if (candidate.allFinite() && system.Evaluate(candidate, &candidate_f)) {
      candidate_cost = candidate_f.squaredNorm();
      nu_k = (cost - candidate_cost) / predicted;
    }
    const bool accepted = nu_k > config.acceptance_threshold;
    ++result.iterations;
    result.trace.push_back(
        {result.iterations, accepted ? candidate_cost : cost, mu, nu_k,
         accepted});

    if (adaptive) {
      alpha = RhoUpdate(alpha, std::clamp(nu_k, 0.0, 1.0), config);
      alpha = std::max(alpha, config.AlphaMin());
    } else {
      standard_mu = accepted ? standard_mu / 10.0 : standard_mu * 10.0;
    }

    if (accepted) {
      const double relative = (cost - candidate_cost) / cost;
      result.x = candidate;
      f = std::move(candidate_f);
      cost = candidate_cost;
      ++result.accepted_steps;
      if (options.record_iterates) result.iterates.push_back(result.x);
      stall = relative < config.cost_tolerance ? stall + 1 : 0;
      if (stall >= 3) {
        return finish(SolverStatus::kConverged, StopReason::kCostTolerance);
      }
      if (predicted < config.cost_tolerance * cost) {
        return finish(SolverStatus::kConverged, StopReason::kCostTolerance);
      }
    } else if (!adaptive && !(standard_mu <= mu_cap)) {
      return finish(SolverStatus::kDiverged, StopReason::kMuCap);
    }
  }
}

void WriteTraceCsv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "iter,cost,mu,nu,accepted\n";
  const auto precision = out.precision(17);
  for (const TraceRow& row : trace) {
    out << row.iteration << ',' << row.cost << ',' << row.mu << ',' << row.nu
        << ',' << (row.accepted ? 1 : 0) << '\n';
  }
  out.precision(precision);
}

}  // namespace posepipe
