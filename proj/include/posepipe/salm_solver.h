#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace posepipe {

enum class DampingMode {
  // mu_k = alpha_k * ||f(x_k)||^lambda with alpha driven by the trust ratio.
  kSelfAdaptive,
  // Classic Levenberg-Marquardt: mu scaled by 1/10 on acceptance, 10 on
  // rejection.
  kStandard,
};

struct SolverConfig {
  DampingMode mode = DampingMode::kSelfAdaptive;
  double lambda = 1.0;
  double nu = 0.25;
  double xi = 1e-8;
  double alpha0 = 1e-4;
  // Problem-size exponent base; the caller sets it to the block size.
  int eta = 2;
  // Trial steps are accepted iff the trust ratio exceeds this.
  double acceptance_threshold = 1e-4;
  int max_iterations = 100;
  // Stop when ||J^T f|| falls below this.
  double gradient_tolerance = 1e-10;
  // Stop when three consecutive accepted steps each reduce the cost by less
  // than this fraction, or when the model predicts less than this fraction.
  double cost_tolerance = 1e-10;
  // Stop when ||d|| <= step_tolerance * (||x|| + step_tolerance).
  double step_tolerance = 1e-12;
  // Cap on mu, as a multiple of alpha0; exceeding it means divergence.
  double mu_cap_factor = 1e12;
  // Initial mu of the standard mode, relative to max diag(J^T J).
  double standard_tau = 1e-4;

  double MuCap() const { return mu_cap_factor * alpha0; }
  // Lower bound kept on alpha between iterations.
  double AlphaMin() const { return xi * alpha0; }
  void Validate() const;
};

// alpha update from the trust ratio nu_k (expected in [0, 1]).
double RhoUpdate(double alpha, double nu_k, const SolverConfig& config);

// Gauss-Newton model of a residual system at one point.
class Linearization {
 public:
  virtual ~Linearization() = default;
  // J^T f.
  virtual Eigen::VectorXd Gradient() const = 0;
  virtual double MaxHessianDiagonal() const = 0;
  // Solves (J^T J + mu I) d = -J^T f. Returns false on numerical failure.
  virtual bool SolveDamped(double mu, Eigen::VectorXd* step) = 0;
  // ||f + J d||^2.
  virtual double ModelCost(const Eigen::VectorXd& step) const = 0;
};

class ResidualSystem {
 public:
  virtual ~ResidualSystem() = default;
  virtual int NumResiduals() const = 0;
  // Dimension of the update d; the state x may be larger.
  virtual int TangentDim() const = 0;
  // Residuals at x; false when x lies outside the domain.
  virtual bool Evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* f) const = 0;
  virtual std::unique_ptr<Linearization> Linearize(
      const Eigen::VectorXd& x, const Eigen::VectorXd& f) const = 0;
  virtual Eigen::VectorXd Plus(const Eigen::VectorXd& x,
                               const Eigen::VectorXd& step) const {
    return x + step;
  }
};

// Dense linearization backed by an SVD of J.
class DenseLinearization : public Linearization {
 public:
  DenseLinearization(Eigen::MatrixXd jacobian, Eigen::VectorXd residuals);
  Eigen::VectorXd Gradient() const override;
  double MaxHessianDiagonal() const override;
  bool SolveDamped(double mu, Eigen::VectorXd* step) override;
  double ModelCost(const Eigen::VectorXd& step) const override;
  const Eigen::MatrixXd& jacobian() const { return jacobian_; }

 private:
  Eigen::MatrixXd jacobian_;
  Eigen::VectorXd residuals_;
  Eigen::MatrixXd v_;
  Eigen::VectorXd singular_values_;
  Eigen::VectorXd projected_residuals_;
  bool factored_ = false;
};

// Euclidean system given by residual and Jacobian callbacks.
class DenseSystem : public ResidualSystem {
 public:
  using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

  DenseSystem(int num_residuals, int num_parameters, ResidualFn residual,
              JacobianFn jacobian);
  int NumResiduals() const override { return num_residuals_; }
  int TangentDim() const override { return num_parameters_; }
  bool Evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* f) const override;
  std::unique_ptr<Linearization> Linearize(
      const Eigen::VectorXd& x, const Eigen::VectorXd& f) const override;

 private:
  int num_residuals_;
  int num_parameters_;
  ResidualFn residual_;
  JacobianFn jacobian_;
};

enum class SolverStatus {
  kConverged,
  kMaxIterations,
  kDiverged,
};

enum class StopReason {
  kZeroResidual,
  kGradientTolerance,
  kCostTolerance,
  kStepTolerance,
  kNoPredictedDecrease,
  kMaxIterations,
  kMuCap,
};

std::string_view StopReasonName(StopReason reason);

struct TraceRow {
  int iteration = 0;
  double cost = 0.0;
  double mu = 0.0;
  double nu = 0.0;
  bool accepted = false;
};

struct SolverResult {
  Eigen::VectorXd x;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  SolverStatus status = SolverStatus::kConverged;
  StopReason reason = StopReason::kZeroResidual;
  std::vector<TraceRow> trace;
  // Accepted iterates, starting with x0.
  std::vector<Eigen::VectorXd> iterates;

  bool ok() const { return status != SolverStatus::kDiverged; }
};

struct SolveOptions {
  bool record_iterates = false;
};

// Throws kNonFiniteResidual when x0 cannot be evaluated.
SolverResult Solve(const ResidualSystem& system, const Eigen::VectorXd& x0,
                   const SolverConfig& config, SolveOptions options = {});

// Writes "iter,cost,mu,nu,accepted" rows.
void WriteTraceCsv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace posepipe
