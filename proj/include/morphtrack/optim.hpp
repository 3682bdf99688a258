#pragma once

#include "morphtrack/common.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <string>
#include <vector>

namespace morphtrack {

enum class Algorithm { adaptive_moment, gauss_newton_damped };
enum class GradientMode { analytic, forward_difference_check };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm a);
GradientMode parse_gradient_mode(const std::string& name);
std::string to_string(GradientMode m);

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::adaptive_moment;
  int max_iters = 60;
  double tolerance = 1e-7;            // relative objective decrease
  double step_size = 0.01;            // rotations (radians) and dimensionless blocks
  double translation_step_size = 0.002;  // meters
  double beta_step_size = 0.001;      // shape coefficients
  double final_step_ratio = 0.1;      // cosine decay target, fraction of the initial step
  double damping = 1e-3;              // initial Levenberg-Marquardt damping
  GradientMode gradient_mode = GradientMode::analytic;

  /// Throws ConfigError.
  void validate() const;
};

/// Value and (optionally) gradient.
using Objective = std::function<double(const VectorXd& x, VectorXd* gradient)>;

/// Residual vector and (optionally) its Jacobian; the objective is |r|^2.
using ResidualFunction = std::function<void(const VectorXd& x, VectorXd& residual, Eigen::SparseMatrix<double>* jacobian)>;

struct MinimizeResult {
  VectorXd x;
  double objective = 0.0;
  double initial_objective = 0.0;
  std::vector<double> trace;  // objective after each iteration
  int iterations = 0;
  bool aborted = false;       // non-finite value encountered; x is the last valid iterate
  std::string status;
};

/// Adaptive-moment descent. step_scale (optional, per coordinate) multiplies
/// the configured step. blocks (optional) gives a block id per coordinate;
/// the second-moment estimate is averaged within each block, so a block's
/// step length is scale-free while its direction follows the gradient.
/// Without blocks every coordinate is its own block. The best iterate seen is
/// returned, so the final objective never exceeds the initial one.
MinimizeResult minimize(const Objective& objective, const VectorXd& init, const OptimizerConfig& config,
                        const VectorXd& step_scale = VectorXd(), const std::vector<int>& blocks = {});

/// Levenberg-Marquardt on |r(x)|^2. Steps are accepted only when the true
/// objective decreases, so the trace is monotone non-increasing.
MinimizeResult minimize_least_squares(const ResidualFunction& residuals, const VectorXd& init,
                                      const OptimizerConfig& config);

/// Central differences per coordinate. Throws NumericError on a non-finite probe.
VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double step);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(const VectorXd& analytic, const VectorXd& numeric, double floor = 1e-12);

}  // namespace morphtrack
