#include "morphtrack/optim.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>

namespace morphtrack {

Algorithm parse_algorithm(const std::string& name) {
  if (name == "adaptive-moment") return Algorithm::adaptive_moment;
  if (name == "gauss-newton-damped") return Algorithm::gauss_newton_damped;
  throw ConfigError("unknown optimizer algorithm '" + name + "'");
}

std::string to_string(Algorithm a) {
  return a == Algorithm::adaptive_moment ? "adaptive-moment" : "gauss-newton-damped";
}

GradientMode parse_gradient_mode(const std::string& name) {
  if (name == "analytic") return GradientMode::analytic;
  if (name == "forward-difference-check") return GradientMode::forward_difference_check;
  throw ConfigError("unknown gradient mode '" + name + "'");
}

std::string to_string(GradientMode m) {
  return m == GradientMode::analytic ? "analytic" : "forward-difference-check";
}

void OptimizerConfig::validate() const {
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1, got " + std::to_string(max_iters));
  if (!(tolerance > 0.0) || !std::isfinite(tolerance)) throw ConfigError("tolerance must be positive");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step_size must be positive");
  if (!(translation_step_size > 0.0) || !std::isfinite(translation_step_size)) {
    throw ConfigError("translation_step_size must be positive");
  }
  if (!(beta_step_size > 0.0) || !std::isfinite(beta_step_size)) throw ConfigError("beta_step_size must be positive");
  if (!(final_step_ratio > 0.0 && final_step_ratio <= 1.0)) throw ConfigError("final_step_ratio must lie in (0, 1]");
  if (!(damping > 0.0) || !std::isfinite(damping)) throw ConfigError("damping must be positive");
}

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double step) {
  if (!(step > 0.0)) throw NumericError("finite-difference step must be positive");
  VectorXd g(x.size());
  VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double fp = f(probe);
    probe[i] = x[i] - step;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("non-finite objective at finite-difference probe of coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double relative_error(const VectorXd& analytic, const VectorXd& numeric, double floor) {
  const double denom = std::max({analytic.norm(), numeric.norm(), floor});
  return (analytic - numeric).norm() / denom;
}

namespace {

void check_gradient_at(const Objective& objective, const VectorXd& x) {
  VectorXd g;
  objective(x, &g);
  const VectorXd fd = fd_gradient([&](const VectorXd& p) { return objective(p, nullptr); }, x, 1e-6);
  const double err = relative_error(g, fd, 1e-8);
  if (err > 1e-3) {
    throw NumericError("analytic gradient disagrees with finite differences (relative error " + std::to_string(err) + ")");
  }
}

}  // namespace

MinimizeResult minimize(const Objective& objective, const VectorXd& init, const OptimizerConfig& config,
                        const VectorXd& step_scale, const std::vector<int>& blocks) {
  config.validate();
  if (config.algorithm != Algorithm::adaptive_moment) {
    throw ConfigError("gauss-newton-damped needs a residual formulation; use minimize_least_squares");
  }
  if (step_scale.size() != 0 && step_scale.size() != init.size()) throw DimensionError("step_scale size mismatch");
  if (!blocks.empty() && static_cast<Eigen::Index>(blocks.size()) != init.size()) throw DimensionError("blocks size mismatch");
  int num_blocks = 0;
  for (int b : blocks) {
    if (b < 0) throw DimensionError("negative block id");
    num_blocks = std::max(num_blocks, b + 1);
  }
  VectorXd block_count = VectorXd::Zero(num_blocks);
  for (int b : blocks) block_count[b] += 1.0;

  MinimizeResult res;
  VectorXd x = init;
  VectorXd g;
  double f = objective(x, &g);
  if (!std::isfinite(f) || !g.allFinite()) throw NumericError("objective is not finite at the initial point");
  if (config.gradient_mode == GradientMode::forward_difference_check) check_gradient_at(objective, x);

  res.initial_objective = f;
  res.x = x;
  res.objective = f;
  res.status = "max_iters";

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-12;
  VectorXd m = VectorXd::Zero(x.size());
  VectorXd v = VectorXd::Zero(x.size());
  const VectorXd scale = step_scale.size() == 0 ? VectorXd::Ones(x.size()) : step_scale;
  constexpr int kWindow = 10;
  std::vector<double> changes;
  double f_prev = f;

  for (int it = 0; it < config.max_iters; ++it) {
    if (g.isZero(0.0)) {
      res.status = "zero_gradient";
      break;
    }
    const double progress = config.max_iters > 1 ? static_cast<double>(it) / (config.max_iters - 1) : 0.0;
    const double decay = config.final_step_ratio + (1.0 - config.final_step_ratio) * 0.5 * (1.0 + std::cos(M_PI * progress));
    const double lr = config.step_size * decay;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, it + 1);
    const double c2 = 1.0 - std::pow(beta2, it + 1);
    VectorXd second = v;
    if (!blocks.empty()) {
      VectorXd mean = VectorXd::Zero(num_blocks);
      for (size_t i = 0; i < blocks.size(); ++i) mean[blocks[i]] += v[static_cast<Eigen::Index>(i)];
      mean = mean.cwiseQuotient(block_count.cwiseMax(1.0));
      for (size_t i = 0; i < blocks.size(); ++i) second[static_cast<Eigen::Index>(i)] = mean[blocks[i]];
    }
    const VectorXd step = lr * scale.cwiseProduct((m / c1).cwiseQuotient(((second / c2).cwiseSqrt().array() + eps).matrix()));
    x -= step;

    VectorXd g_new;
    const double f_new = objective(x, &g_new);
    res.iterations = it + 1;
    if (!std::isfinite(f_new) || !g_new.allFinite()) {
      res.aborted = true;
      res.status = "non_finite";
      break;
    }
    f = f_new;
    g = std::move(g_new);
    res.trace.push_back(f);
    if (f < res.objective) {
      res.objective = f;
      res.x = x;
    }
    changes.push_back(std::abs(f - f_prev));
    f_prev = f;
    if (static_cast<int>(changes.size()) >= kWindow) {
      const double worst = *std::max_element(changes.end() - kWindow, changes.end());
      if (worst <= config.tolerance * std::max(std::abs(f), 1e-300)) {
        res.status = "converged";
        break;
      }
    }
  }
  return res;
}

MinimizeResult minimize_least_squares(const ResidualFunction& residuals, const VectorXd& init,
                                      const OptimizerConfig& config) {
  config.validate();
  using Sparse = Eigen::SparseMatrix<double>;
  MinimizeResult res;
  VectorXd x = init;
  VectorXd r;
  Sparse jac;
  residuals(x, r, &jac);
  double f = r.squaredNorm();
  if (!std::isfinite(f)) throw NumericError("objective is not finite at the initial point");
  if (jac.rows() != r.size() || jac.cols() != x.size()) throw DimensionError("Jacobian shape mismatch");
  if (config.gradient_mode == GradientMode::forward_difference_check) {
    const VectorXd g = 2.0 * (jac.transpose() * r);
    const VectorXd fd = fd_gradient(
        [&](const VectorXd& p) {
          VectorXd rp;
          residuals(p, rp, nullptr);
          return rp.squaredNorm();
        },
        x, 1e-6);
    const double err = relative_error(g, fd, 1e-8);
    if (err > 1e-3) {
      throw NumericError("residual Jacobian disagrees with finite differences (relative error " + std::to_string(err) + ")");
    }
  }
  res.initial_objective = f;
  res.status = "max_iters";
  double lambda = config.damping;
  Eigen::SimplicialLDLT<Sparse> solver;

  for (int it = 0; it < config.max_iters; ++it) {
    const Sparse jtj = Sparse(jac.transpose() * jac);
    const VectorXd jtr = jac.transpose() * r;
    if (jtr.isZero(0.0)) {
      res.status = "zero_gradient";
      break;
    }
    const VectorXd diag = jtj.diagonal();
    bool accepted = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Sparse a = jtj;
      for (Eigen::Index i = 0; i < a.rows(); ++i) a.coeffRef(i, i) += lambda * (diag[i] + 1e-9);
      solver.compute(a);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const VectorXd dx = solver.solve(-jtr);
      const VectorXd x_new = x + dx;
      VectorXd r_new;
      residuals(x_new, r_new, nullptr);
      const double f_new = r_new.squaredNorm();
      if (!std::isfinite(f_new)) {
        lambda *= 10.0;
        continue;
      }
      if (f_new < f) {
        const double rel = (f - f_new) / std::max(f, 1e-300);
        x = x_new;
        f = f_new;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel <= config.tolerance) {
          res.status = "converged";
        }
      } else {
        lambda *= 4.0;
      }
    }
    res.iterations = it + 1;
    if (!accepted) {
      res.status = "no_decrease";
      break;
    }
    res.trace.push_back(f);
    if (res.status == "converged") break;
    residuals(x, r, &jac);
  }
  res.x = x;
  res.objective = f;
  return res;
}

}  // namespace morphtrack
