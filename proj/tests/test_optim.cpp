#include "morphtrack/optim.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace morphtrack;
using namespace testsupport;

namespace {

Objective quadratic(const Vector2d& c) {
  return [c](const VectorXd& x, VectorXd* g) {
    if (g) *g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
}

double rosenbrock(const VectorXd& x) {
  return (1 - x[0]) * (1 - x[0]) + 100 * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]);
}

}  // namespace

TEST_CASE("quadratic converges to its center") {
  OptimizerConfig c;
  c.max_iters = 5000;
  c.step_size = 0.05;
  c.final_step_ratio = 0.001;
  c.tolerance = 1e-30;
  const MinimizeResult r = minimize(quadratic(Vector2d(1, 2)), VectorXd::Zero(2), c);
  CHECK((r.x - Vector2d(1, 2)).norm() < 1e-6);
  CHECK(r.objective <= r.initial_objective);
}

TEST_CASE("Rosenbrock from (-1.2, 1)") {
  const VectorXd init = Vector2d(-1.2, 1.0);
  SUBCASE("adaptive moment") {
    OptimizerConfig c;
    c.max_iters = 5000;
    c.step_size = 0.02;
    c.final_step_ratio = 0.01;
    c.tolerance = 1e-30;
    const MinimizeResult r = minimize(
        [](const VectorXd& x, VectorXd* g) {
          if (g) {
            g->resize(2);
            (*g)[0] = -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] * x[0]);
            (*g)[1] = 200 * (x[1] - x[0] * x[0]);
          }
          return rosenbrock(x);
        },
        init, c);
    CHECK(r.objective < 1e-4);
    CHECK(r.iterations <= 5000);
  }
  SUBCASE("damped Gauss-Newton") {
    OptimizerConfig c;
    c.algorithm = Algorithm::gauss_newton_damped;
    c.max_iters = 5000;
    c.tolerance = 1e-30;
    const MinimizeResult r = minimize_least_squares(
        [](const VectorXd& x, VectorXd& res, Eigen::SparseMatrix<double>* jac) {
          res.resize(2);
          res << 1 - x[0], 10 * (x[1] - x[0] * x[0]);
          if (jac) {
            jac->resize(2, 2);
            jac->setZero();
            jac->insert(0, 0) = -1;
            jac->insert(1, 0) = -20 * x[0];
            jac->insert(1, 1) = 10;
          }
        },
        init, c);
    CHECK(r.objective < 1e-4);
    for (size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
  }
}

TEST_CASE("best iterate is returned and never exceeds the initial objective") {
  Gen g(2);
  for (int t = 0; t < 30; ++t) {
    OptimizerConfig c;
    c.max_iters = g.integer(1, 40);
    c.step_size = g.uniform(0.01, 5.0);  // deliberately too large sometimes
    const VectorXd init = g.vec(2, 2.0);
    const MinimizeResult r = minimize(
        [](const VectorXd& x, VectorXd* grad) {
          if (grad) {
            grad->resize(2);
            (*grad)[0] = -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] * x[0]);
            (*grad)[1] = 200 * (x[1] - x[0] * x[0]);
          }
          return rosenbrock(x);
        },
        init, c);
    CHECK(r.objective <= r.initial_objective);
    CHECK(r.objective == rosenbrock(r.x));
    CHECK(static_cast<int>(r.trace.size()) <= c.max_iters);
  }
}

TEST_CASE("invalid configs are rejected") {
  OptimizerConfig c;
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(minimize(quadratic(Vector2d(1, 2)), VectorXd::Zero(2), c), ConfigError);
  c = OptimizerConfig();
  c.tolerance = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_algorithm("sgd"), ConfigError);
  CHECK(parse_algorithm(to_string(Algorithm::gauss_newton_damped)) == Algorithm::gauss_newton_damped);
}

TEST_CASE("non-finite objective mid-run aborts with the last valid iterate") {
  OptimizerConfig c;
  c.max_iters = 100;
  c.step_size = 0.1;
  const MinimizeResult r = minimize(
      [](const VectorXd& x, VectorXd* g) {
        if (g) *g = VectorXd::Constant(1, -1.0);
        return x[0] > 0.35 ? std::numeric_limits<double>::quiet_NaN() : -x[0];
      },
      VectorXd::Zero(1), c);
  CHECK(r.aborted);
  CHECK(r.x[0] <= 0.35);
  CHECK(std::isfinite(r.objective));
}

TEST_CASE("non-finite objective at init is an error") {
  OptimizerConfig c;
  CHECK_THROWS_AS(minimize([](const VectorXd&, VectorXd*) { return std::numeric_limits<double>::infinity(); },
                           VectorXd::Zero(1), c),
                  NumericError);
}

TEST_CASE("tolerance stops early") {
  OptimizerConfig c;
  c.max_iters = 10000;
  c.tolerance = 1e-3;
  const MinimizeResult r = minimize(quadratic(Vector2d(1, 2)), VectorXd::Zero(2), c);
  CHECK(r.iterations < 10000);
}

TEST_CASE("minimization is deterministic") {
  OptimizerConfig c;
  c.max_iters = 200;
  const MinimizeResult a = minimize(quadratic(Vector2d(0.3, -2)), Vector2d(4, 4), c);
  const MinimizeResult b = minimize(quadratic(Vector2d(0.3, -2)), Vector2d(4, 4), c);
  CHECK(a.x == b.x);
  CHECK(a.trace == b.trace);
}

TEST_CASE("central differences are exact on quadratics and relative error is scale-free") {
  Gen g(3);
  for (int t = 0; t < 20; ++t) {
    const VectorXd c = g.vec(4, 1.0), x = g.vec(4, 1.0);
    const VectorXd fd = fd_gradient([&](const VectorXd& y) { return (y - c).squaredNorm(); }, x, 1e-3);
    CHECK(relative_error(2.0 * (x - c), fd) < 1e-9);
  }
  const VectorXd a = Vector2d(1, 0), b = Vector2d(1.01, 0);
  CHECK(relative_error(a, b) == doctest::Approx(relative_error(1e6 * a, 1e6 * b)));
  CHECK(relative_error(VectorXd::Zero(2), VectorXd::Zero(2)) == 0.0);
  CHECK_THROWS_AS(fd_gradient([](const VectorXd&) { return std::nan(""); }, VectorXd::Zero(1), 1e-3), NumericError);
}
