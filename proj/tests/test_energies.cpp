#include "morphtrack/energies.hpp"
#include "morphtrack/optim.hpp"
#include "morphtrack/synth_oracle.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace morphtrack;
using namespace testsupport;

namespace {

Observation one_joint_obs(double u, double v, double w) {
  Observation o;
  o.joints2d.resize(1, 3);
  o.joints2d << u, v, w;
  return o;
}

GmmPrior random_prior(Gen& g, int d, int k) {
  VectorXd w(k);
  std::vector<VectorXd> mu;
  std::vector<MatrixXd> cov;
  for (int j = 0; j < k; ++j) {
    w[j] = g.uniform(0.2, 1.0);
    mu.push_back(g.vec(d, 0.5));
    MatrixXd a(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) a(r, c) = g.normal(0.4);
    cov.push_back(a * a.transpose() + 0.1 * MatrixXd::Identity(d, d));
  }
  w /= w.sum();
  return GmmPrior(w, mu, cov);
}

}  // namespace

TEST_CASE("e_joint examples") {
  Points3d j(1, 3);
  j << 0, 0, 1;
  Observation o = one_joint_obs(250, 250, 1.0);
  const JointMapping map = identity_mapping(1);
  CHECK(e_joint(j, o, map, 100.0).value == 0.0);
  o.joints2d(0, 0) = 350;
  CHECK(e_joint(j, o, map, 100.0).value == doctest::Approx(0.5).epsilon(1e-15));
  o.joints2d(0, 2) = 0.0;
  CHECK(e_joint(j, o, map, 100.0).value == 0.0);
}

TEST_CASE("e_joint skips and counts joints behind the camera") {
  Points3d j(2, 3);
  j << 0, 0, 1, 0, 0, -1;
  Observation o;
  o.joints2d.resize(2, 3);
  o.joints2d << 300, 250, 1, 10, 10, 1;
  const JointEnergy e = e_joint(j, o, identity_mapping(2), 100.0, true);
  CHECK(e.skipped == 1);
  CHECK(e.value == doctest::Approx(2500.0 / 12500.0));
  CHECK(e.gradient.row(1).norm() == 0.0);
}

TEST_CASE("Geman-McClure is bounded and monotone") {
  Gen g(1);
  for (int t = 0; t < 1000; ++t) {
    const double s = g.uniform(0.1, 200.0);
    const double a = std::abs(g.normal(300.0)), b = a + std::abs(g.normal(10.0));
    CHECK(geman_mcclure(a, s) >= 0.0);
    CHECK(geman_mcclure(b, s) < 1.0);
    CHECK(geman_mcclure(b, s) >= geman_mcclure(a, s));
  }
}

TEST_CASE("e_sil examples") {
  SilhouetteImage ones(3, 2, 1.0), zeros(3, 2, 0.0);
  CHECK(e_sil(ones, ones) == 0.0);
  CHECK(e_sil(ones, zeros) == 1.0);
  SilhouetteImage r(2, 1), o(2, 1);
  r(0, 0) = 0.5;
  o(0, 0) = 1.0;
  CHECK(e_sil(r, o) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK_THROWS_AS(e_sil(SilhouetteImage(2, 2), SilhouetteImage(2, 3)), DimensionError);
}

TEST_CASE("e_prior closed form, degenerate mixture and direct oracle") {
  const GmmPrior one(VectorXd::Ones(1), {VectorXd::Zero(1)}, {MatrixXd::Identity(1, 1)});
  VectorXd theta = VectorXd::Zero(4);
  CHECK(e_prior(theta, one) == doctest::Approx(0.5 * std::log(2.0 * M_PI)).epsilon(1e-14));
  const GmmPrior two(VectorXd::Constant(2, 0.5), {VectorXd::Zero(1), VectorXd::Zero(1)},
                     {MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)});
  for (double x : {-2.0, 0.0, 0.7}) {
    theta[3] = x;
    CHECK(e_prior(theta, two) == doctest::Approx(e_prior(theta, one)).epsilon(1e-14));
  }
  Gen g(2);
  for (int t = 0; t < 30; ++t) {
    const GmmPrior p = random_prior(g, 5, 3);
    const VectorXd th = g.vec(8, 0.5);
    CHECK(e_prior(th, p) == doctest::Approx(-std::log(direct_gmm_density(p, th.tail(5)))).epsilon(1e-9));
  }
}

TEST_CASE("e_prior stays finite far from every component") {
  Gen g(3);
  const GmmPrior p = random_prior(g, 4, 2);
  VectorXd th = VectorXd::Constant(7, 50.0);
  VectorXd grad;
  const double v = e_prior(th, p, &grad);
  CHECK(std::isfinite(v));
  CHECK(grad.allFinite());
  CHECK(grad.head<3>().norm() == 0.0);
}

TEST_CASE("GMM invariants are enforced") {
  CHECK_THROWS_AS(GmmPrior(VectorXd::Constant(2, 0.4), {VectorXd::Zero(1), VectorXd::Zero(1)},
                           {MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)}),
                  InvariantError);
  CHECK_THROWS_AS(GmmPrior(VectorXd::Ones(1), {VectorXd::Zero(2)}, {MatrixXd::Zero(2, 2)}), InvariantError);
}

TEST_CASE("GMM fit recovers well-separated clusters") {
  Gen g(4);
  MatrixXd samples(600, 2);
  for (int i = 0; i < 600; ++i) {
    const double cx = i % 2 == 0 ? -3.0 : 3.0;
    samples.row(i) << cx + g.normal(0.5), g.normal(0.5);
  }
  const GmmPrior p = GmmPrior::fit(samples, 2);
  REQUIRE(p.num_components() == 2);
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(std::abs(p.means()[static_cast<size_t>(j)][0]) - 3.0) < 0.2);
    CHECK(p.weights()[j] == doctest::Approx(0.5).epsilon(0.1));
    CHECK(p.covariances()[static_cast<size_t>(j)](0, 0) == doctest::Approx(0.25).epsilon(0.25));
  }
  const GmmPrior again = GmmPrior::fit(samples, 2);
  CHECK(again.means()[0] == p.means()[0]);
}

TEST_CASE("e_stab examples and joint-wise oracle") {
  Points3d a = Points3d::Zero(4, 3);
  CHECK(e_stab(a, a) == 0.0);
  Points3d b = a;
  b(2, 0) = 1.0;
  CHECK(e_stab(b, a) == 1.0);
  Gen g(5);
  const BodyModel m = make_toy_body().model;
  for (int t = 0; t < 10; ++t) {
    BodyParams p = BodyParams::zero(m), q = BodyParams::zero(m);
    p.theta = g.vec(p.theta.size(), 0.3);
    q.theta = g.vec(q.theta.size(), 0.3);
    p.trans = Vector3d(g.normal(), g.normal(), 3.0);
    const Points3d jp = joints3d(m, p), jq = joints3d(m, q);
    double oracle = 0.0;
    for (int j = 0; j < m.num_joints(); ++j)
      for (int c = 0; c < 3; ++c) oracle += (jp(j, c) - jq(j, c)) * (jp(j, c) - jq(j, c));
    CHECK(e_stab(m, p, q) == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("e_chamfer examples, brute-force oracle, symmetry and rigid invariance") {
  Points3d a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 1, 0, 0;
  CHECK(e_chamfer(a, b) == 2.0);
  Gen g(6);
  const Points3d p = g.points(50, 1.0), q = g.points(60, 1.0);
  CHECK(e_chamfer(p, p) == 0.0);
  CHECK(e_chamfer(p, q) == brute_chamfer(p, q));
  CHECK(e_chamfer(p, q) == doctest::Approx(e_chamfer(q, p)).epsilon(1e-12));
  const Matrix3d r = rodrigues<double>(Vector3d(0.3, -1.2, 0.5));
  const Eigen::RowVector3d t(1, 2, 3);
  const Points3d pr = (p * r.transpose()).rowwise() + t, qr = (q * r.transpose()).rowwise() + t;
  CHECK(std::abs(e_chamfer(pr, qr) - e_chamfer(p, q)) < 1e-9);
  CHECK_THROWS_AS(e_chamfer(Points3d(0, 3), q), InvariantError);
}

TEST_CASE("k-d tree nearest equals exhaustive search including ties") {
  Gen g(7);
  for (int t = 0; t < 20; ++t) {
    Points3d pts(200, 3);
    for (int i = 0; i < 200; ++i)
      for (int c = 0; c < 3; ++c) pts(i, c) = g.integer(0, 4);  // many duplicates and ties
    const KdTree3 tree(pts);
    for (int q = 0; q < 50; ++q) {
      const Vector3d x(g.integer(-1, 5), g.integer(-1, 5), g.integer(-1, 5));
      int best = -1;
      double bd = 1e300;
      Points3d xq(1, 3);
      xq.row(0) = x.transpose();
      for (int i = 0; i < 200; ++i) {
        const double d = squared_distance(xq, 0, pts, i);
        if (d < bd) {
          bd = d;
          best = i;
        }
      }
      const auto [idx, d2] = tree.nearest(x);
      CHECK(idx == best);
      CHECK(d2 == bd);
    }
  }
}

TEST_CASE("e_lap examples") {
  const UniformLaplacian path({{1}, {0, 2}, {1}});
  Points3d d = Points3d::Zero(3, 3);
  CHECK(e_lap(path, d) == 0.0);
  d(1, 0) = 1.0;
  CHECK(e_lap(path, d) == 3.0);
  Points3d c(3, 3);
  c.rowwise() = Eigen::RowVector3d(0.4, -1, 2);
  CHECK(e_lap(path, c) == doctest::Approx(0.0).epsilon(1e-15));
  const UniformLaplacian with_isolated({{1}, {0}, {}});
  CHECK(with_isolated.isolated() == std::vector<int>{2});
}

TEST_CASE("e_offset examples") {
  Points3d d = Points3d::Zero(4, 3);
  CHECK(e_offset(d) == 0.0);
  d.row(2) << 0, 3, 4;
  CHECK(e_offset(d) == 25.0);
  Gen g(8);
  const Points3d r = g.points(30, 1.0);
  double s = 0.0;
  for (int i = 0; i < 30; ++i)
    for (int c = 0; c < 3; ++c) s += r(i, c) * r(i, c);
  CHECK(e_offset(r) == doctest::Approx(s).epsilon(1e-14));
}

TEST_CASE("energy weights validation") {
  EnergyWeights w;
  CHECK_NOTHROW(w.validate());
  w.lambda_arap = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = EnergyWeights();
  w.gm_sigma = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("observation confidence range is validated") {
  Observation o = one_joint_obs(1, 2, 1.3);
  CHECK_THROWS(o.validate());
}
