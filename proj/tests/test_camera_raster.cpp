#include "morphtrack/camera_raster.hpp"
#include "morphtrack/optim.hpp"
#include "morphtrack/synth_oracle.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace morphtrack;
using namespace testsupport;

namespace {

Camera cam500() { return Camera{}; }

Camera small(int size, double f) {
  Camera c;
  c.width = c.height = size;
  c.fx = c.fy = f;
  c.cx = c.cy = 0.5 * size;
  return c;
}

}  // namespace

TEST_CASE("projection examples") {
  Points3d p(2, 3);
  p << 0, 0, 1, 1, 0, 2;
  const Points2d uv = project(cam500(), p);
  CHECK(uv(0, 0) == 250.0);
  CHECK(uv(0, 1) == 250.0);
  CHECK(uv(1, 0) == 500.0);

  Points3d bad(3, 3);
  bad << 0, 0, 1, 0, 0, 2, 1, 1, 0;
  try {
    project(cam500(), bad);
    FAIL("expected a depth error");
  } catch (const DepthError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("projection is scale covariant") {
  Gen g(1);
  for (int t = 0; t < 50; ++t) {
    Points3d p = g.points(5, 1.0);
    p.col(2).array() = p.col(2).array().abs() + 0.5;
    const double s = g.uniform(0.1, 10.0);
    CHECK((project(cam500(), p) - project(cam500(), Points3d(s * p))).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("camera and silhouette invariants") {
  Camera c;
  c.fx = 0.0;
  CHECK_THROWS_AS(c.validate(), InvariantError);
  SilhouetteImage s(4, 3, 0.5);
  s(1, 2) = 1.5;
  CHECK_THROWS_AS(s.validate(), InvariantError);
}

TEST_CASE("empty mesh renders all zeros") {
  const SilhouetteImage s = soft_silhouette(small(16, 20), Points3d(0, 3), Faces(0, 3), 1.0);
  CHECK(s.width() == 16);
  CHECK(s.pixels().maxCoeff() == 0.0);
}

TEST_CASE("large frame-covering triangle at small tau matches the hard rasterizer") {
  const Camera cam = small(32, 32.0);
  Points3d v(3, 3);
  v << -0.4, -0.45, 1, 0.45, -0.45, 1, -0.45, 0.4, 1;
  Faces f(1, 3);
  f << 0, 1, 2;
  const SilhouetteImage soft = soft_silhouette(cam, v, f, 0.05);
  const SilhouetteImage hard = hard_rasterize(cam, v, f);
  const Points2d uv = project(cam, v);
  const Vector2d a = uv.row(0).transpose(), b = uv.row(1).transpose(), c = uv.row(2).transpose();
  int interior = 0, exterior = 0;
  for (int r = 0; r < 32; ++r)
    for (int col = 0; col < 32; ++col) {
      const double sd = triangle_signed_distance(Vector2d(col + 0.5, r + 0.5), a, b, c);
      if (hard(r, col) > 0.5) {
        if (sd > 0.25) {
          CHECK(soft(r, col) >= 0.99);
          ++interior;
        }
      } else if (sd < -0.25) {
        CHECK(soft(r, col) <= 0.01);
        ++exterior;
      }
    }
  CHECK(soft(31, 31) <= 0.01);
  CHECK(interior > 100);
  CHECK(exterior > 100);
}

TEST_CASE("pixel on a triangle edge has occupancy one half") {
  const Camera cam = small(10, 10.0);
  // edge along the pixel-center column u = 5.5 at z = 1
  const double x = (5.5 - cam.cx) / cam.fx;
  Points3d v(3, 3);
  v << x, -0.4, 1, x, 0.4, 1, x - 0.3, 0.0, 1;
  Faces f(1, 3);
  f << 0, 1, 2;
  const SilhouetteImage s = soft_silhouette(cam, v, f, 1.0);
  CHECK(s(5, 5) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("adding a triangle never decreases occupancy") {
  Gen g(3);
  const Camera cam = small(24, 30.0);
  for (int t = 0; t < 20; ++t) {
    Points3d v = g.points(9, 0.3);
    v.col(2).array() += 2.0;
    Faces f(3, 3);
    f << 0, 1, 2, 3, 4, 5, 6, 7, 8;
    const double tau = g.uniform(0.3, 2.0);
    const SilhouetteImage two = soft_silhouette(cam, v, f.topRows(2), tau);
    const SilhouetteImage three = soft_silhouette(cam, v, f, tau);
    CHECK(((three.pixels() - two.pixels()).minCoeff()) >= 0.0);
  }
}

TEST_CASE("triangles behind the camera are skipped") {
  const Camera cam = small(16, 16.0);
  Points3d v(3, 3);
  v << -1, -1, -1, 1, -1, 1, 0, 1, 1;
  Faces f(1, 3);
  f << 0, 1, 2;
  CHECK(soft_silhouette(cam, v, f, 1.0).pixels().maxCoeff() == 0.0);
}

// Distance from p to the nearest projected triangle edge, any triangle.
double edge_distance(const Points2d& uv, const Faces& f, const Vector2d& p) {
  double best = 1e300;
  for (Eigen::Index t = 0; t < f.rows(); ++t)
    for (int e = 0; e < 3; ++e) {
      const Vector2d a = uv.row(f(t, e)).transpose(), b = uv.row(f(t, (e + 1) % 3)).transpose();
      const double h = std::clamp((p - a).dot(b - a) / std::max((b - a).squaredNorm(), 1e-300), 0.0, 1.0);
      best = std::min(best, (p - a - h * (b - a)).norm());
    }
  return best;
}

// Max |soft - hard| over pixels at least `band` px from every triangle edge.
std::pair<double, int> non_edge_deviation(const Camera& cam, const Points3d& v, const Faces& f, double tau, double band) {
  const SilhouetteImage soft = soft_silhouette(cam, v, f, tau);
  const SilhouetteImage hard = hard_rasterize(cam, v, f);
  const Points2d uv = project(cam, v);
  double worst = 0.0;
  int n = 0;
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      if (edge_distance(uv, f, Vector2d(c + 0.5, r + 0.5)) < band) continue;
      worst = std::max(worst, std::abs(soft(r, c) - hard(r, c)));
      ++n;
    }
  return {worst, n};
}

TEST_CASE("soft silhouette matches hard rasterization away from edges at tau 0.25") {
  ToyBodyOptions o;
  const ToyBody body = make_toy_body(o);
  const Camera cam = toy_camera(o, 1.0, 64);
  BodyParams p = BodyParams::zero(body.model);
  p.trans = Vector3d(0, 0, 1);
  const Points3d v = skin(body.model, p, body.model.rest_vertices());
  const auto [worst, n] = non_edge_deviation(cam, v, body.model.faces(), 0.25, 2.0);
  CHECK(n > 1000);
  CHECK(worst < 0.01);

  Gen g(2);
  const Camera c32 = small(32, 32.0);
  for (int t = 0; t < 10; ++t) {
    Points3d tv = g.points(9, 0.5);
    tv.col(2).setOnes();
    Faces f(3, 3);
    f << 0, 1, 2, 3, 4, 5, 6, 7, 8;
    const auto [w, m] = non_edge_deviation(c32, tv, f, 0.25, 2.0);
    CHECK(m > 0);
    CHECK(w < 0.01);
  }
}

TEST_CASE("mean silhouette gradient matches central differences") {
  Gen g(4);
  const ToyBody arm = make_toy_arm(4, 2, 0.25);
  const Camera cam = small(32, 48.0);
  for (int t = 0; t < 5; ++t) {
    BodyParams p = BodyParams::zero(arm.model);
    p.theta = g.vec(p.theta.size(), 0.3);
    p.trans = Vector3d(-1.0, 0.0, 5.0);
    const Points3d v = skin(arm.model, p, arm.model.rest_vertices());
    const double tau = g.uniform(1.0, 2.0);
    const SoftRender r = render_soft_silhouette(cam, v, arm.model.faces(), tau);
    const ImageArray d = ImageArray::Constant(32, 32, 1.0 / (32 * 32));
    const Points3d grad = soft_silhouette_backward(cam, v, arm.model.faces(), r, d);
    const VectorXd fd = fd_gradient(
        [&](const VectorXd& x) {
          const Points3d pv = Eigen::Map<const Points3d>(x.data(), v.rows(), 3);
          return soft_silhouette(cam, pv, arm.model.faces(), tau).pixels().mean();
        },
        flatten(v), 1e-3);
    CHECK(relative_error(flatten(grad), fd) < 5e-3);
  }
}

TEST_CASE("erosion and dilation with a disc") {
  SilhouetteImage s(11, 11, 0.0);
  for (int r = 3; r <= 7; ++r)
    for (int c = 3; c <= 7; ++c) s(r, c) = 1.0;
  const SilhouetteImage e = morph_disc(s, 1);
  CHECK(e.count_above() == 9);
  const SilhouetteImage d = morph_disc(s, -1);
  CHECK(d.count_above() == 25 + 4 * 5);
  CHECK(morph_disc(s, 0).pixels().isApprox(s.pixels()));
}
