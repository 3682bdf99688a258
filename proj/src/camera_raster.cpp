#include "morphtrack/camera_raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace morphtrack {

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvariantError("camera focal lengths must be positive");
  if (width < 1 || height < 1) throw InvariantError("camera image size must be at least 1x1");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw InvariantError("camera principal point must be finite");
}

void SilhouetteImage::validate() const {
  if (pixels_.size() == 0) return;
  if (!pixels_.allFinite() || pixels_.minCoeff() < 0.0 || pixels_.maxCoeff() > 1.0) {
    throw InvariantError("silhouette pixels must lie in [0, 1]");
  }
}

Points2d project(const Camera& cam, const Points3d& points) {
  Points2d out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vector3d p = points.row(i).transpose();
    if (!(p.z() > 0.0)) {
      throw DepthError(static_cast<int>(i), "point " + std::to_string(i) + " has non-positive depth " + std::to_string(p.z()));
    }
    out.row(i) = project_point<double>(cam, p).transpose();
  }
  return out;
}

namespace {

constexpr double kNearPlane = 1e-9;

struct PreparedTriangle {
  int index[3];
  Vector2d v[3];
  Vector2d edge[3];
  Vector2d inward[3];
  double inv_len2[3];
  bool degenerate;
  int col0, col1, row0, row1;
};

double cross2(const Vector2d& a, const Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

bool prepare(const Camera& cam, const Points3d& vertices, const Faces& faces, Eigen::Index f, double margin,
             PreparedTriangle& t) {
  for (int k = 0; k < 3; ++k) {
    t.index[k] = faces(f, k);
    const Vector3d p = vertices.row(t.index[k]).transpose();
    if (!(p.z() > kNearPlane)) return false;
    t.v[k] = project_point<double>(cam, p);
  }
  const double area2 = cross2(t.v[1] - t.v[0], t.v[2] - t.v[0]);
  t.degenerate = !(std::abs(area2) > 0.0);
  for (int e = 0; e < 3; ++e) {
    t.edge[e] = t.v[(e + 1) % 3] - t.v[e];
    const double len2 = t.edge[e].squaredNorm();
    t.inv_len2[e] = len2 > 0.0 ? 1.0 / len2 : 0.0;
    Vector2d n(-t.edge[e].y(), t.edge[e].x());
    const double len = std::sqrt(len2);
    if (len > 0.0) n /= len;
    if (area2 < 0.0) n = -n;
    t.inward[e] = n;
  }
  const double minx = std::min({t.v[0].x(), t.v[1].x(), t.v[2].x()}) - margin;
  const double maxx = std::max({t.v[0].x(), t.v[1].x(), t.v[2].x()}) + margin;
  const double miny = std::min({t.v[0].y(), t.v[1].y(), t.v[2].y()}) - margin;
  const double maxy = std::max({t.v[0].y(), t.v[1].y(), t.v[2].y()}) + margin;
  if (!std::isfinite(minx) || !std::isfinite(maxx) || !std::isfinite(miny) || !std::isfinite(maxy)) return false;
  t.col0 = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
  t.col1 = std::min(cam.width - 1, static_cast<int>(std::floor(maxx - 0.5)));
  t.row0 = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
  t.row1 = std::min(cam.height - 1, static_cast<int>(std::floor(maxy - 0.5)));
  return t.col0 <= t.col1 && t.row0 <= t.row1;
}

// Signed boundary distance; when grad is given, also ds/d(v0, v1, v2).
double signed_distance(const PreparedTriangle& t, const Vector2d& p, Vector2d* grad) {
  if (!t.degenerate) {
    double line[3];
    bool inside = true;
    for (int e = 0; e < 3; ++e) {
      line[e] = t.inward[e].dot(p - t.v[e]);
      if (line[e] < 0.0) inside = false;
    }
    if (inside) {
      int best = 0;
      if (line[1] < line[best]) best = 1;
      if (line[2] < line[best]) best = 2;
      if (grad != nullptr) {
        const double s = std::clamp((p - t.v[best]).dot(t.edge[best]) * t.inv_len2[best], 0.0, 1.0);
        grad[0].setZero();
        grad[1].setZero();
        grad[2].setZero();
        grad[best] = -(1.0 - s) * t.inward[best];
        grad[(best + 1) % 3] = -s * t.inward[best];
      }
      return line[best];
    }
  }
  double best_d2 = std::numeric_limits<double>::infinity();
  int best = 0;
  double best_s = 0.0;
  Vector2d best_diff = Vector2d::Zero();
  for (int e = 0; e < 3; ++e) {
    const Vector2d ap = p - t.v[e];
    const double s = std::clamp(ap.dot(t.edge[e]) * t.inv_len2[e], 0.0, 1.0);
    const Vector2d diff = ap - s * t.edge[e];
    const double d2 = diff.squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = e;
      best_s = s;
      best_diff = diff;
    }
  }
  const double d = std::sqrt(best_d2);
  if (grad != nullptr) {
    Vector2d n = d > 0.0 ? Vector2d(best_diff / d) : Vector2d(-t.inward[best]);
    if (t.degenerate && d == 0.0) n.setZero();
    grad[0].setZero();
    grad[1].setZero();
    grad[2].setZero();
    grad[best] = (1.0 - best_s) * n;
    grad[(best + 1) % 3] = best_s * n;
  }
  return -d;
}

double complement_logistic(double x) { return 1.0 / (1.0 + std::exp(x)); }

std::vector<PreparedTriangle> prepare_all(const Camera& cam, const Points3d& vertices, const Faces& faces, double tau) {
  const double margin = soft_raster_margin(tau);
  std::vector<PreparedTriangle> tris;
  tris.reserve(static_cast<size_t>(faces.rows()));
  PreparedTriangle t;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    if (prepare(cam, vertices, faces, f, margin, t)) tris.push_back(t);
  }
  return tris;
}

}  // namespace

double triangle_signed_distance(const Vector2d& p, const Vector2d& a, const Vector2d& b, const Vector2d& c) {
  Camera cam;
  cam.fx = cam.fy = 1.0;
  cam.cx = cam.cy = 0.0;
  Points3d v(3, 3);
  v << a.x(), a.y(), 1.0, b.x(), b.y(), 1.0, c.x(), c.y(), 1.0;
  Faces f(1, 3);
  f << 0, 1, 2;
  PreparedTriangle t;
  cam.width = cam.height = 1;
  prepare(cam, v, f, 0, 0.0, t);
  return signed_distance(t, p, nullptr);
}

SoftRender render_soft_silhouette(const Camera& cam, const Points3d& vertices, const Faces& faces, double tau) {
  cam.validate();
  if (!(tau > 0.0)) throw InvariantError("rasterizer sharpness tau must be positive");
  SoftRender out;
  out.tau = tau;
  out.background = ImageArray::Ones(cam.height, cam.width);
  const auto tris = prepare_all(cam, vertices, faces, tau);
  const double inv_tau = 1.0 / tau;

  parallel_chunks(cam.height, [&](int row_begin, int row_end, int) {
    for (const auto& t : tris) {
      const int r0 = std::max(t.row0, row_begin);
      const int r1 = std::min(t.row1, row_end - 1);
      for (int r = r0; r <= r1; ++r) {
        const double py = r + 0.5;
        for (int c = t.col0; c <= t.col1; ++c) {
          const double s = signed_distance(t, Vector2d(c + 0.5, py), nullptr);
          out.background(r, c) *= complement_logistic(s * inv_tau);
        }
      }
    }
  });
  out.image = SilhouetteImage(1.0 - out.background);
  return out;
}

Points3d soft_silhouette_backward(const Camera& cam, const Points3d& vertices, const Faces& faces,
                                  const SoftRender& render, const ImageArray& d_image) {
  if (d_image.rows() != cam.height || d_image.cols() != cam.width) {
    throw DimensionError("image gradient does not match the camera resolution");
  }
  const double tau = render.tau;
  const double inv_tau = 1.0 / tau;
  const auto tris = prepare_all(cam, vertices, faces, tau);
  const int n = static_cast<int>(vertices.rows());
  const int workers = std::min(thread_count(), cam.height);
  std::vector<Points2d> partial(static_cast<size_t>(std::max(workers, 1)), Points2d::Zero(n, 2));

  parallel_chunks(cam.height, [&](int row_begin, int row_end, int worker) {
    Points2d& g2 = partial[static_cast<size_t>(worker)];
    Vector2d grad[3];
    for (const auto& t : tris) {
      const int r0 = std::max(t.row0, row_begin);
      const int r1 = std::min(t.row1, row_end - 1);
      Vector2d acc[3] = {Vector2d::Zero(), Vector2d::Zero(), Vector2d::Zero()};
      for (int r = r0; r <= r1; ++r) {
        const double py = r + 0.5;
        for (int c = t.col0; c <= t.col1; ++c) {
          const double upstream = d_image(r, c) * render.background(r, c);
          if (upstream == 0.0) continue;
          const double s = signed_distance(t, Vector2d(c + 0.5, py), grad);
          const double q = complement_logistic(s * inv_tau);
          const double coef = upstream * (1.0 - q) * inv_tau;
          for (int k = 0; k < 3; ++k) acc[k] += coef * grad[k];
        }
      }
      for (int k = 0; k < 3; ++k) g2.row(t.index[k]) += acc[k].transpose();
    }
  }, workers);

  Points2d g2 = partial[0];
  for (size_t w = 1; w < partial.size(); ++w) g2 += partial[w];
  Points3d g3 = Points3d::Zero(n, 3);
  for (int i = 0; i < n; ++i) {
    if (g2.row(i).isZero(0.0)) continue;
    const Vector3d p = vertices.row(i).transpose();
    g3.row(i) = g2.row(i) * projection_jacobian(cam, p);
  }
  return g3;
}

SilhouetteImage threshold(const SilhouetteImage& image, double level) {
  return SilhouetteImage((image.pixels() > level).cast<double>());
}

SilhouetteImage morph_disc(const SilhouetteImage& binary, int radius) {
  if (radius == 0) return binary;
  const bool erode = radius > 0;
  const int r = std::abs(radius);
  const int h = binary.height(), w = binary.width();
  SilhouetteImage out(w, h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool result = erode;
      for (int dy = -r; dy <= r && result == erode; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > r * r) continue;
          const int yy = y + dy, xx = x + dx;
          const bool on = yy >= 0 && yy < h && xx >= 0 && xx < w && binary(yy, xx) > 0.5;
          if (erode && !on) {
            result = false;
            break;
          }
          if (!erode && on) {
            result = true;
            break;
          }
        }
      }
      out(y, x) = result ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace morphtrack
