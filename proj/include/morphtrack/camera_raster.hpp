#pragma once

#include "morphtrack/common.hpp"

#include <cmath>

namespace morphtrack {

/// Pinhole intrinsics. Pixel (col, row) has its center at (col + 0.5, row + 0.5).
struct Camera {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 250.0;
  double cy = 250.0;
  int width = 500;
  int height = 500;

  void validate() const;
};

using ImageArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel occupancy probability in [0, 1], stored height × width.
class SilhouetteImage {
 public:
  SilhouetteImage() = default;
  SilhouetteImage(int width, int height, double fill = 0.0) : pixels_(ImageArray::Constant(height, width, fill)) {}
  explicit SilhouetteImage(ImageArray pixels) : pixels_(std::move(pixels)) {}

  int width() const { return static_cast<int>(pixels_.cols()); }
  int height() const { return static_cast<int>(pixels_.rows()); }
  bool empty() const { return pixels_.size() == 0; }

  double operator()(int row, int col) const { return pixels_(row, col); }
  double& operator()(int row, int col) { return pixels_(row, col); }

  const ImageArray& pixels() const { return pixels_; }
  ImageArray& pixels() { return pixels_; }

  /// Number of pixels strictly above the threshold.
  int count_above(double threshold = 0.5) const { return static_cast<int>((pixels_ > threshold).count()); }

  /// Throws InvariantError when a pixel lies outside [0, 1].
  void validate() const;

 private:
  ImageArray pixels_;
};

class DepthError : public Error {
 public:
  DepthError(int index, const std::string& what) : Error(what), index_(index) {}
  int index() const { return index_; }

 private:
  int index_;
};

template <typename Scalar>
Vec2<Scalar> project_point(const Camera& cam, const Vec3<Scalar>& p) {
  return Vec2<Scalar>(Scalar(cam.fx) * p.x() / p.z() + Scalar(cam.cx), Scalar(cam.fy) * p.y() / p.z() + Scalar(cam.cy));
}

/// d(u, v)/d(x, y, z).
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vector3d& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
       0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  return j;
}

/// Projects every point; throws DepthError naming the first point with z <= 0.
Points2d project(const Camera& cam, const Points3d& points);

/// Soft rasterizer output. background holds prod_f (1 - sigma_f) per pixel,
/// kept separately so gradients stay accurate where occupancy saturates.
struct SoftRender {
  SilhouetteImage image;
  ImageArray background;
  double tau = 1.0;
};

/// Per-triangle influence is truncated this many tau beyond the projected bounding box.
inline double soft_raster_margin(double tau) { return 3.0 * tau * std::log(1e4); }

/// occupancy(p) = 1 - prod_f (1 - logistic(s_f(p) / tau)), with s_f the signed
/// distance from p to triangle f's boundary (positive inside). Triangles with a
/// vertex at or behind the camera plane are skipped.
SoftRender render_soft_silhouette(const Camera& cam, const Points3d& vertices, const Faces& faces, double tau);

inline SilhouetteImage soft_silhouette(const Camera& cam, const Points3d& vertices, const Faces& faces, double tau) {
  return render_soft_silhouette(cam, vertices, faces, tau).image;
}

/// Gradient of a scalar loss with respect to the vertices, given dLoss/d(occupancy).
Points3d soft_silhouette_backward(const Camera& cam, const Points3d& vertices, const Faces& faces,
                                  const SoftRender& render, const ImageArray& d_image);

/// Signed distance from p to the boundary of triangle (a, b, c), positive inside.
double triangle_signed_distance(const Vector2d& p, const Vector2d& a, const Vector2d& b, const Vector2d& c);

/// Binary image: 1 where the input exceeds threshold, else 0.
SilhouetteImage threshold(const SilhouetteImage& image, double level = 0.5);

/// Morphological erosion (radius > 0) or dilation (radius < 0) with a disc.
SilhouetteImage morph_disc(const SilhouetteImage& binary, int radius);

}  // namespace morphtrack
