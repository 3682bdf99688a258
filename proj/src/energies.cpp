#include "morphtrack/energies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace morphtrack {

void Observation::validate(int expected_joints) const {
  if (expected_joints >= 0 && joints2d.rows() != expected_joints) {
    throw DimensionError("observation has " + std::to_string(joints2d.rows()) + " joints, expected " +
                         std::to_string(expected_joints));
  }
  for (Eigen::Index i = 0; i < joints2d.rows(); ++i) {
    const double w = joints2d(i, 2);
    if (!(w >= 0.0 && w <= 1.0)) {
      throw InvariantError("joint " + std::to_string(i) + " confidence " + std::to_string(w) + " outside [0, 1]");
    }
    if (!std::isfinite(joints2d(i, 0)) || !std::isfinite(joints2d(i, 1))) {
      throw InvariantError("joint " + std::to_string(i) + " has non-finite coordinates");
    }
  }
  silhouette.validate();
}

JointMapping identity_mapping(int num_joints) {
  JointMapping m;
  for (int j = 0; j < num_joints; ++j) m.emplace_back(j, j);
  return m;
}

void EnergyWeights::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"lambda_sil", lambda_sil},       {"lambda_stab", lambda_stab}, {"lambda_prior", lambda_prior},
      {"lambda_arap", lambda_arap},     {"lambda_lap", lambda_lap},   {"lambda_offset", lambda_offset},
      {"gm_sigma", gm_sigma},           {"raster_tau", raster_tau}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(name) + " must be finite and nonnegative");
  }
  if (!(gm_sigma > 0.0)) throw ConfigError("gm_sigma must be positive");
  if (!(raster_tau > 0.0)) throw ConfigError("raster_tau must be positive");
}

JointEnergy e_joint(const Points3d& joints, const Observation& obs, const JointMapping& mapping, double gm_sigma,
                    bool with_gradient) {
  JointEnergy out;
  if (with_gradient) out.gradient = Points3d::Zero(joints.rows(), 3);
  const double s2 = gm_sigma * gm_sigma;
  for (const auto& [mj, oj] : mapping) {
    if (mj < 0 || mj >= joints.rows() || oj < 0 || oj >= obs.joints2d.rows()) {
      throw DimensionError("joint mapping pair (" + std::to_string(mj) + ", " + std::to_string(oj) + ") out of range");
    }
    const double w = obs.joints2d(oj, 2);
    if (w == 0.0) continue;
    const Vector3d p = joints.row(mj).transpose();
    if (!(p.z() > 0.0)) {
      ++out.skipped;
      continue;
    }
    const Vector2d e = project_point<double>(obs.camera, p) - Vector2d(obs.joints2d(oj, 0), obs.joints2d(oj, 1));
    const double r2 = e.squaredNorm();
    out.value += w * r2 / (s2 + r2);
    if (with_gradient) {
      const double denom = s2 + r2;
      const Vector2d de = w * 2.0 * s2 / (denom * denom) * e;
      out.gradient.row(mj) += de.transpose() * projection_jacobian(obs.camera, p);
    }
  }
  return out;
}

double e_joint(const BodyModel& model, const BodyParams& params, const Observation& obs, const JointMapping& mapping,
               double gm_sigma) {
  return e_joint(joints3d(model, params), obs, mapping, gm_sigma, false).value;
}

double e_sil(const SilhouetteImage& rendered, const SilhouetteImage& observed, ImageArray* gradient) {
  if (rendered.width() != observed.width() || rendered.height() != observed.height()) {
    throw DimensionError("silhouette sizes differ: " + std::to_string(rendered.width()) + "x" +
                         std::to_string(rendered.height()) + " vs " + std::to_string(observed.width()) + "x" +
                         std::to_string(observed.height()));
  }
  const Eigen::Index count = rendered.pixels().size();
  if (count == 0) throw DimensionError("empty silhouette");
  const double inv = 1.0 / static_cast<double>(count);
  const double* r = rendered.pixels().data();
  const double* o = observed.pixels().data();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const double d = r[i] - o[i];
    sum += d * d;
  }
  if (gradient != nullptr) *gradient = 2.0 * inv * (rendered.pixels() - observed.pixels());
  return sum * inv;
}

// ---------------------------------------------------------------------------
// Gaussian mixture prior

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

GmmPrior::GmmPrior(VectorXd weights, std::vector<VectorXd> means, std::vector<MatrixXd> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
  const int k = static_cast<int>(weights_.size());
  if (k < 1) throw InvariantError("GMM prior needs at least one component");
  if (static_cast<int>(means_.size()) != k || static_cast<int>(covariances_.size()) != k) {
    throw InvariantError("GMM weights, means and covariances disagree on the component count");
  }
  if ((weights_.array() <= 0.0).any() || !weights_.allFinite()) throw InvariantError("GMM weights must be positive");
  if (std::abs(weights_.sum() - 1.0) > 1e-9) {
    throw InvariantError("GMM weights sum to " + std::to_string(weights_.sum()) + ", expected 1");
  }
  const Eigen::Index d = means_.front().size();
  log_coefficients_.resize(k);
  for (int j = 0; j < k; ++j) {
    if (means_[static_cast<size_t>(j)].size() != d) throw InvariantError("GMM means have inconsistent dimension");
    const MatrixXd& c = covariances_[static_cast<size_t>(j)];
    if (c.rows() != d || c.cols() != d) throw InvariantError("GMM covariance " + std::to_string(j) + " has wrong shape");
    if (!c.isApprox(c.transpose(), 1e-9)) throw InvariantError("GMM covariance " + std::to_string(j) + " is not symmetric");
    Eigen::LLT<MatrixXd> llt(c);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
      throw InvariantError("GMM covariance " + std::to_string(j) + " is not positive definite");
    }
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_coefficients_[j] = std::log(weights_[j]) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
    cholesky_.push_back(std::move(llt));
  }
}

double GmmPrior::negative_log_density(const VectorXd& x, VectorXd* gradient) const {
  if (x.size() != dim()) {
    throw DimensionError("prior expects " + std::to_string(dim()) + " values, got " + std::to_string(x.size()));
  }
  const int k = num_components();
  VectorXd log_p(k);
  std::vector<VectorXd> diff(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    const auto uj = static_cast<size_t>(j);
    diff[uj] = x - means_[uj];
    const VectorXd y = cholesky_[uj].matrixL().solve(diff[uj]);
    log_p[j] = log_coefficients_[j] - 0.5 * y.squaredNorm();
  }
  const double lse = log_sum_exp(log_p);
  if (gradient != nullptr) {
    gradient->setZero(x.size());
    for (int j = 0; j < k; ++j) {
      const double r = std::exp(log_p[j] - lse);
      if (r == 0.0) continue;
      *gradient += r * cholesky_[static_cast<size_t>(j)].solve(diff[static_cast<size_t>(j)]);
    }
  }
  return -lse;
}

namespace {

struct EmModel {
  VectorXd weights;
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covariances;
};

// Returns the per-sample log joint densities (n×K).
MatrixXd component_log_densities(const MatrixXd& x, const EmModel& m) {
  const Eigen::Index n = x.rows(), d = x.cols();
  const int k = static_cast<int>(m.weights.size());
  MatrixXd out(n, k);
  for (int j = 0; j < k; ++j) {
    const auto uj = static_cast<size_t>(j);
    Eigen::LLT<MatrixXd> llt(m.covariances[uj]);
    const MatrixXd l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const double c = std::log(m.weights[j]) - 0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
    const MatrixXd centered = (x.rowwise() - m.means[uj].transpose()).transpose();
    const MatrixXd y = llt.matrixL().solve(centered);
    out.col(j) = (c - 0.5 * y.colwise().squaredNorm().array()).matrix().transpose();
  }
  return out;
}

}  // namespace

GmmPrior GmmPrior::fit(const MatrixXd& samples, int num_components, const GmmFitOptions& options) {
  const Eigen::Index n = samples.rows(), d = samples.cols();
  if (num_components < 1) throw ConfigError("GMM component count must be >= 1");
  if (n < num_components) throw InvariantError("GMM fit needs at least as many samples as components");
  if (d < 1) throw InvariantError("GMM fit needs at least one dimension");
  if (!samples.allFinite()) throw NumericError("GMM samples contain non-finite values");
  if (options.restarts < 1) throw ConfigError("GMM restarts must be >= 1");
  if (!(options.tolerance > 0.0)) throw ConfigError("GMM tolerance must be positive");

  const VectorXd global_mean = samples.colwise().mean().transpose();
  const MatrixXd centered_all = samples.rowwise() - global_mean.transpose();
  const MatrixXd regularizer = options.covariance_regularization * MatrixXd::Identity(d, d);
  const MatrixXd global_cov = centered_all.transpose() * centered_all / static_cast<double>(n) + regularizer;

  std::mt19937_64 rng(options.seed);
  EmModel best;
  double best_ll = -std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < options.restarts; ++restart) {
    // k-means++ seeding of the means.
    EmModel m;
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> centers{pick(rng)};
    VectorXd d2 = (samples.rowwise() - samples.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < num_components) {
      const double total = d2.sum();
      Eigen::Index next = pick(rng);
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        next = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          target -= d2[i];
          if (target <= 0.0 && d2[i] > 0.0) {
            next = i;
            break;
          }
        }
      }
      centers.push_back(next);
      d2 = d2.cwiseMin((samples.rowwise() - samples.row(next)).rowwise().squaredNorm());
    }
    m.weights = VectorXd::Constant(num_components, 1.0 / num_components);
    for (Eigen::Index c : centers) {
      m.means.push_back(samples.row(c).transpose());
      m.covariances.push_back(global_cov);
    }

    double prev_ll = -std::numeric_limits<double>::infinity();
    double ll = prev_ll;
    for (int it = 0; it < options.max_iterations; ++it) {
      const MatrixXd logp = component_log_densities(samples, m);
      MatrixXd resp(n, num_components);
      ll = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double lse = log_sum_exp(logp.row(i).transpose());
        ll += lse;
        resp.row(i) = (logp.row(i).array() - lse).exp();
      }
      ll /= static_cast<double>(n);
      if (std::abs(ll - prev_ll) < options.tolerance) break;
      prev_ll = ll;

      for (int j = 0; j < num_components; ++j) {
        const auto uj = static_cast<size_t>(j);
        const double nk = resp.col(j).sum();
        m.weights[j] = std::max(nk / static_cast<double>(n), 1e-12);
        if (nk < 1e-10) continue;
        m.means[uj] = (samples.transpose() * resp.col(j)) / nk;
        const MatrixXd c = samples.rowwise() - m.means[uj].transpose();
        m.covariances[uj] = (c.transpose() * resp.col(j).asDiagonal() * c) / nk + regularizer;
        m.covariances[uj] = 0.5 * (m.covariances[uj] + m.covariances[uj].transpose());
      }
      m.weights /= m.weights.sum();
    }
    if (ll > best_ll) {
      best_ll = ll;
      best = m;
    }
  }
  return GmmPrior(best.weights, best.means, best.covariances);
}

double e_prior(const VectorXd& theta, const GmmPrior& prior, VectorXd* gradient) {
  if (theta.size() < 3) throw DimensionError("theta must include the global orientation");
  const VectorXd body = theta.tail(theta.size() - 3);
  VectorXd g;
  const double v = prior.negative_log_density(body, gradient != nullptr ? &g : nullptr);
  if (gradient != nullptr) {
    gradient->setZero(theta.size());
    gradient->tail(theta.size() - 3) = g;
  }
  return v;
}

double e_stab(const Points3d& joints, const Points3d& previous_joints, Points3d* gradient) {
  if (joints.rows() != previous_joints.rows()) throw DimensionError("joint counts differ between frames");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < joints.rows(); ++i) sum += squared_distance(joints, i, previous_joints, i);
  if (gradient != nullptr) *gradient = 2.0 * (joints - previous_joints);
  return sum;
}

double e_stab(const BodyModel& model, const BodyParams& current, const BodyParams& previous) {
  return e_stab(joints3d(model, current), joints3d(model, previous));
}

// ---------------------------------------------------------------------------
// Chamfer

KdTree3::KdTree3(const Points3d& points) : points_(&points) {
  std::vector<int> idx(static_cast<size_t>(points.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(idx.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree3::build(std::vector<int>& idx, int begin, int end, int depth) {
  if (begin >= end) return -1;
  const Points3d& p = *points_;
  Eigen::RowVector3d lo = p.row(idx[static_cast<size_t>(begin)]), hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(p.row(idx[static_cast<size_t>(i)]));
    hi = hi.cwiseMax(p.row(idx[static_cast<size_t>(i)]));
  }
  int axis = depth % 3;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int a, int b) { return p(a, axis) < p(b, axis) || (p(a, axis) == p(b, axis) && a < b); });
  const int node = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[static_cast<size_t>(mid)], axis, -1, -1});
  const int left = build(idx, begin, mid, depth + 1);
  const int right = build(idx, mid + 1, end, depth + 1);
  nodes_[static_cast<size_t>(node)].left = left;
  nodes_[static_cast<size_t>(node)].right = right;
  return node;
}

void KdTree3::search(int node, const Vector3d& q, int& best, double& best_d2) const {
  if (node < 0) return;
  const Node& nd = nodes_[static_cast<size_t>(node)];
  const Points3d& p = *points_;
  const double dx = q.x() - p(nd.point, 0);
  const double dy = q.y() - p(nd.point, 1);
  const double dz = q.z() - p(nd.point, 2);
  const double d2 = dx * dx + dy * dy + dz * dz;
  if (d2 < best_d2 || (d2 == best_d2 && nd.point < best)) {
    best_d2 = d2;
    best = nd.point;
  }
  const double plane = q[nd.axis] - p(nd.point, nd.axis);
  const int near = plane < 0.0 ? nd.left : nd.right;
  const int far = plane < 0.0 ? nd.right : nd.left;
  search(near, q, best, best_d2);
  if (plane * plane <= best_d2) search(far, q, best, best_d2);
}

std::pair<int, double> KdTree3::nearest(const Vector3d& query) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, query, best, best_d2);
  return {best, best_d2};
}

namespace {

void one_sided(const Points3d& from, const Points3d& to, VectorXd& sq, std::vector<int>& nn) {
  const KdTree3 tree(to);
  sq.resize(from.rows());
  nn.resize(static_cast<size_t>(from.rows()));
  parallel_chunks(static_cast<int>(from.rows()), [&](int begin, int end, int) {
    for (int i = begin; i < end; ++i) {
      const auto [j, d2] = tree.nearest(from.row(i).transpose());
      nn[static_cast<size_t>(i)] = j;
      sq[i] = d2;
    }
  });
}

double ordered_mean(const VectorXd& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(v.size());
}

}  // namespace

ChamferResult chamfer(const Points3d& a, const Points3d& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InvariantError("Chamfer distance needs two non-empty point sets");
  ChamferResult r;
  one_sided(a, b, r.sq_a_to_b, r.nn_a_to_b);
  one_sided(b, a, r.sq_b_to_a, r.nn_b_to_a);
  r.value = ordered_mean(r.sq_a_to_b) + ordered_mean(r.sq_b_to_a);
  return r;
}

Points3d chamfer_gradient_a(const Points3d& a, const Points3d& b, const ChamferResult& result) {
  Points3d g = Points3d::Zero(a.rows(), 3);
  const double wa = 2.0 / static_cast<double>(a.rows());
  const double wb = 2.0 / static_cast<double>(b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    g.row(i) += wa * (a.row(i) - b.row(result.nn_a_to_b[static_cast<size_t>(i)]));
  }
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    const int k = result.nn_b_to_a[static_cast<size_t>(j)];
    g.row(k) += wb * (a.row(k) - b.row(j));
  }
  return g;
}

double e_chamfer(const Points3d& a, const Points3d& b, Points3d* grad_a) {
  const ChamferResult r = chamfer(a, b);
  if (grad_a != nullptr) *grad_a = chamfer_gradient_a(a, b, r);
  return r.value;
}

// ---------------------------------------------------------------------------
// Laplacian and offset

UniformLaplacian::UniformLaplacian(int num_vertices, const Faces& faces)
    : UniformLaplacian(vertex_adjacency(num_vertices, faces)) {}

UniformLaplacian::UniformLaplacian(const std::vector<std::vector<int>>& neighbors) {
  const int n = static_cast<int>(neighbors.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    const auto& nb = neighbors[static_cast<size_t>(i)];
    if (nb.empty()) {
      isolated_.push_back(i);
      continue;
    }
    trip.emplace_back(i, i, 1.0);
    const double w = -1.0 / static_cast<double>(nb.size());
    for (int j : nb) {
      if (j < 0 || j >= n || j == i) throw InvariantError("vertex " + std::to_string(i) + " has invalid neighbor " + std::to_string(j));
      trip.emplace_back(i, j, w);
    }
  }
  matrix_.resize(n, n);
  matrix_.setFromTriplets(trip.begin(), trip.end());
}

double e_lap(const UniformLaplacian& laplacian, const Points3d& displacements, Points3d* gradient) {
  if (laplacian.matrix().rows() != displacements.rows()) throw DimensionError("Laplacian size does not match displacements");
  const Points3d ld = laplacian.matrix() * displacements;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < ld.rows(); ++i) sum += ld(i, 0) * ld(i, 0) + ld(i, 1) * ld(i, 1) + ld(i, 2) * ld(i, 2);
  if (gradient != nullptr) *gradient = 2.0 * (laplacian.matrix().transpose() * ld);
  return sum;
}

double e_offset(const Points3d& displacements, Points3d* gradient) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < displacements.rows(); ++i) {
    sum += displacements(i, 0) * displacements(i, 0) + displacements(i, 1) * displacements(i, 1) +
           displacements(i, 2) * displacements(i, 2);
  }
  if (gradient != nullptr) *gradient = 2.0 * displacements;
  return sum;
}

}  // namespace morphtrack
