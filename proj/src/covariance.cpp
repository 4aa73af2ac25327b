#include "unitlo/covariance.hpp"

#include <cstdio>
#include <fstream>

#include "unitlo/errors.hpp"
#include "unitlo/parallel.hpp"

namespace unitlo {

CovarianceField estimate_covariances(const PointCloud& cloud, const KdTree& index,
                                     const CovarianceParams& params) {
  if (params.neighbors < 4) throw std::invalid_argument("covariance neighbor count must be >= 4");
  if (!(params.lambda_min <= params.lambda_max) || !(params.lambda_min > 0.0))
    throw std::invalid_argument("covariance eigenvalue bounds must satisfy 0 < min <= max");
  const auto k = static_cast<std::size_t>(params.neighbors);
  if (cloud.size() < k + 1)
    throw TooFewPointsError("covariance estimation needs at least " + std::to_string(k + 1) +
                            " points, got " + std::to_string(cloud.size()));

  CovarianceField field(cloud.size());
  const double iso2 = params.isolation_radius * params.isolation_radius;
  const int workers = params.threads;
  const std::size_t blocks = static_cast<std::size_t>(std::max(workers, 1));
  const std::size_t n = cloud.size();
  const std::size_t chunk = (n + blocks - 1) / blocks;

  parallel_for(blocks, workers, [&](std::size_t b) {
    std::vector<KdTree::Neighbor> nbrs;
    const std::size_t end = std::min(n, (b + 1) * chunk);
    for (std::size_t i = b * chunk; i < end; ++i) {
      index.knn(cloud.points[i], k, nbrs);
      if (nbrs.back().squared_distance > iso2) {
        field[i] = PointCovariance::isotropic(params.lambda_max);
        continue;
      }
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      for (const auto& nb : nbrs) mean += cloud.points[nb.index];
      mean /= static_cast<double>(nbrs.size());
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (const auto& nb : nbrs) {
        const Eigen::Vector3d d = cloud.points[nb.index] - mean;
        cov.noalias() += d * d.transpose();
      }
      cov /= static_cast<double>(nbrs.size() - 1);
      PointCovariance c = PointCovariance::from_matrix(cov);
      c.eigenvalues = c.eigenvalues.cwiseMax(params.lambda_min).cwiseMin(params.lambda_max);
      field[i] = c;
    }
  });
  return field;
}

CovarianceField estimate_covariances(const PointCloud& cloud, const CovarianceParams& params) {
  const KdTree index(cloud.points);
  return estimate_covariances(cloud, index, params);
}

CovarianceField to_scalar_confidence(const CovarianceField& field) {
  CovarianceField out(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = to_scalar_confidence(field[i]);
  return out;
}

void write_covariance_csv(const PointCloud& cloud, const CovarianceField& field,
                          const std::filesystem::path& path) {
  if (field.size() != cloud.size()) throw std::invalid_argument("covariance field not aligned with cloud");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "x,y,z,l1,l2,l3,qw,qx,qy,qz\n";
  char buf[320];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto& c = field[i];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", p.x(),
                  p.y(), p.z(), c.eigenvalues[0], c.eigenvalues[1], c.eigenvalues[2],
                  c.basis.w(), c.basis.x(), c.basis.y(), c.basis.z());
    out << buf;
  }
}

}  // namespace unitlo
