#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <filesystem>
#include <span>
#include <vector>

#include "unitlo/kdtree.hpp"
#include "unitlo/point_cloud.hpp"
#include "unitlo/se3.hpp"

namespace unitlo {

/// 3x3 PSD covariance in eigen form: nonnegative eigenvalues (ascending, m²)
/// and the eigenvector rotation as a unit quaternion. C = Q diag(λ) Qᵀ.
template <typename Scalar>
struct PointCovarianceT {
  Vector3T<Scalar> eigenvalues = Vector3T<Scalar>::Ones();
  Eigen::Quaternion<Scalar> basis = Eigen::Quaternion<Scalar>::Identity();

  [[nodiscard]] Matrix3T<Scalar> matrix() const {
    const Matrix3T<Scalar> q = basis.toRotationMatrix();
    return q * eigenvalues.asDiagonal() * q.transpose();
  }

  [[nodiscard]] Matrix3T<Scalar> information() const {
    const Matrix3T<Scalar> q = basis.toRotationMatrix();
    return q * eigenvalues.cwiseInverse().asDiagonal() * q.transpose();
  }

  [[nodiscard]] static PointCovarianceT isotropic(Scalar variance) {
    PointCovarianceT c;
    c.eigenvalues.setConstant(variance);
    return c;
  }

  /// Eigen-decomposes a symmetric matrix. Negative round-off eigenvalues are
  /// clipped to zero; the eigenvector matrix is made a proper rotation.
  [[nodiscard]] static PointCovarianceT from_matrix(const Matrix3T<Scalar>& m) {
    Eigen::SelfAdjointEigenSolver<Matrix3T<Scalar>> es;
    es.computeDirect(Matrix3T<Scalar>((m + m.transpose()) / Scalar(2)));
    Matrix3T<Scalar> v = es.eigenvectors();
    if (v.determinant() < Scalar(0)) v.col(2) = -v.col(2);
    PointCovarianceT c;
    c.eigenvalues = es.eigenvalues().cwiseMax(Scalar(0));
    c.basis = Eigen::Quaternion<Scalar>(v).normalized();
    return c;
  }
};

using PointCovariance = PointCovarianceT<double>;
using CovarianceField = std::vector<PointCovariance>;

struct CovarianceParams {
  int neighbors = 16;
  double lambda_min = 1e-4;
  double lambda_max = 1.0;
  double isolation_radius = 2.0;
  int threads = 1;
};

/// Per-point covariance from the k nearest neighbors (the point itself
/// included), eigenvalues clamped to [λ_min, λ_max]. Points whose k-th
/// neighbor lies beyond the isolation radius get diag(λ_max).
CovarianceField estimate_covariances(const PointCloud& cloud, const KdTree& index,
                                     const CovarianceParams& params);
CovarianceField estimate_covariances(const PointCloud& cloud, const CovarianceParams& params);

/// R C Rᵀ: eigenvalues kept, eigenbasis rotated. Translation has no effect.
template <typename Scalar>
[[nodiscard]] PointCovarianceT<Scalar> transform_covariance(const PointCovarianceT<Scalar>& c,
                                                            const PoseT<Scalar>& t) {
  PointCovarianceT<Scalar> out;
  out.eigenvalues = c.eigenvalues;
  out.basis = (t.rotation() * c.basis).normalized();
  return out;
}

/// Isotropic covariance with the same trace (the scalar-confidence model).
template <typename Scalar>
[[nodiscard]] PointCovarianceT<Scalar> to_scalar_confidence(const PointCovarianceT<Scalar>& c) {
  return PointCovarianceT<Scalar>::isotropic(c.eigenvalues.mean());
}

CovarianceField to_scalar_confidence(const CovarianceField& field);

/// Debug dump: `x,y,z,l1,l2,l3,qw,qx,qy,qz` per point.
void write_covariance_csv(const PointCloud& cloud, const CovarianceField& field,
                          const std::filesystem::path& path);

}  // namespace unitlo
