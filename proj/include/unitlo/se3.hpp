#pragma once

// Rigid-transform algebra shared by every stage of the odometry.
//
// Quaternions are scalar-first (w, x, y, z) everywhere they cross an API or
// file boundary. Eigen stores them as (x, y, z, w) internally; use
// `quaternion_from_wxyz` / `wxyz` rather than touching coeffs() directly.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <span>

#include "unitlo/errors.hpp"

namespace unitlo {

template <typename Scalar>
using Vector3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3T = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector6T = Eigen::Matrix<Scalar, 6, 1>;

template <typename Scalar>
[[nodiscard]] Matrix3T<Scalar> skew(const Vector3T<Scalar>& v) {
  Matrix3T<Scalar> s;
  // clang-format off
  s << Scalar(0), -v.z(),     v.y(),
       v.z(),     Scalar(0), -v.x(),
      -v.y(),     v.x(),     Scalar(0);
  // clang-format on
  return s;
}

template <typename Scalar>
[[nodiscard]] Eigen::Quaternion<Scalar> quaternion_from_wxyz(Scalar w, Scalar x,
                                                             Scalar y, Scalar z) {
  return Eigen::Quaternion<Scalar>(w, x, y, z);
}

template <typename Scalar>
[[nodiscard]] Eigen::Matrix<Scalar, 4, 1> wxyz(const Eigen::Quaternion<Scalar>& q) {
  return {q.w(), q.x(), q.y(), q.z()};
}

/// Rotation angle of a unit quaternion in [0, pi], insensitive to the q/-q
/// double cover.
template <typename Scalar>
[[nodiscard]] Scalar rotation_angle(const Eigen::Quaternion<Scalar>& q) {
  using std::abs;
  using std::atan2;
  return Scalar(2) * atan2(q.vec().norm(), abs(q.w()));
}

/// SO(3) exponential map of a rotation vector.
template <typename Scalar>
[[nodiscard]] Eigen::Quaternion<Scalar> exp_so3(const Vector3T<Scalar>& phi) {
  const Scalar theta = phi.norm();
  if (theta < Scalar(1e-12)) {
    Eigen::Quaternion<Scalar> q(Scalar(1), phi.x() / 2, phi.y() / 2, phi.z() / 2);
    return q.normalized();
  }
  return Eigen::Quaternion<Scalar>(Eigen::AngleAxis<Scalar>(theta, phi / theta));
}

template <typename Scalar>
[[nodiscard]] Vector3T<Scalar> log_so3(const Eigen::Quaternion<Scalar>& q_in) {
  Eigen::Quaternion<Scalar> q = q_in;
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  const Scalar vnorm = q.vec().norm();
  if (vnorm < Scalar(1e-12)) return Scalar(2) * q.vec();
  const Scalar theta = Scalar(2) * std::atan2(vnorm, q.w());
  return theta / vnorm * q.vec();
}

/// Projects an arbitrary 3x3 matrix onto the nearest rotation (polar
/// decomposition via SVD).
template <typename Scalar>
[[nodiscard]] Matrix3T<Scalar> project_to_rotation(const Matrix3T<Scalar>& m) {
  Eigen::JacobiSVD<Matrix3T<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3T<Scalar> d = Matrix3T<Scalar>::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1 : 1;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Rigid SE(3) transform stored as unit quaternion + translation (meters).
/// Acts on points as x -> R x + t.
template <typename Scalar>
class PoseT {
 public:
  using Vector3 = Vector3T<Scalar>;
  using Matrix3 = Matrix3T<Scalar>;
  using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
  using Quaternion = Eigen::Quaternion<Scalar>;

  PoseT() : rotation_(Quaternion::Identity()), translation_(Vector3::Zero()) {}

  PoseT(const Quaternion& rotation, const Vector3& translation)
      : rotation_(rotation.normalized()), translation_(translation) {}

  PoseT(const Matrix3& rotation, const Vector3& translation)
      : rotation_(Quaternion(rotation).normalized()), translation_(translation) {}

  static PoseT Identity() { return PoseT(); }

  static PoseT FromTranslation(const Vector3& t) {
    return PoseT(Quaternion::Identity(), t);
  }

  static PoseT FromRotation(const Quaternion& q) { return PoseT(q, Vector3::Zero()); }

  /// Builds a pose from a quaternion that is already unit length, without
  /// renormalizing. Keeps the rotation bit-identical.
  static PoseT FromUnitQuaternion(const Quaternion& q, const Vector3& t) {
    PoseT p;
    p.rotation_ = q;
    p.translation_ = t;
    return p;
  }

  /// Top 3x4 block of a homogeneous matrix; the rotation block is
  /// re-orthonormalized when det deviates from 1 by more than `det_tol`.
  static PoseT FromMatrix(const Eigen::Matrix<Scalar, 3, 4>& m, Scalar det_tol = Scalar(1e-6)) {
    Matrix3 r = m.template leftCols<3>();
    using std::abs;
    if (abs(r.determinant() - Scalar(1)) > det_tol) r = project_to_rotation<Scalar>(r);
    return PoseT(r, m.col(3));
  }

  const Quaternion& rotation() const { return rotation_; }
  Matrix3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  const Vector3& translation() const { return translation_; }

  Matrix4 matrix() const {
    Matrix4 m = Matrix4::Identity();
    m.template topLeftCorner<3, 3>() = rotation_matrix();
    m.template topRightCorner<3, 1>() = translation_;
    return m;
  }

  Eigen::Matrix<Scalar, 3, 4> matrix3x4() const { return matrix().template topRows<3>(); }

  PoseT inverse() const {
    const Quaternion qi = rotation_.conjugate();
    return FromUnitQuaternion(qi, -(qi * translation_));
  }

  /// Composition (this ∘ other). The quaternion is renormalized to bound drift
  /// over long chains of compositions.
  PoseT operator*(const PoseT& other) const {
    return PoseT((rotation_ * other.rotation_).normalized(),
                 rotation_ * other.translation_ + translation_);
  }

  Vector3 operator*(const Vector3& p) const { return rotation_ * p + translation_; }

  template <typename Other>
  PoseT<Other> cast() const {
    return PoseT<Other>::FromUnitQuaternion(rotation_.template cast<Other>(),
                                            translation_.template cast<Other>());
  }

 private:
  Quaternion rotation_;
  Vector3 translation_;
};

using Pose = PoseT<double>;

/// Offset of a geometric unit's self-centered frame origin from the LiDAR
/// frame origin.
template <typename Scalar>
struct UnitFrameOffsetT {
  Vector3T<Scalar> v = Vector3T<Scalar>::Zero();
};

using UnitFrameOffset = UnitFrameOffsetT<double>;

/// Expresses a whole-scan transform in a unit's self-centered frame: the
/// rotation is kept bit-identical and the translation becomes t + R v - v.
template <typename Scalar>
[[nodiscard]] PoseT<Scalar> to_unit_frame(const PoseT<Scalar>& t,
                                          const UnitFrameOffsetT<Scalar>& offset) {
  return PoseT<Scalar>::FromUnitQuaternion(
      t.rotation(), t.translation() + (t.rotation() * offset.v - offset.v));
}

/// Inverse of `to_unit_frame`.
template <typename Scalar>
[[nodiscard]] PoseT<Scalar> from_unit_frame(const PoseT<Scalar>& t_unit,
                                            const UnitFrameOffsetT<Scalar>& offset) {
  return PoseT<Scalar>::FromUnitQuaternion(
      t_unit.rotation(), t_unit.translation() - (t_unit.rotation() * offset.v - offset.v));
}

/// Left perturbation on SO(3) x R^3: T' = (Exp(phi) R, Exp(phi) t + rho) with
/// xi = (rho, phi). Points move as x' ≈ x + rho + phi × x, i.e. dx'/dxi =
/// [I, -[x']×].
template <typename Scalar>
[[nodiscard]] PoseT<Scalar> retract(const PoseT<Scalar>& t, const Vector6T<Scalar>& xi) {
  const Eigen::Quaternion<Scalar> dq = exp_so3<Scalar>(xi.template tail<3>());
  return PoseT<Scalar>((dq * t.rotation()).normalized(),
                       dq * t.translation() + xi.template head<3>());
}

/// Chordal weighted mean of unit quaternions. Inputs are sign-aligned to the
/// first quaternion that carries nonzero weight, averaged, and renormalized.
/// Weights must be nonnegative and sum to one.
template <typename Scalar>
[[nodiscard]] Eigen::Quaternion<Scalar> average_rotations(
    std::span<const Eigen::Quaternion<Scalar>> quats, std::span<const Scalar> weights) {
  if (quats.empty()) throw EmptyListError("average_rotations: no quaternions");
  if (quats.size() != weights.size())
    throw std::invalid_argument("average_rotations: weights not aligned with quaternions");
  Scalar total = 0;
  for (const Scalar w : weights) {
    if (!(w >= Scalar(0))) throw std::invalid_argument("average_rotations: negative weight");
    total += w;
  }
  using std::abs;
  if (abs(total - Scalar(1)) > Scalar(1e-9))
    throw std::invalid_argument("average_rotations: weights do not sum to one");

  std::size_t ref = 0;
  while (ref < weights.size() && weights[ref] == Scalar(0)) ++ref;
  const Eigen::Matrix<Scalar, 4, 1> reference = quats[ref].coeffs();

  Eigen::Matrix<Scalar, 4, 1> acc = Eigen::Matrix<Scalar, 4, 1>::Zero();
  for (std::size_t i = 0; i < quats.size(); ++i) {
    if (weights[i] == Scalar(0)) continue;
    const Eigen::Matrix<Scalar, 4, 1> c = quats[i].coeffs();
    acc += (c.dot(reference) < Scalar(0) ? -weights[i] : weights[i]) * c;
  }
  const Scalar n = acc.norm();
  if (n < Scalar(1e-12)) throw ZeroNormError("average_rotations: weighted mean has zero norm");
  Eigen::Quaternion<Scalar> out;
  out.coeffs() = acc / n;
  return out;
}

/// Rotation angle (rad) and translation distance between two poses.
template <typename Scalar>
struct PoseDelta {
  Scalar rotation = 0;
  Scalar translation = 0;
};

template <typename Scalar>
[[nodiscard]] PoseDelta<Scalar> pose_delta(const PoseT<Scalar>& a, const PoseT<Scalar>& b) {
  const PoseT<Scalar> d = a.inverse() * b;
  return {rotation_angle(d.rotation()), d.translation().norm()};
}

}  // namespace unitlo
