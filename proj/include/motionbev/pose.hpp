#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "motionbev/error.hpp"
#include "motionbev/point_cloud.hpp"

namespace motionbev {

/// Homogeneous rigid transform. Construction through `from_matrix` checks
/// that the rotation block is orthonormal with determinant +1.
class PoseSE3 {
 public:
  using Matrix = Eigen::Matrix4d;

  PoseSE3() : m_(Matrix::Identity()) {}

  static PoseSE3 identity() { return {}; }

  static PoseSE3 from_matrix(const Matrix& m, double tol = 1e-9) {
    if (!m.allFinite()) throw ValidationError("pose contains non-finite values");
    if (std::abs(m(3, 0)) > 0 || std::abs(m(3, 1)) > 0 || std::abs(m(3, 2)) > 0 || m(3, 3) != 1.0)
      throw ValidationError("pose bottom row is not (0,0,0,1)");
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    const double ortho = (r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > tol)
      throw ValidationError("pose rotation not orthonormal (max |R R^T - I| = " +
                            std::to_string(ortho) + ")");
    const double det = r.determinant();
    if (std::abs(det - 1.0) > tol)
      throw ValidationError("pose rotation determinant " + std::to_string(det) + " != 1");
    PoseSE3 p;
    p.m_ = m;
    return p;
  }

  /// Nearest rotation (in the Frobenius sense) to `m`'s 3x3 block, keeping
  /// the translation. Used to clean up rotations read from text with
  /// limited digits.
  static PoseSE3 orthonormalized(const Matrix& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m.topLeftCorner<3, 3>(),
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0) {
      Eigen::Matrix3d u = svd.matrixU();
      u.col(2) *= -1.0;
      r = u * svd.matrixV().transpose();
    }
    Matrix out = Matrix::Identity();
    out.topLeftCorner<3, 3>() = r;
    out.topRightCorner<3, 1>() = m.topRightCorner<3, 1>();
    return from_matrix(out);
  }

  static PoseSE3 translation(double x, double y, double z) {
    PoseSE3 p;
    p.m_(0, 3) = x;
    p.m_(1, 3) = y;
    p.m_(2, 3) = z;
    return p;
  }

  static PoseSE3 rotation_z(double yaw) {
    PoseSE3 p;
    const double c = std::cos(yaw), s = std::sin(yaw);
    p.m_(0, 0) = c;
    p.m_(0, 1) = -s;
    p.m_(1, 0) = s;
    p.m_(1, 1) = c;
    return p;
  }

  static PoseSE3 from_yaw_translation(double yaw, double x, double y, double z) {
    PoseSE3 p = rotation_z(yaw);
    p.m_(0, 3) = x;
    p.m_(1, 3) = y;
    p.m_(2, 3) = z;
    return p;
  }

  const Matrix& matrix() const noexcept { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  /// Closed-form rigid inverse [R^T, -R^T t].
  PoseSE3 inverse() const {
    PoseSE3 p;
    const Eigen::Matrix3d rt = m_.topLeftCorner<3, 3>().transpose();
    p.m_.topLeftCorner<3, 3>() = rt;
    p.m_.topRightCorner<3, 1>() = -rt * m_.topRightCorner<3, 1>();
    return p;
  }

  friend PoseSE3 operator*(const PoseSE3& a, const PoseSE3& b) {
    PoseSE3 p;
    p.m_ = a.m_ * b.m_;
    p.m_.row(3) << 0.0, 0.0, 0.0, 1.0;
    return p;
  }

  Point apply(const Point& q) const {
    Point out = q;
    out.x = m_(0, 0) * q.x + m_(0, 1) * q.y + m_(0, 2) * q.z + m_(0, 3);
    out.y = m_(1, 0) * q.x + m_(1, 1) * q.y + m_(1, 2) * q.z + m_(1, 3);
    out.z = m_(2, 0) * q.x + m_(2, 1) * q.y + m_(2, 2) * q.z + m_(2, 3);
    return out;
  }

  /// Largest absolute entry difference; for approximate comparisons in tests.
  double max_abs_diff(const PoseSE3& o) const { return (m_ - o.m_).cwiseAbs().maxCoeff(); }

 private:
  Matrix m_;
};

}  // namespace motionbev
