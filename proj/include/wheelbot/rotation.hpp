#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace wheelbot {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Elementary active rotations about the x, y and z axes.

inline Mat3 rot_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return r;
}

inline Mat3 rot_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, 0, s,
       0, 1, 0,
       -s, 0, c;
  return r;
}

inline Mat3 rot_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, -s, 0,
       s, c, 0,
       0, 0, 1;
  return r;
}

/// Yaw-roll-pitch sequence mapping inertial vectors into the body frame:
/// R_BI = Ry(pitch)^T Rx(roll)^T Rz(yaw)^T.
inline Mat3 rotation_body_from_inertial(double roll, double pitch, double yaw) {
  return rot_y(pitch).transpose() * rot_x(roll).transpose() * rot_z(yaw).transpose();
}

inline Mat3 rotation_inertial_from_body(double roll, double pitch, double yaw) {
  return rot_z(yaw) * rot_x(roll) * rot_y(pitch);
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return m;
}

inline constexpr double deg2rad(double deg) { return deg * M_PI / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / M_PI; }

}  // namespace wheelbot
