#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "wheelbot/dynamics.hpp"
#include "wheelbot/errors.hpp"
#include "wheelbot/params.hpp"
#include "wheelbot/rotation.hpp"

namespace wheelbot {

inline constexpr int kNumImus = 4;

/// IMU array geometry and noise. Positions are body-frame vectors from the
/// rolling-wheel center to each sensor; mount[i] maps sensor axes to body axes.
struct ImuConfig {
  std::array<Vec3, kNumImus> positions;
  std::array<Mat3, kNumImus> mount;
  double accel_sigma = 0.02;
  double gyro_sigma = 0.002;
  double accel_range = 2.0 * 9.81;
  double gyro_range = deg2rad(500.0);
};

struct EncoderConfig {
  /// 0 disables quantization.
  int counts_per_rev = 4096;
};

/// Rows: ones, then the three position coordinates; one column per IMU.
inline Eigen::Matrix<double, 4, Eigen::Dynamic> position_matrix(const std::vector<Vec3>& positions) {
  Eigen::Matrix<double, 4, Eigen::Dynamic> P(4, positions.size());
  for (size_t i = 0; i < positions.size(); ++i) {
    P(0, i) = 1.0;
    P.block<3, 1>(1, i) = positions[i];
  }
  return P;
}

inline int position_matrix_rank(const std::vector<Vec3>& positions) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(position_matrix(positions));
  lu.setThreshold(1e-9);
  return static_cast<int>(lu.rank());
}

inline void validate(const ImuConfig& cfg) {
  const std::vector<Vec3> pos(cfg.positions.begin(), cfg.positions.end());
  const int rank = position_matrix_rank(pos);
  if (rank < 4)
    throw ConfigError("IMU positions are coplanar: position matrix has rank " + std::to_string(rank) + ", need 4");
  if (!(cfg.accel_range > 0.0) || !(cfg.gyro_range > 0.0)) throw ConfigError("IMU ranges must be positive");
  if (cfg.accel_sigma < 0.0 || cfg.gyro_sigma < 0.0) throw ConfigError("IMU noise levels must be non-negative");
  for (const Mat3& r : cfg.mount) {
    if ((r.transpose() * r - Mat3::Identity()).norm() > 1e-9 || std::abs(r.determinant() - 1.0) > 1e-9)
      throw ConfigError("IMU mount matrix is not a rotation");
  }
}

/// Four alternating corners of the chassis cube (a regular tetrahedron),
/// axis-aligned.
inline ImuConfig default_imu_config(const RobotParams& p) {
  ImuConfig cfg;
  const double h = 0.5 * p.chassis_side;
  const Vec3 center(0.0, 0.0, p.frame_cog_height);
  const std::array<Vec3, kNumImus> signs = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
  for (int i = 0; i < kNumImus; ++i) {
    cfg.positions[i] = center + h * signs[i];
    cfg.mount[i] = Mat3::Identity();
  }
  cfg.accel_range = 2.0 * p.g0;
  validate(cfg);
  return cfg;
}

struct ImuFrame {
  std::array<Vec3, kNumImus> accel;
  std::array<Vec3, kNumImus> gyro;
};

struct EncoderReading {
  double q4E = 0.0, q5E = 0.0;
  double dq4E = 0.0, dq5E = 0.0;
};

/// Rigid motion of the chassis, all vectors in inertial coordinates.
struct BodyMotion {
  Mat3 R_IB = Mat3::Identity();
  Vec3 omega = Vec3::Zero();
  Vec3 alpha = Vec3::Zero();
  /// Acceleration of the rolling-wheel center.
  Vec3 acc_W = Vec3::Zero();
};

inline BodyMotion body_motion(const FullState& s, const Vec5& ddq, const RobotParams& p) {
  const Kinematics k = kinematics(s, ddq, p);
  return {k.R_IB, k.omega_B, k.alpha_B, k.wheel_center_acc};
}

using Rng = std::mt19937_64;

namespace detail {

inline double clamp_range(double v, double range) { return std::clamp(v, -range, range); }

inline Vec3 noisy(const Vec3& v, double sigma, Rng& rng) {
  if (sigma <= 0.0) return v;
  std::normal_distribution<double> n(0.0, sigma);
  Vec3 out = v;
  for (int k = 0; k < 3; ++k) out(k) += n(rng);
  return out;
}

inline Vec3 saturate(const Vec3& v, double range) {
  return Vec3(clamp_range(v.x(), range), clamp_range(v.y(), range), clamp_range(v.z(), range));
}

}  // namespace detail

/// Specific force and angular rate seen by each IMU, in sensor axes.
inline ImuFrame simulate_imu_array(const BodyMotion& m, const ImuConfig& cfg, Rng& rng, double g0) {
  const Vec3 gravity(0.0, 0.0, -g0);
  const Mat3 R_BI = m.R_IB.transpose();
  ImuFrame f;
  for (int i = 0; i < kNumImus; ++i) {
    const Vec3 rel = m.R_IB * cfg.positions[i];
    const Vec3 acc = m.acc_W + m.alpha.cross(rel) + m.omega.cross(m.omega.cross(rel));
    const Vec3 specific = cfg.mount[i].transpose() * (R_BI * (acc - gravity));
    const Vec3 rate = cfg.mount[i].transpose() * (R_BI * m.omega);
    f.accel[i] = detail::saturate(detail::noisy(specific, cfg.accel_sigma, rng), cfg.accel_range);
    f.gyro[i] = detail::saturate(detail::noisy(rate, cfg.gyro_sigma, rng), cfg.gyro_range);
  }
  return f;
}

inline ImuFrame simulate_imu_array(const FullState& s, const Vec5& ddq, const RobotParams& p, const ImuConfig& cfg,
                                   Rng& rng) {
  return simulate_imu_array(body_motion(s, ddq, p), cfg, rng, p.g0);
}

inline double quantize_angle(double angle, int counts_per_rev) {
  if (counts_per_rev <= 0) return angle;
  const double q = 2.0 * M_PI / counts_per_rev;
  return std::round(angle / q) * q;
}

/// Rates resolve to whole counts per sample period.
inline double quantize_rate(double rate, int counts_per_rev, double Ts) {
  if (counts_per_rev <= 0) return rate;
  const double q = 2.0 * M_PI / counts_per_rev / Ts;
  return std::round(rate / q) * q;
}

/// Rolling-wheel encoder sits on the chassis, so it sees q4 - q2; the
/// reaction-wheel angle is already relative to the chassis.
inline EncoderReading simulate_encoders(const FullState& s, const EncoderConfig& cfg, double Ts) {
  EncoderReading e;
  e.q4E = quantize_angle(s.q(3) - s.q(1), cfg.counts_per_rev);
  e.q5E = quantize_angle(s.q(4), cfg.counts_per_rev);
  e.dq4E = quantize_rate(s.dq(3) - s.dq(1), cfg.counts_per_rev, Ts);
  e.dq5E = quantize_rate(s.dq(4), cfg.counts_per_rev, Ts);
  return e;
}

}  // namespace wheelbot
