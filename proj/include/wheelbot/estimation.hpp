#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "wheelbot/errors.hpp"
#include "wheelbot/params.hpp"
#include "wheelbot/rotation.hpp"
#include "wheelbot/sensors.hpp"

namespace wheelbot {

/// Least-squares weights X = P^T (P P^T)^-1. Column 0 extracts the gravity
/// vector, columns 1..3 the rotational acceleration matrix.
struct LsWeights {
  Eigen::VectorXd X1star;
  Eigen::Matrix<double, Eigen::Dynamic, 3> X2star;
  Eigen::Matrix<double, 4, Eigen::Dynamic> P;

  Eigen::Matrix<double, Eigen::Dynamic, 4> X() const {
    Eigen::Matrix<double, Eigen::Dynamic, 4> x(X1star.size(), 4);
    x.col(0) = X1star;
    x.rightCols<3>() = X2star;
    return x;
  }
};

inline LsWeights precompute_ls_weights(const std::vector<Vec3>& positions) {
  if (positions.size() < 4) throw ConfigError("need at least four IMU positions");
  const int rank = position_matrix_rank(positions);
  if (rank < 4)
    throw ConfigError("IMU positions are coplanar: position matrix has rank " + std::to_string(rank) + ", need 4");
  LsWeights w;
  w.P = position_matrix(positions);
  const Eigen::Matrix4d PPt = w.P * w.P.transpose();
  const Eigen::MatrixXd X = w.P.transpose() * PPt.ldlt().solve(Eigen::Matrix4d::Identity());
  w.X1star = X.col(0);
  w.X2star = X.rightCols(3);
  return w;
}

inline LsWeights precompute_ls_weights(const ImuConfig& cfg) {
  return precompute_ls_weights(std::vector<Vec3>(cfg.positions.begin(), cfg.positions.end()));
}

enum class EulerRateMode {
  /// Rows e1'R2, e2', e3'R1R2 as used on the robot.
  Simplified,
  /// Exact inverse of the yaw-roll-pitch rate kinematics.
  Exact,
};

enum class PivotMode {
  Off,
  /// Contact acceleration along the heading only.
  Dominant,
  /// All contact and wheel-center terms.
  Full,
};

inline std::vector<Vec3> gyro_to_body(const ImuFrame& f, const ImuConfig& cfg) {
  std::vector<Vec3> out(kNumImus);
  for (int i = 0; i < kNumImus; ++i) out[i] = cfg.mount[i] * f.gyro[i];
  return out;
}

inline Vec3 gyro_euler_rates(const std::vector<Vec3>& gyro_body, double q1_prev, double q2_prev,
                             EulerRateMode mode = EulerRateMode::Simplified) {
  Vec3 w = Vec3::Zero();
  for (const Vec3& g : gyro_body) w += g;
  w /= static_cast<double>(gyro_body.size());

  const Mat3 R1 = rot_x(q1_prev);
  const Mat3 R2 = rot_y(q2_prev);
  const Vec3 w2 = R2 * w;
  if (mode == EulerRateMode::Simplified) {
    const double yaw = (R1 * w2).z();
    return Vec3(w2.x(), w.y(), yaw);
  }
  const double c1 = std::cos(q1_prev);
  if (std::abs(c1) < 1e-9) throw SingularityError("exact Euler rates undefined at |q1| = 90 deg");
  const double yaw = w2.z() / c1;
  return Vec3(w2.x(), w.y() - std::sin(q1_prev) * yaw, yaw);
}

/// Kinematic quantities needed for the full wheel-center acceleration.
struct PivotKinematics {
  double q1 = 0.0, q2 = 0.0;
  double dq1 = 0.0, dq3 = 0.0, dq4 = 0.0;
  double ddq1 = 0.0, ddq3 = 0.0, ddq4 = 0.0;
};

/// Wheel-center acceleration in body coordinates.
inline Vec3 pivot_acceleration(const PivotKinematics& k, const RobotParams& p, PivotMode mode = PivotMode::Dominant) {
  if (mode == PivotMode::Off) return Vec3::Zero();
  const double r = p.wheel_radius_r_w;
  Vec3 c(r * k.ddq4, 0.0, 0.0);
  if (mode == PivotMode::Full) {
    const double s1 = std::sin(k.q1), c1 = std::cos(k.q1);
    c.y() += r * k.dq3 * k.dq4;
    c.x() += 2.0 * r * c1 * k.dq1 * k.dq3 + r * s1 * k.ddq3;
    c.y() += r * s1 * (k.dq1 * k.dq1 + k.dq3 * k.dq3) - r * c1 * k.ddq1;
    c.z() += -r * c1 * k.dq1 * k.dq1 - r * s1 * k.ddq1;
  }
  return rot_y(k.q2).transpose() * rot_x(k.q1).transpose() * c;
}

inline Vec3 pivot_acceleration(double q4_ddot, double q1_prev, double q2_prev, const RobotParams& p) {
  PivotKinematics k;
  k.q1 = q1_prev;
  k.q2 = q2_prev;
  k.ddq4 = q4_ddot;
  return pivot_acceleration(k, p, PivotMode::Dominant);
}

/// First-order low-pass on the wheel encoder rate followed by a first
/// difference.
class WheelAccelFilter {
 public:
  WheelAccelFilter(double cutoff_hz = 10.0, double Ts = 0.01)
      : beta_(1.0 - std::exp(-2.0 * M_PI * cutoff_hz * Ts)), Ts_(Ts) {}

  struct Output {
    double value;
    bool warming_up;
  };

  Output step(double rate) {
    if (!started_) {
      started_ = true;
      y_ = rate;
      return {0.0, true};
    }
    const double prev = y_;
    y_ += beta_ * (rate - y_);
    return {(y_ - prev) / Ts_, false};
  }

  double beta() const { return beta_; }
  void reset() { started_ = false; }

 private:
  double beta_;
  double Ts_;
  double y_ = 0.0;
  bool started_ = false;
};

inline double wheel_accel_filter(const std::vector<double>& history, double cutoff_hz, double Ts,
                                 bool* warming_up = nullptr) {
  WheelAccelFilter f(cutoff_hz, Ts);
  WheelAccelFilter::Output out{0.0, true};
  for (double r : history) out = f.step(r);
  if (warming_up) *warming_up = out.warming_up;
  return out.value;
}

struct AccelTilt {
  double q1A = 0.0, q2A = 0.0;
  Vec3 g_hat = Vec3::Zero();
  Mat3 Omega_hat = Mat3::Zero();
};

/// Specific forces in body axes with the wheel-center acceleration removed,
/// one column per IMU.
inline Eigen::Matrix<double, 3, Eigen::Dynamic> compensated_measurements(const ImuFrame& f, const ImuConfig& cfg,
                                                                        const Vec3& pivot_accel) {
  Eigen::Matrix<double, 3, Eigen::Dynamic> M(3, kNumImus);
  for (int i = 0; i < kNumImus; ++i) M.col(i) = cfg.mount[i] * f.accel[i] - pivot_accel;
  return M;
}

inline AccelTilt accel_tilt(const ImuFrame& f, const Vec3& pivot_accel, const LsWeights& w, const ImuConfig& cfg,
                            double g0) {
  const auto M = compensated_measurements(f, cfg, pivot_accel);
  AccelTilt out;
  out.g_hat = M * w.X1star;
  out.Omega_hat = M * w.X2star;
  if (out.g_hat.norm() < 0.1 * g0) throw DegenerateGravityError("gravity estimate too small to define a tilt");
  const Vec3& g = out.g_hat;
  out.q1A = std::atan2(g.y(), std::hypot(g.x(), g.z()));
  out.q2A = std::atan2(-g.x(), g.z());
  return out;
}

struct EstimatorOptions {
  double alpha = 0.02;
  EulerRateMode euler_rates = EulerRateMode::Simplified;
  PivotMode pivot = PivotMode::Dominant;
  double wheel_filter_hz = 10.0;
  double Ts = 0.01;
  /// Start the fused estimate at the first accelerometer tilt.
  bool init_from_accel = true;
  double q2_hold_above = deg2rad(75.0);
};

struct EstimatorState {
  double q1_hat = 0.0, q2_hat = 0.0;
  double q1G = 0.0, q2G = 0.0, q3G = 0.0;
  Vec3 euler_rates_G = Vec3::Zero();
  double q1_bar = 0.0, q2_bar = 0.0;
  double alpha = 0.02;
  double q1A = 0.0, q2A = 0.0;
  Vec3 pivot_accel = Vec3::Zero();
  double q4_ddot_filtered = 0.0;
  bool initialized = false;
  bool degenerate = false;
  WheelAccelFilter wheel_filter;
  /// Previous Euler rates for the finite-difference terms of the full
  /// pivot model.
  Vec3 prev_rates = Vec3::Zero();

  explicit EstimatorState(const EstimatorOptions& opt = {})
      : alpha(opt.alpha), wheel_filter(opt.wheel_filter_hz, opt.Ts) {}
};

inline void integrate_gyro(EstimatorState& est, const Vec3& rates, double Ts) {
  est.q1G += Ts * rates.x();
  est.q2G += Ts * rates.y();
  est.q3G += Ts * rates.z();
  est.euler_rates_G = rates;
}

/// Complementary filter: the gyro channel advances the previous fused
/// estimate by the measured rate.
inline std::pair<double, double> complementary_fuse(const EstimatorState& est, double q1A, double q2A,
                                                    const Vec3& rates, double Ts) {
  if (!(est.alpha >= 0.0 && est.alpha <= 1.0)) throw ConfigError("fusion parameter alpha must lie in [0, 1]");
  const double a = est.alpha;
  return {a * q1A + (1.0 - a) * (est.q1_hat + Ts * rates.x()), a * q2A + (1.0 - a) * (est.q2_hat + Ts * rates.y())};
}

/// -3 dB frequency of the accelerometer channel of the fused estimate.
inline double complementary_cutoff_hz(double alpha, double Ts) {
  return -std::log(1.0 - alpha) / (2.0 * M_PI * Ts);
}

inline constexpr double kStaticRateThreshold = 0.05;

inline std::pair<double, double> calibrate_bias(const std::vector<ImuFrame>& frames, const LsWeights& w,
                                                const ImuConfig& cfg, double g0,
                                                double rate_threshold = kStaticRateThreshold) {
  if (frames.empty()) throw ConfigError("calibration needs at least one frame");
  double sum_sq = 0.0;
  double q1 = 0.0, q2 = 0.0;
  for (const ImuFrame& f : frames) {
    Vec3 mean = Vec3::Zero();
    for (const Vec3& g : gyro_to_body(f, cfg)) mean += g;
    mean /= kNumImus;
    sum_sq += mean.squaredNorm();
    const AccelTilt t = accel_tilt(f, Vec3::Zero(), w, cfg, g0);
    q1 += t.q1A;
    q2 += t.q2A;
  }
  const double rms = std::sqrt(sum_sq / frames.size());
  if (rms > rate_threshold)
    throw NotStaticError("robot not static during calibration (rms rate " + std::to_string(rms) + " rad/s)");
  return {q1 / frames.size(), q2 / frames.size()};
}

/// One estimator tick: gyro rates, encoder-based pivot acceleration,
/// accelerometer tilt, fusion.
inline void estimator_step(const ImuFrame& f, const EncoderReading& enc, EstimatorState& est, const LsWeights& w,
                           const ImuConfig& cfg, const EstimatorOptions& opt, const RobotParams& p) {
  const Vec3 rates = gyro_euler_rates(gyro_to_body(f, cfg), est.q1_hat, est.q2_hat, opt.euler_rates);
  integrate_gyro(est, rates, opt.Ts);

  const auto acc = est.wheel_filter.step(enc.dq4E);
  est.q4_ddot_filtered = acc.value;
  PivotKinematics k;
  k.q1 = est.q1_hat;
  k.q2 = est.q2_hat;
  k.dq1 = rates.x();
  k.dq3 = rates.z();
  k.dq4 = enc.dq4E;
  k.ddq4 = acc.value;
  if (est.initialized) {
    k.ddq1 = (rates.x() - est.prev_rates.x()) / opt.Ts;
    k.ddq3 = (rates.z() - est.prev_rates.z()) / opt.Ts;
  }
  est.prev_rates = rates;
  est.pivot_accel = pivot_acceleration(k, p, opt.pivot);

  try {
    const AccelTilt t = accel_tilt(f, est.pivot_accel, w, cfg, p.g0);
    est.q1A = t.q1A;
    // q2 is not observable from gravity when the chassis lies on its side
    if (std::abs(t.q1A) < opt.q2_hold_above) est.q2A = t.q2A;
    est.degenerate = false;
  } catch (const DegenerateGravityError&) {
    est.degenerate = true;
  }

  if (!est.initialized) {
    est.initialized = true;
    if (opt.init_from_accel) {
      est.q1_hat = est.q1G = est.q1A;
      est.q2_hat = est.q2G = est.q2A;
      return;
    }
  }
  const auto [q1, q2] = est.degenerate ? std::pair{est.q1_hat + opt.Ts * rates.x(), est.q2_hat + opt.Ts * rates.y()}
                                       : complementary_fuse(est, est.q1A, est.q2A, rates, opt.Ts);
  est.q1_hat = q1;
  est.q2_hat = q2;
}

}  // namespace wheelbot
