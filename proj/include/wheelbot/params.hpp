#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "wheelbot/errors.hpp"
#include "wheelbot/rotation.hpp"

namespace wheelbot {

/// Hollow-cylinder spin inertia of a wheel whose rim is 8 mm thick.
inline double wheel_inertia(double m_wheel, double r_w) {
  if (!(m_wheel > 0.0)) throw ParameterError("wheel_inertia: wheel mass must be positive");
  if (!(r_w > 0.008)) throw ParameterError("wheel_inertia: wheel radius must exceed the 8 mm rim");
  const double r_in = r_w - 0.008;
  return 0.5 * m_wheel * (r_in * r_in + r_w * r_w);
}

/// Spin inertia quoted for the assembled copper-ring wheel.
inline constexpr double kDatasheetWheelInertia = 5e-4;

enum class WheelInertiaPreset { HollowCylinder, Datasheet };

inline double rpm_to_rad_per_s(double rpm) { return rpm * 2.0 * M_PI / 60.0; }

/// Physical constants of the robot. Lengths in m, masses in kg, inertias in
/// kg m^2, torques in Nm. Body frame: x along the reaction-wheel axis, y along
/// the rolling-wheel axis, z from the rolling-wheel center toward the top.
struct RobotParams {
  double half_height_a = 0.110;
  /// Lateral distance from the COG to the chassis face the robot lies on.
  double chassis_half_width_b = 0.083;
  double wheel_radius_r_w = 0.106;
  double lever_L1 = 0.061;
  double lever_L2 = 0.061;
  double brake_lever_L3 = 0.0415;

  double m_total = 1.4;
  double m_wheel = 0.32;

  double I_wheel_spin = wheel_inertia(0.32, 0.106);
  double I_wheel_transverse = 0.5 * wheel_inertia(0.32, 0.106) + 0.32 * 0.010 * 0.010 / 12.0;

  /// Edge length of the cuboid chassis used for the frame inertia.
  double chassis_side = 0.083;
  /// Frame (center assembly) inertia about its own COG, body axes.
  Mat3 I_body_cog = Mat3::Identity() * ((1.4 - 2 * 0.32) * 0.083 * 0.083 / 6.0);

  /// Frame COG and reaction-wheel center, measured along body z from the
  /// rolling-wheel center.
  double frame_cog_height = 0.110 - 0.106;
  double reaction_wheel_height = 2.0 * (0.110 - 0.106);

  double g0 = 9.81;

  double K_T = 0.075;
  double i_max = 18.0;
  double tau_max = 1.3;
  double omega_knee = 282.0;
  double omega_noload = rpm_to_rad_per_s(160.0 * 22.0);

  double Ts_control = 0.01;

  double m_frame() const { return m_total - 2.0 * m_wheel; }

  /// Height of the system COG above the rolling-wheel center (upright).
  double cog_height_above_wheel() const {
    return (m_frame() * frame_cog_height + m_wheel * reaction_wheel_height) / m_total;
  }
};

inline void validate(const RobotParams& p) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + " must be positive");
  };
  positive(p.half_height_a, "half_height_a");
  positive(p.chassis_half_width_b, "chassis_half_width_b");
  positive(p.wheel_radius_r_w, "wheel_radius_r_w");
  positive(p.m_total, "m_total");
  positive(p.m_wheel, "m_wheel");
  positive(p.I_wheel_spin, "I_wheel_spin");
  positive(p.I_wheel_transverse, "I_wheel_transverse");
  positive(p.chassis_side, "chassis_side");
  positive(p.g0, "g0");
  positive(p.K_T, "K_T");
  positive(p.i_max, "i_max");
  positive(p.tau_max, "tau_max");
  positive(p.omega_knee, "omega_knee");
  positive(p.Ts_control, "Ts_control");
  if (p.lever_L1 < 0.0 || p.lever_L2 < 0.0 || p.brake_lever_L3 < 0.0)
    throw ParameterError("lever lengths must be non-negative");
  if (!(p.wheel_radius_r_w < p.half_height_a))
    throw ParameterError("wheel_radius_r_w must be smaller than half_height_a");
  if (!(p.m_total > 2.0 * p.m_wheel))
    throw ParameterError("m_total must exceed twice m_wheel (frame mass positive)");
  if (!(p.omega_noload > p.omega_knee))
    throw ParameterError("omega_noload must exceed omega_knee");
  if (std::abs(p.K_T * p.i_max - p.tau_max) > 0.1 * p.tau_max)
    throw ParameterError("tau_max inconsistent with K_T * i_max (more than 10% apart)");
  Eigen::SelfAdjointEigenSolver<Mat3> eig(p.I_body_cog);
  if ((p.I_body_cog - p.I_body_cog.transpose()).norm() > 1e-12 || eig.eigenvalues().minCoeff() <= 0.0)
    throw ParameterError("I_body_cog must be symmetric positive definite");
}

inline double static_torque_bound(const RobotParams& p) {
  return std::max(p.lever_L1 * p.m_total * p.g0, p.lever_L2 * p.m_total * p.g0);
}

/// Largest reaction-wheel braking torque that keeps the chassis on the ground
/// between the two stand-up steps.
inline double max_brake_torque(const RobotParams& p) { return p.brake_lever_L3 * p.m_total * p.g0; }

/// Torque magnitude available while accelerating the wheel at speed omega.
inline double torque_speed_envelope(double omega, const RobotParams& p) {
  const double w = std::abs(omega);
  if (w <= p.omega_knee) return p.tau_max;
  if (w >= p.omega_noload) return 0.0;
  return p.tau_max * (p.omega_noload - w) / (p.omega_noload - p.omega_knee);
}

/// Torque magnitude available for a command of the given sign. Torque that
/// opposes the wheel's motion is braking and always gets tau_max.
inline double available_torque(double torque, double omega, const RobotParams& p) {
  if (torque * omega < 0.0) return p.tau_max;
  return torque_speed_envelope(omega, p);
}

/// Inertia of a solid cuboid about its center.
inline Mat3 cuboid_inertia(double mass, double lx, double ly, double lz) {
  Mat3 i = Mat3::Zero();
  i(0, 0) = mass * (ly * ly + lz * lz) / 12.0;
  i(1, 1) = mass * (lx * lx + lz * lz) / 12.0;
  i(2, 2) = mass * (lx * lx + ly * ly) / 12.0;
  return i;
}

/// Rolling-wheel inertia in body axes (spin about y).
inline Mat3 rolling_wheel_inertia(const RobotParams& p) {
  return Eigen::Vector3d(p.I_wheel_transverse, p.I_wheel_spin, p.I_wheel_transverse).asDiagonal();
}

/// Reaction-wheel inertia in body axes (spin about x).
inline Mat3 reaction_wheel_inertia(const RobotParams& p) {
  return Eigen::Vector3d(p.I_wheel_spin, p.I_wheel_transverse, p.I_wheel_transverse).asDiagonal();
}

/// Whole-robot inertia about the system COG at the upright pose, body axes.
inline Mat3 composite_inertia(const RobotParams& p) {
  const double h = p.cog_height_above_wheel();
  auto shift = [](double m, const Vec3& d) { return m * (d.squaredNorm() * Mat3::Identity() - d * d.transpose()); };
  Mat3 total = p.I_body_cog + shift(p.m_frame(), Vec3(0, 0, p.frame_cog_height - h));
  total += rolling_wheel_inertia(p) + shift(p.m_wheel, Vec3(0, 0, -h));
  total += reaction_wheel_inertia(p) + shift(p.m_wheel, Vec3(0, 0, p.reaction_wheel_height - h));
  return total;
}

/// Inertia of the robot about the body axis `axis` (0 = x, 1 = y) through the
/// COG, leaving out the spin inertia of whichever wheel spins about that axis.
/// This is the pendulum inertia of a planar model where that wheel acts as
/// the reaction wheel.
inline double planar_inertia_about_cog(const RobotParams& p, int axis) {
  return composite_inertia(p)(axis, axis) - p.I_wheel_spin;
}

/// Recomputes all quantities that follow from the primary geometry.
inline RobotParams derive_defaults(RobotParams p, WheelInertiaPreset preset = WheelInertiaPreset::HollowCylinder) {
  const double width = 0.010;
  p.I_wheel_spin = preset == WheelInertiaPreset::HollowCylinder ? wheel_inertia(p.m_wheel, p.wheel_radius_r_w)
                                                                 : kDatasheetWheelInertia;
  p.I_wheel_transverse = 0.5 * p.I_wheel_spin + p.m_wheel * width * width / 12.0;
  p.I_body_cog = cuboid_inertia(p.m_frame(), p.chassis_side, p.chassis_side, p.chassis_side);
  p.frame_cog_height = p.half_height_a - p.wheel_radius_r_w;
  p.reaction_wheel_height = 2.0 * (p.half_height_a - p.wheel_radius_r_w);
  p.brake_lever_L3 = 0.5 * p.chassis_half_width_b;
  return p;
}

inline RobotParams default_params(WheelInertiaPreset preset = WheelInertiaPreset::HollowCylinder) {
  return derive_defaults(RobotParams{}, preset);
}

inline WheelInertiaPreset parse_wheel_preset(const std::string& name) {
  if (name == "hollow_cylinder") return WheelInertiaPreset::HollowCylinder;
  if (name == "datasheet") return WheelInertiaPreset::Datasheet;
  throw ConfigError("unknown wheel_inertia_preset '" + name + "' (expected hollow_cylinder or datasheet)");
}

/// Builds parameters from a flat JSON object. Primary keys override the
/// defaults; derived quantities are recomputed unless given explicitly.
/// Unknown keys are rejected.
inline RobotParams params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("parameter document must be a JSON object");
  static const std::set<std::string> known = {
      "schema_version", "wheel_inertia_preset", "half_height_a", "chassis_half_width_b", "wheel_radius_r_w",
      "lever_L1", "lever_L2", "brake_lever_L3", "m_total", "m_wheel", "I_wheel_spin", "I_wheel_transverse",
      "chassis_side", "I_body_cog", "frame_cog_height", "reaction_wheel_height", "g0", "K_T", "i_max", "tau_max",
      "omega_knee", "omega_noload", "Ts_control"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown parameter key '" + key + "'");
  }
  auto number = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number()) throw ConfigError(std::string("parameter '") + key + "' must be a number");
    out = j.at(key).get<double>();
  };

  RobotParams p;
  number("half_height_a", p.half_height_a);
  number("chassis_half_width_b", p.chassis_half_width_b);
  number("wheel_radius_r_w", p.wheel_radius_r_w);
  number("lever_L1", p.lever_L1);
  number("lever_L2", p.lever_L2);
  number("m_total", p.m_total);
  number("m_wheel", p.m_wheel);
  number("chassis_side", p.chassis_side);
  number("g0", p.g0);
  number("K_T", p.K_T);
  number("i_max", p.i_max);
  number("tau_max", p.tau_max);
  number("omega_knee", p.omega_knee);
  number("omega_noload", p.omega_noload);
  number("Ts_control", p.Ts_control);

  WheelInertiaPreset preset = WheelInertiaPreset::HollowCylinder;
  if (j.contains("wheel_inertia_preset")) {
    if (!j.at("wheel_inertia_preset").is_string()) throw ConfigError("parameter 'wheel_inertia_preset' must be a string");
    preset = parse_wheel_preset(j.at("wheel_inertia_preset").get<std::string>());
  }
  if (!(p.m_wheel > 0.0) || !(p.wheel_radius_r_w > 0.008) || !(p.m_total > 2.0 * p.m_wheel))
    throw ParameterError("invalid wheel mass, wheel radius or total mass");
  p = derive_defaults(p, preset);

  number("brake_lever_L3", p.brake_lever_L3);
  number("I_wheel_spin", p.I_wheel_spin);
  number("I_wheel_transverse", p.I_wheel_transverse);
  number("frame_cog_height", p.frame_cog_height);
  number("reaction_wheel_height", p.reaction_wheel_height);
  if (j.contains("I_body_cog")) {
    const auto& m = j.at("I_body_cog");
    if (!m.is_array() || m.size() != 3) throw ConfigError("parameter 'I_body_cog' must be a 3x3 array");
    for (int r = 0; r < 3; ++r) {
      if (!m[r].is_array() || m[r].size() != 3) throw ConfigError("parameter 'I_body_cog' must be a 3x3 array");
      for (int c = 0; c < 3; ++c) p.I_body_cog(r, c) = m[r][c].get<double>();
    }
  }
  validate(p);
  return p;
}

inline RobotParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open parameter file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("parameter file '" + path + "' is not valid JSON: " + e.what());
  }
  return params_from_json(j);
}

}  // namespace wheelbot
