#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wheelbot/params.hpp"
#include "wheelbot/rotation.hpp"

namespace wheelbot {

/// Reaction-wheel pendulum state. theta is the angle of the COG from the
/// vertical through the active pivot, positive toward the side the robot
/// lies on; omega is the absolute reaction-wheel rate.
struct PlanarState {
  double theta = 0.0;
  double dtheta = 0.0;
  double omega = 0.0;
};

enum class PivotId { C1, C2 };

/// Which wheel acts as the reaction wheel of the planar model: the
/// reaction wheel (roll plane, stand-up) or the rolling wheel (pitch plane,
/// roll-up contact phase).
enum class PlanarAxis { Roll = 0, Pitch = 1 };

struct PivotGeometry {
  PivotId pivot_id = PivotId::C1;
  double cog_distance = 0.0;
  double theta_start = 0.0;
  double theta_end = 0.0;
  /// Pendulum angle at which the gravity torque changes sign.
  double theta_gravity_assist = 0.0;
  double I_total = 0.0;

  double sweep() const { return theta_start - theta_end; }
  /// Rotation from the step's rest pose until gravity starts helping.
  double assist_from_start() const { return theta_start - theta_gravity_assist; }
};

/// Pendulum angle, seen from the wheel contact, of the pose resting on both
/// the chassis corner and the wheel rim.
inline double touchdown_angle(const RobotParams& p) {
  const double a = p.wheel_radius_r_w + p.cog_height_above_wheel();
  return std::atan2(a - p.lever_L1, p.chassis_half_width_b);
}

/// Pivot geometry of one stand-up step. C1 is the chassis corner, offset
/// (b, L1) from the COG; C2 is the wheel contact, straight below the COG.
inline PivotGeometry derive_pivot_geometry(const RobotParams& p, PivotId id, PlanarAxis axis = PlanarAxis::Roll) {
  const double b = p.chassis_half_width_b;
  const double beta = touchdown_angle(p);
  const double i_cog = planar_inertia_about_cog(p, static_cast<int>(axis));
  PivotGeometry g;
  g.pivot_id = id;
  g.theta_gravity_assist = 0.0;
  if (id == PivotId::C1) {
    g.cog_distance = std::hypot(b, p.lever_L1);
    g.theta_start = std::atan2(p.lever_L1, b);
    g.theta_end = g.theta_start - (0.5 * M_PI - beta);
  } else {
    g.cog_distance = p.wheel_radius_r_w + p.cog_height_above_wheel();
    g.theta_start = beta;
    g.theta_end = 0.0;
  }
  g.I_total = i_cog + p.m_total * g.cog_distance * g.cog_distance;
  return g;
}

/// Pendulum angle from the upright body pose as a function of the step's
/// pendulum angle: 90 degrees at rest on the chassis, touchdown angle at the
/// end of step one, zero upright.
inline double body_tilt_from_planar(double theta, PivotId id, const RobotParams& p) {
  if (id == PivotId::C2) return theta;
  const PivotGeometry g1 = derive_pivot_geometry(p, PivotId::C1);
  return theta - g1.theta_start + 0.5 * M_PI;
}

struct PlanarDerivative {
  double ddtheta = 0.0;
  double domega = 0.0;
};

/// Reaction-wheel pendulum dynamics: the motor torque enters the pendulum
/// with negative sign and the wheel with positive sign.
inline PlanarDerivative planar_dynamics(const PlanarState& s, double Q_w, const PivotGeometry& g,
                                        const RobotParams& p) {
  const double q_g = p.m_total * p.g0 * g.cog_distance * std::sin(s.theta);
  return {(q_g - Q_w) / g.I_total, Q_w / p.I_wheel_spin};
}

namespace detail {

/// Dynamics with the ground blocking rotation past the rest pose.
inline PlanarDerivative planar_dynamics_grounded(const PlanarState& s, double Q_w, const PivotGeometry& g,
                                                 const RobotParams& p) {
  PlanarDerivative d = planar_dynamics(s, Q_w, g, p);
  if (s.theta >= g.theta_start && s.dtheta >= 0.0 && d.ddtheta > 0.0) d.ddtheta = 0.0;
  return d;
}

}  // namespace detail

/// One RK4 step of the grounded pendulum with the torque held constant.
inline PlanarState planar_rk4_step(const PlanarState& s, double Q_w, const PivotGeometry& g, const RobotParams& p,
                                   double dt) {
  auto f = [&](const PlanarState& x) { return detail::planar_dynamics_grounded(x, Q_w, g, p); };
  auto add = [](const PlanarState& x, const PlanarDerivative& d, const PlanarState& rate, double h) {
    return PlanarState{x.theta + h * rate.dtheta, x.dtheta + h * d.ddtheta, x.omega + h * d.domega};
  };
  const PlanarDerivative k1 = f(s);
  const PlanarState s2 = add(s, k1, s, 0.5 * dt);
  const PlanarDerivative k2 = f(s2);
  const PlanarState s3 = add(s, k2, s2, 0.5 * dt);
  const PlanarDerivative k3 = f(s3);
  const PlanarState s4 = add(s, k3, s3, dt);
  const PlanarDerivative k4 = f(s4);

  PlanarState out;
  out.theta = s.theta + dt / 6.0 * (s.dtheta + 2.0 * s2.dtheta + 2.0 * s3.dtheta + s4.dtheta);
  out.dtheta = s.dtheta + dt / 6.0 * (k1.ddtheta + 2.0 * k2.ddtheta + 2.0 * k3.ddtheta + k4.ddtheta);
  out.omega = s.omega + dt / 6.0 * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega);
  if (out.theta > g.theta_start) {
    out.theta = g.theta_start;
    out.dtheta = std::min(out.dtheta, 0.0);
  }
  return out;
}

/// Torque request as a function of time since the step started and the step
/// index (0 or 1).
using TorqueProfile = std::function<double(double t_in_step, int step)>;

inline TorqueProfile constant_torque(double torque) {
  return [torque](double, int) { return torque; };
}

enum class BrakeModel {
  /// Wheel rate is set back to omega0 before each step.
  Reset,
  /// Wheel is braked toward omega0 with at most max_brake_torque between steps.
  ExplicitT3,
};

enum class StandupStatus {
  Success,
  /// Requested torque exceeded what the motor can deliver at the wheel speed.
  EnvelopeViolation,
  /// Step did not finish within the time limit.
  Stalled,
};

inline const char* to_string(StandupStatus s) {
  switch (s) {
    case StandupStatus::Success: return "success";
    case StandupStatus::EnvelopeViolation: return "envelope_violation";
    case StandupStatus::Stalled: return "stalled";
  }
  return "unknown";
}

struct StandupOptions {
  double dt = 1e-4;
  double max_step_time = 3.0;
  BrakeModel brake = BrakeModel::Reset;
  bool record_samples = false;
  /// Keep one sample every this many integration steps.
  int sample_stride = 10;
};

struct StandupSample {
  double t;
  int step;
  double theta;
  double dtheta;
  double omega;
  double torque;
};

struct StandupTrace {
  bool success = false;
  StandupStatus status = StandupStatus::Stalled;
  /// Rotation completed in each step, rad.
  std::array<double, 2> sweeps{0.0, 0.0};
  std::array<double, 2> step_durations{0.0, 0.0};
  double brake_duration = 0.0;
  double peak_omega = 0.0;
  double duration = 0.0;
  /// First time the profile asked for more than the envelope allows.
  double violation_time = -1.0;
  int failed_step = -1;
  std::vector<StandupSample> samples;
};

/// Integrates both stand-up steps with the given torque profile.
inline StandupTrace simulate_standup(const RobotParams& p, const TorqueProfile& profile, double omega0,
                                     const StandupOptions& opt = {}) {
  StandupTrace tr;
  double t = 0.0;
  double omega = omega0;
  tr.peak_omega = std::abs(omega0);
  long counter = 0;

  for (int step = 0; step < 2; ++step) {
    const PivotGeometry g = derive_pivot_geometry(p, step == 0 ? PivotId::C1 : PivotId::C2);
    if (step == 1) {
      if (opt.brake == BrakeModel::Reset) {
        omega = omega0;
      } else {
        const double t_brake_start = t;
        const double limit = max_brake_torque(p);
        while (std::abs(omega - omega0) > 1e-9 && t - t_brake_start < opt.max_step_time && limit > 0.0) {
          const double dir = omega0 > omega ? 1.0 : -1.0;
          const double torque = dir * std::min(limit, available_torque(dir, omega, p));
          if (std::abs(torque) <= 0.0) break;
          double next = omega + opt.dt * torque / p.I_wheel_spin;
          if ((next - omega0) * (omega - omega0) < 0.0) next = omega0;
          omega = next;
          t += opt.dt;
        }
        tr.brake_duration = t - t_brake_start;
      }
    }

    PlanarState s{g.theta_start, 0.0, omega};
    const double t0 = t;
    bool done = false;
    while (!done) {
      const double t_step = t - t0;
      if (t_step > opt.max_step_time) {
        tr.status = StandupStatus::Stalled;
        tr.failed_step = step;
        tr.duration = t;
        return tr;
      }
      const double q = profile(t_step, step);
      if (std::abs(q) > available_torque(q, s.omega, p) + 1e-12) {
        tr.status = StandupStatus::EnvelopeViolation;
        tr.violation_time = t;
        tr.failed_step = step;
        tr.sweeps[step] = g.theta_start - s.theta;
        tr.duration = t;
        return tr;
      }
      if (opt.record_samples && counter % opt.sample_stride == 0)
        tr.samples.push_back({t, step, s.theta, s.dtheta, s.omega, q});
      ++counter;

      const PlanarState next = planar_rk4_step(s, q, g, p, opt.dt);
      if (next.theta <= g.theta_end) {
        const double frac = (s.theta - g.theta_end) / (s.theta - next.theta);
        t += frac * opt.dt;
        s = next;
        done = true;
      } else {
        s = next;
        t += opt.dt;
      }
      tr.peak_omega = std::max(tr.peak_omega, std::abs(s.omega));
    }
    tr.sweeps[step] = g.sweep();
    tr.step_durations[step] = t - t0;
    omega = s.omega;
  }
  tr.success = true;
  tr.status = StandupStatus::Success;
  tr.duration = t;
  return tr;
}

}  // namespace wheelbot
