#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "wheelbot/errors.hpp"
#include "wheelbot/params.hpp"
#include "wheelbot/rotation.hpp"

namespace wheelbot {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// Generalized coordinates: q = [roll, pitch, yaw, rolling-wheel angle,
/// reaction-wheel angle]. The rolling-wheel angle is measured relative to the
/// roll frame, the reaction-wheel angle relative to the chassis.
struct FullState {
  Vec5 q = Vec5::Zero();
  Vec5 dq = Vec5::Zero();
  Vec2 contact_xy = Vec2::Zero();
};

struct ControlInput {
  double u1 = 0.0;  ///< reaction-wheel motor torque, Nm
  double u2 = 0.0;  ///< rolling-wheel motor torque, Nm
};

enum class Body { Frame = 0, RollingWheel = 1, ReactionWheel = 2 };

/// Motion of one rigid body, everything in inertial coordinates.
struct BodyState {
  Vec3 pos, vel, acc;
  Vec3 omega, alpha;
  Mat3 rotation;  ///< inertial-from-body for the frame in which the inertia is diagonal/constant
};

struct Kinematics {
  std::array<BodyState, 3> bodies;
  Vec3 contact, wheel_center, wheel_center_vel, wheel_center_acc;
  Mat3 R_IB;
  Vec3 omega_B, alpha_B;
};

namespace detail {

/// Forward kinematics of the three bodies. Linear in ddq for fixed (q, dq);
/// the velocity-product terms come from rotating joint axes and lever arms.
inline Kinematics kinematics(const Vec5& q, const Vec5& dq, const Vec5& ddq, const Vec2& contact_xy,
                             const RobotParams& p) {
  const Vec3 e1 = Vec3::UnitX(), e2 = Vec3::UnitY(), e3 = Vec3::UnitZ();
  const Mat3 R_IC = rot_z(q(2));
  const Mat3 R_IW = R_IC * rot_x(q(0));
  const Mat3 R_IB = R_IW * rot_y(q(1));

  const Vec3 a_roll = R_IC * e1;
  const Vec3 a_pitch = R_IW * e2;
  const Vec3 a_rw = R_IB * e1;

  const Vec3 w_C = dq(2) * e3;
  const Vec3 al_C = ddq(2) * e3;
  const Vec3 w_W = w_C + dq(0) * a_roll;
  const Vec3 al_W = al_C + ddq(0) * a_roll + w_C.cross(dq(0) * a_roll);
  const Vec3 w_B = w_W + dq(1) * a_pitch;
  const Vec3 al_B = al_W + ddq(1) * a_pitch + w_W.cross(dq(1) * a_pitch);
  const Vec3 w_RW = w_W + dq(3) * a_pitch;
  const Vec3 al_RW = al_W + ddq(3) * a_pitch + w_W.cross(dq(3) * a_pitch);
  const Vec3 w_RR = w_B + dq(4) * a_rw;
  const Vec3 al_RR = al_B + ddq(4) * a_rw + w_B.cross(dq(4) * a_rw);

  const double r = p.wheel_radius_r_w;
  const Vec3 C(contact_xy.x(), contact_xy.y(), 0.0);
  const Vec3 v_C = r * dq(3) * a_roll;
  const Vec3 a_C = r * ddq(3) * a_roll + r * dq(3) * w_C.cross(a_roll);

  const Vec3 r_W = r * (R_IW * e3);
  const Vec3 W = C + r_W;
  const Vec3 v_W = v_C + w_W.cross(r_W);
  const Vec3 a_W = a_C + al_W.cross(r_W) + w_W.cross(w_W.cross(r_W));

  auto attached = [&](double height) {
    const Vec3 rel = height * (R_IB * e3);
    BodyState b;
    b.pos = W + rel;
    b.vel = v_W + w_B.cross(rel);
    b.acc = a_W + al_B.cross(rel) + w_B.cross(w_B.cross(rel));
    return b;
  };

  Kinematics k;
  BodyState frame = attached(p.frame_cog_height);
  frame.omega = w_B;
  frame.alpha = al_B;
  frame.rotation = R_IB;

  BodyState rolling;
  rolling.pos = W;
  rolling.vel = v_W;
  rolling.acc = a_W;
  rolling.omega = w_RW;
  rolling.alpha = al_RW;
  rolling.rotation = R_IW;  // axisymmetric about its spin axis

  BodyState reaction = attached(p.reaction_wheel_height);
  reaction.omega = w_RR;
  reaction.alpha = al_RR;
  reaction.rotation = R_IB;  // axisymmetric about its spin axis

  k.bodies = {frame, rolling, reaction};
  k.contact = C;
  k.wheel_center = W;
  k.wheel_center_vel = v_W;
  k.wheel_center_acc = a_W;
  k.R_IB = R_IB;
  k.omega_B = w_B;
  k.alpha_B = al_B;
  return k;
}

inline double body_mass(const RobotParams& p, int i) { return i == 0 ? p.m_frame() : p.m_wheel; }

inline Mat3 body_inertia_local(const RobotParams& p, int i) {
  if (i == 0) return p.I_body_cog;
  if (i == 1) return rolling_wheel_inertia(p);
  return reaction_wheel_inertia(p);
}

struct MassSystem {
  Mat5 M;
  Vec5 rhs;  ///< generalized gravity minus velocity-product terms
};

inline MassSystem assemble(const FullState& s, const RobotParams& p) {
  const Kinematics bias = kinematics(s.q, s.dq, Vec5::Zero(), s.contact_xy, p);
  std::array<Kinematics, 5> cols;
  for (int j = 0; j < 5; ++j) cols[j] = kinematics(s.q, Vec5::Zero(), Vec5::Unit(j), s.contact_xy, p);

  const Vec3 gravity(0.0, 0.0, -p.g0);
  MassSystem sys;
  sys.M.setZero();
  sys.rhs.setZero();
  for (int b = 0; b < 3; ++b) {
    const double m = body_mass(p, b);
    const Mat3& R = bias.bodies[b].rotation;
    const Mat3 I = R * body_inertia_local(p, b) * R.transpose();
    const Vec3& w = bias.bodies[b].omega;
    const Vec3 lin_bias = m * bias.bodies[b].acc - m * gravity;
    const Vec3 ang_bias = I * bias.bodies[b].alpha + w.cross(I * w);
    for (int i = 0; i < 5; ++i) {
      const Vec3& vi = cols[i].bodies[b].acc;
      const Vec3& wi = cols[i].bodies[b].alpha;
      sys.rhs(i) -= vi.dot(lin_bias) + wi.dot(ang_bias);
      for (int j = i; j < 5; ++j) {
        const double mij = m * vi.dot(cols[j].bodies[b].acc) + wi.dot(I * cols[j].bodies[b].alpha);
        sys.M(i, j) += mij;
        if (j != i) sys.M(j, i) += mij;
      }
    }
  }
  return sys;
}

}  // namespace detail

/// Generalized forces of the two motors. Each motor torque acts between its
/// wheel and the chassis, so the rolling-wheel motor also loads the pitch.
inline Vec5 input_generalized_force(const ControlInput& u) {
  Vec5 f = Vec5::Zero();
  f(1) = -u.u2;
  f(3) = u.u2;
  f(4) = u.u1;
  return f;
}

inline constexpr double kSingularConditionNumber = 1e12;

/// Joint accelerations of the constrained five-DOF model (Kane's equations
/// with the no-slip rolling constraint built into the contact velocity).
inline Vec5 forward_dynamics(const FullState& s, const ControlInput& u, const RobotParams& p,
                             const Vec5& external = Vec5::Zero()) {
  const detail::MassSystem sys = detail::assemble(s, p);
  Eigen::JacobiSVD<Mat5> svd(sys.M);
  const auto sv = svd.singularValues();
  if (!(sv(4) > 0.0) || sv(0) / sv(4) > kSingularConditionNumber) {
    std::ostringstream msg;
    msg << "mass matrix singular at q = [" << s.q.transpose() << "] (condition " << sv(0) / sv(4) << ")";
    throw SingularityError(msg.str());
  }
  return sys.M.ldlt().solve(sys.rhs + input_generalized_force(u) + external);
}

inline Mat5 mass_matrix(const FullState& s, const RobotParams& p) { return detail::assemble(s, p).M; }

/// Kinetic plus potential energy; the potential is zero at the upright pose.
inline double total_energy(const FullState& s, const RobotParams& p) {
  const Kinematics k = detail::kinematics(s.q, s.dq, Vec5::Zero(), s.contact_xy, p);
  double e = 0.0;
  for (int b = 0; b < 3; ++b) {
    const double m = detail::body_mass(p, b);
    const Mat3& R = k.bodies[b].rotation;
    const Mat3 I = R * detail::body_inertia_local(p, b) * R.transpose();
    const Vec3& w = k.bodies[b].omega;
    e += 0.5 * m * k.bodies[b].vel.squaredNorm() + 0.5 * w.dot(I * w);
    e += m * p.g0 * k.bodies[b].pos.z();
  }
  e -= p.m_total * p.g0 * (p.wheel_radius_r_w + p.cog_height_above_wheel());
  return e;
}

/// Mechanical power delivered by the motors (torque times motor-relative rate).
inline double input_power(const FullState& s, const ControlInput& u) {
  return u.u1 * s.dq(4) + u.u2 * (s.dq(3) - s.dq(1));
}

/// Contact-point velocity implied by rolling without slip.
inline Vec2 contact_velocity(const FullState& s, const RobotParams& p) {
  return p.wheel_radius_r_w * s.dq(3) * Vec2(std::cos(s.q(2)), std::sin(s.q(2)));
}

/// Violation of the rolling constraint by a given contact velocity.
inline Vec2 constraint_residual(const FullState& s, const Vec2& contact_vel, const RobotParams& p) {
  return contact_vel - contact_velocity(s, p);
}

/// Ground reaction force (inertial frame) needed to produce joint
/// accelerations ddq, given any other external force acting on the robot.
inline Vec3 contact_force(const FullState& s, const Vec5& ddq, const RobotParams& p,
                          const Vec3& other_external = Vec3::Zero()) {
  const Kinematics k = detail::kinematics(s.q, s.dq, ddq, s.contact_xy, p);
  Vec3 f = Vec3::Zero();
  for (int b = 0; b < 3; ++b) f += detail::body_mass(p, b) * (k.bodies[b].acc - Vec3(0, 0, -p.g0));
  return f - other_external;
}

inline Kinematics kinematics(const FullState& s, const Vec5& ddq, const RobotParams& p) {
  return detail::kinematics(s.q, s.dq, ddq, s.contact_xy, p);
}

/// Maps a force (inertial frame) applied at a chassis point, given in body
/// coordinates relative to the rolling-wheel center, to generalized forces.
inline Vec5 apply_push(const FullState& s, const Vec3& force, const Vec3& point_body, const RobotParams& p) {
  Vec5 f;
  for (int j = 0; j < 5; ++j) {
    const Kinematics k = detail::kinematics(s.q, Vec5::Zero(), Vec5::Unit(j), s.contact_xy, p);
    const Vec3 rel = k.R_IB * point_body;
    const Vec3 partial_velocity = k.wheel_center_acc + k.alpha_B.cross(rel);
    f(j) = partial_velocity.dot(force);
  }
  return f;
}

/// Upright linearization split into the decoupled roll and pitch blocks.
/// Roll block states [q1, dq1, q5, dq5] with input u1, pitch block
/// [q2, dq2, q4, dq4] with input u2.
struct LinearModel {
  Mat4 A1, A2;
  Vec4 B1, B2;
  double max_cross_coupling = 0.0;
};

inline constexpr std::array<int, 4> kRollIndices = {0, 5, 4, 9};
inline constexpr std::array<int, 4> kPitchIndices = {1, 6, 3, 8};
inline constexpr std::array<int, 2> kYawIndices = {2, 7};

/// Full 10-state linearization x = [q; dq] about the upright rest pose by
/// central differences, with B columns for (u1, u2).
inline void linearize_full(const RobotParams& p, Eigen::Matrix<double, 10, 10>& A, Eigen::Matrix<double, 10, 2>& B,
                           double step = 1e-6) {
  A.setZero();
  B.setZero();
  A.topRightCorner<5, 5>().setIdentity();
  for (int j = 0; j < 10; ++j) {
    FullState plus, minus;
    if (j < 5) {
      plus.q(j) += step;
      minus.q(j) -= step;
    } else {
      plus.dq(j - 5) += step;
      minus.dq(j - 5) -= step;
    }
    A.block<5, 1>(5, j) = (forward_dynamics(plus, {}, p) - forward_dynamics(minus, {}, p)) / (2.0 * step);
  }
  for (int j = 0; j < 2; ++j) {
    ControlInput up, um;
    (j == 0 ? up.u1 : up.u2) = step;
    (j == 0 ? um.u1 : um.u2) = -step;
    B.block<5, 1>(5, j) = (forward_dynamics(FullState{}, up, p) - forward_dynamics(FullState{}, um, p)) / (2.0 * step);
  }
}

inline constexpr double kCrossCouplingTolerance = 1e-8;

inline LinearModel linearize_upright(const RobotParams& p, double step = 1e-6) {
  Eigen::Matrix<double, 10, 10> A;
  Eigen::Matrix<double, 10, 2> B;
  linearize_full(p, A, B, step);

  LinearModel lm;
  double cross = 0.0;
  auto in = [](const std::array<int, 4>& set, int i) {
    for (int v : set)
      if (v == i) return true;
    return false;
  };
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 10; ++c) {
      const bool same = (in(kRollIndices, r) && in(kRollIndices, c)) || (in(kPitchIndices, r) && in(kPitchIndices, c));
      const bool yaw_row = r == kYawIndices[0] || r == kYawIndices[1];
      if (!same && !yaw_row) cross = std::max(cross, std::abs(A(r, c)));
    }
    if (in(kRollIndices, r)) cross = std::max(cross, std::abs(B(r, 1)));
    if (in(kPitchIndices, r)) cross = std::max(cross, std::abs(B(r, 0)));
  }
  if (cross > kCrossCouplingTolerance) {
    std::ostringstream msg;
    msg << "roll/pitch blocks of the upright linearization are coupled (max entry " << cross << ")";
    throw ModelInconsistencyError(msg.str());
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      lm.A1(i, j) = A(kRollIndices[i], kRollIndices[j]);
      lm.A2(i, j) = A(kPitchIndices[i], kPitchIndices[j]);
    }
    lm.B1(i) = B(kRollIndices[i], 0);
    lm.B2(i) = B(kPitchIndices[i], 1);
  }
  lm.max_cross_coupling = cross;
  return lm;
}

inline Mat4 controllability_matrix(const Mat4& A, const Vec4& B) {
  Mat4 c;
  c.col(0) = B;
  for (int i = 1; i < 4; ++i) c.col(i) = A * c.col(i - 1);
  return c;
}

inline int controllability_rank(const Mat4& A, const Vec4& B) {
  const Mat4 c = controllability_matrix(A, B);
  Eigen::FullPivLU<Mat4> lu(c);
  lu.setThreshold(1e-10);
  return static_cast<int>(lu.rank());
}

}  // namespace wheelbot
