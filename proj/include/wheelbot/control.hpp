#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <sstream>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "wheelbot/dynamics.hpp"
#include "wheelbot/errors.hpp"
#include "wheelbot/estimation.hpp"
#include "wheelbot/params.hpp"
#include "wheelbot/sensors.hpp"
#include "wheelbot/standup.hpp"

namespace wheelbot {

using Eigen::MatrixXd;

struct Discretized {
  MatrixXd Ad, Bd;
};

/// Zero-order-hold discretization from the exponential of [[A, B], [0, 0]] Ts.
inline Discretized zoh_discretize(const MatrixXd& A, const MatrixXd& B, double Ts) {
  if (!(Ts > 0.0)) throw std::invalid_argument("zoh_discretize: Ts must be positive");
  const Eigen::Index n = A.rows(), m = B.cols();
  MatrixXd aug = MatrixXd::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = A * Ts;
  aug.topRightCorner(n, m) = B * Ts;
  const MatrixXd e = aug.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

struct DareSolution {
  MatrixXd K;  ///< u = -K x
  MatrixXd P;
  int iterations = 0;
};

inline double spectral_radius(const MatrixXd& A) {
  return A.eigenvalues().cwiseAbs().maxCoeff();
}

/// Riccati residual A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q.
inline MatrixXd dare_residual(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R,
                              const MatrixXd& P) {
  const MatrixXd S = R + B.transpose() * P * B;
  const MatrixXd BtPA = B.transpose() * P * A;
  return A.transpose() * P * A - P - BtPA.transpose() * S.ldlt().solve(BtPA) + Q;
}

namespace detail {

inline void check_stabilizable(const MatrixXd& A, const MatrixXd& B) {
  const Eigen::Index n = A.rows();
  Eigen::EigenSolver<MatrixXd> es(A);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    if (std::abs(lam) < 1.0 - 1e-12) continue;
    Eigen::MatrixXcd pbh(n, n + B.cols());
    pbh.leftCols(n) = lam * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    pbh.rightCols(B.cols()) = B.cast<std::complex<double>>();
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(pbh);
    lu.setThreshold(1e-10);
    if (lu.rank() < n) {
      std::ostringstream msg;
      msg << "pair (A, B) is not stabilizable: rank [lambda I - A, B] = " << lu.rank() << " < " << n
          << " at eigenvalue " << lam;
      throw SynthesisError(msg.str());
    }
  }
}

}  // namespace detail

/// Discrete algebraic Riccati equation by the structured doubling algorithm.
inline DareSolution solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q, const MatrixXd& R,
                               double tol = 1e-12, int max_iter = 200) {
  const Eigen::Index n = A.rows();
  if (B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() || R.cols() != B.cols())
    throw SynthesisError("solve_dare: dimension mismatch");
  if (R.ldlt().info() != Eigen::Success || (R.ldlt().vectorD().array() <= 0.0).any())
    throw SynthesisError("solve_dare: R must be positive definite");
  detail::check_stabilizable(A, B);

  const MatrixXd I = MatrixXd::Identity(n, n);
  MatrixXd Ak = A;
  MatrixXd G = B * R.ldlt().solve(B.transpose());
  MatrixXd H = Q;
  DareSolution sol;
  bool converged = false;
  for (int k = 1; k <= max_iter; ++k) {
    const Eigen::PartialPivLU<MatrixXd> W(I + G * H);
    const MatrixXd WA = W.solve(Ak);
    const MatrixXd WG = W.solve(G);
    const MatrixXd H_next = H + Ak.transpose() * H * WA;
    G = G + Ak * WG * Ak.transpose();
    Ak = Ak * WA;
    const double change = (H_next - H).norm();
    H = 0.5 * (H_next + H_next.transpose());
    G = 0.5 * (G + G.transpose());
    sol.iterations = k;
    if (!H.allFinite()) break;
    if (change <= tol * std::max(1.0, H.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "Riccati iteration did not converge in " << max_iter << " iterations";
    throw SynthesisError(msg.str());
  }
  sol.P = H;
  const MatrixXd S = R + B.transpose() * H * B;
  sol.K = S.ldlt().solve(B.transpose() * H * A);
  return sol;
}

/// Gain rows of the balancing law
///   u1 = s K1 [q1_hat - q1_bar, dq1_G, q5_E, dq5_E]
///   u2 = s K2 [q2_hat - q2_bar, dq2_G, q4_E, dq4_E].
struct LqrGains {
  Vec4 K1 = Vec4::Zero();
  Vec4 K2 = Vec4::Zero();
  double sign = 1.0;
};

inline LqrGains reference_gains() {
  LqrGains g;
  g.K1 << 4.5, 0.25, 0.0003, 0.0018;
  g.K2 << 1.6, 0.14, 0.04, 0.0344;
  return g;
}

/// Measured-state transforms: the rolling-wheel encoder sees q4 - q2.
inline Mat4 roll_measurement_map() { return Mat4::Identity(); }

inline Mat4 pitch_measurement_map() {
  Mat4 T = Mat4::Identity();
  T(2, 0) = -1.0;
  T(3, 1) = -1.0;
  return T;
}

/// Discrete closed loop of one block under u = s K T x with the command
/// applied delay_steps periods late.
inline MatrixXd closed_loop(const Mat4& A, const Vec4& B, const Vec4& K, const Mat4& T, double sign, double Ts,
                            int delay_steps) {
  const Discretized d = zoh_discretize(A, B, Ts);
  const Eigen::RowVector4d F = sign * K.transpose() * T;
  if (delay_steps <= 0) return d.Ad + d.Bd * F;
  const int n = 4 + delay_steps;
  MatrixXd cl = MatrixXd::Zero(n, n);
  cl.topLeftCorner(4, 4) = d.Ad;
  cl.block(0, 4 + delay_steps - 1, 4, 1) = d.Bd;
  cl.block(4, 0, 1, 4) = F;
  for (int i = 1; i < delay_steps; ++i) cl(4 + i, 4 + i - 1) = 1.0;
  return cl;
}

struct ClosedLoopRadii {
  double roll = 0.0;
  double pitch = 0.0;
  bool stable() const { return roll < 1.0 && pitch < 1.0; }
};

inline ClosedLoopRadii closed_loop_radii(const LinearModel& lm, const LqrGains& g, double Ts, int delay_steps) {
  return {spectral_radius(closed_loop(lm.A1, lm.B1, g.K1, roll_measurement_map(), g.sign, Ts, delay_steps)),
          spectral_radius(closed_loop(lm.A2, lm.B2, g.K2, pitch_measurement_map(), g.sign, Ts, delay_steps))};
}

/// Picks the sign under which both blocks are stable.
inline LqrGains resolve_sign(LqrGains g, const LinearModel& lm, double Ts, int delay_steps = 0) {
  for (double s : {1.0, -1.0}) {
    g.sign = s;
    if (closed_loop_radii(lm, g, Ts, delay_steps).stable()) return g;
  }
  g.sign = 1.0;
  const auto plus = closed_loop_radii(lm, g, Ts, delay_steps);
  g.sign = -1.0;
  const auto minus = closed_loop_radii(lm, g, Ts, delay_steps);
  std::ostringstream msg;
  msg << "gains stabilize neither sign convention (radii +: " << plus.roll << ", " << plus.pitch
      << "; -: " << minus.roll << ", " << minus.pitch << ")";
  throw SynthesisError(msg.str());
}

struct LqrWeights {
  Vec4 Q1 = Vec4::Zero();
  double R1 = 1.0;
  Vec4 Q2 = Vec4::Zero();
  double R2 = 1.0;
};

/// Weights whose gains land near the reference ones.
inline LqrWeights default_weights() {
  LqrWeights w;
  w.Q1 << 1.0, 1e-2, 1e-8, 1e-6;
  w.R1 = 0.1;
  w.Q2 << 1.0, 1e-2, 1e-3, 1e-4;
  w.R2 = 1.0;
  return w;
}

struct BlockSynthesis {
  Discretized d;
  DareSolution dare;
  Vec4 K_law;
};

inline BlockSynthesis synthesize_block(const Mat4& A, const Vec4& B, const Vec4& Qdiag, double R, const Mat4& T,
                                       double Ts) {
  BlockSynthesis s;
  s.d = zoh_discretize(A, B, Ts);
  s.dare = solve_dare(s.d.Ad, s.d.Bd, MatrixXd(Qdiag.asDiagonal()), MatrixXd::Constant(1, 1, R));
  const Eigen::RowVector4d k = s.dare.K.row(0);
  s.K_law = -(k * T.inverse()).transpose();
  return s;
}

/// LQR gains expressed in the balancing-law convention with sign +1.
inline LqrGains synthesize_gains(const LinearModel& lm, double Ts, const LqrWeights& w = default_weights()) {
  LqrGains g;
  g.K1 = synthesize_block(lm.A1, lm.B1, w.Q1, w.R1, roll_measurement_map(), Ts).K_law;
  g.K2 = synthesize_block(lm.A2, lm.B2, w.Q2, w.R2, pitch_measurement_map(), Ts).K_law;
  g.sign = 1.0;
  return g;
}

struct SaturatedCommand {
  double u = 0.0;
  double current = 0.0;
};

/// Clips to the torque-speed envelope and the current limit.
inline SaturatedCommand saturate_command(double u, double wheel_rate, const RobotParams& p) {
  const double limit = std::min(p.tau_max, available_torque(u, wheel_rate, p));
  double clipped = std::clamp(u, -limit, limit);
  double current = clipped / p.K_T;
  if (std::abs(current) > p.i_max) {
    current = std::copysign(p.i_max, current);
    clipped = current * p.K_T;
  }
  return {clipped, current};
}

/// Wheel-angle references that leak toward the measured angle, so the
/// angle terms of the law act on a slowly forgotten offset.
struct BalanceRefs {
  double q4_ref = 0.0;
  double q5_ref = 0.0;
  double leak = 0.999;

  void reset(const EncoderReading& enc) {
    q4_ref = enc.q4E;
    q5_ref = enc.q5E;
  }
  void update(const EncoderReading& enc) {
    q4_ref = enc.q4E - leak * (enc.q4E - q4_ref);
    q5_ref = enc.q5E - leak * (enc.q5E - q5_ref);
  }
};

inline ControlInput balance_law(const EstimatorState& est, const EncoderReading& enc, const LqrGains& g,
                                const BalanceRefs& refs) {
  const Vec4 x1(est.q1_hat - est.q1_bar, est.euler_rates_G.x(), enc.q5E - refs.q5_ref, enc.dq5E);
  const Vec4 x2(est.q2_hat - est.q2_bar, est.euler_rates_G.y(), enc.q4E - refs.q4_ref, enc.dq4E);
  return {g.sign * g.K1.dot(x1), g.sign * g.K2.dot(x2)};
}

enum class ManeuverPhase {
  Idle,
  StandupSpin,
  StandupStep1,
  StandupStep2,
  RollupContact,
  RollupRotate,
  BalanceRollOnly,
  BalanceFull,
  Fallen,
};

inline const char* to_string(ManeuverPhase p) {
  switch (p) {
    case ManeuverPhase::Idle: return "Idle";
    case ManeuverPhase::StandupSpin: return "StandupSpin";
    case ManeuverPhase::StandupStep1: return "StandupStep1";
    case ManeuverPhase::StandupStep2: return "StandupStep2";
    case ManeuverPhase::RollupContact: return "RollupContact";
    case ManeuverPhase::RollupRotate: return "RollupRotate";
    case ManeuverPhase::BalanceRollOnly: return "BalanceRollOnly";
    case ManeuverPhase::BalanceFull: return "BalanceFull";
    case ManeuverPhase::Fallen: return "Fallen";
  }
  return "Unknown";
}

inline ManeuverPhase phase_from_string(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(ManeuverPhase::Fallen); ++i) {
    const auto p = static_cast<ManeuverPhase>(i);
    if (s == to_string(p)) return p;
  }
  throw ConfigError("unknown phase '" + s + "'");
}

/// Allowed edges of the phase graph.
inline bool transition_allowed(ManeuverPhase from, ManeuverPhase to) {
  using P = ManeuverPhase;
  if (from == to) return true;
  if (from == P::Fallen) return false;
  if (to == P::Fallen) return true;
  switch (from) {
    case P::Idle: return to == P::StandupSpin || to == P::RollupContact || to == P::BalanceFull;
    case P::StandupSpin: return to == P::StandupStep1;
    case P::StandupStep1: return to == P::StandupStep2;
    case P::StandupStep2: return to == P::BalanceRollOnly;
    case P::RollupContact: return to == P::RollupRotate;
    case P::RollupRotate: return to == P::BalanceFull;
    case P::BalanceRollOnly: return to == P::BalanceFull;
    default: return false;
  }
}

/// Phases where the rolling wheel is off the ground, so wheel acceleration
/// says nothing about the pivot.
inline bool wheel_airborne(ManeuverPhase ph) {
  return ph == ManeuverPhase::StandupSpin || ph == ManeuverPhase::StandupStep1 || ph == ManeuverPhase::RollupContact;
}

struct ManeuverConfig {
  double prespin_omega = -60.0;
  double step_torque = 1.2;
  double step1_exit_deg = 30.0;
  double step1_energy_margin = 1.1;
  double step2_exit_deg = 3.0;
  double step2_energy_band = 1.2;
  double step2_brake_torque = 0.3;
  double roll_ok_deg = 5.0;
  double hold_time = 0.1;
  double phase_timeout = 2.0;
  double fallen_deg = 60.0;

  /// Rolling-wheel spin stored while the chassis is still pressed into the
  /// ground; braking it then lifts the chassis.
  double rollup_prespin_omega = -60.0;
  double rollup_torque = 1.2;
  double rollup_energy_margin = 1.1;
  double rollup_brake_torque = 0.3;
  double rollup_brake_gain = 0.02;
  double rollup_touchdown_deg = 30.0;
};

struct MachineState {
  ManeuverPhase phase = ManeuverPhase::Idle;
  bool prespun = false;
  double phase_t0 = 0.0;
  double hold_t0 = -1.0;
  BalanceRefs refs;
  std::string diagnostic;
};

enum class Maneuver { Balance, Standup, Rollup, EstimatorAblation };

inline const char* to_string(Maneuver m) {
  switch (m) {
    case Maneuver::Balance: return "balance";
    case Maneuver::Standup: return "standup";
    case Maneuver::Rollup: return "rollup";
    case Maneuver::EstimatorAblation: return "estimator-ablation";
  }
  return "unknown";
}

inline Maneuver maneuver_from_string(const std::string& s) {
  for (Maneuver m : {Maneuver::Balance, Maneuver::Standup, Maneuver::Rollup, Maneuver::EstimatorAblation})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown maneuver '" + s + "' (expected balance, standup, rollup or estimator-ablation)");
}

struct MachineContext {
  const RobotParams& params;
  const LqrGains& gains;
  const ManeuverConfig& cfg;
};

namespace detail {

inline void enter(MachineState& m, ManeuverPhase next, double t) {
  if (!transition_allowed(m.phase, next))
    throw std::logic_error(std::string("illegal phase transition ") + to_string(m.phase) + " -> " + to_string(next));
  if (next != m.phase) {
    m.phase = next;
    m.phase_t0 = t;
    m.hold_t0 = -1.0;
  }
}

inline void fall(MachineState& m, double t, const std::string& why) {
  enter(m, ManeuverPhase::Fallen, t);
  m.diagnostic = why;
}

inline bool held(MachineState& m, bool condition, double t, double hold_time) {
  if (!condition) {
    m.hold_t0 = -1.0;
    return false;
  }
  if (m.hold_t0 < 0.0) m.hold_t0 = t;
  return t - m.hold_t0 >= hold_time - 1e-9;
}

inline ControlInput saturate(const ControlInput& u, const EncoderReading& enc, const RobotParams& p) {
  return {saturate_command(u.u1, enc.dq5E, p).u, saturate_command(u.u2, enc.dq4E, p).u};
}

inline bool upright(const EstimatorState& est, double deg) {
  return std::abs(est.q1_hat) < deg2rad(deg) && std::abs(est.q2_hat) < deg2rad(deg);
}

/// Common tail of every maneuver once the robot is on its wheel.
inline ControlInput balance_phases(MachineState& m, const EstimatorState& est, const EncoderReading& enc, double t,
                                   const MachineContext& c) {
  using P = ManeuverPhase;
  const double fallen = deg2rad(c.cfg.fallen_deg);
  if (std::abs(est.q1_hat) > fallen || std::abs(est.q2_hat) > fallen) {
    fall(m, t, "tilt exceeded " + std::to_string(c.cfg.fallen_deg) + " deg");
    return {};
  }
  m.refs.update(enc);
  ControlInput u = balance_law(est, enc, c.gains, m.refs);
  if (m.phase == P::BalanceRollOnly) {
    u.u2 = 0.0;
    if (held(m, std::abs(est.q1_hat) < deg2rad(c.cfg.roll_ok_deg), t, c.cfg.hold_time)) {
      enter(m, P::BalanceFull, t);
      m.refs.q4_ref = enc.q4E;
    } else if (t - m.phase_t0 > c.cfg.phase_timeout) {
      fall(m, t, "roll did not settle in BalanceRollOnly");
      return {};
    }
  }
  return saturate(u, enc, c.params);
}

}  // namespace detail

/// Balancing only: starts in BalanceFull when upright, otherwise falls.
inline ControlInput balance_machine_step(MachineState& m, const EstimatorState& est, const EncoderReading& enc,
                                         double t, const MachineContext& c) {
  using P = ManeuverPhase;
  if (m.phase == P::Fallen) return {};
  if (m.phase == P::Idle) {
    detail::enter(m, P::BalanceFull, t);
    m.refs.reset(enc);
  }
  return detail::balance_phases(m, est, enc, t, c);
}

inline ControlInput standup_machine_step(MachineState& m, const EstimatorState& est, const EncoderReading& enc,
                                         double t, const MachineContext& c) {
  using P = ManeuverPhase;
  const auto& cfg = c.cfg;
  const RobotParams& p = c.params;
  if (m.phase == P::Fallen) return {};
  if (m.phase == P::Idle) {
    if (detail::upright(est, cfg.roll_ok_deg)) {
      detail::enter(m, P::BalanceFull, t);
      m.refs.reset(enc);
    } else {
      detail::enter(m, P::StandupSpin, t);
    }
  }
  if (m.phase != P::BalanceFull && m.phase != P::BalanceRollOnly && t - m.phase_t0 > cfg.phase_timeout) {
    detail::fall(m, t, std::string("timeout in ") + to_string(m.phase));
    return {};
  }

  switch (m.phase) {
    case P::StandupSpin: {
      const double dir = cfg.prespin_omega < 0.0 ? -1.0 : 1.0;
      if (dir * enc.dq5E >= dir * cfg.prespin_omega) {
        detail::enter(m, P::StandupStep1, t);
      } else {
        return detail::saturate({dir * p.tau_max, 0.0}, enc, p);
      }
      [[fallthrough]];
    }
    case P::StandupStep1: {
      if (est.q1_hat <= deg2rad(cfg.step1_exit_deg)) {
        detail::enter(m, P::StandupStep2, t);
      } else {
        // Coast once the swing carries the COG up to its upright height;
        // driving all the way flings the chassis off its pivot.
        const PivotGeometry g1 = derive_pivot_geometry(p, PivotId::C1);
        const double theta = est.q1_hat - 0.5 * M_PI + g1.theta_start;
        const double rate = est.euler_rates_G.x();
        const double kinetic = 0.5 * g1.I_total * rate * rate;
        const double climb = p.m_total * p.g0 * (p.half_height_a - g1.cog_distance * std::cos(theta));
        if (rate < 0.0 && kinetic >= cfg.step1_energy_margin * climb) return {};
        return detail::saturate({cfg.step_torque, 0.0}, enc, p);
      }
      [[fallthrough]];
    }
    case P::StandupStep2: {
      if (est.q1_hat <= deg2rad(cfg.step2_exit_deg)) {
        detail::enter(m, P::BalanceRollOnly, t);
        m.refs.reset(enc);
      } else {
        // Regulate swing energy so the chassis arrives upright nearly at rest.
        const PivotGeometry g2 = derive_pivot_geometry(p, PivotId::C2);
        const double rate = est.euler_rates_G.x();
        const double kinetic = 0.5 * g2.I_total * rate * rate;
        const double climb = p.m_total * p.g0 * g2.cog_distance * (1.0 - std::cos(est.q1_hat));
        double u = cfg.step_torque;
        if (rate < 0.0 && kinetic > cfg.step2_energy_band * climb) u = -cfg.step2_brake_torque;
        else if (rate < 0.0 && kinetic >= climb) u = 0.0;
        return detail::saturate({u, 0.0}, enc, p);
      }
      [[fallthrough]];
    }
    default:
      return detail::balance_phases(m, est, enc, t, c);
  }
}

inline ControlInput rollup_machine_step(MachineState& m, const EstimatorState& est, const EncoderReading& enc,
                                        double t, const MachineContext& c) {
  using P = ManeuverPhase;
  const auto& cfg = c.cfg;
  const RobotParams& p = c.params;
  if (m.phase == P::Fallen) return {};
  if (m.phase == P::Idle) {
    if (detail::upright(est, cfg.roll_ok_deg)) {
      detail::enter(m, P::BalanceFull, t);
      m.refs.reset(enc);
    } else {
      detail::enter(m, P::RollupContact, t);
    }
  }
  if (m.phase != P::BalanceFull && t - m.phase_t0 > cfg.phase_timeout) {
    detail::fall(m, t, std::string("timeout in ") + to_string(m.phase));
    return {};
  }

  switch (m.phase) {
    case P::RollupContact: {
      const double dir = cfg.rollup_prespin_omega < 0.0 ? -1.0 : 1.0;
      if (!m.prespun) {
        if (dir * enc.dq4E < dir * cfg.rollup_prespin_omega) return detail::saturate({0.0, dir * p.tau_max}, enc, p);
        m.prespun = true;
      }
      if (est.q2_hat <= deg2rad(cfg.rollup_touchdown_deg)) {
        detail::enter(m, P::RollupRotate, t);
        m.refs.reset(enc);
      } else {
        const PivotGeometry g1 = derive_pivot_geometry(p, PivotId::C1, PlanarAxis::Pitch);
        const double theta = est.q2_hat - 0.5 * M_PI + g1.theta_start;
        const double rate = est.euler_rates_G.y();
        const double kinetic = 0.5 * g1.I_total * rate * rate;
        const double climb = p.m_total * p.g0 * (p.half_height_a - g1.cog_distance * std::cos(theta));
        if (rate < 0.0 && kinetic >= cfg.rollup_energy_margin * climb) {
          // enough swing: bleed off the remaining wheel spin before contact
          const double brake = std::clamp(-cfg.rollup_brake_gain * enc.dq4E, -cfg.rollup_brake_torque,
                                          cfg.rollup_brake_torque);
          return detail::saturate({0.0, brake}, enc, p);
        }
        return detail::saturate({0.0, -dir * cfg.rollup_torque}, enc, p);
      }
      [[fallthrough]];
    }
    case P::RollupRotate: {
      const double fallen = deg2rad(cfg.fallen_deg);
      if (std::abs(est.q1_hat) > fallen || std::abs(est.q2_hat) > fallen) {
        detail::fall(m, t, "tilt exceeded during roll-up");
        return {};
      }
      m.refs.update(enc);
      const ControlInput u = balance_law(est, enc, c.gains, m.refs);
      if (detail::held(m, std::abs(est.q2_hat) < deg2rad(cfg.roll_ok_deg), t, cfg.hold_time))
        detail::enter(m, P::BalanceFull, t);
      return detail::saturate(u, enc, p);
    }
    default:
      return detail::balance_phases(m, est, enc, t, c);
  }
}

}  // namespace wheelbot
