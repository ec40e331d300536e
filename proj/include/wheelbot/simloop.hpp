#pragma once

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wheelbot/control.hpp"
#include "wheelbot/dynamics.hpp"
#include "wheelbot/errors.hpp"
#include "wheelbot/estimation.hpp"
#include "wheelbot/params.hpp"
#include "wheelbot/sensors.hpp"
#include "wheelbot/standup.hpp"

namespace wheelbot {

inline constexpr int kSchemaVersion = 1;

/// Force (inertial axes, N) applied at a chassis point given in body axes
/// relative to the rolling-wheel center.
struct Disturbance {
  double t_start = 0.0;
  double duration = 0.0;
  Vec3 force = Vec3::Zero();
  Vec3 point = Vec3::Zero();

  bool active(double t) const { return t >= t_start && t < t_start + duration; }
  bool overlaps(double t0, double t1) const { return t_start < t1 && t_start + duration > t0; }
};

enum class GainPreset { Reference, Synthesized, Custom };

/// Translational pulses for the estimator ablation: the chassis stays level
/// while the wheel accelerates by +accel, coasts, then decelerates.
struct AblationProfile {
  double accel = 1.0;
  double pulse_duration = 1.0;
  double gap = 1.0;
  /// Rest before the first pulse so the estimator starts from a level robot.
  double lead_in = 1.0;

  double at(double t) const {
    if (t < lead_in) return 0.0;
    const double period = 2.0 * (pulse_duration + gap);
    const double tau = std::fmod(t - lead_in, period);
    if (tau < pulse_duration) return accel;
    if (tau >= pulse_duration + gap && tau < 2.0 * pulse_duration + gap) return -accel;
    return 0.0;
  }
};

struct ScenarioConfig {
  std::string name = "scenario";
  Maneuver maneuver = Maneuver::Balance;
  double duration = 5.0;
  double dt_physics = 1e-3;
  double control_period = 0.01;
  int delay_steps = 1;
  FullState initial;
  std::vector<Disturbance> disturbances;
  std::uint64_t seed = 1;
  RobotParams params = default_params();
  double accel_sigma = 0.02;
  double gyro_sigma = 0.002;
  int counts_per_rev = 4096;
  EstimatorOptions estimator;
  double q1_bar = 0.0, q2_bar = 0.0;
  GainPreset gain_preset = GainPreset::Reference;
  LqrGains custom_gains;
  double friction_mu = 0.8;
  ManeuverConfig maneuver_cfg;
  AblationProfile ablation;

  int substeps() const { return static_cast<int>(std::lround(control_period / dt_physics)); }
  int ticks() const { return static_cast<int>(std::floor(duration / control_period + 1e-9)); }
};

inline void validate(const ScenarioConfig& c) {
  if (!(c.duration > 0.0)) throw ConfigError("duration must be positive");
  if (!(c.dt_physics > 0.0) || !(c.control_period > 0.0)) throw ConfigError("time steps must be positive");
  if (std::abs(c.substeps() * c.dt_physics - c.control_period) > 1e-9 * c.control_period || c.substeps() < 1)
    throw ConfigError("control_period must be an integer multiple of dt_physics");
  if (c.delay_steps < 0) throw ConfigError("delay_steps must be non-negative");
  if (!(c.estimator.alpha >= 0.0 && c.estimator.alpha <= 1.0)) throw ConfigError("estimator alpha must lie in [0, 1]");
  if (c.friction_mu < 0.0) throw ConfigError("friction_mu must be non-negative");
  for (const auto& d : c.disturbances)
    if (d.duration < 0.0) throw ConfigError("disturbance duration must be non-negative");
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

inline double get_number(const nlohmann::json& j, const char* key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(std::string("'") + key + "' in " + where + " must be a number");
  return j.at(key).get<double>();
}

template <int N>
Eigen::Matrix<double, N, 1> get_vector(const nlohmann::json& j, const char* key, const Eigen::Matrix<double, N, 1>& fallback,
                                       const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != N)
    throw ConfigError(std::string("'") + key + "' in " + where + " must be an array of " + std::to_string(N) +
                      " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!a[i].is_number()) throw ConfigError(std::string("'") + key + "' in " + where + " must hold numbers");
    v(i) = a[i].get<double>();
  }
  return v;
}

}  // namespace detail

/// Parses a scenario document. Relative parameter-file paths resolve against
/// base_dir.
inline ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::get_number;
  detail::reject_unknown(j,
                         {"schema_version", "name", "maneuver", "duration", "dt_physics", "control_period",
                          "delay_steps", "initial", "disturbances", "seed", "params", "params_file", "sensors",
                          "estimator", "gains", "friction_mu", "maneuver_options", "ablation"},
                         "scenario");
  if (!j.contains("schema_version")) throw ConfigError("missing required key 'schema_version'");
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kSchemaVersion)
    throw ConfigError("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");

  ScenarioConfig c;
  if (j.contains("name")) {
    if (!j.at("name").is_string()) throw ConfigError("'name' must be a string");
    c.name = j.at("name").get<std::string>();
  }
  if (!j.contains("maneuver") || !j.at("maneuver").is_string())
    throw ConfigError("missing required key 'maneuver'");
  c.maneuver = maneuver_from_string(j.at("maneuver").get<std::string>());
  c.duration = get_number(j, "duration", c.duration, "scenario");
  c.dt_physics = get_number(j, "dt_physics", c.dt_physics, "scenario");
  c.control_period = get_number(j, "control_period", c.control_period, "scenario");
  if (j.contains("delay_steps")) {
    if (!j.at("delay_steps").is_number_integer()) throw ConfigError("'delay_steps' must be an integer");
    c.delay_steps = j.at("delay_steps").get<int>();
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      throw ConfigError("'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.friction_mu = get_number(j, "friction_mu", c.friction_mu, "scenario");

  if (j.contains("params") && j.contains("params_file"))
    throw ConfigError("give either 'params' or 'params_file', not both");
  if (j.contains("params")) c.params = params_from_json(j.at("params"));
  if (j.contains("params_file")) {
    if (!j.at("params_file").is_string()) throw ConfigError("'params_file' must be a string");
    std::filesystem::path path = j.at("params_file").get<std::string>();
    if (path.is_relative()) path = base_dir / path;
    c.params = load_params(path.string());
  }
  c.estimator.Ts = c.control_period;

  if (j.contains("initial")) {
    const auto& in = j.at("initial");
    detail::reject_unknown(in, {"q", "dq", "contact_xy"}, "initial");
    c.initial.q = detail::get_vector<5>(in, "q", c.initial.q, "initial");
    c.initial.dq = detail::get_vector<5>(in, "dq", c.initial.dq, "initial");
    c.initial.contact_xy = detail::get_vector<2>(in, "contact_xy", c.initial.contact_xy, "initial");
  }
  if (j.contains("disturbances")) {
    if (!j.at("disturbances").is_array()) throw ConfigError("'disturbances' must be an array");
    for (const auto& d : j.at("disturbances")) {
      detail::reject_unknown(d, {"t_start", "duration", "force", "point"}, "disturbance");
      Disturbance dist;
      dist.t_start = get_number(d, "t_start", 0.0, "disturbance");
      dist.duration = get_number(d, "duration", 0.0, "disturbance");
      dist.force = detail::get_vector<3>(d, "force", Vec3::Zero(), "disturbance");
      dist.point = detail::get_vector<3>(d, "point", Vec3::Zero(), "disturbance");
      c.disturbances.push_back(dist);
    }
  }
  if (j.contains("sensors")) {
    const auto& s = j.at("sensors");
    detail::reject_unknown(s, {"accel_sigma", "gyro_sigma", "counts_per_rev"}, "sensors");
    c.accel_sigma = get_number(s, "accel_sigma", c.accel_sigma, "sensors");
    c.gyro_sigma = get_number(s, "gyro_sigma", c.gyro_sigma, "sensors");
    if (s.contains("counts_per_rev")) {
      if (!s.at("counts_per_rev").is_number_integer()) throw ConfigError("'counts_per_rev' must be an integer");
      c.counts_per_rev = s.at("counts_per_rev").get<int>();
    }
  }
  if (j.contains("estimator")) {
    const auto& e = j.at("estimator");
    detail::reject_unknown(e, {"alpha", "pivot_compensation", "euler_rates", "wheel_filter_hz", "q1_bar", "q2_bar"},
                           "estimator");
    c.estimator.alpha = get_number(e, "alpha", c.estimator.alpha, "estimator");
    c.estimator.wheel_filter_hz = get_number(e, "wheel_filter_hz", c.estimator.wheel_filter_hz, "estimator");
    c.q1_bar = get_number(e, "q1_bar", 0.0, "estimator");
    c.q2_bar = get_number(e, "q2_bar", 0.0, "estimator");
    if (e.contains("pivot_compensation")) {
      const std::string m = e.at("pivot_compensation").get<std::string>();
      if (m == "off") c.estimator.pivot = PivotMode::Off;
      else if (m == "dominant") c.estimator.pivot = PivotMode::Dominant;
      else if (m == "full") c.estimator.pivot = PivotMode::Full;
      else throw ConfigError("unknown pivot_compensation '" + m + "' (expected off, dominant or full)");
    }
    if (e.contains("euler_rates")) {
      const std::string m = e.at("euler_rates").get<std::string>();
      if (m == "simplified") c.estimator.euler_rates = EulerRateMode::Simplified;
      else if (m == "exact") c.estimator.euler_rates = EulerRateMode::Exact;
      else throw ConfigError("unknown euler_rates '" + m + "' (expected simplified or exact)");
    }
  }
  if (j.contains("gains")) {
    const auto& g = j.at("gains");
    detail::reject_unknown(g, {"preset", "K1", "K2"}, "gains");
    const std::string preset = g.value("preset", std::string("reference"));
    if (preset == "reference") c.gain_preset = GainPreset::Reference;
    else if (preset == "synthesized") c.gain_preset = GainPreset::Synthesized;
    else if (preset == "custom") c.gain_preset = GainPreset::Custom;
    else throw ConfigError("unknown gain preset '" + preset + "' (expected reference, synthesized or custom)");
    if (c.gain_preset == GainPreset::Custom) {
      if (!g.contains("K1") || !g.contains("K2")) throw ConfigError("custom gains need 'K1' and 'K2'");
      c.custom_gains.K1 = detail::get_vector<4>(g, "K1", Vec4::Zero(), "gains");
      c.custom_gains.K2 = detail::get_vector<4>(g, "K2", Vec4::Zero(), "gains");
    }
  }
  if (j.contains("maneuver_options")) {
    const auto& m = j.at("maneuver_options");
    auto& mc = c.maneuver_cfg;
    const std::vector<std::pair<const char*, double*>> fields = {
        {"prespin_omega", &mc.prespin_omega},
        {"step_torque", &mc.step_torque},
        {"step1_exit_deg", &mc.step1_exit_deg},
        {"step1_energy_margin", &mc.step1_energy_margin},
        {"step2_exit_deg", &mc.step2_exit_deg},
        {"step2_energy_band", &mc.step2_energy_band},
        {"step2_brake_torque", &mc.step2_brake_torque},
        {"roll_ok_deg", &mc.roll_ok_deg},
        {"hold_time", &mc.hold_time},
        {"phase_timeout", &mc.phase_timeout},
        {"fallen_deg", &mc.fallen_deg},
        {"rollup_prespin_omega", &mc.rollup_prespin_omega},
        {"rollup_torque", &mc.rollup_torque},
        {"rollup_energy_margin", &mc.rollup_energy_margin},
        {"rollup_brake_torque", &mc.rollup_brake_torque},
        {"rollup_brake_gain", &mc.rollup_brake_gain},
        {"rollup_touchdown_deg", &mc.rollup_touchdown_deg}};
    std::set<std::string> known;
    for (const auto& [key, dst] : fields) known.insert(key);
    detail::reject_unknown(m, known, "maneuver_options");
    for (const auto& [key, dst] : fields) *dst = get_number(m, key, *dst, "maneuver_options");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    detail::reject_unknown(a, {"accel", "pulse_duration", "gap", "lead_in"}, "ablation");
    c.ablation.accel = get_number(a, "accel", c.ablation.accel, "ablation");
    c.ablation.pulse_duration = get_number(a, "pulse_duration", c.ablation.pulse_duration, "ablation");
    c.ablation.gap = get_number(a, "gap", c.ablation.gap, "ablation");
    c.ablation.lead_in = get_number(a, "lead_in", c.ablation.lead_in, "ablation");
  }
  validate(c);
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario file '" + path + "' is not valid JSON: " + e.what());
  }
  return scenario_from_json(j, std::filesystem::path(path).parent_path());
}

struct LogRow {
  double t = 0.0;
  Vec5 q = Vec5::Zero();
  Vec5 dq = Vec5::Zero();
  double x = 0.0, y = 0.0;
  double q1A = 0.0, q2A = 0.0;
  double q1G = 0.0, q2G = 0.0, q3G = 0.0;
  double q1_hat = 0.0, q2_hat = 0.0;
  double pivot_ax = 0.0;
  double u1 = 0.0, u2 = 0.0;
  double i1 = 0.0, i2 = 0.0;
  ManeuverPhase phase = ManeuverPhase::Idle;
  int dist_flag = 0;
};

struct SimLog {
  std::string name;
  Maneuver maneuver = Maneuver::Balance;
  std::vector<LogRow> rows;
  std::vector<double> energy;
  int expected_rows = 0;
  bool failed = false;
  bool slipped = false;
  /// Largest |F_t| / F_n the contact had to supply.
  double peak_friction_ratio = 0.0;
  std::string failure;
};

/// Classical RK4 on the full model; the contact point moves with the rolling
/// constraint and is integrated alongside.
inline FullState rk4_step(const FullState& s, const ControlInput& u, double dt, const RobotParams& p,
                          const std::vector<Disturbance>& dist = {}, double t = 0.0) {
  struct Deriv {
    Vec5 dq, ddq;
    Vec2 dxy;
  };
  auto f = [&](const FullState& x, double tt) {
    Vec5 ext = Vec5::Zero();
    for (const auto& d : dist)
      if (d.active(tt)) ext += apply_push(x, d.force, d.point, p);
    return Deriv{x.dq, forward_dynamics(x, u, p, ext), contact_velocity(x, p)};
  };
  auto add = [](const FullState& x, const Deriv& d, double h) {
    FullState y = x;
    y.q += h * d.dq;
    y.dq += h * d.ddq;
    y.contact_xy += h * d.dxy;
    return y;
  };
  const Deriv k1 = f(s, t);
  const Deriv k2 = f(add(s, k1, 0.5 * dt), t + 0.5 * dt);
  const Deriv k3 = f(add(s, k2, 0.5 * dt), t + 0.5 * dt);
  const Deriv k4 = f(add(s, k3, dt), t + dt);
  FullState out = s;
  out.q += dt / 6.0 * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
  out.dq += dt / 6.0 * (k1.ddq + 2.0 * k2.ddq + 2.0 * k3.ddq + k4.ddq);
  out.contact_xy += dt / 6.0 * (k1.dxy + 2.0 * k2.dxy + 2.0 * k3.dxy + k4.dxy);
  return out;
}

inline Vec5 disturbance_force(const FullState& s, const std::vector<Disturbance>& dist, double t,
                              const RobotParams& p, Vec3* inertial_sum = nullptr) {
  Vec5 ext = Vec5::Zero();
  Vec3 sum = Vec3::Zero();
  for (const auto& d : dist) {
    if (!d.active(t)) continue;
    ext += apply_push(s, d.force, d.point, p);
    sum += d.force;
  }
  if (inertial_sum) *inertial_sum = sum;
  return ext;
}

/// Ground reaction needed by the contact versus what friction can supply.
inline bool contact_slips(const Vec3& reaction, double mu) {
  if (reaction.z() <= 0.0) return true;
  return std::hypot(reaction.x(), reaction.y()) > mu * reaction.z();
}

namespace detail {

enum class PhysicsMode { PlanarRoll, PlanarPitch, Full3D, Kinematic };

/// Chassis corner the robot pivots on, relative to the system COG in body
/// axes, for the roll (stand-up) and pitch (roll-up) planes.
inline Vec3 corner_from_cog(const RobotParams& p, PhysicsMode mode) {
  if (mode == PhysicsMode::PlanarRoll) return Vec3(0.0, -p.chassis_half_width_b, -p.lever_L1);
  return Vec3(p.chassis_half_width_b, 0.0, -p.lever_L1);
}

struct Engine {
  const ScenarioConfig& cfg;
  const RobotParams& p;
  PhysicsMode mode = PhysicsMode::Full3D;
  FullState s;
  PlanarState ps;
  PivotGeometry geom;
  double wheel_angle = 0.0;  // absolute angle of the wheel acting as reaction wheel
  double body_angle0 = 0.0;
  double ablation_t = 0.0;

  Engine(const ScenarioConfig& c) : cfg(c), p(c.params) {}

  Mat3 planar_rotation(double tilt) const { return mode == PhysicsMode::PlanarRoll ? rot_x(tilt) : rot_y(tilt); }
  Vec3 planar_axis() const { return mode == PhysicsMode::PlanarRoll ? Vec3::UnitX() : Vec3::UnitY(); }
  double planar_tilt() const { return body_tilt_from_planar(ps.theta, PivotId::C1, p); }

  /// Generalized-coordinate view of the current physical state.
  FullState view() const {
    if (mode == PhysicsMode::Full3D || mode == PhysicsMode::Kinematic) return s;
    FullState v;
    v.contact_xy = s.contact_xy;
    const double tilt = planar_tilt();
    if (mode == PhysicsMode::PlanarRoll) {
      v.q(0) = tilt;
      v.dq(0) = ps.dtheta;
      v.q(4) = wheel_angle - (tilt - body_angle0);
      v.dq(4) = ps.omega - ps.dtheta;
      v.q(3) = s.q(3);
    } else {
      v.q(1) = tilt;
      v.dq(1) = ps.dtheta;
      v.q(3) = wheel_angle;
      v.dq(3) = ps.omega;
      v.q(4) = s.q(4);
    }
    return v;
  }

  double planar_torque(const ControlInput& u) const { return mode == PhysicsMode::PlanarRoll ? u.u1 : u.u2; }

  /// Chassis motion for the IMUs plus the ground reaction at the contact.
  BodyMotion motion(const ControlInput& u, double t, Vec3* reaction) const {
    if (mode == PhysicsMode::Kinematic) {
      BodyMotion m;
      m.acc_W = Vec3(cfg.ablation.at(t), 0.0, 0.0);
      if (reaction) *reaction = Vec3(p.m_total * m.acc_W.x(), 0.0, p.m_total * p.g0);
      return m;
    }
    if (mode == PhysicsMode::Full3D) {
      Vec3 fsum;
      const Vec5 ext = disturbance_force(s, cfg.disturbances, t, p, &fsum);
      const Vec5 ddq = forward_dynamics(s, u, p, ext);
      if (reaction) *reaction = contact_force(s, ddq, p, fsum);
      return body_motion(s, ddq, p);
    }
    const auto d = planar_dynamics_grounded(ps, planar_torque(u), geom, p);
    BodyMotion m;
    m.R_IB = planar_rotation(planar_tilt());
    m.omega = ps.dtheta * planar_axis();
    m.alpha = d.ddtheta * planar_axis();
    const Vec3 cog_b(0.0, 0.0, p.cog_height_above_wheel());
    const Vec3 r_W = m.R_IB * (-corner_from_cog(p, mode) - cog_b);
    m.acc_W = m.alpha.cross(r_W) + m.omega.cross(m.omega.cross(r_W));
    if (reaction) {
      const Vec3 r_cog = m.R_IB * (-corner_from_cog(p, mode));
      const Vec3 a_cog = m.alpha.cross(r_cog) + m.omega.cross(m.omega.cross(r_cog));
      *reaction = p.m_total * (a_cog + Vec3(0.0, 0.0, p.g0));
    }
    return m;
  }

  /// Advances by one physics step; returns true at wheel touchdown.
  bool step(const ControlInput& u, double t, double dt) {
    switch (mode) {
      case PhysicsMode::Kinematic: {
        const double a = cfg.ablation.at(t) / p.wheel_radius_r_w;
        s.q(3) += dt * s.dq(3) + 0.5 * dt * dt * a;
        s.dq(3) += dt * a;
        s.contact_xy = Vec2(p.wheel_radius_r_w * s.q(3), 0.0);
        return false;
      }
      case PhysicsMode::Full3D:
        s = rk4_step(s, u, dt, p, cfg.disturbances, t);
        return false;
      default: {
        const double omega0 = ps.omega;
        ps = planar_rk4_step(ps, planar_torque(u), geom, p, dt);
        wheel_angle += 0.5 * dt * (omega0 + ps.omega);
        if (ps.theta > geom.theta_end) return false;
        touchdown();
        return true;
      }
    }
  }

  /// Hands the planar state to the full model at wheel contact.
  void touchdown() {
    ps.theta = geom.theta_end;
    const FullState v = view();
    s.q = v.q;
    s.dq = v.dq;
    mode = PhysicsMode::Full3D;
  }
};

}  // namespace detail

inline LqrGains scenario_gains(const ScenarioConfig& c, const LinearModel& lm) {
  switch (c.gain_preset) {
    case GainPreset::Reference: return resolve_sign(reference_gains(), lm, c.control_period, c.delay_steps);
    case GainPreset::Custom: return resolve_sign(c.custom_gains, lm, c.control_period, c.delay_steps);
    case GainPreset::Synthesized: return synthesize_gains(lm, c.control_period);
  }
  return reference_gains();
}

inline ImuConfig scenario_imu(const ScenarioConfig& c) {
  ImuConfig imu = default_imu_config(c.params);
  imu.accel_sigma = c.accel_sigma;
  imu.gyro_sigma = c.gyro_sigma;
  return imu;
}

inline SimLog run_scenario(const ScenarioConfig& cfg) {
  validate(cfg);
  const RobotParams& p = cfg.params;
  const ImuConfig imu = scenario_imu(cfg);
  const EncoderConfig enc_cfg{cfg.counts_per_rev};
  const LsWeights weights = precompute_ls_weights(imu);
  const LinearModel lm = linearize_upright(p);
  const LqrGains gains = scenario_gains(cfg, lm);
  const MachineContext ctx{p, gains, cfg.maneuver_cfg};
  Rng rng(cfg.seed);

  EstimatorState est(cfg.estimator);
  est.q1_bar = cfg.q1_bar;
  est.q2_bar = cfg.q2_bar;
  MachineState machine;

  detail::Engine eng(cfg);
  using detail::PhysicsMode;
  switch (cfg.maneuver) {
    case Maneuver::Balance: eng.mode = PhysicsMode::Full3D; eng.s = cfg.initial; break;
    case Maneuver::EstimatorAblation: eng.mode = PhysicsMode::Kinematic; break;
    case Maneuver::Standup:
    case Maneuver::Rollup: {
      const bool roll = cfg.maneuver == Maneuver::Standup;
      eng.mode = roll ? PhysicsMode::PlanarRoll : PhysicsMode::PlanarPitch;
      eng.geom = derive_pivot_geometry(p, PivotId::C1, roll ? PlanarAxis::Roll : PlanarAxis::Pitch);
      const double omega0 = roll ? cfg.initial.dq(4) : cfg.initial.dq(3);
      eng.ps = {eng.geom.theta_start, 0.0, omega0};
      eng.body_angle0 = eng.planar_tilt();
      eng.s.contact_xy = cfg.initial.contact_xy;
      break;
    }
  }

  SimLog log;
  log.name = cfg.name;
  log.maneuver = cfg.maneuver;
  log.expected_rows = cfg.ticks();

  std::deque<ControlInput> delay(cfg.delay_steps, ControlInput{});
  ControlInput u_applied{};
  const int n_sub = cfg.substeps();
  const double Tc = cfg.control_period;

  for (int k = 0; k < cfg.ticks(); ++k) {
    const double t = k * Tc;
    LogRow row;
    row.t = t;
    try {
      if (cfg.delay_steps > 0) u_applied = delay.front();

      Vec3 reaction;
      const BodyMotion bm = eng.motion(u_applied, t, &reaction);
      const FullState v = eng.view();
      const ImuFrame frame = simulate_imu_array(bm, imu, rng, p.g0);
      const EncoderReading enc = simulate_encoders(v, enc_cfg, Tc);
      EstimatorOptions eopt = cfg.estimator;
      if (wheel_airborne(machine.phase)) eopt.pivot = PivotMode::Off;
      estimator_step(frame, enc, est, weights, imu, eopt, p);

      ControlInput u_cmd{};
      switch (cfg.maneuver) {
        case Maneuver::Balance: u_cmd = balance_machine_step(machine, est, enc, t, ctx); break;
        case Maneuver::Standup: u_cmd = standup_machine_step(machine, est, enc, t, ctx); break;
        case Maneuver::Rollup: u_cmd = rollup_machine_step(machine, est, enc, t, ctx); break;
        case Maneuver::EstimatorAblation: break;
      }
      if (cfg.delay_steps > 0) {
        delay.pop_front();
        delay.push_back(u_cmd);
      } else {
        u_applied = u_cmd;
      }

      row.q = v.q;
      row.dq = v.dq;
      row.x = v.contact_xy.x();
      row.y = v.contact_xy.y();
      row.q1A = est.q1A;
      row.q2A = est.q2A;
      row.q1G = est.q1G;
      row.q2G = est.q2G;
      row.q3G = est.q3G;
      row.q1_hat = est.q1_hat;
      row.q2_hat = est.q2_hat;
      row.pivot_ax = est.pivot_accel.x();
      row.u1 = u_cmd.u1;
      row.u2 = u_cmd.u2;
      row.i1 = u_cmd.u1 / p.K_T;
      row.i2 = u_cmd.u2 / p.K_T;
      row.phase = machine.phase;
      for (const auto& d : cfg.disturbances)
        if (d.overlaps(t, t + Tc)) row.dist_flag = 1;
      log.rows.push_back(row);
      log.energy.push_back(eng.mode == PhysicsMode::Full3D ? total_energy(eng.s, p) : 0.0);
      if (machine.phase == ManeuverPhase::Fallen) break;

      for (int i = 0; i < n_sub; ++i) {
        const double ts = t + i * cfg.dt_physics;
        if (eng.mode != PhysicsMode::Kinematic) {
          Vec3 f;
          eng.motion(u_applied, ts, &f);
          if (f.z() > 0.0)
            log.peak_friction_ratio = std::max(log.peak_friction_ratio, std::hypot(f.x(), f.y()) / f.z());
          if (contact_slips(f, cfg.friction_mu)) {
            log.slipped = true;
            detail::fall(machine, ts, "contact slip: friction cannot hold the required ground reaction");
            break;
          }
        }
        eng.step(u_applied, ts, cfg.dt_physics);
      }
    } catch (const SingularityError& e) {
      log.failed = true;
      log.failure = e.what();
      break;
    }
    if (log.slipped && machine.phase == ManeuverPhase::Fallen) {
      // one more row so the log shows the terminal phase
      LogRow last = row;
      last.t = t + Tc;
      last.phase = machine.phase;
      last.u1 = last.u2 = last.i1 = last.i2 = 0.0;
      last.dist_flag = 0;
      const FullState v = eng.view();
      last.q = v.q;
      last.dq = v.dq;
      last.x = v.contact_xy.x();
      last.y = v.contact_xy.y();
      if (k + 1 < cfg.ticks()) {
        log.rows.push_back(last);
        log.energy.push_back(0.0);
      }
      break;
    }
  }
  return log;
}

}  // namespace wheelbot
