#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include "wheelbot/control.hpp"
#include "wheelbot/estimation.hpp"
#include "wheelbot/report.hpp"
#include "wheelbot/sensors.hpp"
#include "wheelbot/simloop.hpp"
#include "wheelbot/standup.hpp"

using namespace wheelbot;

namespace {

int failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s  %-34s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string csv_of(const SimLog& log) {
  std::ostringstream out;
  write_csv(out, log.rows);
  return out.str();
}

void standup_reproduction() {
  const RobotParams p = default_params();
  const auto t0 = std::chrono::steady_clock::now();
  const StandupTrace tr = simulate_standup(p, constant_torque(1.2), -280.0);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double s1 = rad2deg(tr.sweeps[0]), s2 = rad2deg(tr.sweeps[1]);
  const double assist = rad2deg(derive_pivot_geometry(p, PivotId::C1).assist_from_start());
  const bool ok = tr.success && std::abs(s1 - 58.0) <= 3.0 && std::abs(s2 - 32.0) <= 3.0 &&
                  std::abs(assist - 36.0) <= 3.0 && wall < 1.0;
  report(ok, "standup-reproduction",
         fmt("success=%d sweeps=%.2f/%.2f deg assist=%.2f deg wall=%.3f s", tr.success, s1, s2, assist, wall));
}

void torque_bound() {
  const RobotParams p = default_params();
  const double bound = static_torque_bound(p);
  const bool at_bound = simulate_standup(p, constant_torque(0.83), -280.0).success;
  const bool above = simulate_standup(p, constant_torque(1.2), -280.0).success;
  report(std::abs(bound - 0.83) <= 0.01 && !at_bound && above, "torque-bound",
         fmt("bound=%.4f Nm, 0.83 Nm succeeds=%d, 1.2 Nm succeeds=%d", bound, at_bound, above));
}

// Steady-state amplitude of the fused estimate when the accelerometer angle
// is a unit sinusoid and the gyro reads zero.
double accel_channel_gain(double f, double alpha, double Ts) {
  EstimatorState est;
  est.alpha = alpha;
  const int settle = 3000, n = 20000;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int k = 0; k < settle + n; ++k) {
    const double t = k * Ts;
    const auto [a, b] = complementary_fuse(est, std::sin(2.0 * M_PI * f * t), 0.0, Vec3::Zero(), Ts);
    est.q1_hat = a;
    est.q2_hat = b;
    if (k >= settle) {
      X(k - settle, 0) = std::sin(2.0 * M_PI * f * t);
      X(k - settle, 1) = std::cos(2.0 * M_PI * f * t);
      y(k - settle) = a;
    }
  }
  return X.colPivHouseholderQr().solve(y).norm();
}

void complementary_cutoff() {
  const double alpha = 0.02, Ts = 0.01;
  double lo = 0.05, hi = 2.0;
  for (int i = 0; i < 40; ++i) {
    const double mid = 0.5 * (lo + hi);
    (accel_channel_gain(mid, alpha, Ts) > M_SQRT1_2 ? lo : hi) = mid;
  }
  const double fc = 0.5 * (lo + hi);
  // a consistent gyro + accelerometer pair must pass through unchanged
  EstimatorState est;
  est.alpha = alpha;
  double worst = 0.0;
  for (int k = 1; k < 2000; ++k) {
    const double t = k * Ts, w = 2.0 * M_PI * 1.3;
    const double rate = (std::sin(w * t) - std::sin(w * (t - Ts))) / Ts;
    const auto [a, b] = complementary_fuse(est, std::sin(w * t), 0.0, Vec3(rate, 0, 0), Ts);
    est.q1_hat = a;
    est.q2_hat = b;
    worst = std::max(worst, std::abs(a - std::sin(w * t)));
  }
  report(std::abs(fc - 0.32) <= 0.01 && worst < 1e-12, "complementary-filter-cutoff",
         fmt("measured -3 dB at %.4f Hz, consistent-input error %.1e", fc, worst));
}

void estimator_exactness() {
  const RobotParams p = default_params();
  ImuConfig cfg = default_imu_config(p);
  cfg.accel_sigma = cfg.gyro_sigma = 0.0;
  cfg.accel_range = cfg.gyro_range = 1e9;
  const LsWeights w = precompute_ls_weights(cfg);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double tilt_err = 0.0, omega_err = 0.0;
  for (int k = 0; k < 500; ++k) {
    FullState s;
    s.q << 1.3 * u(gen), 1.3 * u(gen), M_PI * u(gen), 10.0 * u(gen), 10.0 * u(gen);
    Vec5 ddq = Vec5::Zero();
    const bool moving = k % 2 == 1;
    if (moving) {
      for (int i = 0; i < 5; ++i) {
        s.dq(i) = 3.0 * u(gen);
        ddq(i) = 20.0 * u(gen);
      }
    }
    Rng rng(1);
    const BodyMotion m = body_motion(s, ddq, p);
    const ImuFrame f = simulate_imu_array(m, cfg, rng, p.g0);
    const Mat3 R_BI = m.R_IB.transpose();
    const AccelTilt t = accel_tilt(f, R_BI * m.acc_W, w, cfg, p.g0);
    if (!moving) tilt_err = std::max({tilt_err, std::abs(t.q1A - s.q(0)), std::abs(t.q2A - s.q(1))});
    const Vec3 wb = R_BI * m.omega, ab = R_BI * m.alpha;
    omega_err = std::max(omega_err, (t.Omega_hat - (skew(ab) + skew(wb) * skew(wb))).cwiseAbs().maxCoeff());
  }
  report(tilt_err < 1e-9 && omega_err < 1e-10, "estimator-exactness",
         fmt("static tilt error %.1e rad, Omega error %.1e", tilt_err, omega_err));
}

double filtered_peak_deg(const SimLog& log, double Ts) {
  const double beta = 1.0 - std::exp(-2.0 * M_PI * 0.32 * Ts);
  double y = log.rows.front().q2A, peak = 0.0;
  for (const auto& r : log.rows) {
    y += beta * (r.q2A - y);
    peak = std::max(peak, std::abs(rad2deg(y)));
  }
  return peak;
}

void pivot_ablation() {
  ScenarioConfig c;
  c.maneuver = Maneuver::EstimatorAblation;
  c.duration = 9.0;
  c.estimator.pivot = PivotMode::Dominant;
  const double on = filtered_peak_deg(run_scenario(c), c.control_period);
  c.estimator.pivot = PivotMode::Off;
  const double off = filtered_peak_deg(run_scenario(c), c.control_period);
  report(on <= 0.5 && off > 2.0, "pivot-compensation-ablation",
         fmt("filtered |q2A| peak: %.3f deg with compensation, %.3f deg without", on, off));
}

void balancing() {
  ScenarioConfig c;
  c.initial.q(0) = c.initial.q(1) = deg2rad(3.0);
  c.duration = 5.0;
  const SimLog log = run_scenario(c);
  double settled = -1.0;
  for (const auto& r : log.rows) {
    const bool inside = std::abs(r.q1_hat) < deg2rad(0.5) && std::abs(r.q2_hat) < deg2rad(0.5);
    if (!inside) settled = -1.0;
    else if (settled < 0.0) settled = r.t;
  }
  ScenarioConfig push;
  push.duration = 4.0;
  push.disturbances.push_back({1.0, 0.02, Vec3(0, 18.0, 0), Vec3(0, 0, 0.0455)});
  const RunSummary ps = summarize(run_scenario(push));
  const bool ok = summarize(log).success && settled >= 0.0 && settled < 3.0 && ps.success && !ps.fallen &&
                  ps.peak_abs_u > 0.8 && ps.peak_abs_u <= push.params.tau_max;
  report(ok, "balancing-reference-gains",
         fmt("|q_hat| < 0.5 deg from t=%.2f s; push peak |u|=%.3f Nm, fallen=%d", settled, ps.peak_abs_u, ps.fallen));
}

void linear_structure() {
  const LinearModel lm = linearize_upright(default_params());
  Eigen::Matrix<double, 10, 10> A;
  Eigen::Matrix<double, 10, 2> B;
  linearize_full(default_params(), A, B, 1e-6);
  // yaw neither drives nor is driven by the balancing states at the upright
  double yaw = 0.0;
  for (int y : kYawIndices)
    for (int j = 0; j < 10; ++j)
      if (j != kYawIndices[0] && j != kYawIndices[1]) yaw = std::max({yaw, std::abs(A(y, j)), std::abs(A(j, y))});
  yaw = std::max({yaw, B.row(kYawIndices[1]).cwiseAbs().maxCoeff()});
  const int r1 = controllability_rank(lm.A1, lm.B1), r2 = controllability_rank(lm.A2, lm.B2);
  report(lm.max_cross_coupling < 1e-8 && r1 == 4 && r2 == 4 && yaw < 1e-8, "linear-model-structure",
         fmt("cross-block %.1e, ranks %d/%d, yaw coupling %.1e", lm.max_cross_coupling, r1, r2, yaw));
}

void energy_and_rk4() {
  const RobotParams p = default_params();
  FullState s;
  s.q << 2.84, 0.3, 0.0, 0.0, 0.0;
  s.dq << 0.5, -0.3, 0.4, 5.0, 40.0;
  const double e0 = total_energy(s, p);
  double drift = 0.0;
  for (int i = 0; i < 10000; ++i) {
    s = rk4_step(s, {}, 1e-3, p);
    drift = std::max(drift, std::abs(total_energy(s, p) - e0) / std::abs(e0));
  }
  FullState s0;
  s0.q << 0.1, 0.05, 0.0, 0.0, 0.0;
  s0.dq << 0.2, -0.1, 0.3, 2.0, 10.0;
  auto run = [&](double dt) {
    FullState x = s0;
    for (int i = 0, n = static_cast<int>(std::lround(0.2 / dt)); i < n; ++i) x = rk4_step(x, {0.1, -0.05}, dt, p);
    return x;
  };
  const FullState ref = run(1e-5);
  auto err = [&](double dt) {
    const FullState x = run(dt);
    return (x.q - ref.q).norm() + (x.dq - ref.dq).norm();
  };
  const double ratio = err(0.01) / err(0.005);
  report(drift < 1e-6 && std::abs(std::log2(ratio) - 4.0) < 0.3, "energy-conservation-rk4-order",
         fmt("relative drift %.2e over 10 s, halving ratio %.2f (order %.2f)", drift, ratio, std::log2(ratio)));
}

void dare() {
  const MatrixXd one = MatrixXd::Ones(1, 1);
  const double k = solve_dare(one, one, one, one).K(0, 0);
  const RobotParams p = default_params();
  const LinearModel lm = linearize_upright(p);
  const LqrWeights w = default_weights();
  const BlockSynthesis roll = synthesize_block(lm.A1, lm.B1, w.Q1, w.R1, roll_measurement_map(), p.Ts_control);
  const BlockSynthesis pitch = synthesize_block(lm.A2, lm.B2, w.Q2, w.R2, pitch_measurement_map(), p.Ts_control);
  const double residual = std::max(
      dare_residual(roll.d.Ad, roll.d.Bd, MatrixXd(w.Q1.asDiagonal()), MatrixXd::Constant(1, 1, w.R1), roll.dare.P)
          .cwiseAbs()
          .maxCoeff(),
      dare_residual(pitch.d.Ad, pitch.d.Bd, MatrixXd(w.Q2.asDiagonal()), MatrixXd::Constant(1, 1, w.R2), pitch.dare.P)
          .cwiseAbs()
          .maxCoeff());
  report(std::abs(k - 0.6180339887) <= 1e-6 && residual < 1e-10, "dare-solver",
         fmt("scalar K=%.10f, robot-block residual %.1e", k, residual));
}

void determinism() {
  int n = 0, identical = 0;
  for (const auto& e : std::filesystem::directory_iterator(std::string(WHEELBOT_SOURCE_DIR) + "/scenarios")) {
    if (e.path().extension() != ".json") continue;
    const ScenarioConfig c = load_scenario(e.path().string());
    ++n;
    identical += csv_of(run_scenario(c)) == csv_of(run_scenario(c));
  }
  report(n > 0 && identical == n, "determinism", fmt("%d/%d scenarios byte-identical on re-run", identical, n));
}

void phase_sequence(Maneuver m, const char* name) {
  ScenarioConfig c;
  c.maneuver = m;
  c.duration = 2.0;
  const RunSummary s = summarize(run_scenario(c));
  std::string seq;
  for (const auto& e : s.timeline) seq += std::string(seq.empty() ? "" : ">") + to_string(e.phase);
  const double t_full = s.final_phase == ManeuverPhase::BalanceFull ? s.timeline.back().t : -1.0;
  report(s.success && t_full >= 0.0 && t_full < 1.5, name, fmt("%s at t=%.2f s", seq.c_str(), t_full));
}

}  // namespace

int main() {
  standup_reproduction();
  torque_bound();
  complementary_cutoff();
  estimator_exactness();
  pivot_ablation();
  balancing();
  linear_structure();
  energy_and_rk4();
  dare();
  determinism();
  phase_sequence(Maneuver::Standup, "phase-sequence-standup");
  phase_sequence(Maneuver::Rollup, "phase-sequence-rollup");
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
