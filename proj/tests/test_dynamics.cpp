#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "wheelbot/dynamics.hpp"
#include "wheelbot/simloop.hpp"

using namespace wheelbot;

namespace {

RobotParams P() { return default_params(); }

FullState state(const Vec5& q, const Vec5& dq) {
  FullState s;
  s.q = q;
  s.dq = dq;
  return s;
}

Vec5 vec5(double a, double b, double c, double d, double e) {
  Vec5 v;
  v << a, b, c, d, e;
  return v;
}

// Roll-only reaction-wheel pendulum about the fixed contact line, from its
// own Lagrangian: T = J/2 dq1^2 + I dq1 dq5 + I/2 dq5^2, V = m g a cos q1.
struct PlanarOracle {
  double J, I, mga;
  explicit PlanarOracle(const RobotParams& p)
      : J(composite_inertia(p)(0, 0) + p.m_total * p.half_height_a * p.half_height_a),
        I(p.I_wheel_spin),
        mga(p.m_total * p.g0 * p.half_height_a) {}
  std::pair<double, double> accel(double q1, double u1) const {
    const double dd1 = (mga * std::sin(q1) - u1) / (J - I);
    return {dd1, u1 / I - dd1};
  }
};

Vec3 chassis_point(const FullState& s, const Vec3& point_body, const RobotParams& p) {
  const Kinematics k = kinematics(s, Vec5::Zero(), p);
  return k.wheel_center + k.R_IB * point_body;
}

}  // namespace

TEST(Rotation, IdentityAtZero) {
  EXPECT_TRUE(rotation_body_from_inertial(0, 0, 0).isApprox(Mat3::Identity()));
}

TEST(Rotation, OrthonormalForRandomAngles) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-M_PI, M_PI);
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = rotation_body_from_inertial(u(rng), u(rng), u(rng));
    EXPECT_LT((R.transpose() * R - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
  }
}

TEST(Rotation, GravityInRolledBody) {
  const double q1 = 0.4, g0 = 9.81;
  const Vec3 g = rotation_body_from_inertial(q1, 0, 0) * Vec3(0, 0, g0);
  EXPECT_NEAR(g.x(), 0.0, 1e-15);
  EXPECT_NEAR(g.y(), g0 * std::sin(q1), 1e-12);
  EXPECT_NEAR(g.z(), g0 * std::cos(q1), 1e-12);
}

TEST(Rotation, SequenceIsYawRollPitch) {
  const double a = 0.3, b = -0.2, c = 1.1;
  EXPECT_TRUE(rotation_inertial_from_body(a, b, c).isApprox(rot_z(c) * rot_x(a) * rot_y(b), 1e-14));
  EXPECT_TRUE(rotation_body_from_inertial(a, b, c).isApprox(rotation_inertial_from_body(a, b, c).transpose(), 1e-14));
}

TEST(ConstraintResidual, RollingStraight) {
  const RobotParams p = P();
  FullState s;
  s.dq(3) = 4.0;
  EXPECT_LT(constraint_residual(s, Vec2(p.wheel_radius_r_w * 4.0, 0.0), p).norm(), 1e-15);
}

TEST(ConstraintResidual, RollingSideways) {
  const RobotParams p = P();
  FullState s;
  s.q(2) = M_PI / 2;
  s.dq(3) = -2.0;
  EXPECT_LT(constraint_residual(s, Vec2(0.0, -2.0 * p.wheel_radius_r_w), p).norm(), 1e-15);
}

TEST(ConstraintResidual, LinearInPerturbation) {
  const RobotParams p = P();
  FullState s;
  s.q(2) = 0.7;
  s.dq(3) = 3.0;
  const Vec2 v = contact_velocity(s, p);
  const Vec2 r = constraint_residual(s, v + Vec2(1e-3, 0.0), p);
  EXPECT_NEAR(r.x(), 1e-3, 1e-15);
  EXPECT_NEAR(r.y(), 0.0, 1e-15);
}

TEST(ConstraintResidual, IntegratorKeepsContactOnConstraint) {
  const RobotParams p = P();
  FullState s = state(vec5(2.9, 0.2, 0.1, 0, 0), vec5(0.3, 0.1, 0.5, 6.0, 20.0));
  for (int i = 0; i < 500; ++i) {
    const FullState n = rk4_step(s, {0.05, -0.02}, 1e-3, p);
    // average contact velocity over the step vs the rolling velocity at the midpoint
    const Vec2 avg = (n.contact_xy - s.contact_xy) / 1e-3;
    FullState mid = s;
    mid.q = 0.5 * (s.q + n.q);
    mid.dq = 0.5 * (s.dq + n.dq);
    EXPECT_LT(constraint_residual(mid, avg, p).norm(), 1e-4);
    s = n;
  }
}

TEST(ForwardDynamics, UprightIsEquilibrium) {
  EXPECT_LT(forward_dynamics(FullState{}, {}, P()).norm(), 1e-14);
}

TEST(ForwardDynamics, UprightIsUnstableInRoll) {
  FullState s;
  s.q(0) = 0.05;
  EXPECT_GT(forward_dynamics(s, {}, P())(0), 0.0);
  s.q(0) = -0.05;
  EXPECT_LT(forward_dynamics(s, {}, P())(0), 0.0);
}

TEST(ForwardDynamics, MatchesPlanarOracleOnRollSubmanifold) {
  const RobotParams p = P();
  const PlanarOracle o(p);
  for (double q1 : {-1.0, -0.05, 0.0, 0.05, 0.4, 1.2}) {
    for (double u1 : {-1.0, 0.0, 0.3}) {
      for (double dq1 : {0.0, 2.0}) {
        const FullState s = state(vec5(q1, 0, 0, 0, 0.7), vec5(dq1, 0, 0, 0, 15.0));
        const Vec5 dd = forward_dynamics(s, {u1, 0.0}, p);
        const auto [dd1, dd5] = o.accel(q1, u1);
        EXPECT_NEAR(dd(0), dd1, 1e-8);
        EXPECT_NEAR(dd(4), dd5, 1e-8);
        EXPECT_NEAR(dd(1), 0.0, 1e-8);
        EXPECT_NEAR(dd(3), 0.0, 1e-8);
      }
    }
  }
}

TEST(ForwardDynamics, MatchesBalancingPivotPlanarModel) {
  const RobotParams p = P();
  // balancing pivots on the wheel contact, same as the second stand-up step
  const PivotGeometry g = derive_pivot_geometry(p, PivotId::C2);
  for (double q1 : {-0.3, 0.1, 0.6}) {
    const double u1 = 0.4;
    const FullState s = state(vec5(q1, 0, 0, 0, 0), Vec5::Zero());
    const PlanarDerivative d = planar_dynamics({q1, 0.0, 0.0}, u1, g, p);
    const Vec5 dd = forward_dynamics(s, {u1, 0.0}, p);
    EXPECT_NEAR(dd(0), d.ddtheta, 1e-8);
    EXPECT_NEAR(dd(0) + dd(4), d.domega, 1e-8);
  }
}

TEST(ForwardDynamics, MirrorSymmetryInRoll) {
  const RobotParams p = P();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  // reflecting the body y axis flips roll, yaw and the reaction wheel
  const Vec5 flip = vec5(-1, 1, -1, 1, -1);
  for (int i = 0; i < 20; ++i) {
    const FullState s = state(vec5(u(rng), u(rng), u(rng), u(rng), u(rng)), 10.0 * vec5(u(rng), u(rng), u(rng), u(rng), u(rng)));
    const ControlInput in{u(rng), u(rng)};
    const FullState m = state(flip.cwiseProduct(s.q), flip.cwiseProduct(s.dq));
    const Vec5 a = forward_dynamics(s, in, p);
    const Vec5 b = forward_dynamics(m, {-in.u1, in.u2}, p);
    EXPECT_LT((flip.cwiseProduct(a) - b).norm(), 1e-9 * (1.0 + a.norm()));
  }
}

TEST(ForwardDynamics, MassMatrixSymmetricPositiveDefinite) {
  const RobotParams p = P();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 50; ++i) {
    const Mat5 M = mass_matrix(state(vec5(u(rng), u(rng), u(rng), u(rng), u(rng)), Vec5::Zero()), p);
    EXPECT_LT((M - M.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat5> eig(M);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(ForwardDynamics, GimbalLockRaisesSingularity) {
  // yaw and pitch axes align when the chassis lies on its side
  FullState s;
  s.q(0) = M_PI / 2;
  EXPECT_THROW(forward_dynamics(s, {}, P()), SingularityError);
  s.q(0) = -M_PI / 2;
  EXPECT_THROW(forward_dynamics(s, {}, P()), SingularityError);
  s.q(0) = M_PI / 2 - 0.05;
  EXPECT_NO_THROW(forward_dynamics(s, {}, P()));
}

TEST(ForwardDynamics, SingularityMessageNamesConfiguration) {
  FullState s;
  s.q(0) = M_PI / 2;
  try {
    forward_dynamics(s, {}, P());
    FAIL();
  } catch (const SingularityError& e) {
    EXPECT_NE(std::string(e.what()).find("1.5708"), std::string::npos);
  }
}

TEST(TotalEnergy, ZeroAtUprightRest) { EXPECT_NEAR(total_energy(FullState{}, P()), 0.0, 1e-15); }

TEST(TotalEnergy, ReactionWheelSpinTerm) {
  const RobotParams p = P();
  FullState s;
  s.dq(4) = 10.0;
  EXPECT_NEAR(total_energy(s, p), 0.5 * p.I_wheel_spin * 100.0, 1e-12);
}

TEST(TotalEnergy, PotentialOfRolledPose) {
  const RobotParams p = P();
  FullState s;
  s.q(0) = 0.3;
  EXPECT_NEAR(total_energy(s, p), p.m_total * p.g0 * p.half_height_a * (std::cos(0.3) - 1.0), 1e-12);
}

class EnergyDrift : public ::testing::TestWithParam<std::pair<Vec5, Vec5>> {};

TEST_P(EnergyDrift, RelativeDriftBelowOneInAMillion) {
  const RobotParams p = P();
  FullState s = state(GetParam().first, GetParam().second);
  const double e0 = total_energy(s, p);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    s = rk4_step(s, {}, 1e-3, p);
    worst = std::max(worst, std::abs(total_energy(s, p) - e0));
  }
  EXPECT_LT(worst / std::abs(e0), 1e-6);
}

// Motions around the hanging pose stay bounded for 10 s.
INSTANTIATE_TEST_SUITE_P(
    HangingStates, EnergyDrift,
    ::testing::Values(std::pair{vec5(2.84, 0.3, 0, 0, 0), vec5(0.5, -0.3, 0.4, 5, 40)},
                      std::pair{vec5(2.84, 0.3, 0, 0, 0), vec5(0, 0, 0, 0, 0)},
                      std::pair{vec5(-2.9, -0.6, 1.0, 0, 0), vec5(0.2, 0.4, -0.3, -3, 10)}));

TEST(EnergyDrift, RollOnlyFromSmallTilt) {
  const RobotParams p = P();
  FullState s;
  s.q(0) = 0.2;
  const double e0 = total_energy(s, p);
  for (int i = 0; i < 10000; ++i) s = rk4_step(s, {}, 1e-3, p);
  EXPECT_LT(std::abs(total_energy(s, p) - e0) / std::abs(e0), 1e-6);
}

TEST(Passivity, EnergyChangeEqualsMotorWork) {
  const RobotParams p = P();
  const ControlInput u{0.2, -0.15};
  FullState s = state(vec5(2.9, 0.2, 0.3, 0, 0), vec5(0.1, -0.2, 0.3, 4.0, -12.0));
  const double dt = 1e-4;
  const double e0 = total_energy(s, p);
  double work = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const FullState n = rk4_step(s, u, dt, p);
    work += 0.5 * dt * (input_power(s, u) + input_power(n, u));
    s = n;
  }
  const double de = total_energy(s, p) - e0;
  EXPECT_GT(std::abs(work), 0.05);
  EXPECT_NEAR(de, work, 1e-6 * std::abs(work) + 1e-8);
}

TEST(InputPower, UsesMotorRelativeRates) {
  FullState s;
  s.dq(1) = 1.0;
  s.dq(3) = 3.0;
  s.dq(4) = 5.0;
  EXPECT_DOUBLE_EQ(input_power(s, {2.0, 0.5}), 2.0 * 5.0 + 0.5 * 2.0);
}

TEST(Linearization, BlockStructure) {
  const LinearModel lm = linearize_upright(P());
  EXPECT_LT(lm.max_cross_coupling, kCrossCouplingTolerance);
  for (const Mat4* A : {&lm.A1, &lm.A2}) {
    EXPECT_DOUBLE_EQ((*A)(0, 1), 1.0);
    EXPECT_DOUBLE_EQ((*A)(2, 3), 1.0);
  }
  EXPECT_EQ(lm.B1(0), 0.0);
  EXPECT_EQ(lm.B1(2), 0.0);
  EXPECT_EQ(lm.B2(0), 0.0);
  EXPECT_EQ(lm.B2(2), 0.0);
}

TEST(Linearization, BothBlocksControllable) {
  const LinearModel lm = linearize_upright(P());
  EXPECT_EQ(controllability_rank(lm.A1, lm.B1), 4);
  EXPECT_EQ(controllability_rank(lm.A2, lm.B2), 4);
}

TEST(Linearization, RollEigenvaluesArePendulumPair) {
  const RobotParams p = P();
  const PlanarOracle o(p);
  const double lambda = std::sqrt(o.mga / (o.J - o.I));
  // frozen: sqrt(m g a / (J - I_spin)) for the default robot
  EXPECT_NEAR(lambda, 8.80357, 1e-5);
  const auto ev = linearize_upright(p).A1.eigenvalues();
  std::vector<double> re;
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(ev(i).imag(), 0.0, 1e-9);
    re.push_back(ev(i).real());
  }
  std::sort(re.begin(), re.end());
  EXPECT_NEAR(re[0], -lambda, 1e-5);
  EXPECT_NEAR(re[1], 0.0, 1e-9);
  EXPECT_NEAR(re[2], 0.0, 1e-9);
  EXPECT_NEAR(re[3], lambda, 1e-5);
}

TEST(Linearization, RollInputColumnMatchesOracle) {
  const RobotParams p = P();
  const PlanarOracle o(p);
  const LinearModel lm = linearize_upright(p);
  EXPECT_NEAR(lm.B1(1), -1.0 / (o.J - o.I), 1e-6);
  EXPECT_NEAR(lm.B1(3), 1.0 / o.I + 1.0 / (o.J - o.I), 1e-4);
}

TEST(Linearization, PitchBlockOneUnstableMode) {
  const auto ev = linearize_upright(P()).A2.eigenvalues();
  int positive = 0;
  for (int i = 0; i < 4; ++i)
    if (ev(i).real() > 1e-6) ++positive;
  EXPECT_EQ(positive, 1);
}

TEST(ApplyPush, VirtualPowerMatchesPointVelocity) {
  const RobotParams p = P();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (int i = 0; i < 20; ++i) {
    const FullState s = state(vec5(u(rng), u(rng), u(rng), u(rng), u(rng)), vec5(u(rng), u(rng), u(rng), u(rng), u(rng)));
    const Vec3 force(u(rng), u(rng), u(rng));
    const Vec3 point(u(rng) * 0.1, u(rng) * 0.1, 0.0455);
    const double h = 1e-6;
    FullState a = s, b = s;
    a.q += h * s.dq;
    b.q -= h * s.dq;
    a.contact_xy += h * contact_velocity(s, p);
    b.contact_xy -= h * contact_velocity(s, p);
    const Vec3 v = (chassis_point(a, point, p) - chassis_point(b, point, p)) / (2.0 * h);
    EXPECT_NEAR(apply_push(s, force, point, p).dot(s.dq), force.dot(v), 1e-7);
  }
}

TEST(ApplyPush, SidewaysPushOnTopRollsTheRobot) {
  const RobotParams p = P();
  const Vec5 f = apply_push(FullState{}, Vec3(0, 10.0, 0), Vec3(0, 0, 0.0455), p);
  // lever from the contact line to the push point
  EXPECT_NEAR(f(0), -10.0 * (p.wheel_radius_r_w + 0.0455), 1e-12);
  EXPECT_NEAR(f(1), 0.0, 1e-12);
  EXPECT_NEAR(f(3), 0.0, 1e-12);
  EXPECT_NEAR(f(4), 0.0, 1e-12);
}

TEST(ApplyPush, ForwardPushAtAxleDrivesWheel) {
  const RobotParams p = P();
  const Vec5 f = apply_push(FullState{}, Vec3(5.0, 0, 0), Vec3::Zero(), p);
  EXPECT_NEAR(f(3), 5.0 * p.wheel_radius_r_w, 1e-12);
  EXPECT_NEAR(f(0), 0.0, 1e-12);
  EXPECT_NEAR(f(1), 0.0, 1e-12);
}

TEST(ContactForce, StaticUprightCarriesWeight) {
  const RobotParams p = P();
  const Vec3 f = contact_force(FullState{}, Vec5::Zero(), p);
  EXPECT_NEAR(f.z(), p.m_total * p.g0, 1e-12);
  EXPECT_NEAR(f.head<2>().norm(), 0.0, 1e-12);
}
