#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "safeguard/model_io.h"
#include "safeguard/simkit.h"

namespace safeguard {
namespace {

// ẋ = −x + a, actuator attack |a| ≤ 1.
SystemBundle Scalar() {
  return ParseModel(R"({
    "plant": {"A": -1, "B": 1, "C": 1},
    "primary": {"D": 0},
    "selection": {"Cs": 1, "Eu": 1},
    "attack": {"Q3": 1, "channels": [[1], [0]]},
    "safe": {"Xi": 1}
  })");
}

TEST(AdmissibleSetTest, StateGrowth) {
  AttackModel am{SymMatrix::Identity(2) * -1.0, Mat::Zero(2, 1), SymMatrix::Identity(1), Mat()};
  const Vec z = (Vec(2) << 2.0, 0.0).finished();
  const AdmissibleSet s = AdmissibleAttackSet(z, am);
  EXPECT_NEAR(s.radius2, 5.0, 1e-14);
  EXPECT_NEAR(s.center(0), 0.0, 1e-14);
}

TEST(AdmissibleSetTest, ShiftedCenter) {
  AttackModel am{SymMatrix::Zero(1), Mat::Constant(1, 1, 0.5), SymMatrix::Identity(1), Mat()};
  const Vec z = Vec::Constant(1, 2.0);
  const AdmissibleSet s = AdmissibleAttackSet(z, am);
  EXPECT_NEAR(s.center(0), -1.0, 1e-14);
  EXPECT_NEAR(s.radius2, 2.0, 1e-14);
  for (double sign : {-1.0, 1.0}) {
    const Vec a = Vec::Constant(1, s.center(0) + sign * std::sqrt(s.radius2));
    EXPECT_NEAR(AttackQuadratic(am, z, a), 1.0, 1e-12);
  }
}

AttackModel RandomModel(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> nd;
  Mat g(n, n), q2(n, m), r(m, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = nd(rng);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) q2(i, j) = nd(rng);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) r(i, j) = nd(rng);
  return {SymMatrix(Mat(-0.1 * g * g.transpose())), q2,
          SymMatrix(Mat(r * r.transpose() + Mat::Identity(m, m))), Mat()};
}

// 10 models x 10⁴ draws per strategy.
TEST(Samplers, EveryDrawIsAdmissible) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd;
  for (int model = 0; model < 10; ++model) {
    const int n = 1 + model % 3, m = 1 + model % 3;
    const AttackModel am = RandomModel(rng, n, m);
    Vec dir = Vec::Ones(m);
    AttackGenerator c = AttackGenerator::ConstantBoundary(am, dir);
    AttackGenerator s = AttackGenerator::SinusoidBoundary(am, dir, 0.7);
    AttackGenerator r = AttackGenerator::RandomAdmissible(am, 5 + model);
    AttackGenerator zero = AttackGenerator::Zero(am);
    double worst_c = 0.0, worst_s = 0.0, max_r = 0.0, max_z = 0.0;
    for (int k = 0; k < 10000; ++k) {
      Vec z(n);
      for (int i = 0; i < n; ++i) z(i) = 2.0 * nd(rng);
      const double t = 1e-3 * k;
      worst_c = std::max(worst_c, std::abs(AttackQuadratic(am, z, c.Sample(z, t)) - 1.0));
      worst_s = std::max(worst_s, std::abs(AttackQuadratic(am, z, s.Sample(z, t)) - 1.0));
      max_r = std::max(max_r, AttackQuadratic(am, z, r.Sample(z, t)));
      max_z = std::max(max_z, AttackQuadratic(am, z, zero.Sample(z, t)));
    }
    EXPECT_LE(worst_c, 1e-9) << "model " << model;
    EXPECT_LE(worst_s, 1e-9) << "model " << model;
    EXPECT_LE(max_r, 1.0 + 1e-12) << "model " << model;
    EXPECT_LE(max_z, 1.0) << "model " << model;
    Vec z0(n);
    for (int i = 0; i < n; ++i) z0(i) = nd(rng);
    for (const Vec& a : SampleAdmissibleBoundary(am, z0, 200, model)) {
      EXPECT_NEAR(AttackQuadratic(am, z0, a), 1.0, 1e-9);
    }
  }
}

TEST(Samplers, RandomIsDeterministicPerSeed) {
  const AttackModel am = Scalar().attack;
  AttackGenerator a = AttackGenerator::RandomAdmissible(am, 9);
  AttackGenerator b = AttackGenerator::RandomAdmissible(am, 9);
  const Vec z = Vec::Zero(1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.Sample(z, i), b.Sample(z, i));
}

TEST(Samplers, UnitBallAndSphere) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    EXPECT_LE(UniformInBall(4, rng).norm(), 1.0);
    EXPECT_NEAR(UniformOnSphere(4, rng).norm(), 1.0, 1e-14);
  }
}

double FinalError(double dt, double T) {
  const SimSystem sys = MakePrimarySimSystem(Scalar());
  AttackGenerator gen = AttackGenerator::Zero(sys.attack);
  const Trajectory tr = Simulate(sys, gen, Vec::Ones(1), T, dt);
  return std::abs(tr.zeta.back()(0) - std::exp(-tr.t.back()));
}

TEST(Integrator, DecayingExponential) {
  EXPECT_LE(FinalError(1e-2, 1.0), 1e-6);
  const SimSystem sys = MakePrimarySimSystem(Scalar());
  AttackGenerator gen = AttackGenerator::Zero(sys.attack);
  const Trajectory tr = Simulate(sys, gen, Vec::Ones(1), 1.0, 1e-2);
  EXPECT_NEAR(tr.t.back(), 1.0, 1e-12);
  EXPECT_EQ(tr.size(), 101u);
}

TEST(Integrator, FourthOrderConvergence) {
  const double e1 = FinalError(0.2, 2.0), e2 = FinalError(0.1, 2.0), e3 = FinalError(0.05, 2.0);
  EXPECT_GE(std::log2(e1 / e2), 3.5);
  EXPECT_GE(std::log2(e2 / e3), 3.5);
}

TEST(Integrator, HeldConstantAttackIsExact) {
  const SimSystem sys = MakePrimarySimSystem(Scalar());
  AttackGenerator gen = AttackGenerator::ConstantBoundary(sys.attack, Vec::Ones(1));
  const Trajectory tr = Simulate(sys, gen, Vec::Zero(1), 3.0, 1e-2);
  // x = 1 − e^{−t}
  EXPECT_NEAR(tr.zeta.back()(0), 1.0 - std::exp(-3.0), 1e-9);
  EXPECT_EQ(tr.a.back()(0), 1.0);
}

TEST(Integrator, BlowUpIsReported) {
  SystemBundle b = Scalar();
  b.plant.A(0, 0) = 400.0;
  const SimSystem sys = MakePrimarySimSystem(b);
  AttackGenerator gen = AttackGenerator::Zero(sys.attack);
  EXPECT_THROW(Simulate(sys, gen, Vec::Ones(1), 10.0, 1e-2), SimulationError);
}

TEST(Monitor, ExactCrossingIndex) {
  Trajectory tr;
  const double xs[] = {0.5, 0.9, 0.99, 1.01, 0.8, 1.2};
  for (int k = 0; k < 6; ++k) {
    tr.t.push_back(0.1 * k);
    tr.zeta.push_back(Vec::Constant(2, xs[k]));
  }
  Mat xi = Mat::Zero(2, 2);
  xi(0, 0) = 1.0;
  const SafetyMonitor m = MonitorSafety(tr, SymMatrix(xi), SymMatrix::Identity(2) * 0.6);
  ASSERT_TRUE(m.first_safe_violation.has_value());
  EXPECT_EQ(*m.first_safe_violation, 3);
  EXPECT_NEAR(*m.first_safe_violation_time, 0.3, 1e-15);
  ASSERT_TRUE(m.first_rpi_violation.has_value());
  EXPECT_EQ(*m.first_rpi_violation, 2);  // 2 · 0.6 · 0.81 < 1 < 2 · 0.6 · 0.9801
  EXPECT_NEAR(m.max_safe_quad, 1.44, 1e-14);
  const SafetyMonitor loose = MonitorSafety(tr, SymMatrix(xi), std::nullopt, 0.5);
  EXPECT_FALSE(loose.first_safe_violation.has_value());
}

// ẋ = −2x + a with u_s = −x from a static secondary gain, a ≡ 1, x(0) = 0.
// With V = p x², r(T) = p x(T)² + ∫ x²/γ − (γ − ε)T in closed form.
double AnalyticResidual(double p, double gamma, double eps, double T) {
  const double e = std::exp(-2.0 * T);
  const double xT = 0.5 * (1.0 - e);
  // ∫₀ᵀ ¼(1 − e^{−2t})² dt
  const double ix2 = 0.25 * (T - (1.0 - e) + 0.25 * (1.0 - e * e));
  return p * xT * xT + ix2 / gamma - (gamma - eps) * T;
}

TEST(Dissipation, MatchesClosedFormAndDetectsSmallGain) {
  const SystemBundle b = Scalar();
  SecondaryController k = SecondaryController::Zero(0, 1, 1);
  k.D2(0, 0) = -1.0;
  const SimSystem sys = MakeSimSystem(b, k);
  AttackGenerator gen = AttackGenerator::ConstantBoundary(sys.attack, Vec::Ones(1));
  const Trajectory tr = Simulate(sys, gen, Vec::Zero(1), 4.0, 1e-3);
  const SymMatrix P(Mat::Constant(1, 1, 0.5));
  const DissipationReport ok = DissipationAudit(tr, P, 1.0, 1e-4);
  EXPECT_NEAR(ok.final_residual, AnalyticResidual(0.5, 1.0, 1e-4, 4.0), 1e-6);
  EXPECT_LE(ok.max_violation, 1e-9);
  const DissipationReport bad = DissipationAudit(tr, P, 0.2, 1e-4);
  EXPECT_NEAR(bad.final_residual, AnalyticResidual(0.5, 0.2, 1e-4, 4.0), 1e-6);
  EXPECT_GT(bad.max_violation, 1e-3);
}

TEST(MonteCarlo, ScalarCertificateIsInvariant) {
  const SimSystem sys = MakePrimarySimSystem(Scalar());
  const MonteCarloReport r = MonteCarloInvariance(sys, SymMatrix::Identity(1), 50, 5.0, 1e-2, 1);
  EXPECT_TRUE(r.ok) << r.ToString();
  EXPECT_LE(r.max_V, 1.0 + 1e-9);
  const MonteCarloReport again = MonteCarloInvariance(sys, SymMatrix::Identity(1), 50, 5.0, 1e-2, 1);
  EXPECT_EQ(r.max_V, again.max_V);
  EXPECT_EQ(r.worst_index, again.worst_index);
  // A set smaller than the reach set is not invariant.
  const MonteCarloReport small = MonteCarloInvariance(sys, SymMatrix::Identity(1) * 4.0, 50, 5.0, 1e-2, 1);
  EXPECT_FALSE(small.ok);
}

TEST(Boundary, EllipsoidSamplesOnSurface) {
  Mat p(2, 2);
  p << 3, 1, 1, 2;
  for (const Vec& x : SampleEllipsoidBoundary(SymMatrix(p), 100, 2)) {
    EXPECT_NEAR(x.dot(p * x), 1.0, 1e-12);
  }
  const nlohmann::json j = EllipsoidJson(SymMatrix(p), 10, 3);
  EXPECT_EQ(j["surface"].size(), 10u);
  EXPECT_EQ(j["shape"].size(), 2u);
}

TEST(Export, CsvHeader) {
  const SimSystem sys = MakePrimarySimSystem(Scalar());
  AttackGenerator gen = AttackGenerator::Zero(sys.attack);
  const Trajectory tr = Simulate(sys, gen, Vec::Ones(1), 0.1, 1e-2);
  std::istringstream in(TrajectoryCsv(tr));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,zeta0,a0,us0,V,safeQuad");
  int rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  EXPECT_EQ(rows, static_cast<int>(tr.size()));
}

TEST(CaseStudy, JosephsonShape) {
  const SystemBundle b = JosephsonCaseStudy(50.0);
  const Dims d = b.dims();
  EXPECT_EQ(d.np, 3);
  EXPECT_EQ(d.n1, 0);
  EXPECT_EQ(d.na, 1);
  EXPECT_EQ(b.phi, "sin");
  EXPECT_EQ(b.safe.Xi.mat(), 50.0 * Mat::Identity(3, 3));
}

}  // namespace
}  // namespace safeguard
