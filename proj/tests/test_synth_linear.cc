#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "safeguard/model_io.h"
#include "safeguard/simkit.h"
#include "safeguard/synth.h"

namespace safeguard {
namespace {

const std::string kData = SAFEGUARD_DATA_DIR;

SystemBundle DoubleIntegrator() { return LoadModel(kData + "/double_integrator.json"); }

// ẋ = −x + a, |a| ≤ 1 (scalar attack on the actuator).
SystemBundle ScalarStable(double xi) {
  return ParseModel(R"({
    "plant": {"A": -1, "B": 1, "C": 1},
    "primary": {"D": 0},
    "selection": {"Cs": 1, "Eu": 1},
    "attack": {"Q3": 1, "channels": [[1], [0]]},
    "safe": {"Xi": )" + std::to_string(xi) + "}}");
}

TEST(LinearPath, RejectsStateDependentAttackAndSector) {
  SystemBundle b = DoubleIntegrator();
  EXPECT_TRUE(LinearPathIssue(b).empty());
  b.attack.Q1 = SymMatrix::Identity(2) * -0.1;
  EXPECT_FALSE(LinearPathIssue(b).empty());
  EXPECT_THROW(SynthesizeLinear(b), SynthError);
  EXPECT_FALSE(LinearPathIssue(JosephsonCaseStudy()).empty());
}

TEST(LinearPath, AbsorbsEqualSectorBounds) {
  SystemBundle b = JosephsonCaseStudy();
  b.sector.S2 = b.sector.S1;
  EXPECT_TRUE(LinearPathIssue(b).empty());
  const HatMatrices h = AbsorbedHats(b);
  const HatMatrices raw = ComputeHatMatrices(b.plant, b.primary, b.selection);
  EXPECT_TRUE(h.Ahat.isApprox(raw.Ahat + b.plant.G * b.sector.S1 * b.plant.H, 1e-14));
}

TEST(LinearPath, ProblemAtZeroNewVariables) {
  const SystemBundle b = DoubleIntegrator();
  const HatMatrices h = AbsorbedHats(b);
  const PrimaryLoop l = AbsorbedLoop(b);
  const LinearProblem p = BuildLinearProblem(h, l.B1cal, b.attack.Q3, b.safe.Xi, 0.5, 0.9);
  EXPECT_FALSE(p.gamma.has_value());
  EXPECT_GE(p.problem.constraints().size(), 3u);
}

TEST(SynthesizeLinearTest, StablePlantCertified) {
  const SystemBundle b = ScalarStable(0.01);
  const SynthResult r = SynthesizeLinear(b);
  EXPECT_LE(r.k_lmi_max_eig, 1e-6) << r.ToString();
  EXPECT_TRUE(r.contained);
  // A decoupled, decaying secondary state is admissible: the primary loop
  // already has the certificate P1 = 1. (A2 = 0 would not decay at α1 = 1.)
  SynthResult zero = r;
  zero.K = SecondaryController::Zero(1, 1, 1);
  zero.K.A2(0, 0) = -1.0;
  zero.P = SymMatrix(Mat::Identity(2, 2));
  zero.alphas = {1.0, 1.0, 0.0, 1.0};
  AuditSynthResult(b, &zero, 1e-6, true);
  EXPECT_LE(zero.k_lmi_max_eig, 1e-9);
  EXPECT_TRUE(zero.contained);
}

TEST(SynthesizeLinearTest, DoubleIntegratorSimulatesInside) {
  const SystemBundle b = DoubleIntegrator();
  SynthOptions o;
  o.alphas = Alphas{0.5, 0.0, 0.0, 0.9};
  const SynthResult r = SynthesizeLinear(b, o);
  EXPECT_LE(r.k_lmi_max_eig, 1e-6) << r.ToString();
  EXPECT_TRUE(r.contained);
  const MonteCarloReport mc = MonteCarloInvariance(MakeSimSystem(b, r.K), r.P, 100, 10.0, 1e-3, 21);
  EXPECT_TRUE(mc.ok) << mc.ToString();
}

TEST(SynthesizeLinearTest, RecoveredControllerReproducesEta) {
  const SystemBundle b = DoubleIntegrator();
  SynthOptions o;
  o.alphas = Alphas{0.5, 0.0, 0.0, 0.9};
  const SynthResult r = SynthesizeLinear(b, o);
  const HatMatrices h = AbsorbedHats(b);
  const Eta eta = ForwardChangeOfVariables(h, r.X.mat(), r.Y.mat(), r.M, r.N, r.K);
  const SecondaryController back = RecoverController(h, eta, r.N, r.M);
  EXPECT_LT((back.AsBlock() - r.K.AsBlock()).cwiseAbs().maxCoeff(), 1e-6 * (1 + r.k_norm));
}

class DoubleIntegratorL2 : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { result_ = new SynthResult(SynthesizeL2(DoubleIntegrator())); }
  static void TearDownTestSuite() { delete result_; }
  static SynthResult* result_;
};
SynthResult* DoubleIntegratorL2::result_ = nullptr;

TEST_F(DoubleIntegratorL2, GainConditionHolds) {
  ASSERT_TRUE(result_->gamma.has_value());
  EXPECT_GT(*result_->gamma, 0.0);
  EXPECT_LE(result_->l2_max_eig, 1e-6) << result_->ToString();
  EXPECT_LE(result_->k_lmi_max_eig, 1e-6);
}

TEST_F(DoubleIntegratorL2, ZeroAttackDissipates) {
  const SystemBundle b = DoubleIntegrator();
  const SimSystem sys = MakeSimSystem(b, result_->K);
  AttackGenerator gen = AttackGenerator::Zero(b.attack);
  const std::vector<Vec> starts = SampleEllipsoidBoundary(result_->P, 5, 4);
  for (const Vec& x0 : starts) {
    const Trajectory tr = Simulate(sys, gen, x0, 5.0, 1e-3);
    const DissipationReport d = DissipationAudit(tr, result_->P, *result_->gamma, 1e-4);
    EXPECT_LE(d.max_violation, 1e-3) << d.ToString();
  }
}

TEST_F(DoubleIntegratorL2, BoundsEmpiricalGain) {
  const SystemBundle b = DoubleIntegrator();
  const SimSystem sys = MakeSimSystem(b, result_->K);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> freq(0.01, 5.0), amp(0.1, 2.0);
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const double f = freq(rng), a0 = amp(rng);
    AttackGenerator gen = AttackGenerator::Custom(b.attack, [=](double t, const Vec&) {
      return Vec::Constant(1, t < 10.0 ? a0 * std::sin(2 * M_PI * f * t) : 0.0);
    });
    const Trajectory tr = Simulate(sys, gen, Vec::Zero(sys.n()), 20.0, 1e-3);
    double ea = 0.0, eu = 0.0;
    for (size_t i = 0; i + 1 < tr.size(); ++i) {
      ea += tr.a[i].squaredNorm() * tr.dt;
      eu += tr.us[i].squaredNorm() * tr.dt;
    }
    worst = std::max(worst, std::sqrt(eu / ea));
  }
  EXPECT_LE(worst, *result_->gamma * (1 + 1e-3));
}

TEST(SynthesizeL2Test, GainShrinksAsSafeSetLoosens) {
  std::vector<double> gammas;
  for (double s : {4.0, 2.0, 1.0, 0.5, 0.25}) {
    SystemBundle b = DoubleIntegrator();
    b.safe.Xi = SymMatrix::Identity(2) * s;
    SynthOptions o;
    o.alphas = Alphas{0.5, 0.0, 0.0, 0.9};
    gammas.push_back(*SynthesizeL2(b, o).gamma);
  }
  // γ is minimized up to the 1% slack used for regularization.
  for (size_t i = 1; i < gammas.size(); ++i) EXPECT_LE(gammas[i], gammas[i - 1] * 1.02) << i;
}

TEST(WorstAttackTest, ScalarMatchesHandBound) {
  // P1 = Ξ = 1 forces q3 ≥ 1/(α2 (2 − α1)) ≥ 1, attained at α1 = α2 = 1.
  const SystemBundle b = ScalarStable(1.0);
  const WorstAttackResult w = WorstAttack(b, WorstAttackMode::kVerify);
  EXPECT_NEAR(w.trace, 1.0, 1e-3);
  ASSERT_TRUE(w.certificate.has_value());
  SystemBundle again = b;
  again.attack.Q3 = SymMatrix(w.Q3.mat() * (1 + 1e-6));
  AlphaGrid g{{w.alphas.a1}, {w.alphas.a4}};
  EXPECT_TRUE(VerifySafety(again, g).found());
}

TEST(WorstAttackTest, SynthesizeModeOnDoubleIntegrator) {
  SynthOptions o;
  o.alphas = Alphas{0.5, 0.25, 0.0, 0.9};
  const WorstAttackResult w = WorstAttack(DoubleIntegrator(), WorstAttackMode::kSynthesize, o);
  ASSERT_TRUE(w.synth.has_value());
  EXPECT_GT(w.trace, 0.0);
  EXPECT_LE(w.synth->k_lmi_max_eig, 1e-6 * std::max(1.0, Norm2(w.synth->P.mat())));
}

TEST(WorstAttackTest, NeedsStateIndependentBound) {
  SystemBundle b = ScalarStable(1.0);
  b.attack.Q2 = Mat::Constant(1, 1, 0.1);
  EXPECT_THROW(WorstAttack(b, WorstAttackMode::kVerify), SynthError);
}

TEST(OptimizeRpiTest, LogdetDominatesTrace) {
  const SystemBundle b = DoubleIntegrator();
  SynthOptions o;
  o.alphas = Alphas{0.5, 0.0, 0.0, 0.9};
  const RpiOptimum tr = OptimizeRpi(b, RpiObjective::kMinTraceX, o);
  const RpiOptimum ld = OptimizeRpi(b, RpiObjective::kMaxLogdetX, o);
  EXPECT_GE(ld.logdet_x, tr.logdet_x - 1e-6);
  for (size_t i = 1; i < ld.logdet_history.size(); ++i) {
    EXPECT_GE(ld.logdet_history[i], ld.logdet_history[i - 1] - 1e-12);
  }
  EXPECT_GE(VolumeRatio(ld.result.X.mat(), tr.result.X.mat()), 1.0 - 1e-6);
  EXPECT_TRUE(ld.result.contained);
  EXPECT_TRUE(tr.result.contained);
}

}  // namespace
}  // namespace safeguard
