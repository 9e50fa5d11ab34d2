#include <gtest/gtest.h>

#include <random>

#include "safeguard/lmi.h"
#include "test_util.h"

namespace safeguard {
namespace {

using testing::RandomMat;
using testing::RandomPd;

AffineExpr ScalarTimes(const VarRef& x, const Mat& m) { return AffineExpr(MatExpr::Scaled(x, m)); }

TEST(Solve, ScalarWithLowerBound) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  const Mat i2 = Mat::Identity(2, 2);
  p.AddLmi(ScalarTimes(x, i2) - AffineExpr(SymMatrix::Identity(2)), Strictness::kNonStrict, "x <= 1");
  p.AddLmi(ScalarTimes(x, -Mat::Identity(1, 1)), Strictness::kNonStrict, "x >= 0");
  p.Minimize({{x, Mat::Identity(1, 1)}});
  const SolveOutcome out = Solve(p);
  ASSERT_TRUE(out.feasible()) << out.diagnostic;
  EXPECT_NEAR(out.scalar(x), 0.0, 1e-6);
}

TEST(Solve, UnboundedObjectiveIsUnknown) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  p.AddLmi(ScalarTimes(x, Mat::Identity(2, 2)) - AffineExpr(SymMatrix::Identity(2)),
           Strictness::kNonStrict, "x <= 1");
  p.Minimize({{x, Mat::Identity(1, 1)}});
  const SolveOutcome out = Solve(p);
  EXPECT_EQ(out.status, SolveStatus::kUnknown);
  EXPECT_NE(out.diagnostic.find("unbounded"), std::string::npos);
}

TEST(Solve, ContradictoryBoundsAreNotFeasible) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  p.AddLmi(ScalarTimes(x, Mat::Identity(1, 1)), Strictness::kNonStrict, "x <= 0");
  p.AddLmi(AffineExpr(SymMatrix::Identity(1)) - ScalarTimes(x, Mat::Identity(1, 1)),
           Strictness::kNonStrict, "x >= 1");
  const SolveOutcome out = Solve(p);
  EXPECT_FALSE(out.feasible());
  EXPECT_EQ(out.status, SolveStatus::kInfeasible) << out.diagnostic;
}

TEST(Solve, ConstantOnlyViolationIsInfeasible) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  BlockExpr b({1, 1});
  b.Diag(0, ScalarTimes(x, Mat::Identity(1, 1))).Diag(1, AffineExpr(SymMatrix::Identity(1)));
  p.AddLmi(b.Build(), Strictness::kNonStrict, "constant block");
  EXPECT_EQ(Solve(p).status, SolveStatus::kInfeasible);
}

// P0/2 ⪯ P ⪯ P0 for random P0 ≻ 0.
TEST(Solve, ConstructedSandwich) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 4;
    const Mat p0 = RandomPd(n, rng);
    LmiProblem p;
    const VarRef P = p.Symmetric(n, "P");
    p.AddLmi(AffineExpr(MatExpr(P)) - AffineExpr(SymMatrix(p0)), Strictness::kNonStrict, "upper");
    p.AddLmi(AffineExpr(SymMatrix(0.5 * p0)) - AffineExpr(MatExpr(P)), Strictness::kNonStrict, "lower");
    const SolveOutcome out = Solve(p);
    ASSERT_TRUE(out.feasible()) << out.diagnostic;
    const Mat v = out.value(P);
    EXPECT_LE(MaxEig(Mat(v - p0)), 1e-7);
    EXPECT_LE(MaxEig(Mat(0.5 * p0 - v)), 1e-7);
  }
}

TEST(Solve, StrictMarginHonoured) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  p.AddLmi(ScalarTimes(x, Mat::Identity(2, 2)), Strictness::kStrict, "x < 0", 0.25);
  p.AddLmi(AffineExpr(SymMatrix::Identity(1) * -10.0) - ScalarTimes(x, Mat::Identity(1, 1)),
           Strictness::kNonStrict, "x >= -10");
  p.Minimize({{x, -Mat::Identity(1, 1)}});
  const SolveOutcome out = Solve(p);
  ASSERT_TRUE(out.feasible());
  EXPECT_LE(out.scalar(x), -0.25 + 1e-7);
  EXPECT_NEAR(out.scalar(x), -0.25, 1e-5);
}

TEST(Solve, DefaultMarginScalesWithConstant) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  const AffineExpr e = ScalarTimes(x, Mat::Identity(1, 1)) + AffineExpr(SymMatrix::Identity(1) * 3.0);
  const int idx = p.AddLmi(e, Strictness::kStrict, "strict");
  EXPECT_NEAR(p.constraints()[idx].margin, 1e-7 * 4.0, 1e-18);
  EXPECT_NEAR(DefaultMargin(e), 4e-7, 1e-18);
}

TEST(Solve, ScalingPreservesStatus) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> us(0.01, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 3;
    const Mat lo = RandomPd(n, rng);
    // feasible when the gap is positive, infeasible otherwise
    const double gap = (trial % 2 == 0) ? 0.5 : -0.5;
    const Mat hi = lo + gap * Mat::Identity(n, n);
    const double s = us(rng);
    SolveStatus st[2];
    for (int k = 0; k < 2; ++k) {
      const double scale = k == 0 ? 1.0 : s;
      LmiProblem p;
      const VarRef P = p.Symmetric(n, "P");
      p.AddLmi((AffineExpr(MatExpr(P)) - AffineExpr(SymMatrix(hi))) * scale, Strictness::kNonStrict, "hi");
      p.AddLmi((AffineExpr(SymMatrix(lo)) - AffineExpr(MatExpr(P))) * scale, Strictness::kNonStrict, "lo");
      st[k] = Solve(p).status;
    }
    EXPECT_EQ(st[0] == SolveStatus::kFeasible, st[1] == SolveStatus::kFeasible) << "trial " << trial;
    EXPECT_EQ(st[0] == SolveStatus::kFeasible, gap > 0) << "trial " << trial;
  }
}

TEST(Evaluate, ConstantAndHe) {
  std::mt19937_64 rng(4);
  const Mat c = testing::RandomSym(3, rng);
  EXPECT_EQ(Evaluate(AffineExpr(SymMatrix(c)), {}).mat(), c);
  LmiProblem p;
  const VarRef P = p.Symmetric(3, "P");
  const Mat a = RandomMat(3, 3, rng);
  const AffineExpr e = AffineExpr::He(MatExpr(P) * a);
  Assignment v{{P.id, Mat::Identity(3, 3)}};
  EXPECT_TRUE(Evaluate(e, v).mat().isApprox(He(a), 1e-14));
}

TEST(Evaluate, MatchesManualAccumulation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    LmiProblem p;
    const int n = 2 + trial % 3;
    const VarRef S = p.Symmetric(n, "S");
    const VarRef R = p.Matrix(n, 2, "R");
    const VarRef x = p.Scalar("x");
    const Mat L1 = RandomMat(n, n, rng), R1 = RandomMat(n, n, rng);
    const Mat L2 = RandomMat(n, n, rng), R2 = RandomMat(2, n, rng);
    const Mat M3 = RandomMat(n, n, rng), C = testing::RandomSym(n, rng);
    const AffineExpr e = AffineExpr::He(L1 * MatExpr(S) * R1) +
                         AffineExpr::He(L2 * MatExpr(R) * R2) +
                         AffineExpr::He(MatExpr::Scaled(x, M3)) + AffineExpr(SymMatrix(C)) -
                         AffineExpr::He(MatExpr(R).Transpose().Transpose() * R2) * 0.5;
    const Mat s = testing::RandomSym(n, rng), r = RandomMat(n, 2, rng);
    const double xv = std::normal_distribution<double>()(rng);
    const Assignment v{{S.id, s}, {R.id, r}, {x.id, Mat::Constant(1, 1, xv)}};
    const Mat manual = He(L1 * s * R1) + He(L2 * r * R2) + xv * He(M3) + C - 0.5 * He(r * R2);
    EXPECT_LT((Evaluate(e, v).mat() - manual).cwiseAbs().maxCoeff(), 1e-12) << "trial " << trial;
  }
}

TEST(Evaluate, MissingVariableThrows) {
  LmiProblem p;
  const VarRef P = p.Symmetric(2, "P");
  EXPECT_ANY_THROW(Evaluate(AffineExpr(MatExpr(P)), {}));
}

TEST(BlockExprTest, Assembly) {
  LmiProblem p;
  const VarRef P = p.Symmetric(2, "P");
  const Mat g = (Mat(2, 1) << 1, 2).finished();
  BlockExpr b({2, 1});
  b.Diag(0, AffineExpr(MatExpr(P))).Diag(1, AffineExpr(SymMatrix::Identity(1) * -1.0)).Off(0, 1, MatExpr(P) * g);
  const Mat pv = (Mat(2, 2) << 2, 1, 1, 3).finished();
  const Mat got = Evaluate(b.Build(), {{P.id, pv}}).mat();
  const Mat want = Block({{pv, pv * g}, {(pv * g).transpose(), -Mat::Identity(1, 1)}});
  EXPECT_TRUE(got.isApprox(want, 1e-14));
}

TEST(CheckSolutionTest, FeasibleOutcomePassesAndCorruptionFails) {
  std::mt19937_64 rng(6);
  const Mat p0 = RandomPd(3, rng, 1.0, 1.0);
  LmiProblem p;
  const VarRef P = p.Symmetric(3, "P");
  p.AddLmi(AffineExpr(MatExpr(P)) - AffineExpr(SymMatrix(p0)), Strictness::kNonStrict, "upper");
  p.AddLmi(AffineExpr(SymMatrix(0.99 * p0)) - AffineExpr(MatExpr(P)), Strictness::kNonStrict, "lower");
  const SolveOutcome out = Solve(p);
  ASSERT_TRUE(out.feasible());
  EXPECT_TRUE(CheckSolution(p, out.values, 1e-8).ok);
  Assignment bad = out.values;
  bad[P.id](0, 0) = -bad[P.id](0, 0);
  const ResidualReport r = CheckSolution(p, bad, 1e-8);
  EXPECT_FALSE(r.ok);
  EXPECT_GT(r.worst, 0.0);
}

TEST(Logdet, BoundedByIdentity) {
  LmiProblem p;
  const VarRef X = p.Symmetric(3, "X");
  p.AddLmi(AffineExpr(MatExpr(X)) - AffineExpr(SymMatrix::Identity(3)), Strictness::kNonStrict, "X <= I");
  p.AddLmi(AffineExpr(SymMatrix::Identity(3) * 0.01) - AffineExpr(MatExpr(X)), Strictness::kNonStrict, "X >= eps");
  const LogdetOutcome r = MinimizeLogdetIterative(p, X, 40);
  ASSERT_TRUE(r.outcome.feasible());
  EXPECT_LT((r.outcome.value(X) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-4);
  for (size_t i = 1; i < r.history.size(); ++i) EXPECT_GE(r.history[i], r.history[i - 1] - 1e-12);
}

TEST(Logdet, SandwichGoesToUpperBound) {
  std::mt19937_64 rng(14);
  const Mat xi = RandomPd(3, rng);
  LmiProblem p;
  const VarRef X = p.Symmetric(3, "X");
  p.AddLmi(AffineExpr(MatExpr(X)) - AffineExpr(SymMatrix(2.0 * xi)), Strictness::kNonStrict, "upper");
  p.AddLmi(AffineExpr(SymMatrix(xi)) - AffineExpr(MatExpr(X)), Strictness::kNonStrict, "lower");
  const LogdetOutcome r = MinimizeLogdetIterative(p, X, 40);
  ASSERT_TRUE(r.outcome.feasible());
  EXPECT_LT((r.outcome.value(X) - 2.0 * xi).cwiseAbs().maxCoeff(), 1e-4 * (1 + Norm2(xi)));
  for (size_t i = 1; i < r.history.size(); ++i) EXPECT_GE(r.history[i], r.history[i - 1] - 1e-12);
}

TEST(Problem, JsonDump) {
  LmiProblem p;
  const VarRef x = p.Scalar("x");
  p.AddLmi(ScalarTimes(x, Mat::Identity(1, 1)), Strictness::kStrict, "neg");
  const nlohmann::json j = p.ToJson();
  EXPECT_TRUE(j.contains("variables"));
  EXPECT_TRUE(j.contains("constraints"));
}

}  // namespace
}  // namespace safeguard
