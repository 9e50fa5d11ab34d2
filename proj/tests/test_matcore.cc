#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "safeguard/matcore.h"
#include "test_util.h"

namespace safeguard {
namespace {

using testing::RandomMat;
using testing::RandomPd;
using testing::RandomSym;

double Det(const Mat& m) { return m.partialPivLu().determinant(); }

// Smallest root of det(M − λI): scan up from the Gershgorin floor until the
// sign flips, then bisect.
double SmallestRootByBisection(const Mat& m) {
  const int n = static_cast<int>(m.rows());
  double lo = 0.0;
  for (int i = 0; i < n; ++i) {
    lo = std::min(lo, m(i, i) - (m.row(i).cwiseAbs().sum() - std::abs(m(i, i))));
  }
  lo -= 1.0;
  const auto f = [&](double l) { return Det(m - l * Mat::Identity(n, n)); };
  const double step = 1e-3;
  double a = lo, fa = f(a);
  double b = a + step;
  while (std::signbit(f(b)) == std::signbit(fa)) {
    a = b;
    b += step;
  }
  for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
    const double c = 0.5 * (a + b);
    if (std::signbit(f(c)) == std::signbit(fa)) a = c; else b = c;
  }
  return 0.5 * (a + b);
}

TEST(He, IdentityAndShift) {
  EXPECT_TRUE(He(Mat::Identity(2, 2)).isApprox(2.0 * Mat::Identity(2, 2)));
  Mat s(2, 2);
  s << 0, 1, 0, 0;
  Mat want(2, 2);
  want << 0, 1, 1, 0;
  EXPECT_EQ(He(s), want);
}

TEST(He, MatchesTransposeAndAdd) {
  std::mt19937_64 rng(7);
  const Mat m = RandomMat(5, 5, rng);
  Mat t(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) t(i, j) = m(i, j) + m(j, i);
  EXPECT_EQ(He(m), t);
}

TEST(He, RejectsNonSquare) { EXPECT_THROW(He(Mat::Zero(2, 3)), std::invalid_argument); }

TEST(SymMatrixTest, SymmetrizesAndRejectsAsymmetry) {
  Mat m(2, 2);
  m << 1, 2 + 1e-13, 2, 3;
  const SymMatrix s(m);
  EXPECT_EQ(s(0, 1), s(1, 0));
  m(0, 1) = 2.5;
  EXPECT_THROW(SymMatrix{m}, std::invalid_argument);
}

TEST(MinEig, SmallCases) {
  EXPECT_NEAR(MinEig(Mat::Identity(3, 3)), 1.0, 1e-15);
  Mat d = Mat::Zero(2, 2);
  d.diagonal() << 2, -3;
  EXPECT_NEAR(MinEig(d), -3.0, 1e-15);
}

TEST(MinEig, MatchesDeterminantBisection) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat m = RandomSym(8, rng);
    EXPECT_NEAR(MinEig(m), SmallestRootByBisection(m), 1e-8) << "trial " << trial;
    EXPECT_NEAR(MaxEig(m), -SmallestRootByBisection(-m), 1e-8) << "trial " << trial;
  }
}

TEST(MinEig, RayleighBounds) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 9;
    const Mat m = RandomSym(n, rng);
    const double mean = m.trace() / n;
    EXPECT_LE(MinEig(m), mean + 1e-12);
    EXPECT_GE(MaxEig(m), mean - 1e-12);
  }
}

TEST(Definiteness, Basics) {
  EXPECT_TRUE(IsPsd(SymMatrix::Identity(2), 1e-9));
  EXPECT_TRUE(IsPd(SymMatrix::Identity(2), 1e-9));
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 1;
  EXPECT_TRUE(IsPsd(SymMatrix(d), 1e-9));
  EXPECT_FALSE(IsPd(SymMatrix(d), 1e-9));
}

TEST(Definiteness, JosephsonDisplayedY) {
  Mat y(3, 3);
  y << 573.0413, 173.3292, -61.6569, 173.3292, 173.3396, -0.5772, -61.6569, -0.5772, 509.5987;
  EXPECT_TRUE(IsPd(SymMatrix(y), 1e-9));
}

TEST(NullSpace, InputMatrixKernel) {
  Mat bt(1, 3);
  bt << 0, 1, 0;
  const Mat w = NullSpaceBasis(bt);
  ASSERT_EQ(w.cols(), 2);
  EXPECT_LT((bt * w).cwiseAbs().maxCoeff(), 1e-14);
  // span{e1, e3}: the projector is diag(1, 0, 1)
  Mat proj = Mat::Zero(3, 3);
  proj(0, 0) = proj(2, 2) = 1;
  EXPECT_TRUE((w * w.transpose()).isApprox(proj, 1e-12));
  EXPECT_EQ(NullSpaceBasis(Mat::Identity(3, 3)).cols(), 0);
}

Mat GramSchmidt(const Mat& k) {
  Mat q = k;
  for (int j = 0; j < q.cols(); ++j) {
    for (int i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
    q.col(j).normalize();
  }
  return q;
}

TEST(NullSpace, MatchesConstructedKernel) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat k = RandomMat(5, 3, rng);
    const Mat q = GramSchmidt(k);
    const Mat m = RandomMat(2, 5, rng) * (Mat::Identity(5, 5) - q * q.transpose());
    const Mat w = NullSpaceBasis(m);
    ASSERT_EQ(w.cols(), 3);
    EXPECT_LT((m * w).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE((w.transpose() * w).isApprox(Mat::Identity(3, 3), 1e-10));
    EXPECT_LT((w * w.transpose() - q * q.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(NullSpace, RandomProperty) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int trial = 0; trial < 1000; ++trial) {
    const int r = dim(rng), c = dim(rng);
    // random rank deficiency half of the time
    Mat m = RandomMat(r, c, rng);
    if (trial % 2 == 0 && std::min(r, c) > 1) {
      const int k = std::min(r, c) / 2;
      m = RandomMat(r, k, rng) * RandomMat(k, c, rng);
    }
    const Mat w = NullSpaceBasis(m);
    ASSERT_EQ(w.rows(), c);
    const Eigen::JacobiSVD<Mat> svd(m);
    const Vec s = svd.singularValues();
    int rank = 0;
    for (int i = 0; i < s.size(); ++i) rank += s(i) > 1e-9 * s(0);
    EXPECT_EQ(w.cols(), c - rank);
    if (w.cols() == 0) continue;
    EXPECT_LE((m * w).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, Norm2(m)));
    EXPECT_LT((w.transpose() * w - Mat::Identity(w.cols(), w.cols())).cwiseAbs().maxCoeff(),
              1e-10);
  }
}

TEST(BlockTest, IdentityFromScalars) {
  const Mat one = Mat::Identity(1, 1), zero = Mat::Zero(1, 1);
  EXPECT_EQ(Block({{one, zero}, {zero, one}}), Mat::Identity(2, 2));
}

TEST(BlockTest, IndexReadback) {
  std::mt19937_64 rng(2);
  const std::vector<int> rs = {2, 3, 1}, cs = {1, 4};
  std::vector<std::vector<Mat>> grid(3, std::vector<Mat>(2));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) grid[i][j] = RandomMat(rs[i], cs[j], rng);
  const Mat b = Block(grid);
  ASSERT_EQ(b.rows(), 6);
  ASSERT_EQ(b.cols(), 5);
  int r0 = 0;
  for (int i = 0; i < 3; ++i) {
    int c0 = 0;
    for (int j = 0; j < 2; ++j) {
      for (int a = 0; a < rs[i]; ++a)
        for (int c = 0; c < cs[j]; ++c) EXPECT_EQ(b(r0 + a, c0 + c), grid[i][j](a, c));
      c0 += cs[j];
    }
    r0 += rs[i];
  }
}

TEST(BlockTest, DimensionMismatch) {
  EXPECT_THROW(Block({{Mat::Zero(2, 2), Mat::Zero(3, 1)}}), std::invalid_argument);
}

TEST(Ellipsoid, ShapeOrdering) {
  EXPECT_TRUE(EllipsoidContains(2.0 * SymMatrix::Identity(2), SymMatrix::Identity(2), 1e-12));
  EXPECT_FALSE(EllipsoidContains(SymMatrix::Identity(2), 2.0 * SymMatrix::Identity(2), 1e-12));
  EXPECT_THROW(EllipsoidContains(SymMatrix::Identity(2), SymMatrix::Identity(3), 0.0),
               std::invalid_argument);
}

// max of xᵀ outer x over the boundary of ℰ(inner), by sampling then
// Rayleigh ascent in Cholesky coordinates.
double BoundaryMax(const Mat& inner, const Mat& outer, std::mt19937_64& rng) {
  const int n = static_cast<int>(inner.rows());
  const Mat linv = inner.llt().matrixL().solve(Mat::Identity(n, n));
  const Mat s = linv * outer * linv.transpose();  // x = L⁻ᵀu
  std::normal_distribution<double> nd;
  Vec best;
  double bv = -1e300;
  for (int k = 0; k < 200; ++k) {
    Vec u(n);
    for (int i = 0; i < n; ++i) u(i) = nd(rng);
    u.normalize();
    const double v = u.dot(s * u);
    if (v > bv) { bv = v; best = u; }
  }
  const double shift = s.cwiseAbs().sum();  // keeps the ascent on the top eigenvalue
  for (int k = 0; k < 3000; ++k) {
    best = (s * best + shift * best).normalized();
  }
  return best.dot(s * best);
}

TEST(Ellipsoid, AgreesWithBoundarySampling) {
  std::mt19937_64 rng(23);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 6;
    const Mat inner = RandomPd(n, rng, 0.5, 3.0);
    const Mat outer = RandomPd(n, rng, 0.1, 1.5);
    const double mx = BoundaryMax(inner, outer, rng);
    if (std::abs(mx - 1.0) < 1e-6) continue;
    ++checked;
    EXPECT_EQ(EllipsoidContains(SymMatrix(inner), SymMatrix(outer), 0.0), mx <= 1.0)
        << "trial " << trial << " boundary max " << mx;
  }
  EXPECT_GT(checked, 450);
}

TEST(Factors, SqrtInverseLogdet) {
  std::mt19937_64 rng(9);
  const Mat p = RandomPd(4, rng);
  const Mat s = SqrtPsd(p);
  EXPECT_TRUE((s * s).isApprox(p, 1e-12));
  EXPECT_TRUE((InvSqrtPd(p) * s).isApprox(Mat::Identity(4, 4), 1e-12));
  EXPECT_TRUE((InversePd(p) * p).isApprox(Mat::Identity(4, 4), 1e-12));
  EXPECT_NEAR(LogDetPd(p), std::log(p.determinant()), 1e-12);
}

TEST(Factors, PsdFactorDropsNullDirections) {
  std::mt19937_64 rng(4);
  const Mat f = RandomMat(5, 2, rng);
  const Mat m = f * f.transpose();
  const Mat l = PsdFactor(m);
  EXPECT_EQ(l.cols(), 2);
  EXPECT_TRUE((l * l.transpose()).isApprox(m, 1e-12));
  EXPECT_EQ(PsdFactor(Mat::Zero(3, 3)).cols(), 0);
}

TEST(Norm, Spectral) {
  Mat m(2, 2);
  m << 3, 0, 0, -4;
  EXPECT_NEAR(Norm2(m), 4.0, 1e-14);
}

// Volume bound used to relate Tr[R] and det[R] when enlarging attack sets.
TEST(TraceDetBound, RandomPd) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 5;
    const Mat r = RandomPd(n, rng, 1e-3, 10.0);
    const double lhs = std::sqrt(r.determinant());
    const double rhs = std::pow(n, -0.5 * n) * std::pow(r.trace(), 0.5 * n);
    EXPECT_LE(lhs, rhs * (1 + 1e-12)) << "trial " << trial;
  }
}

}  // namespace
}  // namespace safeguard
