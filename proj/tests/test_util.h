#pragma once

#include <random>

#include "safeguard/matcore.h"

namespace safeguard::testing {

inline Mat RandomMat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

inline Mat RandomSym(int n, std::mt19937_64& rng) {
  const Mat a = RandomMat(n, n, rng);
  return 0.5 * (a + a.transpose());
}

// Well-conditioned PD matrix with eigenvalues in [lo, lo + spread].
inline Mat RandomPd(int n, std::mt19937_64& rng, double lo = 0.5, double spread = 2.0) {
  const Mat a = RandomMat(n, n, rng);
  Eigen::HouseholderQR<Mat> qr(a);
  const Mat q = qr.householderQ();
  std::uniform_real_distribution<double> u(lo, lo + spread);
  Vec d(n);
  for (int i = 0; i < n; ++i) d(i) = u(rng);
  return q * d.asDiagonal() * q.transpose();
}

}  // namespace safeguard::testing
