#pragma once

#include <vector>

#include <Eigen/Dense>

namespace safeguard {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Dense real symmetric matrix. Construction symmetrizes (M + Mᵀ)/2 and
/// rejects inputs whose asymmetry exceeds 1e-8 relative to the largest entry.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(const Mat& m);

  static SymMatrix Identity(int n);
  static SymMatrix Zero(int n);
  // Skips the asymmetry check; for values that are symmetric by
  // construction up to round-off of arbitrary magnitude.
  static SymMatrix FromSymmetrized(const Mat& m);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Mat& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  SymMatrix operator+(const SymMatrix& o) const;
  SymMatrix operator-(const SymMatrix& o) const;
  SymMatrix operator*(double s) const;

 private:
  Mat m_;
};

inline SymMatrix operator*(double s, const SymMatrix& m) { return m * s; }

// (M + Mᵀ)/2 without any checks.
Mat Sym(const Mat& m);

// M + Mᵀ. Throws std::invalid_argument for non-square input.
Mat He(const Mat& m);

Vec Eigenvalues(const Mat& symmetric);
double MinEig(const Mat& symmetric);
double MaxEig(const Mat& symmetric);
inline double MinEig(const SymMatrix& m) { return MinEig(m.mat()); }
inline double MaxEig(const SymMatrix& m) { return MaxEig(m.mat()); }

bool IsPsd(const SymMatrix& m, double tol);
bool IsPd(const SymMatrix& m, double tol);

// Orthonormal basis of ker(M). Singular values <= rel_tol * sigma_max count
// as zero. A zero matrix has the full identity as kernel.
Mat NullSpaceBasis(const Mat& m, double rel_tol = 1e-9);

// Exact block concatenation. Every block in a grid row must share a row
// count and every block in a grid column must share a column count; zero
// sized blocks are allowed.
Mat Block(const std::vector<std::vector<Mat>>& grid);

Mat BlockDiag(const std::vector<Mat>& blocks);

struct Ellipsoid {
  SymMatrix shape;
  Vec center;  // empty means origin

  // (x - c)ᵀ shape (x - c)
  double Quadratic(const Vec& x) const;
};

// True iff {xᵀ inner x <= 1} ⊆ {xᵀ outer x <= 1}, i.e. inner - outer ⪰ -tol.
bool EllipsoidContains(const SymMatrix& inner, const SymMatrix& outer,
                       double tol);

// Symmetric PSD square root and inverse square root of a PD matrix.
Mat SqrtPsd(const Mat& symmetric);
Mat InvSqrtPd(const Mat& symmetric);
Mat InversePd(const Mat& symmetric);
double LogDetPd(const Mat& symmetric);

// Returns L with LLᵀ = M for PSD M, dropping directions with eigenvalue
// <= rel_tol * max eigenvalue. L has rank(M) columns.
Mat PsdFactor(const Mat& symmetric, double rel_tol = 1e-12);

// Spectral norm.
double Norm2(const Mat& m);

}  // namespace safeguard
