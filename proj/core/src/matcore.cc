#include "safeguard/matcore.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace safeguard {

namespace {

double MaxAbs(const Mat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace

SymMatrix::SymMatrix(const Mat& m) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << "SymMatrix: non-square input " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(os.str());
  }
  const double asym = MaxAbs(m - m.transpose());
  if (asym > 1e-8 * std::max(1.0, MaxAbs(m))) {
    std::ostringstream os;
    os << "SymMatrix: asymmetry " << asym << " exceeds tolerance";
    throw std::invalid_argument(os.str());
  }
  m_ = Sym(m);
}

SymMatrix SymMatrix::Identity(int n) { return SymMatrix(Mat::Identity(n, n)); }

SymMatrix SymMatrix::Zero(int n) { return SymMatrix(Mat::Zero(n, n)); }

SymMatrix SymMatrix::FromSymmetrized(const Mat& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("SymMatrix: non-square input");
  }
  SymMatrix s;
  s.m_ = Sym(m);
  return s;
}

SymMatrix SymMatrix::operator+(const SymMatrix& o) const {
  return FromSymmetrized(m_ + o.m_);
}

SymMatrix SymMatrix::operator-(const SymMatrix& o) const {
  return FromSymmetrized(m_ - o.m_);
}

SymMatrix SymMatrix::operator*(double s) const {
  return FromSymmetrized(s * m_);
}

Mat Sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

Mat He(const Mat& m) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << "He: non-square input " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(os.str());
  }
  return m + m.transpose();
}

Vec Eigenvalues(const Mat& symmetric) {
  if (symmetric.rows() == 0) return Vec();
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetric, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double MinEig(const Mat& symmetric) {
  if (symmetric.rows() == 0) return 0.0;
  return Eigenvalues(symmetric)(0);
}

double MaxEig(const Mat& symmetric) {
  if (symmetric.rows() == 0) return 0.0;
  const Vec ev = Eigenvalues(symmetric);
  return ev(ev.size() - 1);
}

bool IsPsd(const SymMatrix& m, double tol) { return MinEig(m) >= -tol; }

bool IsPd(const SymMatrix& m, double tol) { return MinEig(m) >= tol; }

Mat NullSpaceBasis(const Mat& m, double rel_tol) {
  const int n = static_cast<int>(m.cols());
  if (m.rows() == 0 || n == 0) return Mat::Identity(n, n);
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullV);
  const Vec& s = svd.singularValues();
  const double smax = s.size() > 0 ? s(0) : 0.0;
  int rank = 0;
  if (smax > 0.0) {
    for (int i = 0; i < s.size(); ++i) {
      if (s(i) > rel_tol * smax) ++rank;
    }
  }
  return svd.matrixV().rightCols(n - rank);
}

Mat Block(const std::vector<std::vector<Mat>>& grid) {
  if (grid.empty()) return Mat(0, 0);
  const size_t ncol = grid[0].size();
  std::vector<Eigen::Index> heights(grid.size());
  std::vector<Eigen::Index> widths(ncol);
  for (size_t i = 0; i < grid.size(); ++i) {
    if (grid[i].size() != ncol) {
      throw std::invalid_argument("Block: ragged block grid");
    }
    heights[i] = grid[i][0].rows();
  }
  for (size_t j = 0; j < ncol; ++j) widths[j] = grid[0][j].cols();
  for (size_t i = 0; i < grid.size(); ++i) {
    for (size_t j = 0; j < ncol; ++j) {
      if (grid[i][j].rows() != heights[i] || grid[i][j].cols() != widths[j]) {
        std::ostringstream os;
        os << "Block: block (" << i << "," << j << ") is " << grid[i][j].rows()
           << "x" << grid[i][j].cols() << ", expected " << heights[i] << "x"
           << widths[j];
        throw std::invalid_argument(os.str());
      }
    }
  }
  Eigen::Index rows = 0, cols = 0;
  for (auto h : heights) rows += h;
  for (auto w : widths) cols += w;
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (size_t i = 0; i < grid.size(); ++i) {
    Eigen::Index c = 0;
    for (size_t j = 0; j < ncol; ++j) {
      out.block(r, c, heights[i], widths[j]) = grid[i][j];
      c += widths[j];
    }
    r += heights[i];
  }
  return out;
}

Mat BlockDiag(const std::vector<Mat>& blocks) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Mat out = Mat::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

double Ellipsoid::Quadratic(const Vec& x) const {
  const Vec d = center.size() == 0 ? x : Vec(x - center);
  return d.dot(shape.mat() * d);
}

bool EllipsoidContains(const SymMatrix& inner, const SymMatrix& outer,
                       double tol) {
  if (inner.dim() != outer.dim()) {
    throw std::invalid_argument("EllipsoidContains: dimension mismatch");
  }
  return IsPsd(inner - outer, tol);
}

Mat SqrtPsd(const Mat& symmetric) {
  if (symmetric.rows() == 0) return symmetric;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetric);
  const Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Mat InvSqrtPd(const Mat& symmetric) {
  if (symmetric.rows() == 0) return symmetric;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetric);
  if (es.eigenvalues()(0) <= 0.0) {
    throw std::domain_error("InvSqrtPd: matrix is not positive definite");
  }
  const Vec d = es.eigenvalues().cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Mat InversePd(const Mat& symmetric) {
  if (symmetric.rows() == 0) return symmetric;
  Eigen::LLT<Mat> llt(symmetric);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("InversePd: matrix is not positive definite");
  }
  return Sym(llt.solve(Mat::Identity(symmetric.rows(), symmetric.cols())));
}

double LogDetPd(const Mat& symmetric) {
  Eigen::LLT<Mat> llt(symmetric);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("LogDetPd: matrix is not positive definite");
  }
  const Mat& l = llt.matrixLLT();
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

Mat PsdFactor(const Mat& symmetric, double rel_tol) {
  const Eigen::Index n = symmetric.rows();
  if (n == 0) return Mat(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetric);
  const Vec& ev = es.eigenvalues();
  const double top = std::max(ev(n - 1), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    if (top > 0.0 && ev(i) > rel_tol * top) keep.push_back(i);
  }
  Mat l(n, static_cast<Eigen::Index>(keep.size()));
  for (size_t k = 0; k < keep.size(); ++k) {
    l.col(k) = es.eigenvectors().col(keep[k]) * std::sqrt(ev(keep[k]));
  }
  return l;
}

double Norm2(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

}  // namespace safeguard
