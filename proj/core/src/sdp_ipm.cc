#include "sdp_ipm.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace safeguard::internal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kStepFraction = 0.95;

double Inner(const SdpBlock& blk, const Mat& a, const Mat& n) {
  if (blk.diagonal) return a.col(0).dot(n.col(0));
  return a.cwiseProduct(n).sum();
}

// 𝒜(N)_i = Σ_k ⟨A_ki, N_k⟩
Vec ApplyA(const SdpProblem& p, const std::vector<Mat>& n) {
  Vec out = Vec::Zero(p.m);
  for (size_t k = 0; k < p.blocks.size(); ++k) {
    for (const auto& [i, a] : p.blocks[k].A) out(i) += Inner(p.blocks[k], a, n[k]);
  }
  return out;
}

double BlockInner(const SdpBlock& blk, const Mat& x, const Mat& z) {
  if (blk.diagonal) return x.col(0).dot(z.col(0));
  return x.cwiseProduct(z).sum();
}

// Largest step a <= 1/frac keeping X + a dX ⪰ 0, scaled by frac.
double MaxStep(const SdpBlock& blk, const Mat& x, const Mat& dx) {
  if (blk.dim() == 0) return kInf;
  if (blk.diagonal) {
    double a = kInf;
    for (int r = 0; r < blk.dim(); ++r) {
      if (dx(r, 0) < 0.0) a = std::min(a, -x(r, 0) / dx(r, 0));
    }
    return a;
  }
  Eigen::LLT<Mat> llt(x);
  if (llt.info() != Eigen::Success) return 0.0;
  const Mat li = llt.matrixL().solve(Mat::Identity(x.rows(), x.cols()));
  const double lmin = MinEig(Sym(li * dx * li.transpose()));
  return lmin >= 0.0 ? kInf : -1.0 / lmin;
}

bool IsInterior(const SdpBlock& blk, const Mat& z) {
  if (blk.dim() == 0) return true;
  if (blk.diagonal) return (z.col(0).array() > 0.0).all();
  Eigen::LLT<Mat> llt(z);
  return llt.info() == Eigen::Success;
}

Vec SolveSchur(Mat m, const Vec& rhs) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  double scale = std::max(1e-300, m.diagonal().cwiseAbs().maxCoeff());
  for (double reg = 1e-14; reg < 1e-2; reg *= 100.0) {
    m.diagonal().array() += reg * scale;
    llt.compute(m);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
  }
  Eigen::LDLT<Mat> ldlt(m);
  return ldlt.solve(rhs);
}

}  // namespace

Mat DualSlack(const SdpBlock& blk, const Vec& y) {
  Mat z = blk.C;
  for (const auto& [i, a] : blk.A) z -= y(i) * a;
  return z;
}

SdpResult SolveDualForm(const SdpProblem& p, const Vec& y0,
                        const SdpSettings& s) {
  const size_t nb = p.blocks.size();
  SdpResult r;
  r.y = y0;
  r.X.resize(nb);
  r.Z.resize(nb);

  double n_total = 0.0;
  for (const auto& blk : p.blocks) n_total += blk.dim();
  const double b_norm = p.b.size() ? p.b.cwiseAbs().maxCoeff() : 0.0;

  // Initial primal point: scaled identity, large enough that the initial
  // complementarity gap dominates the primal residual.
  double xi = 1.0;
  for (const auto& blk : p.blocks) {
    for (const auto& [i, a] : blk.A) {
      const double an = blk.diagonal ? a.col(0).norm() : a.norm();
      if (an > 0.0) xi = std::max(xi, (1.0 + std::abs(p.b(i))) / (1.0 + an));
    }
  }
  for (size_t k = 0; k < nb; ++k) {
    const auto& blk = p.blocks[k];
    r.X[k] = blk.diagonal ? Mat(Mat::Constant(blk.dim(), 1, xi))
                          : Mat(xi * Mat::Identity(blk.dim(), blk.dim()));
    r.Z[k] = DualSlack(blk, r.y);
  }

  std::vector<Mat> zinv(nb);
  for (int iter = 0; iter < s.max_iter; ++iter) {
    r.iterations = iter;
    const Vec ax = ApplyA(p, r.X);
    const Vec rp = p.b - ax;
    double gap = 0.0, pobj = 0.0;
    for (size_t k = 0; k < nb; ++k) {
      gap += BlockInner(p.blocks[k], r.X[k], r.Z[k]);
      pobj += BlockInner(p.blocks[k], p.blocks[k].C, r.X[k]);
    }
    const double dobj = p.b.dot(r.y);
    const double mu = gap / std::max(1.0, n_total);
    r.pobj = pobj;
    r.dobj = dobj;
    r.rel_gap = gap / (1.0 + std::abs(pobj) + std::abs(dobj));
    r.rel_pinf = (rp.size() ? rp.cwiseAbs().maxCoeff() : 0.0) / (1.0 + b_norm);
    if (r.rel_gap < s.tol && r.rel_pinf < s.tol) {
      r.converged = true;
      return r;
    }
    if (s.stop && s.stop(r.y)) {
      r.stopped_early = true;
      return r;
    }

    // Schur complement M_ij = Σ_k tr(A_i X A_j Z⁻¹).
    Mat m = Mat::Zero(p.m, p.m);
    for (size_t k = 0; k < nb; ++k) {
      const auto& blk = p.blocks[k];
      if (blk.dim() == 0) continue;
      if (blk.diagonal) {
        zinv[k] = r.Z[k].cwiseInverse();
        const Vec w = r.X[k].col(0).cwiseProduct(zinv[k].col(0));
        for (const auto& [j, aj] : blk.A) {
          const Vec waj = w.cwiseProduct(aj.col(0));
          for (const auto& [i, ai] : blk.A) m(i, j) += ai.col(0).dot(waj);
        }
        continue;
      }
      Eigen::LLT<Mat> llt(r.Z[k]);
      zinv[k] = Sym(llt.solve(Mat::Identity(blk.dim(), blk.dim())));
      for (const auto& [j, aj] : blk.A) {
        const Mat g = r.X[k] * aj * zinv[k];
        for (const auto& [i, ai] : blk.A) m(i, j) += ai.cwiseProduct(g).sum();
      }
    }
    m = Sym(m);

    // Direction for a given complementarity target Rc (Rd = 0: dual
    // feasibility is maintained exactly by recomputing Z from y).
    auto direction = [&](const std::vector<Mat>& rc, Vec* dy,
                         std::vector<Mat>* dx, std::vector<Mat>* dz) {
      std::vector<Mat> rcz(nb);
      for (size_t k = 0; k < nb; ++k) {
        const auto& blk = p.blocks[k];
        rcz[k] = blk.diagonal ? Mat(rc[k].cwiseProduct(zinv[k]))
                              : Mat(rc[k] * zinv[k]);
        if (blk.dim() == 0) rcz[k] = rc[k];
      }
      *dy = SolveSchur(m, rp - ApplyA(p, rcz));
      dx->resize(nb);
      dz->resize(nb);
      for (size_t k = 0; k < nb; ++k) {
        const auto& blk = p.blocks[k];
        Mat d = Mat::Zero(blk.C.rows(), blk.C.cols());
        for (const auto& [i, a] : blk.A) d -= (*dy)(i) * a;
        (*dz)[k] = d;
        if (blk.dim() == 0) {
          (*dx)[k] = d;
        } else if (blk.diagonal) {
          (*dx)[k] = (rc[k] - r.X[k].cwiseProduct(d)).cwiseProduct(zinv[k]);
        } else {
          (*dx)[k] = Sym((rc[k] - r.X[k] * d) * zinv[k]);
        }
      }
    };
    auto steps = [&](const std::vector<Mat>& dx, const std::vector<Mat>& dz,
                     double* ap, double* ad) {
      double sp = kInf, sd = kInf;
      for (size_t k = 0; k < nb; ++k) {
        sp = std::min(sp, MaxStep(p.blocks[k], r.X[k], dx[k]));
        sd = std::min(sd, MaxStep(p.blocks[k], r.Z[k], dz[k]));
      }
      *ap = std::min(1.0, kStepFraction * sp);
      *ad = std::min(1.0, kStepFraction * sd);
    };

    // Predictor.
    std::vector<Mat> rc(nb);
    for (size_t k = 0; k < nb; ++k) {
      const auto& blk = p.blocks[k];
      rc[k] = blk.diagonal ? Mat(-r.X[k].cwiseProduct(r.Z[k]))
                           : Mat(-r.X[k] * r.Z[k]);
    }
    Vec dy;
    std::vector<Mat> dx, dz;
    direction(rc, &dy, &dx, &dz);
    double ap, ad;
    steps(dx, dz, &ap, &ad);
    double gap_aff = 0.0;
    for (size_t k = 0; k < nb; ++k) {
      gap_aff += BlockInner(p.blocks[k], r.X[k] + ap * dx[k], r.Z[k] + ad * dz[k]);
    }
    const double sigma = std::clamp(std::pow(gap_aff / std::max(gap, 1e-300), 3.0), 0.0, 1.0);

    // Corrector.
    for (size_t k = 0; k < nb; ++k) {
      const auto& blk = p.blocks[k];
      if (blk.diagonal) {
        rc[k] = Mat::Constant(blk.dim(), 1, sigma * mu) -
                r.X[k].cwiseProduct(r.Z[k]) - dx[k].cwiseProduct(dz[k]);
      } else {
        rc[k] = sigma * mu * Mat::Identity(blk.dim(), blk.dim()) -
                r.X[k] * r.Z[k] - dx[k] * dz[k];
      }
    }
    direction(rc, &dy, &dx, &dz);
    steps(dx, dz, &ap, &ad);

    // Dual update: recompute Z from y, backtracking if round-off pushes it
    // out of the cone.
    Vec y_new = r.y + ad * dy;
    std::vector<Mat> z_new(nb);
    for (int tries = 0; tries < 30; ++tries) {
      bool ok = true;
      for (size_t k = 0; k < nb && ok; ++k) {
        z_new[k] = DualSlack(p.blocks[k], y_new);
        ok = IsInterior(p.blocks[k], z_new[k]);
      }
      if (ok) break;
      ad *= 0.5;
      y_new = r.y + ad * dy;
      if (tries == 29) {
        ad = 0.0;
        y_new = r.y;
        for (size_t k = 0; k < nb; ++k) z_new[k] = r.Z[k];
      }
    }
    for (size_t k = 0; k < nb; ++k) {
      r.X[k] += ap * dx[k];
      if (!p.blocks[k].diagonal) r.X[k] = Sym(r.X[k]);
      r.Z[k] = z_new[k];
    }
    r.y = y_new;
    if (ap < 1e-12 && ad < 1e-12) {
      r.note = "step length collapsed";
      r.iterations = iter + 1;
      return r;
    }
  }
  r.iterations = s.max_iter;
  r.note = "iteration limit";
  return r;
}

}  // namespace safeguard::internal
