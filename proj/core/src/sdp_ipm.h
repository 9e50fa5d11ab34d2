#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "safeguard/matcore.h"

namespace safeguard::internal {

// One block of the dual-form SDP  max bᵀy  s.t.  C - Σ y_i A_i ⪰ 0.
// Diagonal blocks store C and the A_i as column vectors.
struct SdpBlock {
  bool diagonal = false;
  Mat C;
  std::vector<std::pair<int, Mat>> A;

  int dim() const { return static_cast<int>(C.rows()); }
};

struct SdpProblem {
  int m = 0;
  std::vector<SdpBlock> blocks;
  Vec b;
};

struct SdpSettings {
  int max_iter = 120;
  double tol = 1e-8;
  // Called with the current (dual feasible) y after every iteration;
  // returning true stops the solve early.
  std::function<bool(const Vec&)> stop;
};

struct SdpResult {
  Vec y;
  std::vector<Mat> X, Z;
  bool converged = false;
  bool stopped_early = false;
  int iterations = 0;
  double pobj = 0.0, dobj = 0.0;
  double rel_gap = 0.0, rel_pinf = 0.0;
  std::string note;
};

// Infeasible-primal, feasible-dual path following with the HKM direction and
// Mehrotra predictor-corrector. y0 must satisfy C - 𝒜ᵀ(y0) ≻ 0.
SdpResult SolveDualForm(const SdpProblem& p, const Vec& y0,
                        const SdpSettings& s);

// Dual slack C - Σ y_i A_i for one block.
Mat DualSlack(const SdpBlock& blk, const Vec& y);

}  // namespace safeguard::internal
