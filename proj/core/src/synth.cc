#include "safeguard/synth.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "safeguard/parallel.h"

namespace safeguard {

const char* ToString(Completion c) {
  switch (c) {
    case Completion::kPaperRecipe:
      return "paper-recipe";
    case Completion::kPiCompletion:
      return "pi-completion";
    case Completion::kAuto:
      return "auto";
  }
  return "?";
}

Completion ParseCompletion(const std::string& s) {
  if (s == "paper-recipe") return Completion::kPaperRecipe;
  if (s == "pi-completion") return Completion::kPiCompletion;
  if (s == "auto") return Completion::kAuto;
  throw std::invalid_argument("unknown completion mode '" + s +
                              "' (paper-recipe, pi-completion, auto)");
}

SynthError::SynthError(const std::string& stage, const std::string& msg,
                       std::vector<SynthGridCell> table)
    : std::runtime_error("[" + stage + "] " + msg), stage_(stage), table_(std::move(table)) {}

std::vector<Alphas> DefaultSynthGrid() {
  std::vector<Alphas> g{{0.05, 0.05, 0.1, 0.99}};
  const double a12[] = {0.01, 0.05, 0.1, 0.5};
  const double a3s[] = {0.05, 0.1, 0.5, 1.0};
  const double a4s[] = {0.9, 0.99};
  for (double a1 : a12)
    for (double a2 : a12)
      for (double a3 : a3s)
        for (double a4 : a4s) {
          if (a1 == 0.05 && a2 == 0.05 && a3 == 0.1 && a4 == 0.99) continue;
          g.push_back({a1, a2, a3, a4});
        }
  return g;
}

std::vector<Alphas> DefaultLinearGrid() {
  std::vector<Alphas> g;
  const AlphaGrid v = AlphaGrid::Default();
  for (double a1 : v.alpha1)
    for (double a4 : v.alpha4) g.push_back({a1, 0.0, 0.0, a4});
  return g;
}

namespace {

bool SectorDegenerate(const SectorBound& s) {
  if (s.S1.size() == 0) return true;
  const double scale = std::max({1.0, s.S1.cwiseAbs().maxCoeff(), s.S2.cwiseAbs().maxCoeff()});
  return (s.S1 - s.S2).cwiseAbs().maxCoeff() <= 1e-14 * scale;
}

void CheckNonlinearAlphas(const Alphas& a) {
  if (!(a.a2 > 0.0) || !(a.a3 > 0.0)) {
    throw std::invalid_argument("alpha2 and alpha3 must be strictly positive here");
  }
  if (!(a.a1 > 0.0)) throw std::invalid_argument("alpha1 must be positive");
  if (!(a.a4 >= 0.0 && a.a4 <= 1.0)) throw std::invalid_argument("alpha4 must lie in [0, 1]");
}

Mat SchurComplement11(const Mat& P, Eigen::Index n) {
  const Eigen::Index n2 = P.rows() - n;
  if (n2 == 0) return P;
  const Mat p22 = P.bottomRightCorner(n2, n2);
  return Sym(P.topLeftCorner(n, n) -
             P.topRightCorner(n, n2) * p22.ldlt().solve(P.bottomLeftCorner(n2, n)));
}

}  // namespace

NonlinearTerms ComputeNonlinearTerms(const HatMatrices& hats, const PrimaryLoop& loop,
                           const SectorBound& sector, const AttackModel& attack,
                           const Alphas& al) {
  CheckNonlinearAlphas(al);
  const Eigen::Index n = hats.Ahat.rows(), q = loop.G.cols();
  if (q > 0 && SectorDegenerate(sector)) {
    throw std::invalid_argument("S1 == S2: the nonlinearity is linear; use the linear synthesis path");
  }
  const Mat q3inv = InversePd(attack.Q3.mat());
  const Mat& B1 = loop.B1cal;
  NonlinearTerms t;
  t.Abar = hats.Ahat - B1 * q3inv * attack.Q2.transpose() + 0.5 * al.a1 * Mat::Identity(n, n);
  t.Gamma3_const = (1.0 / al.a2) * B1 * q3inv * B1.transpose();
  Mat sector_inner(0, 0);
  Mat H(0, n);
  if (q > 0) {
    const Mat& V = sector.V.mat();
    t.Abar += 0.5 * loop.G * (sector.S1 + sector.S2) * loop.H;
    t.Gamma3_const += (1.0 / (2.0 * al.a3)) * loop.G * InversePd(V) * loop.G.transpose();
    const Mat ds = sector.S2 - sector.S1;
    sector_inner = Sym(0.5 * al.a3 * ds.transpose() * V * ds);
    H = loop.H;
    const double lmin = MinEig(sector_inner);
    if (!(lmin > 1e-12 * std::max(1.0, Norm2(sector_inner)))) {
      throw std::invalid_argument(
          "(S2 - S1)ᵀ V (S2 - S1) is singular: the sector condition needs S2 - S1 with "
          "full column rank and V positive definite");
    }
  }
  const Mat lq = PsdFactor(attack.Qcal());
  const Eigen::Index r = lq.cols();
  t.F = Block({{H}, {Mat(lq.transpose())}});
  const Mat inner = BlockDiag({sector_inner, al.a2 * Mat::Identity(r, r)});
  t.Gamma4 = inner.size() ? Mat(-InversePd(inner)) : Mat(0, 0);
  return t;
}

Mat NonlinearDelta(const NonlinearTerms& t, const Mat& X) {
  Mat d = He(t.Abar * X) + t.Gamma3_const;
  if (t.F.rows() > 0) d += X * t.F.transpose() * InversePd(-t.Gamma4) * t.F * X;
  return Sym(d);
}

NonlinearProblem BuildNonlinearProblem(const HatMatrices& hats, const PrimaryLoop& loop,
                             const SectorBound& sector, const AttackModel& attack,
                             const SymMatrix& Xi, const Alphas& al) {
  NonlinearProblem out;
  out.alphas = al;
  out.terms = ComputeNonlinearTerms(hats, loop, sector, attack, al);
  const int n = static_cast<int>(hats.Ahat.rows());
  const int q = static_cast<int>(loop.G.cols());
  const int m = attack.dim();
  if (Xi.dim() != n) throw std::invalid_argument("safe set Xi does not match the primary loop");
  out.W1 = NullSpaceBasis(hats.Bhat.transpose());
  out.W2 = NullSpaceBasis(hats.Chat);
  const int w1 = static_cast<int>(out.W1.cols()), w2 = static_cast<int>(out.W2.cols());

  LmiProblem& p = out.problem;
  out.X = p.Symmetric(n, "X");
  out.Y = p.Symmetric(n, "Y");
  const MatExpr X(out.X), Y(out.Y);
  const NonlinearTerms& t = out.terms;
  const int f = static_cast<int>(t.F.rows());

  const AffineExpr gamma3 = AffineExpr::He(t.Abar * X) + AffineExpr(SymMatrix(Sym(t.Gamma3_const)));
  BlockExpr e21({w1, f});
  e21.Diag(0, gamma3.Congruence(out.W1))
      .Diag(1, AffineExpr(SymMatrix(Sym(t.Gamma4))))
      .Off(0, 1, Mat(out.W1.transpose()) * X * Mat(t.F.transpose()));
  p.AddLmi(e21.Build(), Strictness::kStrict, "projected condition on X");

  AffineExpr phi1 = AffineExpr::He(Y * hats.Ahat) + AffineExpr(Y * al.a1) -
                    AffineExpr(SymMatrix(Sym(al.a2 * attack.Q1.mat())));
  MatExpr phi2 = MatExpr::Zero(n, q);
  Mat phi_blk = Mat::Zero(q, q);
  if (q > 0) {
    const Mat& V = sector.V.mat();
    const Mat& H = loop.H;
    phi1 = phi1 - AffineExpr(SymMatrix(al.a3 * He(H.transpose() * sector.S1.transpose() * V * sector.S2 * H)));
    phi2 = Y * loop.G + MatExpr(Mat(al.a3 * H.transpose() * (sector.S1 + sector.S2).transpose() * V));
    phi_blk = -2.0 * al.a3 * V;
  }
  const MatExpr phi3 = Y * loop.B1cal - MatExpr(Mat(al.a2 * attack.Q2));
  const Mat w2t = out.W2.transpose();
  BlockExpr e22({w2, q, m, 1});
  e22.Diag(0, phi1.Congruence(out.W2))
      .Diag(1, AffineExpr(SymMatrix(Sym(phi_blk))))
      .Diag(2, AffineExpr(SymMatrix(Sym(-al.a2 * attack.Q3.mat()))))
      .Diag(3, AffineExpr(SymMatrix(Mat::Constant(1, 1, al.a2 - al.a1))))
      .Off(0, 1, w2t * phi2)
      .Off(0, 2, w2t * phi3);
  p.AddLmi(e22.Build(), Strictness::kStrict, "projected condition on Y");

  const Mat L = PsdFactor(Xi.mat());
  const int l = static_cast<int>(L.cols());
  BlockExpr e23({n, 1, l});
  e23.Diag(0, AffineExpr(X * -al.a4))
      .Diag(1, AffineExpr(SymMatrix(Mat::Constant(1, 1, al.a4 - 1.0))))
      .Diag(2, AffineExpr(SymMatrix(Mat(-Mat::Identity(l, l)))))
      .Off(0, 2, X * L);
  p.AddLmi(e23.Build(), Strictness::kNonStrict, "containment");

  BlockExpr e24({n, n});
  e24.Diag(0, AffineExpr(X * -1.0))
      .Diag(1, AffineExpr(Y * -1.0))
      .Off(0, 1, MatExpr(Mat(-Mat::Identity(n, n))));
  p.AddLmi(e24.Build(), Strictness::kStrict, "coupling [X I; I Y] > 0");
  return out;
}

Mat ChooseN(const Mat& X, const Mat& Y, NChoice choice, const Mat& custom_N) {
  const Eigen::Index n = X.rows();
  switch (choice) {
    case NChoice::kIdentity:
      return Mat::Identity(n, n);
    case NChoice::kBalanced: {
      const Mat d = Sym(Y - InversePd(X));
      if (!(MinEig(d) > 0.0)) {
        throw std::invalid_argument("Y - X^-1 is not positive definite; the balanced N needs it");
      }
      return SqrtPsd(d);
    }
    case NChoice::kCustom:
      if (custom_N.rows() != n || custom_N.cols() != n) {
        throw std::invalid_argument("custom N must be square with the size of X");
      }
      return custom_N;
  }
  return Mat::Identity(n, n);
}

CompletedP CompleteP(const Mat& X, const Mat& Y, Completion mode, NChoice n_choice,
                     const Mat& custom_N) {
  if (mode == Completion::kAuto) {
    try {
      return CompleteP(X, Y, Completion::kPiCompletion, n_choice, custom_N);
    } catch (const std::exception&) {
      return CompleteP(X, Y, Completion::kPaperRecipe,
                       n_choice == NChoice::kBalanced ? NChoice::kIdentity : n_choice, custom_N);
    }
  }
  const Eigen::Index n = X.rows();
  const Mat ixy = Mat::Identity(n, n) - X * Y;
  Eigen::JacobiSVD<Mat> svd(ixy);
  const Vec sv = svd.singularValues();
  if (n > 0 && !(sv(n - 1) > 1e-12 * std::max(1.0, sv(0)))) {
    throw std::invalid_argument("I - XY is singular; the completion needs X - Y^-1 invertible");
  }
  CompletedP c;
  c.mode = mode;
  c.N = ChooseN(X, Y, n_choice, custom_N);
  Eigen::FullPivLU<Mat> nlu(c.N);
  if (!nlu.isInvertible()) throw std::invalid_argument("N is singular");
  c.M = ixy * nlu.inverse().transpose();
  if (mode == Completion::kPiCompletion) {
    // P Π1 = Π2 gives Ỹ = −Nᵀ X M⁻ᵀ = Nᵀ (Y − X⁻¹)⁻¹ N.
    const Mat d = Sym(Y - InversePd(X));
    c.Ytilde = Sym(c.N.transpose() * d.ldlt().solve(c.N));
  } else {
    c.Ytilde = Sym(Mat::Identity(n, n) + c.N.transpose() * Y.ldlt().solve(c.N));
  }
  const Mat P = Block({{Y, c.N}, {c.N.transpose(), c.Ytilde}});
  c.P = SymMatrix::FromSymmetrized(Sym(P));
  if (!(MinEig(c.P) > 0.0)) {
    throw std::invalid_argument(std::string(ToString(mode)) + " completion is not positive definite");
  }
  return c;
}

ProjectionSolution SolveProjectionLmi(const Mat& Psi, const Mat& U, const Mat& V,
                                      double margin, const SolveOptions& opts) {
  const int d = static_cast<int>(Psi.rows());
  if (U.cols() != d || V.cols() != d) {
    throw std::invalid_argument("SolveProjectionLmi: U and V need one column per row of Psi");
  }
  const int r = static_cast<int>(V.rows()), c = static_cast<int>(U.rows());
  LmiProblem p;
  const VarRef theta = p.Matrix(r, c, "Theta");
  const VarRef s = p.Scalar("s");
  const AffineExpr main = AffineExpr(SymMatrix::FromSymmetrized(Sym(Psi))) +
                          AffineExpr::He(Mat(V.transpose()) * MatExpr(theta) * U);
  p.AddLmi(main, Strictness::kStrict, "projection", margin);
  BlockExpr bound({r, c});
  bound.Diag(0, AffineExpr(MatExpr::Scaled(s, -Mat::Identity(r, r))))
      .Diag(1, AffineExpr(MatExpr::Scaled(s, -Mat::Identity(c, c))))
      .Off(0, 1, -MatExpr(theta));
  p.AddLmi(bound.Build(), Strictness::kNonStrict, "norm bound");
  p.Minimize({{s, Mat::Identity(1, 1)}});
  ProjectionSolution out;
  out.outcome = Solve(p, opts);
  if (out.outcome.feasible()) {
    out.Theta = out.outcome.value(theta);
    out.max_eig = MaxEig(Sym(Psi + He(V.transpose() * out.Theta * U)));
  }
  return out;
}

ClosedLoopLmi BuildClosedLoopLmi(const Mat& P, const HatMatrices& hats,
                                 const PrimaryLoop& loop, const SectorBound& sector,
                                 const AttackModel& attack, const Alphas& al, int n2) {
  const Eigen::Index n = hats.Ahat.rows(), q = loop.G.cols(), m = loop.B1cal.cols();
  if (P.rows() != n + n2) throw std::invalid_argument("P does not match n + n2");
  const LoopFactorization f = Factorize(hats, n2);
  const Mat G = Block({{loop.G}, {Mat::Zero(n2, q)}});
  const Mat H = Block({{loop.H, Mat::Zero(loop.H.rows(), n2)}});
  const Mat B = Block({{loop.B1cal}, {Mat::Zero(n2, m)}});
  ClosedLoopLmi out;
  out.Omega2 = RpiLmiMatrix(P, f.At, G, H, B, sector, attack, al);
  const Eigen::Index d = out.Omega2.rows();
  out.V = Mat::Zero(f.Bt.cols(), d);
  out.V.leftCols(n + n2) = f.Bt.transpose() * P;
  out.U = Mat::Zero(f.Ct.rows(), d);
  out.U.leftCols(n + n2) = f.Ct;
  return out;
}

SecondaryController SolveKGivenP(const Mat& P, const HatMatrices& hats,
                                 const PrimaryLoop& loop, const SectorBound& sector,
                                 const AttackModel& attack, const Alphas& al, int n2,
                                 const SolveOptions& opts) {
  if (al.a2 - al.a1 > 0.0) {
    throw SynthError("K-LMI", "alpha2 > alpha1 makes the scalar block positive");
  }
  const ClosedLoopLmi cl = BuildClosedLoopLmi(P, hats, loop, sector, attack, al, n2);
  const double margin = 1e-7 * (1.0 + Norm2(cl.Omega2));
  const ProjectionSolution sol = SolveProjectionLmi(cl.Omega2, cl.U, cl.V, margin, opts);
  if (!sol.outcome.feasible()) {
    throw SynthError("K-LMI",
                     "completion produced no admissible K; retry other completion mode (" +
                         sol.outcome.diagnostic + ")");
  }
  return SecondaryController::FromBlock(sol.Theta, n2);
}

ClosedLoop AbsorbSector(ClosedLoop cl, const SectorBound& s) {
  const Eigen::Index n = cl.Acal.rows();
  if (cl.Gcal.cols() > 0) cl.Acal += cl.Gcal * s.S1 * cl.Hcal;
  cl.Gcal = Mat::Zero(n, 0);
  cl.Hcal = Mat::Zero(0, n);
  return cl;
}

void AuditSynthResult(const SystemBundle& bundle, SynthResult* r, double tol, bool linear,
                      double epsilon) {
  ClosedLoop cl = AssembleClosedLoop(bundle, r->K);
  if (linear) cl = AbsorbSector(cl, bundle.sector);
  const Mat& P = r->P.mat();
  const Mat om = RpiLmiMatrix(P, cl.Acal, cl.Gcal, cl.Hcal, cl.Bcal, bundle.sector,
                              bundle.attack, r->alphas);
  r->k_lmi_max_eig = MaxEig(om);
  r->k_lmi_scalar = r->alphas.a2 - r->alphas.a1;
  const int n1 = cl.n_zeta1();
  const Mat pz = SchurComplement11(P, n1);
  r->rpi = {r->P, Vec::Zero(P.rows())};
  r->projection = {SymMatrix::FromSymmetrized(pz), Vec::Zero(n1)};
  r->containment_margin = MinEig(Mat(pz - bundle.safe.Xi.mat()));
  r->contained = r->containment_margin >= -tol;
  r->k_norm = Norm2(r->K.AsBlock());
  if (r->gamma) {
    const double g = *r->gamma;
    const Mat lmi = Block({{He(P * cl.Acal) + cl.Ccal.transpose() * cl.Ccal / g, P * cl.Bcal},
                           {cl.Bcal.transpose() * P,
                            -(g - epsilon) * Mat::Identity(cl.Bcal.cols(), cl.Bcal.cols())}});
    r->l2_max_eig = MaxEig(lmi);
  }
  r->warnings.erase(std::remove_if(r->warnings.begin(), r->warnings.end(),
                                   [](const std::string& w) { return w.rfind("high gain", 0) == 0; }),
                    r->warnings.end());
  if (r->k_norm > 1e4) {
    std::ostringstream os;
    os << "high gain: ||K|| = " << r->k_norm << " exceeds 1e4; expect input peaking";
    r->warnings.push_back(os.str());
  }
}

std::string SynthResult::ToString() const {
  std::ostringstream os;
  os << "alphas: " << alphas.a1 << ", " << alphas.a2 << ", " << alphas.a3 << ", " << alphas.a4
     << "\ncompletion: " << safeguard::ToString(completion) << "\n";
  os << residuals.ToString();
  os << "closed-loop condition max eig " << k_lmi_max_eig << ", alpha2 - alpha1 = "
     << k_lmi_scalar << "\n";
  os << "projection containment min_eig(P_z1 - Xi) = " << containment_margin
     << (contained ? " (contained)" : " (NOT contained)") << "\n";
  os << "||K|| = " << k_norm << "\n";
  if (gamma) os << "gamma = " << *gamma << ", gain condition max eig " << l2_max_eig << "\n";
  for (const auto& w : warnings) os << "warning: " << w << "\n";
  return os.str();
}

SynthResult SynthesizeNonlinear(const SystemBundle& bundle, int n2, const SynthOptions& opts) {
  const Dims d = bundle.dims();
  if (n2 != d.n()) {
    throw SynthError("setup", "only full-order secondary controllers (n2 = np + n1 = " +
                                  std::to_string(d.n()) + ") are supported");
  }
  if (d.q() > 0 && SectorDegenerate(bundle.sector)) {
    throw SynthError("setup", "S1 == S2: use the linear synthesis path");
  }
  const HatMatrices hats = ComputeHatMatrices(bundle.plant, bundle.primary, bundle.selection);
  const PrimaryLoop loop = AssemblePrimaryLoop(bundle);
  const std::vector<Alphas> grid =
      opts.alphas ? std::vector<Alphas>{*opts.alphas}
                  : (opts.grid.empty() ? DefaultSynthGrid() : opts.grid);
  for (const auto& a : grid) CheckNonlinearAlphas(a);

  std::vector<SynthGridCell> table(grid.size());
  std::vector<std::optional<SynthResult>> results(grid.size());
  const int hit = FirstHit(static_cast<int>(grid.size()), [&](int i) {
    SynthGridCell& cell = table[i];
    cell.alphas = grid[i];
    cell.evaluated = true;
    const Alphas& al = grid[i];
    if (al.a2 > al.a1) {
      cell.stage = "conditions";
      cell.status = "infeasible (alpha2 > alpha1)";
      return false;
    }
    const NonlinearProblem tp = BuildNonlinearProblem(hats, loop, bundle.sector, bundle.attack,
                                            bundle.safe.Xi, al);
    SolveOptions so = opts.solve;
    so.stop_at_feasible = true;
    const SolveOutcome out = Solve(tp.problem, so);
    if (!out.feasible()) {
      cell.stage = "conditions";
      cell.status = std::string(ToString(out.status)) + ": " + out.diagnostic;
      return false;
    }
    const Mat X = out.value(tp.X), Y = out.value(tp.Y);
    std::vector<Completion> modes;
    if (opts.completion == Completion::kAuto) {
      modes = {Completion::kPiCompletion, Completion::kPaperRecipe};
    } else {
      modes = {opts.completion};
    }
    std::string last;
    for (Completion mode : modes) {
      SynthResult r;
      try {
        const NChoice nc = mode == Completion::kPaperRecipe && opts.n_choice == NChoice::kBalanced
                               ? NChoice::kIdentity
                               : opts.n_choice;
        const CompletedP cp = CompleteP(X, Y, mode, nc, opts.custom_N);
        r.K = SolveKGivenP(cp.P.mat(), hats, loop, bundle.sector, bundle.attack, al, n2, opts.solve);
        r.P = cp.P;
        r.N = cp.N;
        r.M = cp.M;
        r.completion = mode;
      } catch (const std::exception& e) {
        last = std::string(ToString(mode)) + ": " + e.what();
        continue;
      }
      r.X = SymMatrix::FromSymmetrized(Sym(X));
      r.Y = SymMatrix::FromSymmetrized(Sym(Y));
      r.alphas = al;
      r.residuals = out.residuals;
      AuditSynthResult(bundle, &r, opts.k_lmi_tol);
      const double scale = std::max(1.0, Norm2(r.P.mat()));
      if (r.k_lmi_max_eig <= opts.k_lmi_tol * scale && r.k_lmi_scalar <= 0.0 && r.contained) {
        results[i] = r;
        cell.stage = "done";
        cell.status = std::string("certified (") + ToString(mode) + ")";
        return true;
      }
      last = std::string(ToString(mode)) + ": closed-loop audit failed";
    }
    cell.stage = "controller";
    cell.status = last;
    return false;
  });
  if (hit < 0) {
    throw SynthError("grid", "no grid point produced a certified controller", table);
  }
  SynthResult r = *results[hit];
  r.table = table;
  return r;
}

}  // namespace safeguard
