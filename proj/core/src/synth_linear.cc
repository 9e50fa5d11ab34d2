#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "safeguard/parallel.h"
#include "safeguard/synth.h"

namespace safeguard {

namespace {

constexpr double kGammaSlack = 1e-2;

bool IsZero(const Mat& m) { return m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0; }

Mat Inverse(const Mat& m, const char* what) {
  Eigen::FullPivLU<Mat> lu(m);
  if (!lu.isInvertible()) throw std::invalid_argument(std::string(what) + " is singular");
  return lu.inverse();
}

// [X I; I Y] as a symmetric expression.
AffineExpr CouplingExpr(const MatExpr& X, const MatExpr& Y, int n) {
  const MatExpr I(Mat(Mat::Identity(n, n)));
  return AffineExpr(X.Embed(0, 0, 2 * n, 2 * n) + Y.Embed(n, n, 2 * n, 2 * n) +
                    I.Embed(0, n, 2 * n, 2 * n) + I.Embed(n, 0, 2 * n, 2 * n));
}

void AddContainment(LmiProblem* p, const MatExpr& X, const SymMatrix& Xi, double alpha4) {
  const int n = Xi.dim();
  const Mat L = PsdFactor(Xi.mat());
  const int l = static_cast<int>(L.cols());
  BlockExpr e({n, 1, l});
  e.Diag(0, AffineExpr(X * -alpha4))
      .Diag(1, AffineExpr(SymMatrix(Mat::Constant(1, 1, alpha4 - 1.0))))
      .Diag(2, AffineExpr(SymMatrix(Mat(-Mat::Identity(l, l)))))
      .Off(0, 2, X * L);
  p->AddLmi(e.Build(), Strictness::kNonStrict, "containment");
}

}  // namespace

std::string LinearPathIssue(const SystemBundle& b) {
  const Dims d = b.dims();
  if (d.q() > 0 && (b.sector.S1 - b.sector.S2).cwiseAbs().maxCoeff() > 0.0) {
    return "sector has S1 != S2; the nonlinear synthesis path handles it";
  }
  if (!IsZero(b.attack.Q1.mat()) || !IsZero(b.attack.Q2)) {
    return "attack bound is state dependent (Q1 or Q2 nonzero); the nonlinear synthesis path handles it";
  }
  return "";
}

PrimaryLoop AbsorbedLoop(const SystemBundle& b) {
  PrimaryLoop l = AssemblePrimaryLoop(b);
  const Eigen::Index n = l.A1cal.rows();
  if (l.G.cols() > 0) l.A1cal += l.G * b.sector.S1 * l.H;
  l.G = Mat::Zero(n, 0);
  l.H = Mat::Zero(0, n);
  return l;
}

HatMatrices AbsorbedHats(const SystemBundle& b) {
  HatMatrices h = ComputeHatMatrices(b.plant, b.primary, b.selection);
  const PrimaryLoop l = AssemblePrimaryLoop(b);
  if (l.G.cols() > 0) h.Ahat += l.G * b.sector.S1 * l.H;
  return h;
}

LinearProblem BuildLinearProblem(const HatMatrices& hats, const Mat& B1cal, const SymMatrix& Q3,
                             const SymMatrix& Xi, double alpha1, double alpha4,
                             const LinearSetup& setup) {
  if (!(alpha4 >= 0.0 && alpha4 <= 1.0)) throw std::invalid_argument("alpha4 must lie in [0, 1]");
  const Mat& Ah = hats.Ahat;
  const Mat& Bh = hats.Bhat;
  const Mat& Ch = hats.Chat;
  const int n = static_cast<int>(Ah.rows());
  const int ne = static_cast<int>(Bh.cols()), nc = static_cast<int>(Ch.rows());
  const int m = static_cast<int>(B1cal.cols());
  if (B1cal.rows() != n || Xi.dim() != n) {
    throw std::invalid_argument("attack input matrix or safe set does not match the loop");
  }
  if (!setup.q3_variable && Q3.dim() != m) {
    throw std::invalid_argument("Q3 does not match the attack dimension");
  }
  LinearProblem out;
  out.alpha1 = alpha1;
  out.alpha4 = alpha4;
  if (setup.q3_variable) out.fixed_alpha2 = setup.alpha2;
  LmiProblem& p = out.problem;
  out.X = p.Symmetric(n, "X");
  out.Y = p.Symmetric(n, "Y");
  out.A = p.Matrix(n, n, "Abold");
  out.B = p.Matrix(n, nc, "Bbold");
  out.C = p.Matrix(ne, n, "Cbold");
  out.D = p.Matrix(ne, nc, "Dbold");
  if (!setup.q3_variable) out.alpha2 = p.Scalar("alpha2");
  const MatExpr X(out.X), Y(out.Y), A(out.A), B(out.B), C(out.C), D(out.D);
  const int N2 = 2 * n;

  const MatExpr a_eta = (Ah * X + Bh * C).Embed(0, 0, N2, N2) +
                        (MatExpr(Ah) + Bh * D * Ch).Embed(0, n, N2, N2) +
                        A.Embed(n, 0, N2, N2) + (Y * Ah + B * Ch).Embed(n, n, N2, N2);
  const MatExpr b_eta = MatExpr(B1cal).Embed(0, 0, N2, m) + (Y * B1cal).Embed(n, 0, N2, m);

  AffineExpr attack_blk, scalar_blk;
  if (setup.q3_variable) {
    out.Q3 = p.Symmetric(m, "Q3");
    attack_blk = AffineExpr(MatExpr(*out.Q3) * -setup.alpha2);
    scalar_blk = AffineExpr(SymMatrix(Mat::Constant(1, 1, setup.alpha2 - alpha1)));
  } else {
    attack_blk = AffineExpr(MatExpr::Scaled(out.alpha2, -Q3.mat()));
    scalar_blk = AffineExpr(MatExpr::Scaled(out.alpha2, Mat::Identity(1, 1)) -
                            MatExpr(Mat::Constant(1, 1, alpha1)));
  }
  BlockExpr main({N2, m, 1});
  main.Diag(0, AffineExpr::He(a_eta) + CouplingExpr(X, Y, n) * alpha1)
      .Diag(1, attack_blk)
      .Diag(2, scalar_blk)
      .Off(0, 1, b_eta);
  p.AddLmi(main.Build(), Strictness::kNonStrict, "invariance");
  AddContainment(&p, X, Xi, alpha4);
  p.AddLmi(CouplingExpr(X, Y, n) * -1.0, Strictness::kStrict, "coupling [X I; I Y] > 0");
  if (setup.q3_variable) {
    p.AddLmi(AffineExpr(MatExpr(*out.Q3) * -1.0), Strictness::kStrict, "Q3 > 0");
  } else {
    p.AddLmi(AffineExpr(MatExpr(out.alpha2) * -1.0), Strictness::kNonStrict, "alpha2 >= 0");
  }
  if (setup.l2) {
    out.gamma = p.Scalar("gamma");
    const MatExpr c_eta_t = C.Transpose().Embed(0, 0, N2, ne) +
                            (D * Ch).Transpose().Embed(n, 0, N2, ne);
    BlockExpr gain({N2, m, ne});
    gain.Diag(0, AffineExpr::He(a_eta))
        .Diag(1, AffineExpr(MatExpr::Scaled(*out.gamma, -Mat::Identity(m, m)) +
                            MatExpr(Mat(setup.epsilon * Mat::Identity(m, m)))))
        .Diag(2, AffineExpr(MatExpr::Scaled(*out.gamma, -Mat::Identity(ne, ne))))
        .Off(0, 1, b_eta)
        .Off(0, 2, c_eta_t);
    p.AddLmi(gain.Build(), Strictness::kNonStrict, "gain");
    p.Minimize({{*out.gamma, Mat::Identity(1, 1)}});
  }
  return out;
}

Mat EtaA(const HatMatrices& h, const Eta& e) {
  return Block({{h.Ahat * e.X + h.Bhat * e.C, h.Ahat + h.Bhat * e.D * h.Chat},
                {e.A, e.Y * h.Ahat + e.B * h.Chat}});
}

Mat EtaB(const Mat& B1cal, const Eta& e) { return Block({{B1cal}, {e.Y * B1cal}}); }

Eta ForwardChangeOfVariables(const HatMatrices& h, const Mat& X, const Mat& Y, const Mat& M,
                             const Mat& N, const SecondaryController& k) {
  const Mat a1 = h.Ahat + h.Bhat * k.D2 * h.Chat;
  const Mat a2 = h.Bhat * k.C2;
  const Mat a3 = k.B2 * h.Chat;
  const Mat& a4 = k.A2;
  Eta e;
  e.X = X;
  e.Y = Y;
  e.A = Y * a1 * X + Y * a2 * M.transpose() + N * a3 * X + N * a4 * M.transpose();
  e.B = N * k.B2 + Y * h.Bhat * k.D2;
  e.C = k.C2 * M.transpose() + k.D2 * h.Chat * X;
  e.D = k.D2;
  return e;
}

SecondaryController RecoverController(const HatMatrices& h, const Eta& e, const Mat& N,
                                      const Mat& M) {
  const Mat ninv = Inverse(N, "N");
  const Mat mit = Inverse(M, "M").transpose();
  SecondaryController k;
  k.D2 = e.D;
  k.C2 = (e.C - k.D2 * h.Chat * e.X) * mit;
  k.B2 = ninv * (e.B - e.Y * h.Bhat * k.D2);
  k.A2 = ninv *
         (e.A - N * k.B2 * h.Chat * e.X - e.Y * h.Bhat * k.C2 * M.transpose() -
          e.Y * (h.Ahat + h.Bhat * k.D2 * h.Chat) * e.X) *
         mit;
  return k;
}

namespace {

// Recover, complete and audit one solution of the linear conditions.
std::optional<SynthResult> FinishLinear(const SystemBundle& bundle, const HatMatrices& hats,
                                        const LinearProblem& tp, const SolveOutcome& out,
                                        const SynthOptions& opts, std::string* why) {
  Eta eta;
  eta.X = Sym(out.value(tp.X));
  eta.Y = Sym(out.value(tp.Y));
  eta.A = out.value(tp.A);
  eta.B = out.value(tp.B);
  eta.C = out.value(tp.C);
  eta.D = out.value(tp.D);
  SynthResult r;
  try {
    const CompletedP cp = CompleteP(eta.X, eta.Y, Completion::kPiCompletion, opts.n_choice,
                                    opts.custom_N);
    r.K = RecoverController(hats, eta, cp.N, cp.M);
    r.P = cp.P;
    r.N = cp.N;
    r.M = cp.M;
  } catch (const std::exception& e) {
    *why = std::string("recovery: ") + e.what();
    return std::nullopt;
  }
  r.completion = Completion::kPiCompletion;
  r.X = SymMatrix::FromSymmetrized(eta.X);
  r.Y = SymMatrix::FromSymmetrized(eta.Y);
  const double a2 = tp.Q3 ? tp.fixed_alpha2 : out.scalar(tp.alpha2);
  r.alphas = {tp.alpha1, a2, 0.0, tp.alpha4};
  r.residuals = out.residuals;
  if (tp.gamma) r.gamma = out.scalar(*tp.gamma);
  AuditSynthResult(bundle, &r, opts.k_lmi_tol, true, opts.epsilon);
  const double scale = std::max(1.0, Norm2(r.P.mat()));
  const bool ok = r.k_lmi_max_eig <= opts.k_lmi_tol * scale && r.k_lmi_scalar <= opts.k_lmi_tol &&
                  r.contained && (!r.gamma || r.l2_max_eig <= opts.k_lmi_tol * scale);
  if (!ok) {
    std::ostringstream os;
    os << "closed-loop audit failed (max eig " << r.k_lmi_max_eig << ", containment "
       << r.containment_margin << ")";
    *why = os.str();
    return std::nullopt;
  }
  return r;
}

// Spectral bound on [A B; C D](η). The recovered K scales with η, and a
// bare feasibility point sits wherever phase 1 lands.
VarRef AddEtaBound(LinearProblem* tp) {
  LmiProblem& p = tp->problem;
  const int n = tp->X.rows, ne = tp->C.rows, nc = tp->B.cols;
  const int r = n + ne, c = n + nc;
  const VarRef s = p.Scalar("eta bound");
  const MatExpr theta = MatExpr(tp->A).Embed(0, 0, r, c) + MatExpr(tp->B).Embed(0, n, r, c) +
                        MatExpr(tp->C).Embed(n, 0, r, c) + MatExpr(tp->D).Embed(n, n, r, c);
  BlockExpr bound({r, c});
  bound.Diag(0, AffineExpr(MatExpr::Scaled(s, -Mat::Identity(r, r))))
      .Diag(1, AffineExpr(MatExpr::Scaled(s, -Mat::Identity(c, c))))
      .Off(0, 1, -theta);
  p.AddLmi(bound.Build(), Strictness::kNonStrict, "eta norm bound");
  return s;
}

// Re-solves with the η bound minimized; keeps `first` if that fails. The
// recovery divides by N = (Y − X⁻¹)^{1/2} and by X, so both are held at
// half their values at the first solution.
SolveOutcome Regularize(LinearProblem* tp, const SolveOutcome& first, const SolveOptions& opts) {
  const Mat X0 = Sym(first.value(tp->X));
  const Mat Y0 = Sym(first.value(tp->Y));
  const int n = static_cast<int>(X0.rows());
  const double dy = 0.5 * MinEig(Mat(Y0 - InversePd(X0)));
  const double dx = 0.5 * MinEig(X0);
  if (!(dy > 0.0) || !(dx > 0.0)) return first;
  LmiProblem& p = tp->problem;
  const MatExpr X(tp->X), Y(tp->Y);
  p.AddLmi(CouplingExpr(X, Y - MatExpr(Mat(dy * Mat::Identity(n, n))), n) * -1.0,
           Strictness::kNonStrict, "coupling reserve");
  p.AddLmi(AffineExpr(SymMatrix::Identity(n) * dx) - AffineExpr(X), Strictness::kNonStrict,
           "X reserve");
  const VarRef s = AddEtaBound(tp);
  p.Minimize({{s, Mat::Identity(1, 1)}});
  SolveOptions so = opts;
  so.stop_at_feasible = false;
  SolveOutcome out = Solve(p, so);
  return out.feasible() ? out : first;
}

AffineExpr TraceExpr(const VarRef& v) {
  MatExpr t = MatExpr::Zero(1, 1);
  for (int i = 0; i < v.rows; ++i) {
    const Mat e = Mat::Identity(v.rows, v.rows).col(i);
    t = t + e.transpose() * MatExpr(v) * e;
  }
  return AffineExpr(t);
}

// Minimizes Tr v under the η budget, then re-solves for a moderate
// controller within 1% of that trace.
SolveOutcome MinimizeTraceRegularized(LinearProblem* tp, const VarRef& v, const SynthOptions& opts) {
  LmiProblem& p = tp->problem;
  const VarRef s = AddEtaBound(tp);
  p.AddLmi(AffineExpr(MatExpr(s)) - AffineExpr(SymMatrix(Mat::Constant(1, 1, opts.eta_budget))),
           Strictness::kNonStrict, "eta budget");
  p.Minimize({{v, Mat::Identity(v.rows, v.rows)}});
  const SolveOutcome best = Solve(p, opts.solve);
  if (!best.feasible()) return best;
  const double cap = best.value(v).trace();
  p.AddLmi(TraceExpr(v) - AffineExpr(SymMatrix(Mat::Constant(1, 1, cap + kGammaSlack * std::abs(cap)))),
           Strictness::kNonStrict, "trace cap");
  p.ClearObjective();
  return Regularize(tp, best, opts.solve);
}

std::vector<Alphas> LinearGrid(const SynthOptions& opts) {
  if (opts.alphas) return {*opts.alphas};
  return opts.grid.empty() ? DefaultLinearGrid() : opts.grid;
}

void RequireLinear(const SystemBundle& bundle) {
  const std::string issue = LinearPathIssue(bundle);
  if (!issue.empty()) throw SynthError("setup", issue);
}

}  // namespace

SynthResult SynthesizeLinear(const SystemBundle& bundle, const SynthOptions& opts) {
  RequireLinear(bundle);
  const HatMatrices hats = AbsorbedHats(bundle);
  const PrimaryLoop loop = AbsorbedLoop(bundle);
  const auto grid = LinearGrid(opts);
  std::vector<SynthGridCell> table(grid.size());
  std::vector<std::optional<SynthResult>> results(grid.size());
  const int hit = FirstHit(static_cast<int>(grid.size()), [&](int i) {
    SynthGridCell& cell = table[i];
    cell.alphas = grid[i];
    cell.evaluated = true;
    LinearProblem tp = BuildLinearProblem(hats, loop.B1cal, bundle.attack.Q3, bundle.safe.Xi,
                                          grid[i].a1, grid[i].a4);
    SolveOptions so = opts.solve;
    so.stop_at_feasible = true;
    const SolveOutcome first = Solve(tp.problem, so);
    if (!first.feasible()) {
      cell.stage = "conditions";
      cell.status = std::string(ToString(first.status)) + ": " + first.diagnostic;
      return false;
    }
    const SolveOutcome out = Regularize(&tp, first, opts.solve);
    std::string why;
    results[i] = FinishLinear(bundle, hats, tp, out, opts, &why);
    cell.stage = results[i] ? "done" : "controller";
    cell.status = results[i] ? "certified" : why;
    return results[i].has_value();
  });
  if (hit < 0) throw SynthError("grid", "no grid point produced a certified controller", table);
  SynthResult r = *results[hit];
  r.table = table;
  return r;
}

SynthResult SynthesizeL2(const SystemBundle& bundle, const SynthOptions& opts) {
  RequireLinear(bundle);
  const HatMatrices hats = AbsorbedHats(bundle);
  const PrimaryLoop loop = AbsorbedLoop(bundle);
  const auto grid = LinearGrid(opts);
  std::vector<SynthGridCell> table(grid.size());
  std::vector<std::optional<SynthResult>> results(grid.size());
  LinearSetup setup;
  setup.l2 = true;
  setup.epsilon = opts.epsilon;
  ParallelFor(0, static_cast<int>(grid.size()), [&](int i) {
    SynthGridCell& cell = table[i];
    cell.alphas = grid[i];
    cell.evaluated = true;
    LinearProblem tp = BuildLinearProblem(hats, loop.B1cal, bundle.attack.Q3, bundle.safe.Xi,
                                          grid[i].a1, grid[i].a4, setup);
    const SolveOutcome first = Solve(tp.problem, opts.solve);
    if (!first.feasible()) {
      cell.stage = "conditions";
      cell.status = std::string(ToString(first.status)) + ": " + first.diagnostic;
      return;
    }
    // Give up 1% of the optimal γ for a moderate controller.
    const double cap = first.scalar(*tp.gamma) * (1.0 + kGammaSlack);
    tp.problem.AddLmi(AffineExpr(MatExpr(*tp.gamma)) -
                          AffineExpr(SymMatrix(Mat::Constant(1, 1, cap))),
                      Strictness::kNonStrict, "gamma cap");
    const SolveOutcome out = Regularize(&tp, first, opts.solve);
    std::string why;
    results[i] = FinishLinear(bundle, hats, tp, out, opts, &why);
    cell.stage = results[i] ? "done" : "controller";
    if (results[i]) {
      std::ostringstream os;
      os << "certified, gamma " << *results[i]->gamma;
      cell.status = os.str();
    } else {
      cell.status = why;
    }
  });
  int best = -1;
  for (size_t i = 0; i < results.size(); ++i) {
    if (results[i] && (best < 0 || *results[i]->gamma < *results[best]->gamma)) {
      best = static_cast<int>(i);
    }
  }
  if (best < 0) throw SynthError("grid", "no grid point produced a certified gain bound", table);
  SynthResult r = *results[best];
  r.table = table;
  return r;
}

namespace {

struct WorstCell {
  SymMatrix Q3;
  double trace = std::numeric_limits<double>::infinity();
  Alphas alphas;
  std::optional<SafetyCertificate> cert;
  std::optional<SynthResult> synth;
};

}  // namespace

WorstAttackResult WorstAttack(const SystemBundle& bundle, WorstAttackMode mode,
                              const SynthOptions& opts) {
  if (!IsZero(bundle.attack.Q2)) {
    throw SynthError("setup", "worst-attack search needs Q2 = 0 (Qcal must not depend on Q3)");
  }
  if (bundle.attack.Q1.dim() > 0 && MaxEig(bundle.attack.Q1) > 0.0) {
    throw SynthError("setup", "worst-attack search needs Q1 <= 0 so that Qcal >= 0 for every Q3");
  }
  const int m = bundle.attack.dim();
  std::vector<Alphas> grid;
  if (opts.alphas) {
    grid.push_back(*opts.alphas);
  } else if (!opts.grid.empty()) {
    grid = opts.grid;
  } else {
    const AlphaGrid v = AlphaGrid::Default();
    for (double a1 : v.alpha1)
      for (double a4 : v.alpha4)
        for (double f : {0.25, 0.5, 1.0}) grid.push_back({a1, f * a1, 0.0, a4});
  }
  std::vector<WorstCell> cells(grid.size());

  if (mode == WorstAttackMode::kVerify) {
    const PrimaryLoop loop = AssemblePrimaryLoop(bundle);
    const int n = static_cast<int>(loop.A1cal.rows());
    ParallelFor(0, static_cast<int>(grid.size()), [&](int i) {
      const Alphas& al = grid[i];
      if (al.a2 > al.a1) return;
      // Same conditions as verification, with α2 fixed and Q3 free.
      LmiProblem p;
      const VarRef P1 = p.Symmetric(n, "P1");
      const VarRef a3 = p.Scalar("alpha3");
      const VarRef Q3 = p.Symmetric(m, "Q3");
      const int q = static_cast<int>(loop.G.cols());
      const MatExpr P(P1);
      AffineExpr g1 = AffineExpr::He(P * loop.A1cal) + AffineExpr(P * al.a1) -
                      AffineExpr(SymMatrix(Sym(al.a2 * bundle.attack.Q1.mat())));
      MatExpr g2 = MatExpr::Zero(n, q);
      AffineExpr phi_blk = AffineExpr::Zero(q);
      if (q > 0) {
        const Mat& H = loop.H;
        const Mat& V = bundle.sector.V.mat();
        g1 = g1 + AffineExpr::He(MatExpr::Scaled(
                      a3, -(H.transpose() * bundle.sector.S1.transpose() * V * bundle.sector.S2 * H)));
        g2 = P * loop.G + MatExpr::Scaled(
                              a3, H.transpose() * (bundle.sector.S1 + bundle.sector.S2).transpose() * V);
        phi_blk = AffineExpr(MatExpr::Scaled(a3, -2.0 * V));
      }
      BlockExpr main({n, q, m, 1});
      main.Diag(0, g1)
          .Diag(1, phi_blk)
          .Diag(2, AffineExpr(MatExpr(Q3) * -al.a2))
          .Diag(3, AffineExpr(SymMatrix(Mat::Constant(1, 1, al.a2 - al.a1))))
          .Off(0, 1, g2)
          .Off(0, 2, P * loop.B1cal);
      p.AddLmi(main.Build(), Strictness::kNonStrict, "invariance");
      BlockExpr contain({n, 1});
      contain.Diag(0, AffineExpr(bundle.safe.Xi) - AffineExpr(P * al.a4))
          .Diag(1, AffineExpr(SymMatrix(Mat::Constant(1, 1, al.a4 - 1.0))));
      p.AddLmi(contain.Build(), Strictness::kNonStrict, "containment");
      const double eps = 1e-6 * (1.0 + Norm2(bundle.safe.Xi.mat()));
      p.AddLmi(AffineExpr(SymMatrix::Identity(n) * eps) - AffineExpr(P), Strictness::kNonStrict,
               "P1 >= eps I");
      p.AddLmi(AffineExpr(MatExpr(a3) * -1.0), Strictness::kNonStrict, "alpha3 >= 0");
      p.AddLmi(AffineExpr(MatExpr(Q3) * -1.0), Strictness::kStrict, "Q3 > 0");
      p.Minimize({{Q3, Mat::Identity(m, m)}});
      const SolveOutcome out = Solve(p, opts.solve);
      if (!out.feasible()) return;
      WorstCell& c = cells[i];
      c.Q3 = SymMatrix::FromSymmetrized(Sym(out.value(Q3)));
      c.trace = c.Q3.mat().trace();
      c.alphas = {al.a1, al.a2, out.scalar(a3), al.a4};
      SafetyCertificate cert;
      cert.P1 = SymMatrix::FromSymmetrized(Sym(out.value(P1)));
      cert.alphas = c.alphas;
      cert.residuals = out.residuals;
      SystemBundle b2 = bundle;
      b2.attack.Q3 = c.Q3;
      const CertificateAudit audit = CheckRpiCertificate(cert, b2);
      cert.containment_margin = audit.containment_margin;
      cert.contained = audit.contained;
      if (!audit.ok) {
        c.trace = std::numeric_limits<double>::infinity();
        return;
      }
      c.cert = cert;
    });
  } else {
    RequireLinear(bundle);
    const HatMatrices hats = AbsorbedHats(bundle);
    const PrimaryLoop loop = AbsorbedLoop(bundle);
    ParallelFor(0, static_cast<int>(grid.size()), [&](int i) {
      const Alphas& al = grid[i];
      if (al.a2 > al.a1) return;
      LinearSetup setup;
      setup.q3_variable = true;
      setup.alpha2 = al.a2;
      LinearProblem tp = BuildLinearProblem(hats, loop.B1cal, SymMatrix::Identity(m), bundle.safe.Xi,
                                        al.a1, al.a4, setup);
      const SolveOutcome out = MinimizeTraceRegularized(&tp, *tp.Q3, opts);
      if (!out.feasible()) return;
      WorstCell& c = cells[i];
      c.Q3 = SymMatrix::FromSymmetrized(Sym(out.value(*tp.Q3)));
      SystemBundle b2 = bundle;
      b2.attack.Q3 = c.Q3;
      std::string why;
      auto r = FinishLinear(b2, hats, tp, out, opts, &why);
      if (!r) return;
      r->alphas.a2 = al.a2;
      AuditSynthResult(b2, &*r, opts.k_lmi_tol, true);
      const double scale = std::max(1.0, Norm2(r->P.mat()));
      if (r->k_lmi_max_eig > opts.k_lmi_tol * scale) return;
      c.trace = c.Q3.mat().trace();
      c.alphas = r->alphas;
      c.synth = r;
    });
  }
  int best = -1;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (std::isfinite(cells[i].trace) && (best < 0 || cells[i].trace < cells[best].trace)) {
      best = static_cast<int>(i);
    }
  }
  if (best < 0) throw SynthError("grid", "no grid point admits a certified attack bound");
  WorstAttackResult res;
  res.Q3 = cells[best].Q3;
  res.trace = cells[best].trace;
  res.alphas = cells[best].alphas;
  res.certificate = cells[best].cert;
  res.synth = cells[best].synth;
  return res;
}

double VolumeRatio(const Mat& Xa, const Mat& Xb) {
  return std::exp(0.5 * (LogDetPd(Xa) - LogDetPd(Xb)));
}

RpiOptimum OptimizeRpi(const SystemBundle& bundle, RpiObjective objective,
                       const SynthOptions& opts) {
  RpiOptimum res;
  const bool linear = LinearPathIssue(bundle).empty();
  const Dims d = bundle.dims();

  auto attach = [&](LmiProblem* p, const VarRef& X) -> SolveOutcome {
    if (objective == RpiObjective::kMinTraceX) {
      p->Minimize({{X, Mat::Identity(X.rows, X.rows)}});
      return Solve(*p, opts.solve);
    }
    const LogdetOutcome lo = MinimizeLogdetIterative(*p, X, 30, opts.solve);
    res.logdet_history = lo.history;
    return lo.outcome;
  };

  if (linear) {
    const HatMatrices hats = AbsorbedHats(bundle);
    const PrimaryLoop loop = AbsorbedLoop(bundle);
    const auto grid = LinearGrid(opts);
    // First grid point whose conditions are feasible, then optimize there.
    for (const auto& al : grid) {
      LinearProblem tp = BuildLinearProblem(hats, loop.B1cal, bundle.attack.Q3, bundle.safe.Xi,
                                        al.a1, al.a4);
      SolveOptions so = opts.solve;
      so.stop_at_feasible = true;
      if (!Solve(tp.problem, so).feasible()) continue;
      const SolveOutcome out = objective == RpiObjective::kMinTraceX
                                   ? MinimizeTraceRegularized(&tp, tp.X, opts)
                                   : attach(&tp.problem, tp.X);
      if (!out.feasible()) continue;
      std::string why;
      auto r = FinishLinear(bundle, hats, tp, out, opts, &why);
      if (!r) continue;
      res.result = *r;
      break;
    }
  } else {
    const HatMatrices hats = ComputeHatMatrices(bundle.plant, bundle.primary, bundle.selection);
    const PrimaryLoop loop = AssemblePrimaryLoop(bundle);
    const std::vector<Alphas> grid =
        opts.alphas ? std::vector<Alphas>{*opts.alphas}
                    : (opts.grid.empty() ? DefaultSynthGrid() : opts.grid);
    for (const auto& al : grid) {
      if (al.a2 > al.a1) continue;
      NonlinearProblem tp = BuildNonlinearProblem(hats, loop, bundle.sector, bundle.attack, bundle.safe.Xi, al);
      SolveOptions so = opts.solve;
      so.stop_at_feasible = true;
      if (!Solve(tp.problem, so).feasible()) continue;
      const SolveOutcome out = attach(&tp.problem, tp.X);
      if (!out.feasible()) continue;
      SynthResult r;
      try {
        const CompletedP cp = CompleteP(out.value(tp.X), out.value(tp.Y), opts.completion,
                                        opts.n_choice, opts.custom_N);
        r.K = SolveKGivenP(cp.P.mat(), hats, loop, bundle.sector, bundle.attack, al, d.n(),
                           opts.solve);
        r.P = cp.P;
        r.N = cp.N;
        r.M = cp.M;
        r.completion = cp.mode;
      } catch (const std::exception&) {
        continue;
      }
      r.X = SymMatrix::FromSymmetrized(Sym(out.value(tp.X)));
      r.Y = SymMatrix::FromSymmetrized(Sym(out.value(tp.Y)));
      r.alphas = al;
      r.residuals = out.residuals;
      AuditSynthResult(bundle, &r, opts.k_lmi_tol);
      const double scale = std::max(1.0, Norm2(r.P.mat()));
      if (r.k_lmi_max_eig > opts.k_lmi_tol * scale || !r.contained) continue;
      res.result = r;
      break;
    }
  }
  if (res.result.X.dim() == 0) {
    throw SynthError("grid", "no grid point produced a certified optimized controller");
  }
  res.trace_x = res.result.X.mat().trace();
  res.logdet_x = LogDetPd(res.result.X.mat());
  return res;
}

}  // namespace safeguard
