#include "safeguard/verify.h"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "safeguard/parallel.h"

namespace safeguard {

namespace {

Mat PadRows(const Mat& m, Eigen::Index rows) {
  Mat out = Mat::Zero(rows, m.cols());
  out.topRows(m.rows()) = m;
  return out;
}

Mat PadSquare(const Mat& m, Eigen::Index n) {
  Mat out = Mat::Zero(n, n);
  out.topLeftCorner(m.rows(), m.cols()) = m;
  return out;
}

}  // namespace

AlphaGrid AlphaGrid::Default() {
  return {{0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0}, {0.5, 0.9, 0.99, 1.0}};
}

std::vector<std::string> AlphaGrid::Issues() const {
  std::vector<std::string> out;
  if (alpha1.empty()) out.push_back("alpha1 list is empty");
  if (alpha4.empty()) out.push_back("alpha4 list is empty");
  for (double a : alpha1) {
    if (!(a > 0.0)) out.push_back("alpha1 value " + std::to_string(a) + " is not positive");
  }
  for (double a : alpha4) {
    if (!(a >= 0.0 && a <= 1.0)) {
      out.push_back("alpha4 value " + std::to_string(a) + " outside [0, 1]");
    }
  }
  return out;
}

InvarianceProblem BuildInvarianceProblem(const PrimaryLoop& loop, const SectorBound& sector,
                               const AttackModel& attack, const SymMatrix& Xi,
                               double alpha1, double alpha4) {
  if (!(alpha4 >= 0.0 && alpha4 <= 1.0)) {
    throw std::invalid_argument("alpha4 must lie in [0, 1]");
  }
  const int n = static_cast<int>(loop.A1cal.rows());
  const int q = static_cast<int>(loop.G.cols());
  const int m = attack.dim();
  if (Xi.dim() != n) {
    throw std::invalid_argument("safe set Xi is " + std::to_string(Xi.dim()) +
                                "x" + std::to_string(Xi.dim()) +
                                " but the primary loop has " + std::to_string(n) +
                                " states");
  }
  if (loop.B1cal.cols() != m || attack.Q1.dim() != n || attack.Q2.rows() != n ||
      attack.Q2.cols() != m) {
    throw std::invalid_argument("attack model does not conform to the primary loop");
  }
  if (q > 0 && (sector.S1.rows() != q || sector.S2.rows() != q ||
                sector.S1.cols() != loop.H.rows() || sector.V.dim() != q)) {
    throw std::invalid_argument("sector bound does not conform to G/H");
  }

  InvarianceProblem out;
  out.alpha1 = alpha1;
  out.alpha4 = alpha4;
  LmiProblem& p = out.problem;
  out.P1 = p.Symmetric(n, "P1");
  out.alpha2 = p.Scalar("alpha2");
  out.alpha3 = p.Scalar("alpha3");
  const MatExpr P1(out.P1);

  AffineExpr g1 = AffineExpr::He(P1 * loop.A1cal) +
                  AffineExpr(P1 * alpha1) +
                  AffineExpr(MatExpr::Scaled(out.alpha2, -attack.Q1.mat()));
  MatExpr g2 = MatExpr::Zero(n, q);
  AffineExpr phi_blk = AffineExpr::Zero(q);
  if (q > 0) {
    const Mat& H = loop.H;
    const Mat& V = sector.V.mat();
    g1 = g1 + AffineExpr::He(MatExpr::Scaled(
                  out.alpha3, -(H.transpose() * sector.S1.transpose() * V * sector.S2 * H)));
    g2 = P1 * loop.G +
         MatExpr::Scaled(out.alpha3, H.transpose() * (sector.S1 + sector.S2).transpose() * V);
    phi_blk = AffineExpr(MatExpr::Scaled(out.alpha3, -2.0 * V));
  }
  BlockExpr main({n, q, m, 1});
  main.Diag(0, g1)
      .Diag(1, phi_blk)
      .Diag(2, AffineExpr(MatExpr::Scaled(out.alpha2, -attack.Q3.mat())))
      .Diag(3, AffineExpr(MatExpr::Scaled(out.alpha2, Mat::Identity(1, 1)) -
                          MatExpr(Mat::Constant(1, 1, alpha1))))
      .Off(0, 1, g2)
      .Off(0, 2, P1 * loop.B1cal + MatExpr::Scaled(out.alpha2, -attack.Q2));
  p.AddLmi(main.Build(), Strictness::kNonStrict, "invariance");

  BlockExpr contain({n, 1});
  contain.Diag(0, AffineExpr(Xi) - AffineExpr(P1 * alpha4))
      .Diag(1, AffineExpr(SymMatrix(Mat::Constant(1, 1, alpha4 - 1.0))));
  p.AddLmi(contain.Build(), Strictness::kNonStrict, "containment");

  const double eps = 1e-6 * (1.0 + Norm2(Xi.mat()));
  p.AddLmi(AffineExpr(SymMatrix::Identity(n) * eps) - AffineExpr(P1),
           Strictness::kNonStrict, "P1 >= eps I");
  p.AddLmi(AffineExpr(MatExpr(out.alpha2) * -1.0), Strictness::kNonStrict, "alpha2 >= 0");
  p.AddLmi(AffineExpr(MatExpr(out.alpha3) * -1.0), Strictness::kNonStrict, "alpha3 >= 0");
  return out;
}

Mat RpiLmiMatrix(const Mat& P, const Mat& A, const Mat& G, const Mat& H,
                 const Mat& B, const SectorBound& sector,
                 const AttackModel& attack, const Alphas& al) {
  const Eigen::Index n = A.rows(), q = G.cols(), m = B.cols();
  const Mat Q1 = PadSquare(attack.Q1.mat(), n);
  const Mat Q2 = PadRows(attack.Q2, n);
  Mat zz = He(P * A) + al.a1 * P - al.a2 * Q1;
  Mat zp = Mat::Zero(n, q), pp = Mat::Zero(q, q);
  if (q > 0) {
    const Mat& V = sector.V.mat();
    zz -= al.a3 * He(H.transpose() * sector.S1.transpose() * V * sector.S2 * H);
    zp = P * G + al.a3 * H.transpose() * (sector.S1 + sector.S2).transpose() * V;
    pp = -2.0 * al.a3 * V;
  }
  return Block({{zz, zp, P * B - al.a2 * Q2},
                {zp.transpose(), pp, Mat::Zero(q, m)},
                {(P * B - al.a2 * Q2).transpose(), Mat::Zero(m, q), -al.a2 * attack.Q3.mat()}});
}

std::string VerifyReport::ToString() const {
  std::ostringstream os;
  if (certificate) {
    const auto& c = *certificate;
    os << "certificate found at alpha1=" << c.alphas.a1 << " alpha2=" << c.alphas.a2
       << " alpha3=" << c.alphas.a3 << " alpha4=" << c.alphas.a4 << "\n";
    os << "containment margin min_eig(P1 - Xi) = " << c.containment_margin << "\n";
    os << c.residuals.ToString();
  } else {
    os << "no certificate on grid. This is not a proof of unsafety: the "
          "conditions are only sufficient.\n";
  }
  os << "grid:\n";
  for (const auto& g : table) {
    os << "  alpha1=" << std::setw(5) << g.alpha1 << " alpha4=" << std::setw(5)
       << g.alpha4 << "  ";
    if (!g.evaluated) {
      os << "skipped\n";
      continue;
    }
    os << safeguard::ToString(g.status);
    if (!g.diagnostic.empty()) os << " (" << g.diagnostic << ")";
    os << "\n";
  }
  return os.str();
}

VerifyReport VerifySafety(const SystemBundle& bundle, const AlphaGrid& grid,
                          const SolveOptions& opts) {
  const auto issues = grid.Issues();
  if (!issues.empty()) throw std::invalid_argument("alpha grid: " + issues.front());
  const PrimaryLoop loop = AssemblePrimaryLoop(bundle);

  VerifyReport rep;
  for (double a1 : grid.alpha1) {
    for (double a4 : grid.alpha4) rep.table.push_back({a1, a4, false, SolveStatus::kUnknown, ""});
  }
  std::vector<std::optional<SafetyCertificate>> certs(rep.table.size());
  const int hit = FirstHit(static_cast<int>(rep.table.size()), [&](int i) {
    GridCell& cell = rep.table[i];
    cell.evaluated = true;
    const InvarianceProblem pp = BuildInvarianceProblem(loop, bundle.sector, bundle.attack,
                                              bundle.safe.Xi, cell.alpha1, cell.alpha4);
    SolveOptions o = opts;
    o.stop_at_feasible = true;
    const SolveOutcome out = Solve(pp.problem, o);
    cell.status = out.status;
    cell.diagnostic = out.diagnostic;
    if (!out.feasible()) return false;
    SafetyCertificate c;
    c.P1 = SymMatrix::FromSymmetrized(Sym(out.value(pp.P1)));
    c.alphas = {cell.alpha1, out.scalar(pp.alpha2), out.scalar(pp.alpha3), cell.alpha4};
    c.residuals = out.residuals;
    const CertificateAudit audit = CheckRpiCertificate(c, bundle);
    c.containment_margin = audit.containment_margin;
    c.contained = audit.contained;
    if (!audit.ok) {
      cell.status = SolveStatus::kUnknown;
      cell.diagnostic = "solver point failed the independent audit";
      return false;
    }
    certs[i] = c;
    return true;
  });
  if (hit >= 0) rep.certificate = certs[hit];
  return rep;
}

std::string CertificateAudit::ToString() const {
  std::ostringstream os;
  os << "invariance LMI max eig " << lmi_max_eig << (lmi_ok ? " ok" : " FAIL") << "\n"
     << "alpha2 - alpha1 = " << scalar << "\n"
     << "min_eig(P1) = " << p1_min_eig << "\n"
     << "containment min_eig(P1 - Xi) = " << containment_margin
     << (contained ? " ok" : " FAIL") << "\n";
  return os.str();
}

CertificateAudit CheckRpiCertificate(const SafetyCertificate& cert,
                                     const SystemBundle& bundle, double tol) {
  const PrimaryLoop loop = AssemblePrimaryLoop(bundle);
  CertificateAudit a;
  const Mat& P1 = cert.P1.mat();
  const Mat m = RpiLmiMatrix(P1, loop.A1cal, loop.G, loop.H, loop.B1cal, bundle.sector,
                             bundle.attack, cert.alphas);
  a.lmi_max_eig = MaxEig(m);
  a.scalar = cert.alphas.a2 - cert.alphas.a1;
  a.p1_min_eig = MinEig(P1);
  a.containment_margin = MinEig(Mat(P1 - bundle.safe.Xi.mat()));
  const double scale = std::max(1.0, Norm2(P1));
  a.lmi_ok = a.lmi_max_eig <= tol * scale && a.scalar <= tol && a.p1_min_eig > 0.0 &&
             cert.alphas.a2 >= -tol && cert.alphas.a3 >= -tol;
  a.contained = a.containment_margin >= -tol;
  a.ok = a.lmi_ok && a.contained;
  return a;
}

}  // namespace safeguard
