#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safeguard/lmi.h"
#include "safeguard/matcore.h"
#include "safeguard/sysmodel.h"

namespace safeguard {

// S-procedure multipliers: α1 decay, α2 attack, α3 sector, α4 containment.
struct Alphas {
  double a1 = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0;
};

struct AlphaGrid {
  std::vector<double> alpha1;
  std::vector<double> alpha4;

  static AlphaGrid Default();
  // Empty lists, non-positive α1 or α4 outside [0, 1].
  std::vector<std::string> Issues() const;
};

struct InvarianceProblem {
  LmiProblem problem;
  VarRef P1, alpha2, alpha3;
  double alpha1 = 0.0, alpha4 = 0.0;
};

// RPI + containment conditions for the primary loop with α1, α4 fixed;
// P1, α2, α3 are decision variables.
InvarianceProblem BuildInvarianceProblem(const PrimaryLoop& loop, const SectorBound& sector,
                               const AttackModel& attack, const SymMatrix& Xi,
                               double alpha1, double alpha4);

// S-procedure matrix for ζ̇ = Aζ + Gφ(Hζ) + Ba, blocks (ζ, φ, a):
//   [He(PA) − α3He(HᵀS1ᵀVS2H) + α1P − α2Q1,  PG + α3Hᵀ(S1+S2)ᵀV,  PB − α2Q2;
//    ⋆,  −2α3V,  0;   ⋆,  ⋆,  −α2Q3]
// H has one column per state. Q1 and Q2 act on the leading states and are
// zero-padded to the state dimension. The scalar α2 − α1 is not included.
Mat RpiLmiMatrix(const Mat& P, const Mat& A, const Mat& G, const Mat& H,
                 const Mat& B, const SectorBound& sector,
                 const AttackModel& attack, const Alphas& alphas);

struct SafetyCertificate {
  SymMatrix P1;
  Alphas alphas;
  ResidualReport residuals;
  double containment_margin = 0.0;  // min_eig(P1 − Ξ)
  bool contained = false;
};

struct GridCell {
  double alpha1 = 0.0, alpha4 = 0.0;
  bool evaluated = false;
  SolveStatus status = SolveStatus::kUnknown;
  std::string diagnostic;
};

struct VerifyReport {
  std::optional<SafetyCertificate> certificate;
  std::vector<GridCell> table;

  bool found() const { return certificate.has_value(); }
  std::string ToString() const;
};

// Grid search in lexicographic order (α1 outer, α4 inner); the first
// feasible cell that also passes the certificate audit wins.
VerifyReport VerifySafety(const SystemBundle& bundle,
                          const AlphaGrid& grid = AlphaGrid::Default(),
                          const SolveOptions& opts = {});

struct CertificateAudit {
  double lmi_max_eig = 0.0;
  double scalar = 0.0;              // α2 − α1
  double containment_margin = 0.0;  // min_eig(P1 − Ξ)
  double p1_min_eig = 0.0;
  bool lmi_ok = false;
  bool contained = false;
  bool ok = false;

  std::string ToString() const;
};

// Rebuilds the conditions at the certificate values with matcore only.
CertificateAudit CheckRpiCertificate(const SafetyCertificate& cert,
                                     const SystemBundle& bundle,
                                     double tol = 1e-6);

}  // namespace safeguard
