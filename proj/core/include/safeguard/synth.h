#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safeguard/lmi.h"
#include "safeguard/matcore.h"
#include "safeguard/sysmodel.h"
#include "safeguard/verify.h"

namespace safeguard {

enum class Completion { kPaperRecipe, kPiCompletion, kAuto };
const char* ToString(Completion c);
Completion ParseCompletion(const std::string& s);

enum class NChoice { kIdentity, kBalanced, kCustom };

struct SynthOptions {
  // Fixed multipliers; when empty the default grid is searched.
  std::optional<Alphas> alphas;
  std::vector<Alphas> grid;
  Completion completion = Completion::kAuto;
  NChoice n_choice = NChoice::kBalanced;
  Mat custom_N;
  double epsilon = 1e-4;  // L2 path only
  double k_lmi_tol = 1e-6;
  // Linear path: cap on the spectral norm of [A B; C D](η) for objectives
  // that are unbounded in the high-gain limit (min Tr X, min Tr Q3).
  double eta_budget = 1e4;
  SolveOptions solve;
};

// α1, α2 ∈ {0.01, 0.05, 0.1, 0.5}, α3 ∈ {0.05, 0.1, 0.5, 1}, α4 ∈ {0.9, 0.99},
// with (0.05, 0.05, 0.1, 0.99) moved to the front.
std::vector<Alphas> DefaultSynthGrid();

// Grid used for the linear paths: α1 from the verification grid, α4 in
// {0.5, 0.9, 0.99, 1}; α2 stays a decision variable.
std::vector<Alphas> DefaultLinearGrid();

struct NonlinearTerms {
  Mat Gamma3_const;  // constant part of Γ3
  Mat Abar;          // Γ3 = He(Abar X) + Gamma3_const
  Mat F;             // [H; Lqᵀ] with 𝒬 = Lq Lqᵀ
  Mat Gamma4;
};

// Γ3/Γ4 ingredients. Throws when S1 == S2, when α2 or α3 is not positive,
// or when the Γ4 inner matrix is singular.
NonlinearTerms ComputeNonlinearTerms(const HatMatrices& hats, const PrimaryLoop& loop,
                           const SectorBound& sector, const AttackModel& attack,
                           const Alphas& alphas);

struct NonlinearProblem {
  LmiProblem problem;
  VarRef X, Y;
  Mat W1, W2;
  NonlinearTerms terms;
  Alphas alphas;
};

NonlinearProblem BuildNonlinearProblem(const HatMatrices& hats, const PrimaryLoop& loop,
                             const SectorBound& sector, const AttackModel& attack,
                             const SymMatrix& Xi, const Alphas& alphas);

// Δ = Γ3 − X Fᵀ Γ4⁻¹ F X, the Schur complement of the first condition.
Mat NonlinearDelta(const NonlinearTerms& terms, const Mat& X);

struct CompletedP {
  SymMatrix P;
  Mat N, M;
  Mat Ytilde;
  Completion mode = Completion::kPiCompletion;
};

// P = [Y N; Nᵀ Ỹ] with M Nᵀ = I − XY. Throws if I − XY is singular or the
// completion is not positive definite.
CompletedP CompleteP(const Mat& X, const Mat& Y, Completion mode,
                     NChoice n_choice = NChoice::kBalanced, const Mat& custom_N = Mat());

// N for the completion: identity, the balanced factor (Y − X⁻¹)^{1/2}, or
// a custom square matrix.
Mat ChooseN(const Mat& X, const Mat& Y, NChoice choice, const Mat& custom_N);

struct ProjectionSolution {
  SolveOutcome outcome;
  Mat Theta;
  double max_eig = 0.0;  // max eig of Ψ + He(Vᵀ Θ U)
};

// Finds Θ with Ψ + He(Vᵀ Θ U) ⪯ −margin·I, minimizing a spectral bound on Θ.
ProjectionSolution SolveProjectionLmi(const Mat& Psi, const Mat& U, const Mat& V,
                                      double margin, const SolveOptions& opts = {});

struct ClosedLoopLmi {
  Mat Omega2;  // value at K = 0
  Mat U, V;    // Ω = Omega2 + He(Vᵀ K U)
};

ClosedLoopLmi BuildClosedLoopLmi(const Mat& P, const HatMatrices& hats,
                                 const PrimaryLoop& loop, const SectorBound& sector,
                                 const AttackModel& attack, const Alphas& alphas, int n2);

// Solves the LMI in K for a fixed P. Throws with a retry hint if infeasible.
SecondaryController SolveKGivenP(const Mat& P, const HatMatrices& hats,
                                 const PrimaryLoop& loop, const SectorBound& sector,
                                 const AttackModel& attack, const Alphas& alphas,
                                 int n2, const SolveOptions& opts = {});

struct SynthGridCell {
  Alphas alphas;
  bool evaluated = false;
  std::string stage;
  std::string status;
};

struct SynthResult {
  SecondaryController K;
  SymMatrix P;
  SymMatrix X, Y;
  Mat N, M;
  Alphas alphas;
  Completion completion = Completion::kPiCompletion;
  ResidualReport residuals;   // synthesis conditions
  double k_lmi_max_eig = 0.0; // final closed-loop condition at (P, K)
  double k_lmi_scalar = 0.0;  // α2 − α1
  Ellipsoid rpi;              // ℰ(P)
  Ellipsoid projection;       // ℰ(P_ζ1)
  double containment_margin = 0.0;  // min_eig(P_ζ1 − Ξ)
  bool contained = false;
  double k_norm = 0.0;
  std::optional<double> gamma;
  double l2_max_eig = 0.0;    // gain condition at (P, K), L2 path only
  std::vector<std::string> warnings;
  std::vector<SynthGridCell> table;
  std::string ToString() const;
};

// Staged failure: stage tag plus the grid table.
class SynthError : public std::runtime_error {
 public:
  SynthError(const std::string& stage, const std::string& msg,
             std::vector<SynthGridCell> table = {});
  const std::string& stage() const { return stage_; }
  const std::vector<SynthGridCell>& table() const { return table_; }

 private:
  std::string stage_;
  std::vector<SynthGridCell> table_;
};

// Closed-loop audit: RPI matrix at (P, K) with the sector/attack acting on
// ζ1, the projection ℰ(P_ζ1) ⊆ ℰ(Ξ), and ‖K‖.
// With `linear` the sector is absorbed (φ = S1 H ζ1) before the check.
void AuditSynthResult(const SystemBundle& bundle, SynthResult* r, double tol,
                      bool linear = false, double epsilon = 0.0);

// Acal += Gcal S1 Hcal; the sector channel is removed.
ClosedLoop AbsorbSector(ClosedLoop cl, const SectorBound& sector);

SynthResult SynthesizeNonlinear(const SystemBundle& bundle, int n2,
                                const SynthOptions& opts = {});

// ---- linear case (S1 = S2 absorbed, Q1 = Q2 = 0) ----

// Reason the bundle cannot use the linear path, or empty.
std::string LinearPathIssue(const SystemBundle& bundle);

// Primary loop and hats with G S1 H absorbed into the state matrix.
PrimaryLoop AbsorbedLoop(const SystemBundle& bundle);
HatMatrices AbsorbedHats(const SystemBundle& bundle);

struct Eta {
  Mat X, Y, A, B, C, D;
};

struct LinearProblem {
  LmiProblem problem;
  VarRef X, Y, A, B, C, D, alpha2;
  std::optional<VarRef> gamma;
  std::optional<VarRef> Q3;
  double alpha1 = 0.0, alpha4 = 0.0;
  double fixed_alpha2 = 0.0;  // when Q3 is the variable
};

struct LinearSetup {
  bool l2 = false;          // add the gain condition and γ
  double epsilon = 1e-4;
  bool q3_variable = false; // Q3 as decision variable with α2 fixed
  double alpha2 = 0.0;      // used when q3_variable
};

LinearProblem BuildLinearProblem(const HatMatrices& hats, const Mat& B1cal, const SymMatrix& Q3,
                             const SymMatrix& Xi, double alpha1, double alpha4,
                             const LinearSetup& setup = {});

// A(η) and B(η) evaluated numerically.
Mat EtaA(const HatMatrices& hats, const Eta& eta);
Mat EtaB(const Mat& B1cal, const Eta& eta);

// Forward change of variables from (X, Y, M, N, K).
Eta ForwardChangeOfVariables(const HatMatrices& hats, const Mat& X, const Mat& Y,
                             const Mat& M, const Mat& N, const SecondaryController& k);

// Recovery in the order D2, C2, B2, A2. Throws if M or N is singular.
SecondaryController RecoverController(const HatMatrices& hats, const Eta& eta,
                                      const Mat& N, const Mat& M);

SynthResult SynthesizeLinear(const SystemBundle& bundle, const SynthOptions& opts = {});

// Minimizes γ over the linear grid.
SynthResult SynthesizeL2(const SystemBundle& bundle, const SynthOptions& opts = {});

enum class WorstAttackMode { kVerify, kSynthesize };

struct WorstAttackResult {
  SymMatrix Q3;
  double trace = 0.0;
  Alphas alphas;
  std::optional<SafetyCertificate> certificate;  // verify mode
  std::optional<SynthResult> synth;              // synthesize mode
};

WorstAttackResult WorstAttack(const SystemBundle& bundle, WorstAttackMode mode,
                              const SynthOptions& opts = {});

enum class RpiObjective { kMinTraceX, kMaxLogdetX };

struct RpiOptimum {
  SynthResult result;
  double trace_x = 0.0;
  double logdet_x = 0.0;
  std::vector<double> logdet_history;
};

RpiOptimum OptimizeRpi(const SystemBundle& bundle, RpiObjective objective,
                       const SynthOptions& opts = {});

// vol ℰ(X_a⁻¹) / vol ℰ(X_b⁻¹) = sqrt(det X_a / det X_b).
double VolumeRatio(const Mat& Xa, const Mat& Xb);

}  // namespace safeguard
