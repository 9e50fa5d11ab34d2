#pragma once

#include <functional>
#include <string>
#include <vector>

#include "safeguard/matcore.h"

namespace safeguard {

// ẋp = A xp + G φp(H xp) + B u,  yp = C xp
struct Plant {
  Mat A, G, H, B, C;
};

// ẋ1 = A x1 + G φ1(H x1) + B (yp + ay),  up = C x1 + D (yp + ay) + au
// n1 = 0 is a static output feedback up = D (yp + ay) + au.
struct PrimaryController {
  Mat A, G, H, B, C, D;
};

// ẋ2 = A2 x2 + B2 Cs yp,  us = C2 x2 + D2 Cs yp
struct SecondaryController {
  Mat A2, B2, C2, D2;

  int order() const { return static_cast<int>(A2.rows()); }
  // [A2 B2; C2 D2]
  Mat AsBlock() const;
  static SecondaryController FromBlock(const Mat& k, int n2);
  static SecondaryController Zero(int n2, int n_c, int n_e);
};

struct Selection {
  Mat Cs;  // nC x ny
  Mat Eu;  // nu x nE
};

// (φ - S1 H ζ1)ᵀ V (φ - S2 H ζ1) <= 0
struct SectorBound {
  Mat S1, S2;
  SymMatrix V;
};

// [ζ1; a]ᵀ [Q1 Q2; Q2ᵀ Q3] [ζ1; a] <= 1 with a the attack in channel
// coordinates. The physical attack (au, ay) equals channels * a; an empty
// channel matrix means identity.
struct AttackModel {
  SymMatrix Q1;
  Mat Q2;
  SymMatrix Q3;
  Mat channels;

  int dim() const { return Q3.dim(); }
  Mat ChannelMatrix(int n_uy) const;
  // Q2 Q3⁻¹ Q2ᵀ - Q1
  Mat Qcal() const;
};

struct SafeSet {
  SymMatrix Xi;
};

struct Dims {
  int np = 0, nu = 0, ny = 0, qp = 0, hp = 0;
  int n1 = 0, q1 = 0, h1 = 0;
  int nc = 0, ne = 0, na = 0;

  int n() const { return np + n1; }
  int q() const { return qp + q1; }
  int h() const { return hp + h1; }
};

struct SystemBundle {
  Plant plant;
  PrimaryController primary;
  Selection selection;
  SectorBound sector;
  AttackModel attack;
  SafeSet safe;
  // Name of the elementwise nonlinearity used for simulation only.
  std::string phi = "zero";

  // Throws std::invalid_argument listing every dimension issue.
  Dims dims() const;
};

// Every dimension inconsistency, each naming the offending pair.
std::vector<std::string> DimensionIssues(const SystemBundle& b);
std::vector<std::string> DimensionIssues(const Plant& p,
                                         const PrimaryController& c);

struct PrimaryLoop {
  Mat A1cal;  // 𝒜1 without secondary
  Mat G;      // diag(Gp, G1)
  Mat H;      // diag(Hp, H1)
  Mat B1cal;  // ℬ1, n x (nu+ny), or n x na after channels
};

PrimaryLoop AssemblePrimaryLoop(const Plant& plant,
                                const PrimaryController& primary);
// Applies the attack channel matrix to ℬ1.
PrimaryLoop AssemblePrimaryLoop(const SystemBundle& b);

struct ClosedLoop {
  Mat Acal, Bcal, Gcal, Hcal;
  Mat Ccal;  // us = Ccal ζ
  int np = 0, n1 = 0, n2 = 0;

  int n() const { return np + n1 + n2; }
  int n_zeta1() const { return np + n1; }
};

ClosedLoop AssembleClosedLoop(const Plant& plant,
                              const PrimaryController& primary,
                              const SecondaryController& secondary,
                              const Selection& selection);
ClosedLoop AssembleClosedLoop(const SystemBundle& b,
                              const SecondaryController& secondary);

struct HatMatrices {
  Mat Ahat, Bhat, Chat;
};

HatMatrices ComputeHatMatrices(const Plant& plant,
                               const PrimaryController& primary,
                               const Selection& selection);

// 𝒜 = Ã + B̃ K C̃ with K = [A2 B2; C2 D2].
struct LoopFactorization {
  Mat At, Bt, Ct;
};

LoopFactorization Factorize(const HatMatrices& hats, int n2);

struct ValidationItem {
  std::string name;
  bool passed = false;
  double value = 0.0;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationItem> items;

  bool ok() const;
  std::string ToString() const;
};

ValidationReport ValidateAttackModel(const AttackModel& am);

using NonlinearityFn = std::function<Vec(const Vec&)>;

// Elementwise nonlinearity by name: zero, identity, sin, tanh, sat, cube.
// Throws std::invalid_argument for unknown names.
NonlinearityFn MakeNonlinearity(const std::string& name);
bool IsKnownNonlinearity(const std::string& name);

struct SectorReport {
  double max_violation = 0.0;  // positive means violated
  Vec worst_point;
  int samples = 0;
};

// Evaluates the sector inequality at quasi-random points of the ball of the
// given radius in ζ1 coordinates.
SectorReport ValidateSector(const SectorBound& sb, const NonlinearityFn& phi,
                            const Mat& H, int samples, double radius);

}  // namespace safeguard
