#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/matcore.h"
#include "safeguard/sysmodel.h"

namespace safeguard {

// {a : (a − c)ᵀ Q3 (a − c) ≤ r²} with c = −Q3⁻¹Q2ᵀζ1 and
// r² = 1 + ζ1ᵀ(Q2Q3⁻¹Q2ᵀ − Q1)ζ1.
struct AdmissibleSet {
  Vec center;
  SymMatrix shape;
  double radius2 = 1.0;
};

AdmissibleSet AdmissibleAttackSet(const Vec& zeta1, const AttackModel& am);

// [ζ1; a]ᵀ [Q1 Q2; Q2ᵀ Q3] [ζ1; a]; admissible iff ≤ 1.
double AttackQuadratic(const AttackModel& am, const Vec& zeta1, const Vec& a);

enum class AttackStrategy {
  kZero,
  kConstantBoundary,
  kSinusoidBoundary,
  kRandomAdmissible,
  kCustom,
};

// Every emitted attack lies in the admissible set at the ζ1 it was sampled
// for, except for kCustom which is passed through unchecked.
class AttackGenerator {
 public:
  using CustomFn = std::function<Vec(double t, const Vec& zeta1)>;

  static AttackGenerator Zero(const AttackModel& am);
  // c + r d/‖d‖_Q3: on the boundary along d.
  static AttackGenerator ConstantBoundary(const AttackModel& am, const Vec& direction);
  // Boundary point whose direction rotates at `frequency` Hz in the plane of
  // d and the next Q3-orthogonal axis. For a scalar attack the boundary is
  // {c ± r}, so the sign follows sin(2π f t).
  static AttackGenerator SinusoidBoundary(const AttackModel& am, const Vec& direction,
                                          double frequency);
  // Uniform in the admissible ellipsoid; deterministic per seed.
  static AttackGenerator RandomAdmissible(const AttackModel& am, std::uint64_t seed);
  static AttackGenerator Custom(const AttackModel& am, CustomFn fn);

  AttackStrategy strategy() const { return strategy_; }
  const AttackModel& model() const { return model_; }
  int dim() const { return model_.dim(); }

  Vec Sample(const Vec& zeta1, double t);

 private:
  AttackGenerator(AttackStrategy s, AttackModel am);

  AttackStrategy strategy_;
  AttackModel model_;
  Vec direction_, ortho_;
  double frequency_ = 0.0;
  std::mt19937_64 rng_;
  CustomFn custom_;
};

Vec SampleAttack(AttackGenerator& gen, const Vec& zeta1, double t);

// Uniform point in the unit ball of dimension m.
Vec UniformInBall(int m, std::mt19937_64& rng);
// Uniform direction on the unit sphere.
Vec UniformOnSphere(int m, std::mt19937_64& rng);

// Everything the integrator needs.
struct SimSystem {
  ClosedLoop loop;
  NonlinearityFn phi;
  Mat Up_zeta, Up_a;  // u_p = Up_zeta ζ + Up_a a
  SymMatrix Xi;       // safe set on ζ1
  AttackModel attack;
  std::optional<SymMatrix> P;  // V(ζ) = ζᵀPζ (or ζ1ᵀPζ1 when P is smaller)

  int n() const { return loop.n(); }
  int n_zeta1() const { return loop.n_zeta1(); }
};

// Closed loop with the bundle's nonlinearity. Passing an empty
// SecondaryController (order 0, no channels) simulates the primary loop.
SimSystem MakeSimSystem(const SystemBundle& bundle, const SecondaryController& k);
SimSystem MakePrimarySimSystem(const SystemBundle& bundle);

struct Trajectory {
  std::vector<double> t;
  std::vector<Vec> zeta, a, us, up;
  std::vector<double> V, safe_quad;
  double dt = 0.0;
  int substeps = 1;

  std::size_t size() const { return t.size(); }
};

class SimulationError : public std::runtime_error {
 public:
  SimulationError(int step, const std::string& msg);
  int step() const { return step_; }

 private:
  int step_;
};

// Classical RK4 on the dt grid with the attack held over each step. Each
// step is split into equal substeps so that ρ(𝒜)·h ≤ 1.
Trajectory Simulate(const SimSystem& sys, AttackGenerator& gen, const Vec& x0, double T,
                    double dt);

struct SafetyMonitor {
  double max_safe_quad = 0.0;
  double max_rpi_quad = 0.0;
  std::optional<int> first_safe_violation;  // step index
  std::optional<int> first_rpi_violation;
  std::optional<double> first_safe_violation_time;
  std::optional<double> first_rpi_violation_time;

  std::string ToString() const;
};

// Quadratics are recomputed from the states. rpi may act on ζ or ζ1.
SafetyMonitor MonitorSafety(const Trajectory& traj, const SymMatrix& Xi,
                            const std::optional<SymMatrix>& rpi, double tol = 0.0);

struct DissipationReport {
  double max_violation = 0.0;  // max_t of the integrated residual
  double final_residual = 0.0;
  std::string ToString() const;
};

// r(t) = V(t) − V(0) + ∫ (|u_s|²/γ − (γ − ε)|a|²), V = ζᵀPζ. The attack term
// uses the held value over each step, u_s the trapezoid rule.
DissipationReport DissipationAudit(const Trajectory& traj, const SymMatrix& P, double gamma,
                                   double epsilon);

// Boundary of ℰ(P): P^{-1/2} u with u uniform on the sphere.
std::vector<Vec> SampleEllipsoidBoundary(const SymMatrix& P, int count, std::uint64_t seed);

// Boundary of the admissible set.
std::vector<Vec> SampleAdmissibleBoundary(const AttackModel& am, const Vec& zeta1, int count,
                                          std::uint64_t seed);

struct MonteCarloReport {
  int trajectories = 0;
  double max_V = 0.0;
  double max_safe_quad = 0.0;
  int worst_index = -1;
  bool ok = false;  // max_V ≤ 1 + tol
  std::string ToString() const;
};

// Trajectories from ∂ℰ(P) (P on ζ or on ζ1; a smaller P starts the secondary
// state at zero) under random admissible attacks. Trajectory i uses seed + i.
MonteCarloReport MonteCarloInvariance(const SimSystem& sys, const SymMatrix& P, int count,
                                      double T, double dt, std::uint64_t seed,
                                      double tol = 1e-3);

// Josephson junction with its stabilising state feedback as the primary
// controller and the safe set xi_scale·I3.
SystemBundle JosephsonCaseStudy(double xi_scale = 50.0);

void WriteTrajectoryCsv(const Trajectory& traj, const std::string& path);
std::string TrajectoryCsv(const Trajectory& traj);

// {shape, center, surface?}; surface points are sampled on the boundary.
nlohmann::json EllipsoidJson(const SymMatrix& shape, int surface_points = 0,
                             std::uint64_t seed = 1);

}  // namespace safeguard
