#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/matcore.h"

namespace safeguard {

enum class VarKind { kSymmetric, kMatrix, kScalar };

struct VarRef {
  int id = -1;
  VarKind kind = VarKind::kScalar;
  int rows = 1;
  int cols = 1;
  std::string name;

  // Number of scalar coordinates.
  int coords() const;
};

// One term L · V̂ · R. For matrix variables V̂ is V or Vᵀ; for scalar
// variables V̂ is x·I with the inner size L.cols() == R.rows().
struct MatTerm {
  VarRef var;
  Mat left, right;
  bool transpose = false;
};

// Affine rectangular matrix expression: constant + Σ terms.
class MatExpr {
 public:
  MatExpr() = default;
  MatExpr(const Mat& constant);  // NOLINT(runtime/explicit)
  MatExpr(const VarRef& v);      // NOLINT(runtime/explicit)

  static MatExpr Zero(int rows, int cols);
  // x · M for a scalar variable x.
  static MatExpr Scaled(const VarRef& x, const Mat& m);

  int rows() const { return static_cast<int>(constant_.rows()); }
  int cols() const { return static_cast<int>(constant_.cols()); }
  const Mat& constant() const { return constant_; }
  const std::vector<MatTerm>& terms() const { return terms_; }

  MatExpr Transpose() const;
  MatExpr operator+(const MatExpr& o) const;
  MatExpr operator-(const MatExpr& o) const;
  MatExpr operator-() const;
  MatExpr operator*(double s) const;
  MatExpr operator*(const Mat& right) const;
  friend MatExpr operator*(const Mat& left, const MatExpr& e) {
    return e.LeftMultiply(left);
  }
  friend MatExpr operator*(double s, const MatExpr& e) { return e * s; }

  // Embeds the expression at (row, col) of a rows x cols zero matrix.
  MatExpr Embed(int row, int col, int rows, int cols) const;

 private:
  MatExpr LeftMultiply(const Mat& left) const;

  Mat constant_;
  std::vector<MatTerm> terms_;
};

using Assignment = std::map<int, Mat>;

// Raw value of a MatExpr (no symmetrization).
Mat EvaluateRaw(const MatExpr& e, const Assignment& values);

// Symmetric matrix-valued affine expression. The value is Sym(raw) where raw
// is a square MatExpr; He() doubles the raw part so its value is raw + rawᵀ.
class AffineExpr {
 public:
  AffineExpr() = default;
  explicit AffineExpr(const MatExpr& raw);
  AffineExpr(const SymMatrix& constant);  // NOLINT(runtime/explicit)

  static AffineExpr He(const MatExpr& m);
  static AffineExpr Zero(int n);

  int dim() const { return raw_.rows(); }
  const MatExpr& raw() const { return raw_; }
  const std::vector<int>& block_sizes() const { return block_sizes_; }

  AffineExpr operator+(const AffineExpr& o) const;
  AffineExpr operator-(const AffineExpr& o) const;
  AffineExpr operator*(double s) const;
  // Congruence Lᵀ E L with a constant L.
  AffineExpr Congruence(const Mat& l) const;

 private:
  friend class BlockExpr;
  MatExpr raw_;
  std::vector<int> block_sizes_;
};

SymMatrix Evaluate(const AffineExpr& e, const Assignment& values);

// Symmetric block LMI assembled from diagonal blocks and upper off-diagonal
// blocks; unset blocks are zero.
class BlockExpr {
 public:
  explicit BlockExpr(std::vector<int> sizes);

  BlockExpr& Diag(int i, const AffineExpr& e);
  // Block (i, j) with i < j; block (j, i) is its transpose.
  BlockExpr& Off(int i, int j, const MatExpr& e);
  AffineExpr Build() const;

 private:
  std::vector<int> sizes_, offsets_;
  int dim_ = 0;
  MatExpr raw_;
};

enum class Strictness { kNonStrict, kStrict };

struct LmiConstraint {
  AffineExpr expr;  // expr ⪯ 0, or ⪯ -margin·I when strict
  Strictness strictness = Strictness::kNonStrict;
  double margin = 0.0;
  std::string label;
};

struct ObjectiveTerm {
  VarRef var;
  Mat weight;  // contributes ⟨weight, V⟩
};

class LmiProblem {
 public:
  VarRef Symmetric(int n, const std::string& name);
  VarRef Matrix(int rows, int cols, const std::string& name);
  VarRef Scalar(const std::string& name);

  // Adds expr ⪯ 0. Strict constraints use expr ⪯ -margin·I; margin < 0
  // selects the default 1e-7·(1 + ‖constant‖₂). Returns the index.
  int AddLmi(const AffineExpr& expr, Strictness strictness,
             const std::string& label, double margin = -1.0);

  // Minimize Σ ⟨W, V⟩ + offset.
  void Minimize(const std::vector<ObjectiveTerm>& terms, double offset = 0.0);
  void MaximizeLogdet(const VarRef& var);
  void ClearObjective();

  const std::vector<VarRef>& variables() const { return vars_; }
  const std::vector<LmiConstraint>& constraints() const { return cons_; }
  const std::vector<ObjectiveTerm>& objective() const { return objective_; }
  double objective_offset() const { return offset_; }
  bool has_linear_objective() const { return !objective_.empty(); }
  const VarRef* logdet_var() const {
    return logdet_ ? &*logdet_ : nullptr;
  }
  int num_coords() const;

  double ObjectiveValue(const Assignment& values) const;

  // Debug rendering: variables, constraint sizes/labels/margins, and the
  // expression constants and terms.
  nlohmann::json ToJson() const;

 private:
  VarRef Add(VarKind kind, int rows, int cols, const std::string& name);

  std::vector<VarRef> vars_;
  std::vector<LmiConstraint> cons_;
  std::vector<ObjectiveTerm> objective_;
  double offset_ = 0.0;
  std::optional<VarRef> logdet_;
};

struct ResidualEntry {
  std::string label;
  double max_eig = 0.0;
  double margin = 0.0;
  bool strict = false;
  bool passed = false;
};

struct ResidualReport {
  std::vector<ResidualEntry> entries;
  bool ok = true;
  // max over constraints of max_eig + margin (strict) or max_eig
  double worst = 0.0;

  std::string ToString() const;
};

// Re-evaluates every constraint from scratch with matcore eigenvalues.
ResidualReport CheckSolution(const LmiProblem& problem,
                             const Assignment& values, double tol);

enum class SolveStatus { kFeasible, kInfeasible, kUnknown };
const char* ToString(SolveStatus s);

struct SolveOptions {
  int max_iter = 120;
  double tol = 1e-8;        // IPM relative gap / residual tolerance
  double audit_tol = 1e-8;  // CheckSolution tolerance
  double box = 1e7;         // |x_i| <= box on every coordinate
  double slack_cap = 1.0;   // phase-1 slack t <= slack_cap
  bool stop_at_feasible = false;
};

struct SolveOutcome {
  SolveStatus status = SolveStatus::kUnknown;
  Assignment values;
  ResidualReport residuals;
  double objective = 0.0;
  double slack = 0.0;  // phase-1 optimal common slack
  int iterations = 0;
  std::string diagnostic;

  bool feasible() const { return status == SolveStatus::kFeasible; }
  const Mat& value(const VarRef& v) const;
  double scalar(const VarRef& v) const { return value(v)(0, 0); }
};

class LmiBackend {
 public:
  virtual ~LmiBackend() = default;
  virtual std::string name() const = 0;
  virtual SolveOutcome Solve(const LmiProblem& problem,
                             const SolveOptions& opts) const = 0;
};

// Self-contained dense primal-dual interior-point method.
class InteriorPointBackend : public LmiBackend {
 public:
  std::string name() const override { return "dense-ipm"; }
  SolveOutcome Solve(const LmiProblem& problem,
                     const SolveOptions& opts) const override;
};

SolveOutcome Solve(const LmiProblem& problem, const SolveOptions& opts = {});

// Maximizes logdet(var) by successive linearization: each round maximizes
// tr(V_k⁻¹ V) over the constraints and takes an exact line search toward it,
// so logdet never decreases. The logdet history is in `history`.
struct LogdetOutcome {
  SolveOutcome outcome;
  std::vector<double> history;
};

LogdetOutcome MinimizeLogdetIterative(const LmiProblem& problem,
                                      const VarRef& var, int rounds,
                                      const SolveOptions& opts = {});

double DefaultMargin(const AffineExpr& e);

}  // namespace safeguard
