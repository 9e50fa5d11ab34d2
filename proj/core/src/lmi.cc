#include "safeguard/lmi.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "sdp_ipm.h"

namespace safeguard {

namespace {

std::string Shape(int r, int c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

// Inner dimension of V̂ in a term.
int InnerRows(const MatTerm& t) {
  if (t.var.kind == VarKind::kScalar) return static_cast<int>(t.left.cols());
  return t.transpose ? t.var.cols : t.var.rows;
}

int InnerCols(const MatTerm& t) {
  if (t.var.kind == VarKind::kScalar) return static_cast<int>(t.right.rows());
  return t.transpose ? t.var.rows : t.var.cols;
}

Mat TermValue(const MatTerm& t, const Mat& v) {
  if (t.var.kind == VarKind::kScalar) return v(0, 0) * (t.left * t.right);
  return t.transpose ? Mat(t.left * v.transpose() * t.right)
                     : Mat(t.left * v * t.right);
}

}  // namespace

int VarRef::coords() const {
  switch (kind) {
    case VarKind::kSymmetric:
      return rows * (rows + 1) / 2;
    case VarKind::kMatrix:
      return rows * cols;
    case VarKind::kScalar:
      return 1;
  }
  return 0;
}

MatExpr::MatExpr(const Mat& constant) : constant_(constant) {}

MatExpr::MatExpr(const VarRef& v) {
  constant_ = Mat::Zero(v.rows, v.cols);
  MatTerm t;
  t.var = v;
  if (v.kind == VarKind::kScalar) {
    t.left = Mat::Identity(1, 1);
    t.right = Mat::Identity(1, 1);
  } else {
    t.left = Mat::Identity(v.rows, v.rows);
    t.right = Mat::Identity(v.cols, v.cols);
  }
  terms_.push_back(t);
}

MatExpr MatExpr::Zero(int rows, int cols) { return MatExpr(Mat::Zero(rows, cols)); }

MatExpr MatExpr::Scaled(const VarRef& x, const Mat& m) {
  if (x.kind != VarKind::kScalar) {
    throw std::invalid_argument("MatExpr::Scaled: '" + x.name + "' is not a scalar");
  }
  MatExpr e(Mat::Zero(m.rows(), m.cols()));
  MatTerm t;
  t.var = x;
  t.left = m;
  t.right = Mat::Identity(m.cols(), m.cols());
  e.terms_.push_back(t);
  return e;
}

MatExpr MatExpr::Transpose() const {
  MatExpr e(Mat(constant_.transpose()));
  for (const auto& t : terms_) {
    MatTerm u;
    u.var = t.var;
    u.left = t.right.transpose();
    u.right = t.left.transpose();
    u.transpose = t.var.kind == VarKind::kScalar ? false : !t.transpose;
    e.terms_.push_back(u);
  }
  return e;
}

MatExpr MatExpr::operator+(const MatExpr& o) const {
  if (rows() != o.rows() || cols() != o.cols()) {
    throw std::invalid_argument("MatExpr +: " + Shape(rows(), cols()) + " vs " +
                                Shape(o.rows(), o.cols()));
  }
  MatExpr e(Mat(constant_ + o.constant_));
  e.terms_ = terms_;
  e.terms_.insert(e.terms_.end(), o.terms_.begin(), o.terms_.end());
  return e;
}

MatExpr MatExpr::operator-(const MatExpr& o) const { return *this + (-o); }

MatExpr MatExpr::operator-() const { return *this * -1.0; }

MatExpr MatExpr::operator*(double s) const {
  MatExpr e(Mat(s * constant_));
  e.terms_ = terms_;
  for (auto& t : e.terms_) t.left *= s;
  return e;
}

MatExpr MatExpr::operator*(const Mat& right) const {
  if (cols() != right.rows()) {
    throw std::invalid_argument("MatExpr *: " + Shape(rows(), cols()) + " times " +
                                Shape(static_cast<int>(right.rows()),
                                      static_cast<int>(right.cols())));
  }
  MatExpr e(Mat(constant_ * right));
  e.terms_ = terms_;
  for (auto& t : e.terms_) t.right = t.right * right;
  return e;
}

MatExpr MatExpr::LeftMultiply(const Mat& left) const {
  const MatExpr& x = *this;
  if (left.cols() != x.rows()) {
    throw std::invalid_argument("MatExpr *: " +
                                Shape(static_cast<int>(left.rows()),
                                      static_cast<int>(left.cols())) +
                                " times " + Shape(x.rows(), x.cols()));
  }
  MatExpr e(Mat(left * x.constant_));
  e.terms_ = x.terms_;
  for (auto& t : e.terms_) t.left = left * t.left;
  return e;
}

MatExpr MatExpr::Embed(int row, int col, int rows, int cols) const {
  if (row < 0 || col < 0 || row + this->rows() > rows || col + this->cols() > cols) {
    throw std::invalid_argument("MatExpr::Embed: block does not fit");
  }
  Mat er = Mat::Zero(rows, this->rows());
  er.block(row, 0, this->rows(), this->rows()).setIdentity();
  Mat ec = Mat::Zero(this->cols(), cols);
  ec.block(0, col, this->cols(), this->cols()).setIdentity();
  return er * (*this) * ec;
}

Mat EvaluateRaw(const MatExpr& e, const Assignment& values) {
  Mat out = e.constant();
  for (const auto& t : e.terms()) {
    auto it = values.find(t.var.id);
    if (it == values.end()) {
      throw std::invalid_argument("Evaluate: no value for variable '" + t.var.name + "'");
    }
    out += TermValue(t, it->second);
  }
  return out;
}

AffineExpr::AffineExpr(const MatExpr& raw) : raw_(raw) {
  if (raw.rows() != raw.cols()) {
    throw std::invalid_argument("AffineExpr: raw expression is not square (" +
                                Shape(raw.rows(), raw.cols()) + ")");
  }
  block_sizes_ = {raw.rows()};
}

AffineExpr::AffineExpr(const SymMatrix& constant)
    : AffineExpr(MatExpr(constant.mat())) {}

AffineExpr AffineExpr::He(const MatExpr& m) { return AffineExpr(m * 2.0); }

AffineExpr AffineExpr::Zero(int n) { return AffineExpr(MatExpr::Zero(n, n)); }

AffineExpr AffineExpr::operator+(const AffineExpr& o) const {
  return AffineExpr(raw_ + o.raw_);
}

AffineExpr AffineExpr::operator-(const AffineExpr& o) const {
  return AffineExpr(raw_ - o.raw_);
}

AffineExpr AffineExpr::operator*(double s) const { return AffineExpr(raw_ * s); }

AffineExpr AffineExpr::Congruence(const Mat& l) const {
  return AffineExpr(Mat(l.transpose()) * raw_ * l);
}

SymMatrix Evaluate(const AffineExpr& e, const Assignment& values) {
  return SymMatrix::FromSymmetrized(EvaluateRaw(e.raw(), values));
}

BlockExpr::BlockExpr(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  for (int s : sizes_) {
    offsets_.push_back(dim_);
    dim_ += s;
  }
  raw_ = MatExpr::Zero(dim_, dim_);
}

BlockExpr& BlockExpr::Diag(int i, const AffineExpr& e) {
  if (e.dim() != sizes_.at(i)) {
    std::ostringstream os;
    os << "BlockExpr: diagonal block " << i << " has size " << e.dim()
       << ", expected " << sizes_[i];
    throw std::invalid_argument(os.str());
  }
  raw_ = raw_ + e.raw().Embed(offsets_[i], offsets_[i], dim_, dim_);
  return *this;
}

BlockExpr& BlockExpr::Off(int i, int j, const MatExpr& e) {
  if (i >= j) throw std::invalid_argument("BlockExpr::Off requires i < j");
  if (e.rows() != sizes_.at(i) || e.cols() != sizes_.at(j)) {
    std::ostringstream os;
    os << "BlockExpr: block (" << i << "," << j << ") is " << e.rows() << "x"
       << e.cols() << ", expected " << sizes_[i] << "x" << sizes_[j];
    throw std::invalid_argument(os.str());
  }
  raw_ = raw_ + (e * 2.0).Embed(offsets_[i], offsets_[j], dim_, dim_);
  return *this;
}

AffineExpr BlockExpr::Build() const {
  AffineExpr e(raw_);
  e.block_sizes_ = sizes_;
  return e;
}

double DefaultMargin(const AffineExpr& e) {
  return 1e-7 * (1.0 + Norm2(Sym(e.raw().constant())));
}

VarRef LmiProblem::Add(VarKind kind, int rows, int cols, const std::string& name) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative variable size");
  VarRef v;
  v.id = static_cast<int>(vars_.size());
  v.kind = kind;
  v.rows = rows;
  v.cols = cols;
  v.name = name;
  vars_.push_back(v);
  return v;
}

VarRef LmiProblem::Symmetric(int n, const std::string& name) {
  return Add(VarKind::kSymmetric, n, n, name);
}

VarRef LmiProblem::Matrix(int rows, int cols, const std::string& name) {
  return Add(VarKind::kMatrix, rows, cols, name);
}

VarRef LmiProblem::Scalar(const std::string& name) {
  return Add(VarKind::kScalar, 1, 1, name);
}

int LmiProblem::AddLmi(const AffineExpr& expr, Strictness strictness,
                       const std::string& label, double margin) {
  for (const auto& t : expr.raw().terms()) {
    if (t.var.id < 0 || t.var.id >= static_cast<int>(vars_.size()) ||
        vars_[t.var.id].name != t.var.name) {
      throw std::invalid_argument("constraint '" + label +
                                  "' references an undeclared variable '" +
                                  t.var.name + "'");
    }
    if (InnerRows(t) != t.left.cols() || InnerCols(t) != t.right.rows()) {
      throw std::invalid_argument("constraint '" + label +
                                  "': malformed term for '" + t.var.name + "'");
    }
  }
  LmiConstraint c;
  c.expr = expr;
  c.strictness = strictness;
  c.label = label;
  c.margin = strictness == Strictness::kStrict
                 ? (margin < 0.0 ? DefaultMargin(expr) : margin)
                 : 0.0;
  cons_.push_back(c);
  return static_cast<int>(cons_.size()) - 1;
}

void LmiProblem::Minimize(const std::vector<ObjectiveTerm>& terms, double offset) {
  for (const auto& t : terms) {
    if (t.weight.rows() != t.var.rows || t.weight.cols() != t.var.cols) {
      throw std::invalid_argument("objective weight for '" + t.var.name +
                                  "' has the wrong shape");
    }
  }
  objective_ = terms;
  offset_ = offset;
  logdet_.reset();
}

void LmiProblem::MaximizeLogdet(const VarRef& var) {
  if (var.kind != VarKind::kSymmetric) {
    throw std::invalid_argument("MaximizeLogdet needs a symmetric variable");
  }
  objective_.clear();
  offset_ = 0.0;
  logdet_ = var;
}

void LmiProblem::ClearObjective() {
  objective_.clear();
  offset_ = 0.0;
  logdet_.reset();
}

int LmiProblem::num_coords() const {
  int n = 0;
  for (const auto& v : vars_) n += v.coords();
  return n;
}

double LmiProblem::ObjectiveValue(const Assignment& values) const {
  if (logdet_) return LogDetPd(values.at(logdet_->id));
  double s = offset_;
  for (const auto& t : objective_) s += t.weight.cwiseProduct(values.at(t.var.id)).sum();
  return s;
}

namespace {

nlohmann::json MatJson(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

const char* KindName(VarKind k) {
  switch (k) {
    case VarKind::kSymmetric:
      return "symmetric";
    case VarKind::kMatrix:
      return "matrix";
    case VarKind::kScalar:
      return "scalar";
  }
  return "?";
}

}  // namespace

nlohmann::json LmiProblem::ToJson() const {
  nlohmann::json j;
  j["variables"] = nlohmann::json::array();
  for (const auto& v : vars_) {
    j["variables"].push_back(
        {{"id", v.id}, {"name", v.name}, {"kind", KindName(v.kind)}, {"rows", v.rows}, {"cols", v.cols}});
  }
  j["constraints"] = nlohmann::json::array();
  for (const auto& c : cons_) {
    nlohmann::json cj;
    cj["label"] = c.label;
    cj["dim"] = c.expr.dim();
    cj["blocks"] = c.expr.block_sizes();
    cj["strict"] = c.strictness == Strictness::kStrict;
    cj["margin"] = c.margin;
    cj["constant"] = MatJson(Sym(c.expr.raw().constant()));
    cj["terms"] = nlohmann::json::array();
    for (const auto& t : c.expr.raw().terms()) {
      cj["terms"].push_back({{"var", t.var.name},
                             {"transpose", t.transpose},
                             {"left", MatJson(t.left)},
                             {"right", MatJson(t.right)}});
    }
    j["constraints"].push_back(cj);
  }
  if (logdet_) {
    j["objective"] = {{"maximize_logdet", logdet_->name}};
  } else if (!objective_.empty()) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : objective_) {
      terms.push_back({{"var", t.var.name}, {"weight", MatJson(t.weight)}});
    }
    j["objective"] = {{"minimize", terms}, {"offset", offset_}};
  }
  return j;
}

std::string ResidualReport::ToString() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.passed ? "  ok   " : "  FAIL ") << e.label << ": max eig " << e.max_eig;
    if (e.strict) os << " (margin " << e.margin << ")";
    os << "\n";
  }
  return os.str();
}

ResidualReport CheckSolution(const LmiProblem& problem, const Assignment& values,
                             double tol) {
  ResidualReport rep;
  rep.worst = -std::numeric_limits<double>::infinity();
  for (const auto& c : problem.constraints()) {
    ResidualEntry e;
    e.label = c.label;
    e.strict = c.strictness == Strictness::kStrict;
    e.margin = c.margin;
    const Mat v = Evaluate(c.expr, values).mat();
    e.max_eig = MaxEig(v);
    const double scale = std::max(1.0, Norm2(Sym(c.expr.raw().constant())));
    const double excess = e.max_eig + (e.strict ? e.margin : 0.0);
    e.passed = std::isfinite(e.max_eig) && excess <= tol * scale;
    rep.worst = std::max(rep.worst, excess);
    rep.ok = rep.ok && e.passed;
    rep.entries.push_back(e);
  }
  if (problem.constraints().empty()) rep.worst = 0.0;
  return rep;
}

const char* ToString(SolveStatus s) {
  switch (s) {
    case SolveStatus::kFeasible:
      return "feasible";
    case SolveStatus::kInfeasible:
      return "infeasible";
    case SolveStatus::kUnknown:
      return "unknown";
  }
  return "?";
}

const Mat& SolveOutcome::value(const VarRef& v) const {
  auto it = values.find(v.id);
  if (it == values.end()) {
    throw std::out_of_range("SolveOutcome: no value for '" + v.name + "'");
  }
  return it->second;
}

namespace {

// Linear map from the coordinate vector to variable values and back.
struct CoordMap {
  std::vector<int> offset;
  int total = 0;

  explicit CoordMap(const LmiProblem& p) {
    for (const auto& v : p.variables()) {
      offset.push_back(total);
      total += v.coords();
    }
  }

  Assignment ToValues(const LmiProblem& p, const Vec& x) const {
    Assignment a;
    for (const auto& v : p.variables()) {
      Mat m(v.rows, v.cols);
      int k = offset[v.id];
      switch (v.kind) {
        case VarKind::kScalar:
          m(0, 0) = x(k);
          break;
        case VarKind::kMatrix:
          for (int c = 0; c < v.cols; ++c)
            for (int r = 0; r < v.rows; ++r) m(r, c) = x(k++);
          break;
        case VarKind::kSymmetric:
          for (int c = 0; c < v.rows; ++c)
            for (int r = 0; r <= c; ++r) {
              m(r, c) = x(k);
              m(c, r) = x(k++);
            }
          break;
      }
      a[v.id] = m;
    }
    return a;
  }

  Vec FromValues(const LmiProblem& p, const Assignment& a) const {
    Vec x = Vec::Zero(total);
    for (const auto& v : p.variables()) {
      auto it = a.find(v.id);
      if (it == a.end()) continue;
      const Mat& m = it->second;
      int k = offset[v.id];
      switch (v.kind) {
        case VarKind::kScalar:
          x(k) = m(0, 0);
          break;
        case VarKind::kMatrix:
          for (int c = 0; c < v.cols; ++c)
            for (int r = 0; r < v.rows; ++r) x(k++) = m(r, c);
          break;
        case VarKind::kSymmetric:
          for (int c = 0; c < v.rows; ++c)
            for (int r = 0; r <= c; ++r) x(k++) = 0.5 * (m(r, c) + m(c, r));
          break;
      }
    }
    return x;
  }
};

// Sym-part coefficient matrices of one term for every coordinate of its
// variable, accumulated into `out` (indexed by global coordinate).
void AccumulateTerm(const MatTerm& t, int offset, std::vector<Mat>* out, int dim) {
  auto add = [&](int k, const Mat& m) {
    Mat& dst = (*out)[k];
    if (dst.size() == 0) dst = Mat::Zero(dim, dim);
    dst += m;
  };
  switch (t.var.kind) {
    case VarKind::kScalar:
      add(offset, t.left * t.right);
      break;
    case VarKind::kMatrix: {
      int k = offset;
      for (int c = 0; c < t.var.cols; ++c) {
        for (int r = 0; r < t.var.rows; ++r) {
          // V = E_rc, Vᵀ = E_cr
          const int a = t.transpose ? c : r, b = t.transpose ? r : c;
          add(k++, t.left.col(a) * t.right.row(b));
        }
      }
      break;
    }
    case VarKind::kSymmetric: {
      int k = offset;
      for (int c = 0; c < t.var.rows; ++c) {
        for (int r = 0; r <= c; ++r) {
          Mat m = t.left.col(r) * t.right.row(c);
          if (r != c) m += t.left.col(c) * t.right.row(r);
          add(k++, m);
        }
      }
      break;
    }
  }
}

struct CompiledBlock {
  int constraint = -1;
  Mat f0;                                   // Sym constant, kept rows only
  std::vector<std::pair<int, Mat>> coeffs;  // Sym coefficients
  double margin = 0.0;
  double scale = 1.0;
};

struct ConstantCheck {
  int constraint = -1;
  double max_eig = 0.0;
  std::vector<int> var_rows;
};

struct Compiled {
  std::vector<CompiledBlock> blocks;
  std::vector<ConstantCheck> constants;
  std::vector<double> objective;  // per coordinate
  int n = 0;
};

Compiled Compile(const LmiProblem& p, const CoordMap& cm) {
  Compiled out;
  out.n = cm.total;
  for (size_t ci = 0; ci < p.constraints().size(); ++ci) {
    const auto& c = p.constraints()[ci];
    const int dim = c.expr.dim();
    if (dim == 0) continue;
    std::vector<Mat> f(cm.total);
    for (const auto& t : c.expr.raw().terms()) {
      AccumulateTerm(t, cm.offset[t.var.id], &f, dim);
    }
    const Mat f0 = Sym(c.expr.raw().constant());
    std::vector<std::pair<int, Mat>> coeffs;
    double data_norm = f0.norm();
    for (int k = 0; k < cm.total; ++k) {
      if (f[k].size() == 0) continue;
      Mat s = Sym(f[k]);
      if (s.cwiseAbs().maxCoeff() == 0.0) continue;
      data_norm = std::max(data_norm, s.norm());
      coeffs.emplace_back(k, std::move(s));
    }
    // Rows untouched by every variable form a constant sub-block; when it
    // does not couple to the rest it is checked directly and dropped.
    const double zero_tol = 1e-14 * std::max(1.0, data_norm);
    std::vector<int> var_rows, const_rows;
    for (int r = 0; r < dim; ++r) {
      bool touched = false;
      for (const auto& [k, m] : coeffs) {
        if (m.row(r).cwiseAbs().maxCoeff() > zero_tol) {
          touched = true;
          break;
        }
      }
      (touched ? var_rows : const_rows).push_back(r);
    }
    bool decoupled = !const_rows.empty();
    for (int r : const_rows) {
      for (int s : var_rows) {
        if (std::abs(f0(r, s)) > zero_tol) decoupled = false;
      }
    }
    std::vector<int> keep;
    if (decoupled) {
      Mat cc(const_rows.size(), const_rows.size());
      for (size_t a = 0; a < const_rows.size(); ++a)
        for (size_t b = 0; b < const_rows.size(); ++b)
          cc(a, b) = f0(const_rows[a], const_rows[b]);
      out.constants.push_back({static_cast<int>(ci), MaxEig(cc), var_rows});
      keep = var_rows;
    } else {
      keep.resize(dim);
      for (int r = 0; r < dim; ++r) keep[r] = r;
    }
    if (keep.empty()) continue;
    auto restrict = [&](const Mat& m) {
      Mat o(keep.size(), keep.size());
      for (size_t a = 0; a < keep.size(); ++a)
        for (size_t b = 0; b < keep.size(); ++b) o(a, b) = m(keep[a], keep[b]);
      return o;
    };
    CompiledBlock blk;
    blk.constraint = static_cast<int>(ci);
    blk.f0 = restrict(f0);
    for (const auto& [k, m] : coeffs) blk.coeffs.emplace_back(k, restrict(m));
    blk.margin = c.margin;
    double nrm = 0.0;
    for (const auto& [k, m] : blk.coeffs) nrm = std::max(nrm, m.norm());
    blk.scale = nrm > 0.0 ? 1.0 / nrm : 1.0 / std::max(1.0, blk.f0.norm());
    out.blocks.push_back(std::move(blk));
  }
  out.objective.assign(cm.total, 0.0);
  for (const auto& t : p.objective()) {
    const auto& v = t.var;
    int k = cm.offset[v.id];
    switch (v.kind) {
      case VarKind::kScalar:
        out.objective[k] += t.weight(0, 0);
        break;
      case VarKind::kMatrix:
        for (int c = 0; c < v.cols; ++c)
          for (int r = 0; r < v.rows; ++r) out.objective[k++] += t.weight(r, c);
        break;
      case VarKind::kSymmetric:
        for (int c = 0; c < v.rows; ++c)
          for (int r = 0; r <= c; ++r) {
            out.objective[k++] += r == c ? t.weight(r, c) : t.weight(r, c) + t.weight(c, r);
          }
        break;
    }
  }
  return out;
}

// Dual-form SDP for  -s(F0 + Σ x F_i + m I) - [with_slack] t I ⪰ 0 plus the box
// |x_i| <= box and, with slack, t <= cap.
internal::SdpProblem BuildSdp(const Compiled& c, bool with_slack, double box,
                              double cap) {
  internal::SdpProblem sdp;
  const int n = c.n;
  sdp.m = n + (with_slack ? 1 : 0);
  for (const auto& blk : c.blocks) {
    internal::SdpBlock b;
    const int d = static_cast<int>(blk.f0.rows());
    b.C = -blk.scale * (blk.f0 + blk.margin * Mat::Identity(d, d));
    for (const auto& [k, m] : blk.coeffs) b.A.emplace_back(k, blk.scale * m);
    if (with_slack) b.A.emplace_back(n, Mat::Identity(d, d));
    sdp.blocks.push_back(std::move(b));
  }
  internal::SdpBlock lp;
  lp.diagonal = true;
  const int rows = 2 * n + (with_slack ? 1 : 0);
  lp.C = Mat::Constant(rows, 1, box);
  for (int k = 0; k < n; ++k) {
    Mat a = Mat::Zero(rows, 1);
    a(k, 0) = 1.0;
    a(n + k, 0) = -1.0;
    lp.A.emplace_back(k, a);
  }
  if (with_slack) {
    lp.C(2 * n, 0) = cap;
    Mat a = Mat::Zero(rows, 1);
    a(2 * n, 0) = 1.0;
    lp.A.emplace_back(n, a);
  }
  if (rows > 0) sdp.blocks.push_back(std::move(lp));
  sdp.b = Vec::Zero(sdp.m);
  return sdp;
}

bool BoxActive(const Vec& x, int n, double box) {
  for (int k = 0; k < n; ++k) {
    if (std::abs(x(k)) > 0.99 * box) return true;
  }
  return false;
}

struct PhaseOne {
  Vec x;
  double slack = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string note;
};

PhaseOne RunPhaseOne(const Compiled& c, const SolveOptions& opts, const Vec* warm) {
  const int n = c.n;
  internal::SdpProblem sdp = BuildSdp(c, true, opts.box, opts.slack_cap);
  sdp.b(n) = 1.0;
  Vec y0 = Vec::Zero(n + 1);
  if (warm) y0.head(n) = warm->cwiseMax(-0.5 * opts.box).cwiseMin(0.5 * opts.box);
  double tmin = opts.slack_cap;
  Vec yx = y0;
  yx(n) = 0.0;
  for (const auto& blk : sdp.blocks) {
    if (!blk.diagonal) tmin = std::min(tmin, MinEig(internal::DualSlack(blk, yx)));
  }
  y0(n) = tmin - 1.0;
  internal::SdpSettings s;
  s.max_iter = opts.max_iter;
  s.tol = opts.tol;
  if (opts.stop_at_feasible) {
    s.stop = [n](const Vec& y) { return y(n) > 0.25; };
  }
  const internal::SdpResult r = internal::SolveDualForm(sdp, y0, s);
  PhaseOne out;
  out.x = r.y.head(n);
  out.slack = r.y(n);
  out.converged = r.converged;
  out.iterations = r.iterations;
  out.note = r.note;
  return out;
}

}  // namespace

SolveOutcome InteriorPointBackend::Solve(const LmiProblem& problem,
                                         const SolveOptions& opts) const {
  if (problem.logdet_var()) {
    return MinimizeLogdetIterative(problem, *problem.logdet_var(), 40, opts).outcome;
  }
  const CoordMap cm(problem);
  const Compiled c = Compile(problem, cm);
  SolveOutcome out;

  for (const auto& cc : c.constants) {
    const auto& con = problem.constraints()[cc.constraint];
    const double scale = std::max(1.0, Norm2(Sym(con.expr.raw().constant())));
    if (cc.max_eig > opts.audit_tol * scale) {
      out.status = SolveStatus::kInfeasible;
      std::ostringstream os;
      os << "constant part of '" << con.label << "' has max eigenvalue "
         << cc.max_eig << " > 0 independent of the variables";
      out.diagnostic = os.str();
      out.values = cm.ToValues(problem, Vec::Zero(cm.total));
      out.residuals = CheckSolution(problem, out.values, opts.audit_tol);
      return out;
    }
  }

  auto audit = [&](const Vec& xv) {
    Assignment a = cm.ToValues(problem, xv);
    ResidualReport rep = CheckSolution(problem, a, opts.audit_tol);
    // A strict constraint with a decoupled constant part: the margin applies
    // to the variable rows only, the constant rows are checked non-strictly.
    for (const auto& cc : c.constants) {
      auto& e = rep.entries[cc.constraint];
      const auto& con = problem.constraints()[cc.constraint];
      if (e.passed || !e.strict) continue;
      const double scale = std::max(1.0, Norm2(Sym(con.expr.raw().constant())));
      const Mat full = Evaluate(con.expr, a).mat();
      double var_eig = -std::numeric_limits<double>::infinity();
      if (!cc.var_rows.empty()) {
        Mat sub(cc.var_rows.size(), cc.var_rows.size());
        for (size_t i = 0; i < cc.var_rows.size(); ++i)
          for (size_t j = 0; j < cc.var_rows.size(); ++j)
            sub(i, j) = full(cc.var_rows[i], cc.var_rows[j]);
        var_eig = MaxEig(sub);
      }
      e.passed = var_eig + e.margin <= opts.audit_tol * scale &&
                 cc.max_eig <= opts.audit_tol * scale;
    }
    rep.ok = std::all_of(rep.entries.begin(), rep.entries.end(),
                         [](const ResidualEntry& e) { return e.passed; });
    return std::make_pair(a, rep);
  };

  // Phase one over growing boxes: the analytic center drifts toward the box
  // scale, so a small box first keeps certificates moderately sized.
  std::vector<double> boxes;
  for (double bx : {1e3, 1e5}) {
    if (bx < opts.box) boxes.push_back(bx);
  }
  boxes.push_back(opts.box);

  PhaseOne p1;
  Vec x;
  Assignment values;
  ResidualReport rep;
  bool box_active = false;
  for (double bx : boxes) {
    SolveOptions o = opts;
    o.box = bx;
    p1 = RunPhaseOne(c, o, nullptr);
    out.iterations += p1.iterations;
    x = p1.x;
    std::tie(values, rep) = audit(x);
    box_active = BoxActive(x, c.n, bx);
    if (rep.ok) break;
    if (p1.converged && p1.slack < -1e-7 && !box_active) break;
  }
  out.slack = p1.slack;

  if (!rep.ok) {
    out.values = values;
    out.residuals = rep;
    if (p1.converged && p1.slack < -1e-7 && !box_active) {
      out.status = SolveStatus::kInfeasible;
      std::ostringstream os;
      os << "optimal common slack " << p1.slack << " < 0";
      out.diagnostic = os.str();
    } else {
      out.status = SolveStatus::kUnknown;
      std::ostringstream os;
      os << "no certificate: slack " << p1.slack
         << (p1.converged ? "" : " (not converged: " + p1.note + ")")
         << (box_active ? ", variable box active (unbounded or box-limited)" : "");
      out.diagnostic = os.str();
    }
    return out;
  }

  if (problem.has_linear_objective()) {
    internal::SdpProblem sdp = BuildSdp(c, false, opts.box, 0.0);
    for (int k = 0; k < c.n; ++k) sdp.b(k) = -c.objective[k];
    // Start from the phase-one point; if its slack is not positive, relax
    // the blocks by a hair so the start is interior.
    if (p1.slack <= 0.0) {
      const double relax = -p1.slack + 1e-12;
      for (auto& b : sdp.blocks) {
        if (!b.diagonal) b.C += relax * Mat::Identity(b.dim(), b.dim());
      }
    }
    internal::SdpSettings s;
    s.max_iter = opts.max_iter;
    s.tol = opts.tol;
    const internal::SdpResult r = internal::SolveDualForm(sdp, x, s);
    out.iterations += r.iterations;
    const Vec x2 = r.y;
    auto [v2, rep2] = audit(x2);
    if (rep2.ok) {
      x = x2;
      values = v2;
      rep = rep2;
    }
    if (BoxActive(x2, c.n, opts.box)) {
      out.status = SolveStatus::kUnknown;
      out.diagnostic = "objective unbounded below (variable box active)";
      out.values = values;
      out.residuals = rep;
      out.objective = problem.ObjectiveValue(values);
      return out;
    }
    if (!r.converged) out.diagnostic = "objective phase: " + r.note;
  }
  out.status = SolveStatus::kFeasible;
  out.values = values;
  out.residuals = rep;
  out.objective = problem.ObjectiveValue(values);
  return out;
}

SolveOutcome Solve(const LmiProblem& problem, const SolveOptions& opts) {
  return InteriorPointBackend().Solve(problem, opts);
}

LogdetOutcome MinimizeLogdetIterative(const LmiProblem& problem, const VarRef& var,
                                      int rounds, const SolveOptions& opts) {
  if (var.kind != VarKind::kSymmetric) {
    throw std::invalid_argument("MinimizeLogdetIterative: '" + var.name +
                                "' is not symmetric");
  }
  LmiProblem base = problem;
  base.ClearObjective();
  LogdetOutcome res;
  SolveOutcome cur = Solve(base, opts);
  if (!cur.feasible()) {
    res.outcome = cur;
    return res;
  }
  auto logdet = [](const Mat& m) {
    Eigen::LLT<Mat> llt(m);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    return LogDetPd(m);
  };
  double ld = logdet(cur.value(var));
  if (!std::isfinite(ld)) {
    cur.status = SolveStatus::kUnknown;
    cur.diagnostic = "initial point has a singular '" + var.name + "'";
    res.outcome = cur;
    return res;
  }
  res.history.push_back(ld);
  for (int round = 0; round < rounds; ++round) {
    const Mat xk = cur.value(var);
    LmiProblem lin = base;
    lin.Minimize({{var, -InversePd(xk)}});
    const SolveOutcome hat = Solve(lin, opts);
    if (!hat.feasible()) break;
    const Mat d = hat.value(var) - xk;
    const Mat ris = InvSqrtPd(xk);
    const Vec lam = Eigenvalues(Sym(ris * d * ris));
    const double fw_gap = lam.sum();
    if (fw_gap < 1e-9) break;
    auto dfds = [&](double s) {
      double v = 0.0;
      for (int i = 0; i < lam.size(); ++i) v += lam(i) / (1.0 + s * lam(i));
      return v;
    };
    double step = 1.0;
    if (dfds(1.0) < 0.0) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (dfds(mid) > 0.0 ? lo : hi) = mid;
      }
      step = lo;
    }
    SolveOutcome next = cur;
    for (auto& [id, v] : next.values) v = v + step * (hat.values.at(id) - v);
    const double ld_next = logdet(next.value(var));
    if (!(ld_next >= ld)) break;
    next.residuals = CheckSolution(base, next.values, opts.audit_tol);
    if (!next.residuals.ok) break;
    cur = next;
    ld = ld_next;
    res.history.push_back(ld);
    if (step * fw_gap < 1e-8) break;
  }
  cur.objective = ld;
  res.outcome = cur;
  return res;
}

}  // namespace safeguard
