#include "safeguard/sysmodel.h"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace safeguard {

namespace {

std::string Shape(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void Expect(std::vector<std::string>* issues, const std::string& a,
            const Mat& ma, const std::string& b, const Mat& mb,
            Eigen::Index got, Eigen::Index want, const char* what) {
  if (got == want) return;
  std::ostringstream os;
  os << a << " (" << Shape(ma) << ") and " << b << " (" << Shape(mb)
     << ") disagree on " << what << ": " << got << " vs " << want;
  issues->push_back(os.str());
}

double Halton(int index, int base) {
  double f = 1.0, r = 0.0;
  int i = index;
  while (i > 0) {
    f /= base;
    r += f * (i % base);
    i /= base;
  }
  return r;
}

constexpr int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31,
                           37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79};

}  // namespace

Mat SecondaryController::AsBlock() const {
  return Block({{A2, B2}, {C2, D2}});
}

SecondaryController SecondaryController::FromBlock(const Mat& k, int n2) {
  if (n2 < 0 || n2 > k.rows() || n2 > k.cols()) {
    throw std::invalid_argument("SecondaryController::FromBlock: bad order");
  }
  const Eigen::Index ne = k.rows() - n2, nc = k.cols() - n2;
  SecondaryController s;
  s.A2 = k.topLeftCorner(n2, n2);
  s.B2 = k.topRightCorner(n2, nc);
  s.C2 = k.bottomLeftCorner(ne, n2);
  s.D2 = k.bottomRightCorner(ne, nc);
  return s;
}

SecondaryController SecondaryController::Zero(int n2, int n_c, int n_e) {
  SecondaryController s;
  s.A2 = Mat::Zero(n2, n2);
  s.B2 = Mat::Zero(n2, n_c);
  s.C2 = Mat::Zero(n_e, n2);
  s.D2 = Mat::Zero(n_e, n_c);
  return s;
}

Mat AttackModel::ChannelMatrix(int n_uy) const {
  if (channels.size() == 0 && channels.cols() == 0) {
    return Mat::Identity(n_uy, n_uy);
  }
  return channels;
}

Mat AttackModel::Qcal() const {
  return Sym(Q2 * InversePd(Q3.mat()) * Q2.transpose() - Q1.mat());
}

std::vector<std::string> DimensionIssues(const Plant& p,
                                         const PrimaryController& c) {
  std::vector<std::string> is;
  const Eigen::Index np = p.A.rows();
  if (p.A.cols() != np) is.push_back("plant.A is not square (" + Shape(p.A) + ")");
  Expect(&is, "plant.G", p.G, "plant.A", p.A, p.G.rows(), np, "state dimension");
  Expect(&is, "plant.H", p.H, "plant.A", p.A, p.H.cols(), np, "state dimension");
  Expect(&is, "plant.B", p.B, "plant.A", p.A, p.B.rows(), np, "state dimension");
  Expect(&is, "plant.C", p.C, "plant.A", p.A, p.C.cols(), np, "state dimension");
  const Eigen::Index nu = p.B.cols(), ny = p.C.rows();
  const Eigen::Index n1 = c.A.rows();
  if (c.A.cols() != n1) {
    is.push_back("primary.A is not square (" + Shape(c.A) + ")");
  }
  Expect(&is, "primary.G", c.G, "primary.A", c.A, c.G.rows(), n1, "controller state dimension");
  Expect(&is, "primary.H", c.H, "primary.A", c.A, c.H.cols(), n1, "controller state dimension");
  Expect(&is, "primary.B", c.B, "primary.A", c.A, c.B.rows(), n1, "controller state dimension");
  Expect(&is, "primary.B", c.B, "plant.C", p.C, c.B.cols(), ny, "output dimension");
  Expect(&is, "primary.C", c.C, "primary.A", c.A, c.C.cols(), n1, "controller state dimension");
  Expect(&is, "primary.C", c.C, "plant.B", p.B, c.C.rows(), nu, "input dimension");
  Expect(&is, "primary.D", c.D, "plant.B", p.B, c.D.rows(), nu, "input dimension");
  Expect(&is, "primary.D", c.D, "plant.C", p.C, c.D.cols(), ny, "output dimension");
  return is;
}

std::vector<std::string> DimensionIssues(const SystemBundle& b) {
  std::vector<std::string> is = DimensionIssues(b.plant, b.primary);
  const auto& p = b.plant;
  const auto& c = b.primary;
  const Eigen::Index n = p.A.rows() + c.A.rows();
  const Eigen::Index nu = p.B.cols(), ny = p.C.rows();
  const Eigen::Index q = p.G.cols() + c.G.cols(), h = p.H.rows() + c.H.rows();
  const auto& s = b.selection;
  Expect(&is, "selection.Cs", s.Cs, "plant.C", p.C, s.Cs.cols(), ny, "output dimension");
  Expect(&is, "selection.Eu", s.Eu, "plant.B", p.B, s.Eu.rows(), nu, "input dimension");
  const auto& sb = b.sector;
  Expect(&is, "sector.S1", sb.S1, "plant.G/primary.G", p.G, sb.S1.rows(), q, "nonlinearity output dimension");
  Expect(&is, "sector.S1", sb.S1, "plant.H/primary.H", p.H, sb.S1.cols(), h, "nonlinearity input dimension");
  Expect(&is, "sector.S2", sb.S2, "sector.S1", sb.S1, sb.S2.rows(), sb.S1.rows(), "rows");
  Expect(&is, "sector.S2", sb.S2, "sector.S1", sb.S1, sb.S2.cols(), sb.S1.cols(), "columns");
  Expect(&is, "sector.V", sb.V.mat(), "plant.G/primary.G", p.G, sb.V.dim(), q, "nonlinearity output dimension");
  const auto& am = b.attack;
  const Mat ea = am.ChannelMatrix(static_cast<int>(nu + ny));
  Expect(&is, "attack.channels", ea, "plant.B/plant.C", p.B, ea.rows(), nu + ny, "attack dimension nu+ny");
  Expect(&is, "attack.Q3", am.Q3.mat(), "attack.channels", ea, am.Q3.dim(), ea.cols(), "attack channel count");
  Expect(&is, "attack.Q1", am.Q1.mat(), "plant.A/primary.A", p.A, am.Q1.dim(), n, "state dimension np+n1");
  Expect(&is, "attack.Q2", am.Q2, "plant.A/primary.A", p.A, am.Q2.rows(), n, "state dimension np+n1");
  Expect(&is, "attack.Q2", am.Q2, "attack.Q3", am.Q3.mat(), am.Q2.cols(), am.Q3.dim(), "attack channel count");
  Expect(&is, "safe.Xi", b.safe.Xi.mat(), "plant.A/primary.A", p.A, b.safe.Xi.dim(), n, "state dimension np+n1");
  return is;
}

Dims SystemBundle::dims() const {
  const auto issues = DimensionIssues(*this);
  if (!issues.empty()) {
    std::ostringstream os;
    os << "inconsistent model dimensions:";
    for (const auto& s : issues) os << "\n  " << s;
    throw std::invalid_argument(os.str());
  }
  Dims d;
  d.np = static_cast<int>(plant.A.rows());
  d.nu = static_cast<int>(plant.B.cols());
  d.ny = static_cast<int>(plant.C.rows());
  d.qp = static_cast<int>(plant.G.cols());
  d.hp = static_cast<int>(plant.H.rows());
  d.n1 = static_cast<int>(primary.A.rows());
  d.q1 = static_cast<int>(primary.G.cols());
  d.h1 = static_cast<int>(primary.H.rows());
  d.nc = static_cast<int>(selection.Cs.rows());
  d.ne = static_cast<int>(selection.Eu.cols());
  d.na = attack.Q3.dim();
  return d;
}

PrimaryLoop AssemblePrimaryLoop(const Plant& p, const PrimaryController& c) {
  const auto issues = DimensionIssues(p, c);
  if (!issues.empty()) throw std::invalid_argument(issues.front());
  const Eigen::Index n1 = c.A.rows(), nu = p.B.cols();
  PrimaryLoop l;
  l.A1cal = Block({{p.A + p.B * c.D * p.C, p.B * c.C}, {c.B * p.C, c.A}});
  l.G = BlockDiag({p.G, c.G});
  l.H = BlockDiag({p.H, c.H});
  l.B1cal = Block({{p.B, p.B * c.D}, {Mat::Zero(n1, nu), c.B}});
  return l;
}

PrimaryLoop AssemblePrimaryLoop(const SystemBundle& b) {
  const Dims d = b.dims();
  PrimaryLoop l = AssemblePrimaryLoop(b.plant, b.primary);
  l.B1cal = l.B1cal * b.attack.ChannelMatrix(d.nu + d.ny);
  return l;
}

HatMatrices ComputeHatMatrices(const Plant& p, const PrimaryController& c,
                               const Selection& s) {
  const auto issues = DimensionIssues(p, c);
  if (!issues.empty()) throw std::invalid_argument(issues.front());
  if (s.Cs.cols() != p.C.rows() || s.Eu.rows() != p.B.cols()) {
    throw std::invalid_argument("selection matrices do not conform to plant.B/plant.C");
  }
  const Eigen::Index n1 = c.A.rows();
  HatMatrices hm;
  hm.Ahat = Block({{p.A + p.B * c.D * p.C, p.B * c.C}, {c.B * p.C, c.A}});
  hm.Bhat = Block({{p.B * s.Eu}, {Mat::Zero(n1, s.Eu.cols())}});
  hm.Chat = Block({{s.Cs * p.C, Mat::Zero(s.Cs.rows(), n1)}});
  return hm;
}

LoopFactorization Factorize(const HatMatrices& hm, int n2) {
  const Eigen::Index n = hm.Ahat.rows();
  const Eigen::Index ne = hm.Bhat.cols(), nc = hm.Chat.rows();
  LoopFactorization f;
  f.At = BlockDiag({hm.Ahat, Mat::Zero(n2, n2)});
  f.Bt = Block({{Mat::Zero(n, n2), hm.Bhat}, {Mat::Identity(n2, n2), Mat::Zero(n2, ne)}});
  f.Ct = Block({{Mat::Zero(n2, n), Mat::Identity(n2, n2)}, {hm.Chat, Mat::Zero(nc, n2)}});
  return f;
}

ClosedLoop AssembleClosedLoop(const Plant& p, const PrimaryController& c,
                              const SecondaryController& k,
                              const Selection& s) {
  const HatMatrices hm = ComputeHatMatrices(p, c, s);
  const Eigen::Index np = p.A.rows(), n1 = c.A.rows(), n2 = k.A2.rows();
  const Eigen::Index nc = s.Cs.rows(), ne = s.Eu.cols();
  if (k.A2.cols() != n2 || k.B2.rows() != n2 || k.B2.cols() != nc ||
      k.C2.rows() != ne || k.C2.cols() != n2 || k.D2.rows() != ne ||
      k.D2.cols() != nc) {
    std::ostringstream os;
    os << "secondary controller blocks A2 " << Shape(k.A2) << ", B2 "
       << Shape(k.B2) << ", C2 " << Shape(k.C2) << ", D2 " << Shape(k.D2)
       << " do not conform to selection.Cs " << Shape(s.Cs)
       << " and selection.Eu " << Shape(s.Eu);
    throw std::invalid_argument(os.str());
  }
  const PrimaryLoop pl = AssemblePrimaryLoop(p, c);
  ClosedLoop cl;
  cl.np = static_cast<int>(np);
  cl.n1 = static_cast<int>(n1);
  cl.n2 = static_cast<int>(n2);
  cl.Acal = Block({{hm.Ahat + hm.Bhat * k.D2 * hm.Chat, hm.Bhat * k.C2},
                   {k.B2 * hm.Chat, k.A2}});
  cl.Bcal = Block({{pl.B1cal}, {Mat::Zero(n2, pl.B1cal.cols())}});
  cl.Gcal = Block({{pl.G}, {Mat::Zero(n2, pl.G.cols())}});
  cl.Hcal = Block({{pl.H, Mat::Zero(pl.H.rows(), n2)}});
  cl.Ccal = Block({{k.D2 * hm.Chat, k.C2}});
  return cl;
}

ClosedLoop AssembleClosedLoop(const SystemBundle& b,
                              const SecondaryController& k) {
  const Dims d = b.dims();
  ClosedLoop cl = AssembleClosedLoop(b.plant, b.primary, k, b.selection);
  cl.Bcal = cl.Bcal * b.attack.ChannelMatrix(d.nu + d.ny);
  return cl;
}

bool ValidationReport::ok() const {
  return std::all_of(items.begin(), items.end(),
                     [](const ValidationItem& i) { return i.passed; });
}

std::string ValidationReport::ToString() const {
  std::ostringstream os;
  for (const auto& i : items) {
    os << (i.passed ? "[pass] " : "[FAIL] ") << i.name;
    if (!i.message.empty()) os << ": " << i.message;
    os << "\n";
  }
  return os.str();
}

ValidationReport ValidateAttackModel(const AttackModel& am) {
  ValidationReport r;
  ValidationItem q3{"Q3 positive definite", false, MinEig(am.Q3), ""};
  q3.passed = am.Q3.dim() > 0 && q3.value > 0.0;
  std::ostringstream m3;
  m3 << "min eig " << q3.value;
  q3.message = q3.passed ? m3.str() : "Q3 not positive definite (" + m3.str() + ")";
  r.items.push_back(q3);

  ValidationItem qc{"Qcal positive semidefinite", false, 0.0, ""};
  if (q3.passed) {
    const Mat qcal = am.Qcal();
    qc.value = MinEig(qcal);
    const double scale = std::max(1.0, qcal.size() ? qcal.cwiseAbs().maxCoeff() : 0.0);
    qc.passed = qc.value >= -1e-10 * scale;
    std::ostringstream os;
    os << "min eig of Q2 Q3^-1 Q2' - Q1 is " << qc.value;
    qc.message = os.str();
  } else {
    qc.message = "skipped: requires Q3 positive definite";
  }
  r.items.push_back(qc);
  return r;
}

bool IsKnownNonlinearity(const std::string& name) {
  return name == "zero" || name == "identity" || name == "sin" ||
         name == "tanh" || name == "sat" || name == "cube";
}

NonlinearityFn MakeNonlinearity(const std::string& name) {
  if (name == "zero") return [](const Vec& x) { return Vec::Zero(x.size()); };
  if (name == "identity") return [](const Vec& x) { return x; };
  if (name == "sin") return [](const Vec& x) { return Vec(x.array().sin()); };
  if (name == "tanh") return [](const Vec& x) { return Vec(x.array().tanh()); };
  if (name == "sat") {
    return [](const Vec& x) { return Vec(x.array().max(-1.0).min(1.0)); };
  }
  if (name == "cube") return [](const Vec& x) { return Vec(x.array().cube()); };
  throw std::invalid_argument("unknown nonlinearity '" + name + "'");
}

SectorReport ValidateSector(const SectorBound& sb, const NonlinearityFn& phi,
                            const Mat& H, int samples, double radius) {
  if (samples < 1) throw std::invalid_argument("ValidateSector: samples < 1");
  if (!(radius > 0.0)) throw std::invalid_argument("ValidateSector: radius <= 0");
  const int n = static_cast<int>(H.cols());
  if (n > static_cast<int>(std::size(kPrimes))) {
    throw std::invalid_argument("ValidateSector: dimension too large for Halton");
  }
  SectorReport rep;
  rep.max_violation = -std::numeric_limits<double>::infinity();
  const Mat& V = sb.V.mat();
  int accepted = 0;
  // Halton points in the cube, rejected outside the ball, plus the two axis
  // extremes along each coordinate so the boundary is always probed.
  auto eval = [&](const Vec& z) {
    const Vec hz = H * z;
    const Vec f = phi(hz);
    const double v = (f - sb.S1 * hz).dot(V * (f - sb.S2 * hz));
    if (v > rep.max_violation) {
      rep.max_violation = v;
      rep.worst_point = z;
    }
  };
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e(i) = radius;
    eval(e);
    eval(-e);
  }
  for (int idx = 1; accepted < samples && idx < 50 * samples + 100; ++idx) {
    Vec z(n);
    for (int i = 0; i < n; ++i) z(i) = radius * (2.0 * Halton(idx, kPrimes[i]) - 1.0);
    if (z.norm() > radius) continue;
    eval(z);
    ++accepted;
  }
  rep.samples = accepted + 2 * n;
  return rep;
}

}  // namespace safeguard
