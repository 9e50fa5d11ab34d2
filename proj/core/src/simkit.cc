#include "safeguard/simkit.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "safeguard/model_io.h"
#include "safeguard/parallel.h"

namespace safeguard {

namespace {

// Unit Q3-norm version of d; throws on a zero direction.
Vec NormalizeQ3(const Vec& d, const Mat& Q3) {
  const double s = d.dot(Q3 * d);
  if (!(s > 0.0)) throw std::invalid_argument("attack direction must be nonzero");
  return d / std::sqrt(s);
}

double SpectralRadius(const Mat& A) {
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

AdmissibleSet AdmissibleAttackSet(const Vec& zeta1, const AttackModel& am) {
  const Mat& Q3 = am.Q3.mat();
  const Mat Q3inv = InversePd(Q3);
  AdmissibleSet s;
  s.center = -Q3inv * am.Q2.transpose() * zeta1;
  s.shape = am.Q3;
  s.radius2 = 1.0 + zeta1.dot(am.Qcal() * zeta1);
  return s;
}

double AttackQuadratic(const AttackModel& am, const Vec& zeta1, const Vec& a) {
  return zeta1.dot(am.Q1.mat() * zeta1) + 2.0 * zeta1.dot(am.Q2 * a) + a.dot(am.Q3.mat() * a);
}

Vec UniformOnSphere(int m, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec u(m);
  double norm = 0.0;
  while (norm < 1e-12) {
    for (int i = 0; i < m; ++i) u(i) = g(rng);
    norm = u.norm();
  }
  return u / norm;
}

Vec UniformInBall(int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Vec dir = UniformOnSphere(m, rng);
  return dir * std::pow(unif(rng), 1.0 / m);
}

AttackGenerator::AttackGenerator(AttackStrategy s, AttackModel am)
    : strategy_(s), model_(std::move(am)) {}

AttackGenerator AttackGenerator::Zero(const AttackModel& am) {
  return AttackGenerator(AttackStrategy::kZero, am);
}

AttackGenerator AttackGenerator::ConstantBoundary(const AttackModel& am, const Vec& direction) {
  if (direction.size() != am.dim()) {
    throw std::invalid_argument("attack direction has wrong dimension");
  }
  AttackGenerator g(AttackStrategy::kConstantBoundary, am);
  g.direction_ = NormalizeQ3(direction, am.Q3.mat());
  return g;
}

AttackGenerator AttackGenerator::SinusoidBoundary(const AttackModel& am, const Vec& direction,
                                                  double frequency) {
  AttackGenerator g = ConstantBoundary(am, direction);
  g.strategy_ = AttackStrategy::kSinusoidBoundary;
  g.frequency_ = frequency;
  const int m = am.dim();
  if (m >= 2) {
    // Work in whitened coordinates e = Q3^{1/2} a, where the set is a ball.
    const Mat half = SqrtPsd(am.Q3.mat());
    const Vec e = half * g.direction_;
    Eigen::Index k = 0;
    e.cwiseAbs().minCoeff(&k);
    Vec o = Vec::Unit(m, k);
    o -= e * e.dot(o);
    o.normalize();
    g.ortho_ = InvSqrtPd(am.Q3.mat()) * o;
  }
  return g;
}

AttackGenerator AttackGenerator::RandomAdmissible(const AttackModel& am, std::uint64_t seed) {
  AttackGenerator g(AttackStrategy::kRandomAdmissible, am);
  g.rng_.seed(seed);
  return g;
}

AttackGenerator AttackGenerator::Custom(const AttackModel& am, CustomFn fn) {
  AttackGenerator g(AttackStrategy::kCustom, am);
  g.custom_ = std::move(fn);
  return g;
}

Vec AttackGenerator::Sample(const Vec& zeta1, double t) {
  const int m = dim();
  if (strategy_ == AttackStrategy::kZero) return Vec::Zero(m);
  if (strategy_ == AttackStrategy::kCustom) return custom_(t, zeta1);
  const AdmissibleSet s = AdmissibleAttackSet(zeta1, model_);
  const double r = std::sqrt(std::max(s.radius2, 0.0));
  switch (strategy_) {
    case AttackStrategy::kConstantBoundary:
      return s.center + r * direction_;
    case AttackStrategy::kSinusoidBoundary: {
      const double th = 2.0 * std::numbers::pi * frequency_ * t;
      if (m == 1) return s.center + r * (std::sin(th) >= 0.0 ? 1.0 : -1.0) * direction_;
      return s.center + r * (std::cos(th) * direction_ + std::sin(th) * ortho_);
    }
    case AttackStrategy::kRandomAdmissible:
      return s.center + r * (InvSqrtPd(s.shape.mat()) * UniformInBall(m, rng_));
    default:
      break;
  }
  return Vec::Zero(m);
}

Vec SampleAttack(AttackGenerator& gen, const Vec& zeta1, double t) {
  return gen.Sample(zeta1, t);
}

SimSystem MakeSimSystem(const SystemBundle& b, const SecondaryController& k) {
  const Dims d = b.dims();
  SimSystem s;
  s.loop = AssembleClosedLoop(b, k);
  s.phi = MakeNonlinearity(b.phi);
  s.Xi = b.safe.Xi;
  s.attack = b.attack;
  const int n = s.loop.n();
  const Mat ea = b.attack.ChannelMatrix(d.nu + d.ny);
  // u_p = C1 x1 + D1 (Cp xp + a_y) + a_u
  s.Up_zeta = Mat::Zero(d.nu, n);
  s.Up_zeta.leftCols(d.np) = b.primary.D * b.plant.C;
  s.Up_zeta.middleCols(d.np, d.n1) = b.primary.C;
  Mat pick(d.nu, d.nu + d.ny);
  pick << Mat::Identity(d.nu, d.nu), b.primary.D;
  s.Up_a = pick * ea;
  return s;
}

SimSystem MakePrimarySimSystem(const SystemBundle& b) {
  const Dims d = b.dims();
  return MakeSimSystem(b, SecondaryController::Zero(0, d.nc, d.ne));
}

SimulationError::SimulationError(int step, const std::string& msg)
    : std::runtime_error("step " + std::to_string(step) + ": " + msg), step_(step) {}

Trajectory Simulate(const SimSystem& sys, AttackGenerator& gen, const Vec& x0, double T,
                    double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(T >= dt)) throw std::invalid_argument("horizon must be at least one step");
  const ClosedLoop& cl = sys.loop;
  const int n = cl.n(), n1 = cl.n_zeta1();
  if (x0.size() != n) {
    throw std::invalid_argument("initial state has dimension " + std::to_string(x0.size()) +
                                ", closed loop has " + std::to_string(n));
  }
  if (gen.dim() != cl.Bcal.cols()) {
    throw std::invalid_argument("attack generator dimension does not match the loop");
  }
  const int steps = static_cast<int>(std::llround(T / dt));
  const double gain = cl.Gcal.size() ? Norm2(cl.Gcal) * Norm2(cl.Hcal) : 0.0;
  const double rho = SpectralRadius(cl.Acal) + gain;
  const int sub = std::max(1, static_cast<int>(std::ceil(rho * dt)));
  const double h = dt / sub;

  auto rhs = [&](const Vec& z, const Vec& ba) -> Vec {
    Vec out = cl.Acal * z + ba;
    if (cl.Gcal.cols() > 0) out += cl.Gcal * sys.phi(cl.Hcal * z);
    return out;
  };
  const bool has_p = sys.P.has_value();
  auto lyap = [&](const Vec& z) {
    if (!has_p) return 0.0;
    const Mat& P = sys.P->mat();
    return P.rows() == n ? z.dot(P * z) : z.head(P.rows()).dot(P * z.head(P.rows()));
  };

  Trajectory tr;
  tr.dt = dt;
  tr.substeps = sub;
  const std::size_t cap = static_cast<std::size_t>(steps) + 1;
  tr.t.reserve(cap);
  tr.zeta.reserve(cap);
  tr.a.reserve(cap);
  tr.us.reserve(cap);
  tr.up.reserve(cap);
  tr.V.reserve(cap);
  tr.safe_quad.reserve(cap);

  Vec z = x0;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * dt;
    if (!z.allFinite()) throw SimulationError(k, "non-finite state");
    const Vec z1 = z.head(n1);
    const Vec a = gen.Sample(z1, t);
    if (!a.allFinite()) throw SimulationError(k, "non-finite attack");
    tr.t.push_back(t);
    tr.zeta.push_back(z);
    tr.a.push_back(a);
    tr.us.push_back(cl.Ccal * z);
    tr.up.push_back(sys.Up_zeta * z + sys.Up_a * a);
    tr.V.push_back(lyap(z));
    tr.safe_quad.push_back(z1.dot(sys.Xi.mat() * z1));
    if (k == steps) break;
    const Vec ba = cl.Bcal * a;
    for (int s = 0; s < sub; ++s) {
      const Vec k1 = rhs(z, ba);
      const Vec k2 = rhs(z + 0.5 * h * k1, ba);
      const Vec k3 = rhs(z + 0.5 * h * k2, ba);
      const Vec k4 = rhs(z + h * k3, ba);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return tr;
}

std::string SafetyMonitor::ToString() const {
  std::ostringstream os;
  os << "max safe-set quadratic " << max_safe_quad;
  if (first_safe_violation) {
    os << ", first exits at step " << *first_safe_violation << " (t = " << *first_safe_violation_time << ")";
  } else {
    os << ", no violation";
  }
  os << "\nmax RPI quadratic " << max_rpi_quad;
  if (first_rpi_violation) {
    os << ", first exits at step " << *first_rpi_violation << " (t = " << *first_rpi_violation_time << ")";
  } else {
    os << ", no violation";
  }
  os << "\n";
  return os.str();
}

SafetyMonitor MonitorSafety(const Trajectory& traj, const SymMatrix& Xi,
                            const std::optional<SymMatrix>& rpi, double tol) {
  SafetyMonitor m;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vec& z = traj.zeta[k];
    const Vec z1 = z.head(Xi.dim());
    const double sq = z1.dot(Xi.mat() * z1);
    m.max_safe_quad = std::max(m.max_safe_quad, sq);
    if (sq > 1.0 + tol && !m.first_safe_violation) {
      m.first_safe_violation = static_cast<int>(k);
      m.first_safe_violation_time = traj.t[k];
    }
    if (rpi) {
      const Vec zr = z.head(rpi->dim());
      const double rq = zr.dot(rpi->mat() * zr);
      m.max_rpi_quad = std::max(m.max_rpi_quad, rq);
      if (rq > 1.0 + tol && !m.first_rpi_violation) {
        m.first_rpi_violation = static_cast<int>(k);
        m.first_rpi_violation_time = traj.t[k];
      }
    }
  }
  return m;
}

std::string DissipationReport::ToString() const {
  std::ostringstream os;
  os << "dissipation residual: max " << max_violation << ", final " << final_residual << "\n";
  return os.str();
}

DissipationReport DissipationAudit(const Trajectory& traj, const SymMatrix& P, double gamma,
                                   double epsilon) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  DissipationReport rep;
  if (traj.size() == 0) return rep;
  auto V = [&](const Vec& z) { return z.dot(P.mat() * z); };
  const double v0 = V(traj.zeta[0]);
  double integral = 0.0;
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const double h = traj.t[k] - traj.t[k - 1];
    const double us2 = 0.5 * (traj.us[k - 1].squaredNorm() + traj.us[k].squaredNorm());
    integral += h * (us2 / gamma - (gamma - epsilon) * traj.a[k - 1].squaredNorm());
    const double r = V(traj.zeta[k]) - v0 + integral;
    rep.max_violation = std::max(rep.max_violation, r);
    rep.final_residual = r;
  }
  return rep;
}

std::vector<Vec> SampleEllipsoidBoundary(const SymMatrix& P, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Mat w = InvSqrtPd(P.mat());
  std::vector<Vec> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(w * UniformOnSphere(P.dim(), rng));
  return out;
}

std::vector<Vec> SampleAdmissibleBoundary(const AttackModel& am, const Vec& zeta1, int count,
                                          std::uint64_t seed) {
  const AdmissibleSet s = AdmissibleAttackSet(zeta1, am);
  std::mt19937_64 rng(seed);
  const Mat w = InvSqrtPd(s.shape.mat());
  const double r = std::sqrt(s.radius2);
  std::vector<Vec> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(s.center + r * (w * UniformOnSphere(am.dim(), rng)));
  return out;
}

std::string MonteCarloReport::ToString() const {
  std::ostringstream os;
  os << trajectories << " trajectories: max V " << max_V << " (trajectory " << worst_index
     << "), max safe-set quadratic " << max_safe_quad << (ok ? " ok" : " FAIL") << "\n";
  return os.str();
}

MonteCarloReport MonteCarloInvariance(const SimSystem& sys_in, const SymMatrix& P, int count,
                                      double T, double dt, std::uint64_t seed, double tol) {
  SimSystem sys = sys_in;
  sys.P = P;
  const int n = sys.n();
  if (P.dim() != n && P.dim() != sys.n_zeta1()) {
    throw std::invalid_argument("P must act on the full state or on the primary loop state");
  }
  const std::vector<Vec> starts = SampleEllipsoidBoundary(P, count, seed);
  std::vector<double> maxv(count, 0.0), maxs(count, 0.0);
  ParallelFor(0, count, [&](int i) {
    Vec x0 = Vec::Zero(n);
    x0.head(P.dim()) = starts[i];
    AttackGenerator gen = AttackGenerator::RandomAdmissible(sys.attack, seed + 1 + i);
    const Trajectory tr = Simulate(sys, gen, x0, T, dt);
    maxv[i] = *std::max_element(tr.V.begin(), tr.V.end());
    maxs[i] = *std::max_element(tr.safe_quad.begin(), tr.safe_quad.end());
  });
  MonteCarloReport rep;
  rep.trajectories = count;
  for (int i = 0; i < count; ++i) {
    if (maxv[i] > rep.max_V || rep.worst_index < 0) {
      rep.max_V = maxv[i];
      rep.worst_index = i;
    }
    rep.max_safe_quad = std::max(rep.max_safe_quad, maxs[i]);
  }
  rep.ok = rep.max_V <= 1.0 + tol;
  return rep;
}

SystemBundle JosephsonCaseStudy(double xi_scale) {
  const double beta_c = 0.707, beta_l = 2.6, gamma = 0.2135;
  SystemBundle b;
  b.plant.A.resize(3, 3);
  b.plant.A << 0, 1, 0,
               0, -gamma / beta_c, 1 / beta_c,
               0, 1 / beta_l, -1 / beta_l;
  b.plant.B = Vec::Unit(3, 1);
  b.plant.C = Mat::Identity(3, 3);
  b.plant.G = -Vec::Unit(3, 1) / beta_c;
  b.plant.H = Mat::Zero(1, 3);
  b.plant.H(0, 0) = 1.0;

  b.primary.A = Mat::Zero(0, 0);
  b.primary.B = Mat::Zero(0, 3);
  b.primary.C = Mat::Zero(1, 0);
  b.primary.G = Mat::Zero(0, 0);
  b.primary.H = Mat::Zero(0, 0);
  b.primary.D.resize(1, 3);
  b.primary.D << -48.3832, -8.6234, 73.1825;

  b.selection.Cs.resize(1, 3);
  b.selection.Cs << 1, 1, 0;
  b.selection.Eu = Mat::Identity(1, 1);

  b.sector.S1 = Mat::Constant(1, 1, -0.22);
  b.sector.S2 = Mat::Constant(1, 1, 1.0);
  b.sector.V = SymMatrix::Identity(1);

  // Actuator-only attack: channel a_u of (a_u, a_y).
  b.attack.Q1 = SymMatrix::Zero(3);
  b.attack.Q2 = Mat::Zero(3, 1);
  b.attack.Q3 = SymMatrix::Identity(1);
  b.attack.channels = Vec::Unit(4, 0);

  b.safe.Xi = SymMatrix::Identity(3) * xi_scale;
  b.phi = "sin";
  return b;
}

std::string TrajectoryCsv(const Trajectory& tr) {
  std::ostringstream os;
  const int nz = tr.size() ? static_cast<int>(tr.zeta[0].size()) : 0;
  const int na = tr.size() ? static_cast<int>(tr.a[0].size()) : 0;
  const int ns = tr.size() ? static_cast<int>(tr.us[0].size()) : 0;
  os << "t";
  for (int i = 0; i < nz; ++i) os << ",zeta" << i;
  for (int i = 0; i < na; ++i) os << ",a" << i;
  for (int i = 0; i < ns; ++i) os << ",us" << i;
  os << ",V,safeQuad\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    os << Num(tr.t[k]);
    for (int i = 0; i < nz; ++i) os << "," << Num(tr.zeta[k](i));
    for (int i = 0; i < na; ++i) os << "," << Num(tr.a[k](i));
    for (int i = 0; i < ns; ++i) os << "," << Num(tr.us[k](i));
    os << "," << Num(tr.V[k]) << "," << Num(tr.safe_quad[k]) << "\n";
  }
  return os.str();
}

void WriteTrajectoryCsv(const Trajectory& tr, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << TrajectoryCsv(tr);
}

nlohmann::json EllipsoidJson(const SymMatrix& shape, int surface_points, std::uint64_t seed) {
  nlohmann::json j;
  j["shape"] = MatToJson(shape.mat());
  j["center"] = std::vector<double>(shape.dim(), 0.0);
  if (surface_points > 0) {
    nlohmann::json pts = nlohmann::json::array();
    for (const Vec& p : SampleEllipsoidBoundary(shape, surface_points, seed)) {
      std::vector<double> row(p.size());
      for (Eigen::Index i = 0; i < p.size(); ++i) row[i] = Round12(p(i));
      pts.push_back(row);
    }
    j["surface"] = pts;
  }
  return j;
}

}  // namespace safeguard
