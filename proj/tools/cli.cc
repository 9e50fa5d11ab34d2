#include "cli.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "safeguard/model_io.h"
#include "safeguard/reports.h"
#include "safeguard/simkit.h"
#include "safeguard/synth.h"
#include "safeguard/verify.h"

namespace safeguard::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Config {
  std::string command;
  std::string model;
  std::string alphas;
  std::string grid;
  std::optional<double> safe;
  std::uint64_t seed = 1;
  double horizon = 10.0;
  double dt = 1e-3;
  std::string out;
  std::string stage = "verify";
  std::string objective = "trace";
  std::string mode = "verify";
  std::string completion = "auto";
  std::string controller;
  std::string attack = "random";
  std::string direction;
  double frequency = 1.0;
  std::string x0;
  int trajectories = 100;
  int samples = 10000;
  double radius = 10.0;
};

std::vector<double> ParseList(const std::string& s, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || !std::isfinite(d)) {
      throw std::invalid_argument(std::string(what) + ": '" + item + "' is not a finite number");
    }
    v.push_back(d);
  }
  return v;
}

Alphas ParseAlphas(const std::string& s) {
  const auto v = ParseList(s, "--alphas");
  if (v.size() != 4) throw std::invalid_argument("--alphas needs four values a1,a2,a3,a4");
  return {v[0], v[1], v[2], v[3]};
}

json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::vector<double> NumberList(const json& j, const std::string& path) {
  if (!j.is_array()) throw std::runtime_error(path + ": expected an array of numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw std::runtime_error(path + ": expected an array of numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

AlphaGrid LoadVerifyGrid(const std::string& path) {
  const json j = ReadJsonFile(path);
  AlphaGrid g = AlphaGrid::Default();
  if (j.contains("alpha1")) g.alpha1 = NumberList(j["alpha1"], path + ":/alpha1");
  if (j.contains("alpha4")) g.alpha4 = NumberList(j["alpha4"], path + ":/alpha4");
  return g;
}

std::vector<Alphas> LoadSynthGrid(const std::string& path) {
  const json j = ReadJsonFile(path);
  std::vector<Alphas> out;
  if (!j.contains("alphas")) return out;
  for (std::size_t i = 0; i < j["alphas"].size(); ++i) {
    const auto v = NumberList(j["alphas"][i], path + ":/alphas/" + std::to_string(i));
    if (v.size() != 4) throw std::runtime_error(path + ":/alphas/" + std::to_string(i) + ": need 4 values");
    out.push_back({v[0], v[1], v[2], v[3]});
  }
  return out;
}

void CheckModel(const SystemBundle& b) {
  const ValidationReport am = ValidateAttackModel(b.attack);
  if (!am.ok()) throw std::invalid_argument("attack model invalid:\n" + am.ToString());
  if (MinEig(b.safe.Xi) < -1e-12) throw std::invalid_argument("safe.Xi is not positive semidefinite");
}

SystemBundle LoadBundle(const Config& c) {
  if (c.model.empty()) throw std::invalid_argument("--model is required for '" + c.command + "'");
  SystemBundle b = LoadModel(c.model);
  if (c.safe) b.safe.Xi = SymMatrix::Identity(b.safe.Xi.dim()) * *c.safe;
  CheckModel(b);
  return b;
}

SynthOptions MakeSynthOptions(const Config& c) {
  SynthOptions o;
  if (!c.alphas.empty()) o.alphas = ParseAlphas(c.alphas);
  if (!c.grid.empty()) o.grid = LoadSynthGrid(c.grid);
  o.completion = ParseCompletion(c.completion);
  return o;
}

class Output {
 public:
  explicit Output(const std::string& dir) : dir_(dir) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }
  void Json(const std::string& name, const json& j, std::ostream& log) const {
    if (dir_.empty()) return;
    const std::string p = (fs::path(dir_) / name).string();
    WriteJson(j, p);
    log << "wrote " << p << "\n";
  }
  void Csv(const std::string& name, const Trajectory& tr, std::ostream& log) const {
    if (dir_.empty()) return;
    const std::string p = (fs::path(dir_) / name).string();
    WriteTrajectoryCsv(tr, p);
    log << "wrote " << p << "\n";
  }

 private:
  std::string dir_;
};

void WriteSynthArtifacts(const SynthResult& r, const SystemBundle& b, const Output& out,
                         std::ostream& log, const std::string& kind) {
  json j = SynthResultJson(r);
  j["kind"] = kind;
  out.Json("synth.json", j, log);
  out.Json("safe_set.json", EllipsoidJson(b.safe.Xi, 200), log);
  out.Json("rpi.json", EllipsoidJson(r.rpi.shape), log);
  out.Json("rpi_projection.json", EllipsoidJson(r.projection.shape, 200), log);
  out.Json("x_inverse.json", EllipsoidJson(SymMatrix::FromSymmetrized(InversePd(r.X.mat())), 200), log);
}

int DoVerify(const SystemBundle& b, const Config& c, std::ostream& log) {
  const AlphaGrid grid = c.grid.empty() ? AlphaGrid::Default() : LoadVerifyGrid(c.grid);
  const VerifyReport rep = VerifySafety(b, grid);
  log << rep.ToString();
  const Output out(c.out);
  out.Json("verify.json", VerifyReportJson(rep), log);
  out.Json("safe_set.json", EllipsoidJson(b.safe.Xi, 200), log);
  if (!rep.found()) return kNoCertificate;
  json cert = ReportEnvelope("certificate");
  cert.update(CertificateJson(*rep.certificate));
  out.Json("certificate.json", cert, log);
  out.Json("rpi.json", EllipsoidJson(rep.certificate->P1, 200), log);
  return kOk;
}

int DoSynth(const SystemBundle& b, const Config& c, std::ostream& log) {
  const SynthResult r = SynthesizeNonlinear(b, b.dims().n(), MakeSynthOptions(c));
  log << r.ToString();
  WriteSynthArtifacts(r, b, Output(c.out), log, "synth");
  return kOk;
}

int DoSynthLinear(const SystemBundle& b, const Config& c, std::ostream& log, bool l2) {
  const SynthOptions o = MakeSynthOptions(c);
  const SynthResult r = l2 ? SynthesizeL2(b, o) : SynthesizeLinear(b, o);
  log << r.ToString();
  WriteSynthArtifacts(r, b, Output(c.out), log, l2 ? "synth-l2" : "synth-linear");
  return kOk;
}

int DoWorstAttack(const SystemBundle& b, const Config& c, std::ostream& log) {
  WorstAttackMode mode;
  if (c.mode == "verify") {
    mode = WorstAttackMode::kVerify;
  } else if (c.mode == "synth") {
    mode = WorstAttackMode::kSynthesize;
  } else {
    throw std::invalid_argument("--mode must be verify or synth");
  }
  const WorstAttackResult r = WorstAttack(b, mode, MakeSynthOptions(c));
  log << "smallest certified attack bound: trace Q3 = " << r.trace << "\nQ3 =\n"
      << r.Q3.mat() << "\n";
  json j = ReportEnvelope("worst-attack");
  j["mode"] = c.mode;
  j["Q3"] = MatToJson(r.Q3.mat());
  j["trace"] = Round12(r.trace);
  j["alphas"] = AlphasJson(r.alphas);
  if (r.certificate) j["certificate"] = CertificateJson(*r.certificate);
  if (r.synth) j["synth"] = SynthResultJson(*r.synth);
  Output(c.out).Json("worst_attack.json", j, log);
  return kOk;
}

int DoOptimizeRpi(const SystemBundle& b, const Config& c, std::ostream& log) {
  RpiObjective obj;
  if (c.objective == "trace") {
    obj = RpiObjective::kMinTraceX;
  } else if (c.objective == "logdet") {
    obj = RpiObjective::kMaxLogdetX;
  } else {
    throw std::invalid_argument("--objective must be trace or logdet");
  }
  const RpiOptimum r = OptimizeRpi(b, obj, MakeSynthOptions(c));
  log << r.result.ToString() << "trace X = " << r.trace_x << ", logdet X = " << r.logdet_x << "\n";
  json j = SynthResultJson(r.result);
  j["kind"] = "optimize-rpi";
  j["objective"] = c.objective;
  j["trace_x"] = Round12(r.trace_x);
  j["logdet_x"] = Round12(r.logdet_x);
  json hist = json::array();
  for (double v : r.logdet_history) hist.push_back(Round12(v));
  j["logdet_history"] = hist;
  const Output out(c.out);
  out.Json("optimize_rpi.json", j, log);
  out.Json("x_inverse.json", EllipsoidJson(SymMatrix::FromSymmetrized(InversePd(r.result.X.mat())), 200), log);
  return kOk;
}

AttackGenerator MakeAttack(const Config& c, const AttackModel& am) {
  Vec dir = Vec::Ones(am.dim());
  if (!c.direction.empty()) {
    const auto v = ParseList(c.direction, "--direction");
    if (static_cast<int>(v.size()) != am.dim()) {
      throw std::invalid_argument("--direction needs " + std::to_string(am.dim()) + " values");
    }
    dir = Eigen::Map<const Vec>(v.data(), am.dim());
  }
  if (c.attack == "zero") return AttackGenerator::Zero(am);
  if (c.attack == "constant") return AttackGenerator::ConstantBoundary(am, dir);
  if (c.attack == "sinusoid") return AttackGenerator::SinusoidBoundary(am, dir, c.frequency);
  if (c.attack == "random") return AttackGenerator::RandomAdmissible(am, c.seed);
  throw std::invalid_argument("--attack must be zero, constant, sinusoid or random");
}

int DoSimulate(const SystemBundle& b, const Config& c, std::ostream& log) {
  const Dims d = b.dims();
  SimSystem sys = MakePrimarySimSystem(b);
  std::optional<SymMatrix> P;
  if (!c.controller.empty()) {
    const json j = ReadJsonFile(c.controller);
    std::vector<std::string> issues;
    const json& k = j.at("K");
    SecondaryController K;
    K.A2 = MatFromJson(k.at("A2"), "/K/A2", &issues);
    K.B2 = MatFromJson(k.at("B2"), "/K/B2", &issues);
    K.C2 = MatFromJson(k.at("C2"), "/K/C2", &issues);
    K.D2 = MatFromJson(k.at("D2"), "/K/D2", &issues);
    if (j.contains("P")) P = SymMatrix::FromSymmetrized(MatFromJson(j["P"], "/P", &issues));
    if (!issues.empty()) throw ModelError(c.controller, issues);
    // An order-0 controller serializes A2, B2, C2 as empty arrays.
    if (K.A2.size() == 0) {
      K.B2 = Mat::Zero(0, d.nc);
      K.C2 = Mat::Zero(d.ne, 0);
    }
    sys = MakeSimSystem(b, K);
  }
  if (P && P->dim() != sys.n()) P.reset();
  sys.P = P;

  Vec x0;
  if (!c.x0.empty()) {
    const auto v = ParseList(c.x0, "--x0");
    if (static_cast<int>(v.size()) != sys.n()) {
      throw std::invalid_argument("--x0 needs " + std::to_string(sys.n()) + " values");
    }
    x0 = Eigen::Map<const Vec>(v.data(), sys.n());
  } else {
    // Start on the boundary of ℰ(P), or of the safe set when there is no P.
    const SymMatrix& shape = P ? *P : b.safe.Xi;
    x0 = Vec::Zero(sys.n());
    x0.head(shape.dim()) = SampleEllipsoidBoundary(shape, 1, c.seed).front();
  }
  AttackGenerator gen = MakeAttack(c, b.attack);
  const Trajectory tr = Simulate(sys, gen, x0, c.horizon, c.dt);
  const SafetyMonitor mon = MonitorSafety(tr, b.safe.Xi, P);
  log << "simulated " << tr.size() << " samples (" << tr.substeps << " substeps per step)\n"
      << mon.ToString();
  json j = ReportEnvelope("simulate");
  j["seed"] = c.seed;
  j["horizon"] = c.horizon;
  j["dt"] = c.dt;
  j["attack"] = c.attack;
  j["samples"] = tr.size();
  j["monitor"] = MonitorJson(mon);
  const Output out(c.out);
  out.Json("simulate.json", j, log);
  out.Csv("trajectory.csv", tr, log);
  return kOk;
}

int DoCaseStudy(const Config& c, std::ostream& log) {
  if (c.stage == "verify") {
    const SystemBundle b = JosephsonCaseStudy(c.safe.value_or(50.0));
    return DoVerify(b, c, log);
  }
  if (c.stage == "synth") {
    const SystemBundle b = JosephsonCaseStudy(c.safe.value_or(50.0));
    Config cc = c;
    if (cc.alphas.empty() && cc.grid.empty()) cc.alphas = "0.05,0.05,0.1,0.99";
    return DoSynth(b, cc, log);
  }
  if (c.stage == "simulate") {
    const Output out(c.out);
    json j = ReportEnvelope("case-study-simulate");
    j["seed"] = c.seed;
    const SystemBundle bp = JosephsonCaseStudy(11.0);
    const VerifyReport v = VerifySafety(bp);
    if (v.found()) {
      const MonteCarloReport mc = MonteCarloInvariance(MakePrimarySimSystem(bp), v.certificate->P1,
                                                       c.trajectories, c.horizon, c.dt, c.seed);
      log << "primary loop, safe set 11 I: " << mc.ToString();
      j["primary"] = MonteCarloJson(mc);
    }
    const SystemBundle b = JosephsonCaseStudy(c.safe.value_or(50.0));
    SynthOptions o;
    o.alphas = c.alphas.empty() ? Alphas{0.05, 0.05, 0.1, 0.99} : ParseAlphas(c.alphas);
    const SynthResult r = SynthesizeNonlinear(b, b.dims().n(), o);
    SimSystem sys = MakeSimSystem(b, r.K);
    const MonteCarloReport mc =
        MonteCarloInvariance(sys, r.P, c.trajectories, c.horizon, c.dt, c.seed);
    log << "with secondary controller: " << mc.ToString();
    j["secondary"] = MonteCarloJson(mc);
    j["k_norm"] = Round12(r.k_norm);
    out.Json("montecarlo.json", j, log);
    sys.P = r.P;
    AttackGenerator gen = AttackGenerator::RandomAdmissible(b.attack, c.seed);
    Vec x0 = SampleEllipsoidBoundary(r.P, 1, c.seed).front();
    out.Csv("trajectory.csv", Simulate(sys, gen, x0, c.horizon, c.dt), log);
    return kOk;
  }
  throw std::invalid_argument("--stage must be verify, synth or simulate");
}

int DoValidate(const Config& c, std::ostream& log) {
  if (c.model.empty()) throw std::invalid_argument("--model is required for 'validate'");
  SystemBundle b;
  try {
    b = LoadModel(c.model);
  } catch (const ModelError& e) {
    log << e.what() << "\n";
    return kError;
  }
  const Dims d = b.dims();
  ValidationReport rep;
  rep.items.push_back({"dimensions", true, 0.0,
                       "n = " + std::to_string(d.n()) + ", attack channels " + std::to_string(d.na)});
  for (const auto& it : ValidateAttackModel(b.attack).items) rep.items.push_back(it);
  const double xi_min = MinEig(b.safe.Xi);
  rep.items.push_back({"Xi positive semidefinite", xi_min >= -1e-12, xi_min,
                       "min eig " + std::to_string(xi_min)});
  if (d.q() > 0) {
    const PrimaryLoop loop = AssemblePrimaryLoop(b);
    const SectorReport s =
        ValidateSector(b.sector, MakeNonlinearity(b.phi), loop.H, c.samples, c.radius);
    std::ostringstream m;
    m << "phi = " << b.phi << ", max violation " << s.max_violation << " over " << s.samples
      << " samples, radius " << c.radius;
    rep.items.push_back({"sector condition (sampled)", s.max_violation <= 1e-12, s.max_violation, m.str()});
  }
  log << rep.ToString();
  return rep.ok() ? kOk : kError;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Safety verification and secondary controller synthesis under attacks"};
  app.require_subcommand(1);
  Config c;
  double safe = 0.0;

  auto model_opts = [&](CLI::App* s) {
    s->add_option("--model", c.model, "model JSON file")->check(CLI::ExistingFile);
    s->add_option("--safe", safe, "replace the safe set by scale * I");
  };
  auto synth_opts = [&](CLI::App* s) {
    s->add_option("--alphas", c.alphas, "fixed multipliers a1,a2,a3,a4");
    s->add_option("--grid", c.grid, "grid JSON {alpha1:[..], alpha4:[..]} or {alphas:[[..]]}")
        ->check(CLI::ExistingFile);
    s->add_option("--completion", c.completion, "paper-recipe, pi-completion or auto");
    s->add_option("--out", c.out, "output directory");
  };
  auto sim_opts = [&](CLI::App* s) {
    s->add_option("--seed", c.seed, "random seed");
    s->add_option("--horizon", c.horizon, "simulation horizon [s]")->check(CLI::PositiveNumber);
    s->add_option("--dt", c.dt, "step [s]")->check(CLI::PositiveNumber);
  };

  CLI::App* verify = app.add_subcommand("verify", "search for an RPI certificate of the primary loop");
  model_opts(verify);
  verify->add_option("--grid", c.grid, "grid JSON {alpha1:[..], alpha4:[..]}")->check(CLI::ExistingFile);
  verify->add_option("--out", c.out, "output directory");

  CLI::App* synth = app.add_subcommand("synth", "synthesize a secondary controller (sector-bounded case)");
  model_opts(synth);
  synth_opts(synth);
  CLI::App* synth_lin = app.add_subcommand("synth-linear", "synthesize for the linear case");
  model_opts(synth_lin);
  synth_opts(synth_lin);
  CLI::App* synth_l2 = app.add_subcommand("synth-l2", "linear synthesis with minimal L2 gain bound");
  model_opts(synth_l2);
  synth_opts(synth_l2);

  CLI::App* worst = app.add_subcommand("worst-attack", "smallest certifiable attack bound Q3");
  model_opts(worst);
  synth_opts(worst);
  worst->add_option("--mode", c.mode, "verify or synth");

  CLI::App* rpi = app.add_subcommand("optimize-rpi", "smallest or largest RPI set");
  model_opts(rpi);
  synth_opts(rpi);
  rpi->add_option("--objective", c.objective, "trace or logdet");

  CLI::App* sim = app.add_subcommand("simulate", "simulate the closed loop under attacks");
  model_opts(sim);
  sim_opts(sim);
  sim->add_option("--controller", c.controller, "synth result JSON")->check(CLI::ExistingFile);
  sim->add_option("--attack", c.attack, "zero, constant, sinusoid or random");
  sim->add_option("--direction", c.direction, "attack direction (comma list)");
  sim->add_option("--frequency", c.frequency, "sinusoid frequency [Hz]");
  sim->add_option("--x0", c.x0, "initial state (comma list)");
  sim->add_option("--out", c.out, "output directory");

  CLI::App* cs = app.add_subcommand("case-study", "Josephson junction case study");
  cs->add_option("--stage", c.stage, "verify, synth or simulate");
  cs->add_option("--safe", safe, "safe set scale (default 50)");
  cs->add_option("--alphas", c.alphas, "multipliers for the synth stage");
  cs->add_option("--grid", c.grid, "grid JSON")->check(CLI::ExistingFile);
  cs->add_option("--out", c.out, "output directory");
  cs->add_option("--trajectories", c.trajectories, "Monte Carlo trajectories")->check(CLI::PositiveNumber);
  sim_opts(cs);

  CLI::App* val = app.add_subcommand("validate", "check a model file");
  val->add_option("--model", c.model, "model JSON file")->check(CLI::ExistingFile);
  val->add_option("--samples", c.samples, "sector samples")->check(CLI::PositiveNumber);
  val->add_option("--radius", c.radius, "sector sampling radius")->check(CLI::PositiveNumber);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kError;
  }
  c.command = app.get_subcommands().front()->get_name();
  for (CLI::App* s : app.get_subcommands()) {
    if (const CLI::Option* o = s->get_option_no_throw("--safe"); o && o->count()) {
      if (!(safe > 0.0) || !std::isfinite(safe)) {
        err << "error: --safe must be a positive finite number\n";
        return kError;
      }
      c.safe = safe;
    }
  }

  try {
    if (c.command == "verify") return DoVerify(LoadBundle(c), c, out);
    if (c.command == "synth") return DoSynth(LoadBundle(c), c, out);
    if (c.command == "synth-linear") return DoSynthLinear(LoadBundle(c), c, out, false);
    if (c.command == "synth-l2") return DoSynthLinear(LoadBundle(c), c, out, true);
    if (c.command == "worst-attack") return DoWorstAttack(LoadBundle(c), c, out);
    if (c.command == "optimize-rpi") return DoOptimizeRpi(LoadBundle(c), c, out);
    if (c.command == "simulate") return DoSimulate(LoadBundle(c), c, out);
    if (c.command == "case-study") return DoCaseStudy(c, out);
    if (c.command == "validate") return DoValidate(c, out);
  } catch (const SynthError& e) {
    if (e.stage() == "grid") {
      out << "no certificate found: " << e.what() << "\n";
      return kNoCertificate;
    }
    err << "error: " << e.what() << "\n";
    return kError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}

}  // namespace safeguard::cli
