#include "safeguard/reports.h"

#include <chrono>
#include <ctime>
#include <fstream>

#include "safeguard/model_io.h"

namespace safeguard {

using nlohmann::json;

json ReportEnvelope(const std::string& kind) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return {{"schema", kReportSchema}, {"kind", kind}, {"timestamp", buf}};
}

json WithoutTimestamp(json j) {
  if (j.is_object()) {
    j.erase("timestamp");
    for (auto& [_, v] : j.items()) v = WithoutTimestamp(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = WithoutTimestamp(v);
  }
  return j;
}

json AlphasJson(const Alphas& a) {
  return {{"alpha1", Round12(a.a1)}, {"alpha2", Round12(a.a2)},
          {"alpha3", Round12(a.a3)}, {"alpha4", Round12(a.a4)}};
}

json ResidualsJson(const ResidualReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"label", e.label},
                       {"max_eig", Round12(e.max_eig)},
                       {"margin", Round12(e.margin)},
                       {"strict", e.strict},
                       {"passed", e.passed}});
  }
  return {{"ok", r.ok}, {"worst", Round12(r.worst)}, {"constraints", entries}};
}

json ControllerJson(const SecondaryController& k) {
  return {{"A2", MatToJson(k.A2)}, {"B2", MatToJson(k.B2)},
          {"C2", MatToJson(k.C2)}, {"D2", MatToJson(k.D2)}};
}

json CertificateJson(const SafetyCertificate& c) {
  return {{"P1", MatToJson(c.P1.mat())},
          {"alphas", AlphasJson(c.alphas)},
          {"residuals", ResidualsJson(c.residuals)},
          {"containment_margin", Round12(c.containment_margin)},
          {"contained", c.contained}};
}

json VerifyReportJson(const VerifyReport& r) {
  json j = ReportEnvelope("verify");
  j["found"] = r.found();
  if (r.certificate) j["certificate"] = CertificateJson(*r.certificate);
  json grid = json::array();
  for (const auto& g : r.table) {
    json cell = {{"alpha1", g.alpha1}, {"alpha4", g.alpha4}, {"evaluated", g.evaluated}};
    if (g.evaluated) {
      cell["status"] = ToString(g.status);
      if (!g.diagnostic.empty()) cell["diagnostic"] = g.diagnostic;
    }
    grid.push_back(cell);
  }
  j["grid"] = grid;
  if (!r.found()) {
    j["message"] = "no certificate on grid (the conditions are only sufficient)";
  }
  return j;
}

json SynthTableJson(const std::vector<SynthGridCell>& table) {
  json out = json::array();
  for (const auto& c : table) {
    json cell = {{"alphas", AlphasJson(c.alphas)}, {"evaluated", c.evaluated}};
    if (c.evaluated) {
      cell["stage"] = c.stage;
      cell["status"] = c.status;
    }
    out.push_back(cell);
  }
  return out;
}

json SynthResultJson(const SynthResult& r) {
  json j = ReportEnvelope("synth");
  j["K"] = ControllerJson(r.K);
  j["P"] = MatToJson(r.P.mat());
  j["X"] = MatToJson(r.X.mat());
  j["Y"] = MatToJson(r.Y.mat());
  j["N"] = MatToJson(r.N);
  j["M"] = MatToJson(r.M);
  j["alphas"] = AlphasJson(r.alphas);
  j["completion"] = ToString(r.completion);
  j["residuals"] = ResidualsJson(r.residuals);
  j["k_lmi_max_eig"] = Round12(r.k_lmi_max_eig);
  j["k_lmi_scalar"] = Round12(r.k_lmi_scalar);
  j["k_norm"] = Round12(r.k_norm);
  j["containment_margin"] = Round12(r.containment_margin);
  j["contained"] = r.contained;
  if (r.gamma) {
    j["gamma"] = Round12(*r.gamma);
    j["l2_max_eig"] = Round12(r.l2_max_eig);
  }
  j["warnings"] = r.warnings;
  j["table"] = SynthTableJson(r.table);
  return j;
}

json MonteCarloJson(const MonteCarloReport& r) {
  return {{"trajectories", r.trajectories}, {"max_V", Round12(r.max_V)},
          {"max_safe_quad", Round12(r.max_safe_quad)}, {"worst_index", r.worst_index},
          {"ok", r.ok}};
}

json MonitorJson(const SafetyMonitor& m) {
  json j = {{"max_safe_quad", Round12(m.max_safe_quad)},
            {"max_rpi_quad", Round12(m.max_rpi_quad)}};
  j["first_safe_violation"] = m.first_safe_violation ? json(*m.first_safe_violation) : json("none");
  j["first_rpi_violation"] = m.first_rpi_violation ? json(*m.first_rpi_violation) : json("none");
  if (m.first_safe_violation_time) j["first_safe_violation_time"] = *m.first_safe_violation_time;
  if (m.first_rpi_violation_time) j["first_rpi_violation_time"] = *m.first_rpi_violation_time;
  return j;
}

void WriteJson(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace safeguard
