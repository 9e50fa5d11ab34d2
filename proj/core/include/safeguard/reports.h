#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "safeguard/lmi.h"
#include "safeguard/simkit.h"
#include "safeguard/synth.h"
#include "safeguard/verify.h"

namespace safeguard {

inline constexpr int kReportSchema = 1;

// {"schema": 1, "kind": kind, "timestamp": UTC ISO-8601}. The timestamp is
// the only field that varies between identical runs.
nlohmann::json ReportEnvelope(const std::string& kind);

// Drops every "timestamp" key, recursively.
nlohmann::json WithoutTimestamp(nlohmann::json j);

nlohmann::json AlphasJson(const Alphas& a);
nlohmann::json ResidualsJson(const ResidualReport& r);
nlohmann::json ControllerJson(const SecondaryController& k);

// {P1, alphas, residuals, contained, containment_margin}
nlohmann::json CertificateJson(const SafetyCertificate& c);
nlohmann::json VerifyReportJson(const VerifyReport& r);

// {K:{A2,B2,C2,D2}, P, X, Y, alphas, residuals, gamma?, contained, ...}
nlohmann::json SynthResultJson(const SynthResult& r);
nlohmann::json SynthTableJson(const std::vector<SynthGridCell>& table);

nlohmann::json MonteCarloJson(const MonteCarloReport& r);
nlohmann::json MonitorJson(const SafetyMonitor& m);

void WriteJson(const nlohmann::json& j, const std::string& path);

}  // namespace safeguard
