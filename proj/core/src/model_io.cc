#include "safeguard/model_io.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace safeguard {

namespace {

using nlohmann::json;

std::string Join(const std::string& source, const std::vector<std::string>& issues) {
  std::ostringstream os;
  os << source << ": " << issues.size() << " problem" << (issues.size() == 1 ? "" : "s");
  for (const auto& s : issues) os << "\n  " << s;
  return os.str();
}

// Byte offset -> line:col (1-based).
std::string LineCol(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

const json* Field(const json& obj, const char* key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

class Reader {
 public:
  explicit Reader(std::vector<std::string>* issues) : issues_(issues) {}

  const json* Object(const json& root, const char* key, bool required) {
    const json* j = Field(root, key);
    if (!j) {
      if (required) issues_->push_back("/" + std::string(key) + ": missing required object");
      return nullptr;
    }
    if (!j->is_object()) {
      issues_->push_back("/" + std::string(key) + ": expected an object");
      return nullptr;
    }
    return j;
  }

  // Empty when absent; `present` reports whether the field was given.
  Mat Matrix(const json* obj, const std::string& parent, const char* key,
             bool required, bool* present = nullptr) {
    const std::string path = "/" + parent + "/" + key;
    const json* j = obj ? Field(*obj, key) : nullptr;
    if (present) *present = j != nullptr;
    if (!j) {
      if (required && obj) issues_->push_back(path + ": missing required matrix");
      return Mat();
    }
    return MatFromJson(*j, path, issues_);
  }

 private:
  std::vector<std::string>* issues_;
};

SymMatrix ToSym(const Mat& m, const std::string& path, std::vector<std::string>* issues) {
  if (m.rows() != m.cols()) {
    issues->push_back(path + ": expected a square symmetric matrix, got " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    return SymMatrix();
  }
  try {
    return SymMatrix(m);
  } catch (const std::exception& e) {
    issues->push_back(path + ": " + e.what());
    return SymMatrix();
  }
}

Mat OrZero(const Mat& m, bool present, Eigen::Index rows, Eigen::Index cols) {
  if (present && m.size() > 0) return m;
  return Mat::Zero(rows, cols);
}

}  // namespace

ModelError::ModelError(std::string source, std::vector<std::string> issues)
    : std::runtime_error(Join(source, issues)), issues_(std::move(issues)) {}

double Round12(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}

json MatToJson(const Mat& m) {
  json rows = json::array();
  if (m.size() == 0) return rows;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(Round12(m(i, k)));
    rows.push_back(row);
  }
  return rows;
}

Mat MatFromJson(const json& j, const std::string& path, std::vector<std::string>* issues) {
  auto bad = [&](const std::string& msg) {
    issues->push_back(path + ": " + msg);
    return Mat();
  };
  if (j.is_number()) return Mat::Constant(1, 1, j.get<double>());
  if (!j.is_array()) return bad("expected a number or a nested array of numbers");
  if (j.empty()) return Mat();
  if (j.front().is_number()) {
    Mat m(1, static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k) {
      if (!j[k].is_number()) return bad("entry " + std::to_string(k) + " is not a number");
      m(0, static_cast<Eigen::Index>(k)) = j[k].get<double>();
    }
    return m;
  }
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  bool ok = true;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string rp = path + "/" + std::to_string(i);
    if (!j[i].is_array()) {
      issues->push_back(rp + ": expected an array (matrix row)");
      ok = false;
      continue;
    }
    if (j[i].size() != cols) {
      issues->push_back(rp + ": row has " + std::to_string(j[i].size()) +
                        " entries, expected " + std::to_string(cols));
      ok = false;
      continue;
    }
    for (std::size_t k = 0; k < cols; ++k) {
      const json& v = j[i][k];
      if (!v.is_number()) {
        issues->push_back(rp + "/" + std::to_string(k) + ": not a number");
        ok = false;
        continue;
      }
      const double d = v.get<double>();
      if (!std::isfinite(d)) {
        issues->push_back(rp + "/" + std::to_string(k) + ": not finite");
        ok = false;
      }
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = d;
    }
  }
  return ok ? m : Mat();
}

SystemBundle ParseModel(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::string where = LineCol(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ModelError(source, {where + ": JSON syntax error: " + e.what()});
  }
  std::vector<std::string> issues;
  if (!root.is_object()) throw ModelError(source, {"/: top level must be an object"});
  Reader r(&issues);

  const json* plant = r.Object(root, "plant", true);
  const json* primary = r.Object(root, "primary", true);
  const json* selection = r.Object(root, "selection", true);
  const json* sector = r.Object(root, "sector", false);
  const json* attack = r.Object(root, "attack", true);
  const json* safe = r.Object(root, "safe", true);

  SystemBundle b;
  bool has_g = false, has_h = false;
  b.plant.A = r.Matrix(plant, "plant", "A", true);
  b.plant.B = r.Matrix(plant, "plant", "B", true);
  b.plant.C = r.Matrix(plant, "plant", "C", true);
  const Mat pg = r.Matrix(plant, "plant", "G", false, &has_g);
  const Mat ph = r.Matrix(plant, "plant", "H", false, &has_h);
  const Eigen::Index np = b.plant.A.rows(), nu = b.plant.B.cols(), ny = b.plant.C.rows();
  b.plant.G = OrZero(pg, has_g, np, 0);
  b.plant.H = OrZero(ph, has_h, 0, np);

  bool has_a1 = false, has_b1 = false, has_c1 = false, has_g1 = false, has_h1 = false;
  const Mat a1 = r.Matrix(primary, "primary", "A", false, &has_a1);
  const Mat b1 = r.Matrix(primary, "primary", "B", false, &has_b1);
  const Mat c1 = r.Matrix(primary, "primary", "C", false, &has_c1);
  const Mat g1 = r.Matrix(primary, "primary", "G", false, &has_g1);
  const Mat h1 = r.Matrix(primary, "primary", "H", false, &has_h1);
  b.primary.D = r.Matrix(primary, "primary", "D", true);
  const Eigen::Index n1 = has_a1 ? a1.rows() : 0;
  b.primary.A = OrZero(a1, has_a1, n1, n1);
  b.primary.B = OrZero(b1, has_b1, n1, ny);
  b.primary.C = OrZero(c1, has_c1, nu, n1);
  b.primary.G = OrZero(g1, has_g1, n1, 0);
  b.primary.H = OrZero(h1, has_h1, 0, n1);
  if (b.primary.D.size() == 0 && primary && Field(*primary, "D")) {
    b.primary.D = Mat::Zero(nu, ny);
  }

  b.selection.Cs = r.Matrix(selection, "selection", "Cs", true);
  b.selection.Eu = r.Matrix(selection, "selection", "Eu", true);

  const Eigen::Index q = b.plant.G.cols() + b.primary.G.cols();
  const Eigen::Index h = b.plant.H.rows() + b.primary.H.rows();
  if (sector) {
    b.sector.S1 = r.Matrix(sector, "sector", "S1", true);
    b.sector.S2 = r.Matrix(sector, "sector", "S2", true);
    bool has_v = false;
    const Mat v = r.Matrix(sector, "sector", "V", false, &has_v);
    b.sector.V = has_v ? ToSym(v, "/sector/V", &issues) : SymMatrix::Identity(static_cast<int>(q));
  } else {
    if (q > 0) issues.push_back("/sector: required because the model has nonlinearity channels");
    b.sector.S1 = Mat::Zero(q, h);
    b.sector.S2 = Mat::Zero(q, h);
    b.sector.V = SymMatrix::Identity(static_cast<int>(q));
  }

  const Eigen::Index n = np + n1;
  bool has_q1 = false, has_q2 = false, has_ch = false;
  const Mat q3 = r.Matrix(attack, "attack", "Q3", true);
  const Mat q1 = r.Matrix(attack, "attack", "Q1", false, &has_q1);
  const Mat q2 = r.Matrix(attack, "attack", "Q2", false, &has_q2);
  const Mat ch = r.Matrix(attack, "attack", "channels", false, &has_ch);
  b.attack.Q3 = ToSym(q3, "/attack/Q3", &issues);
  const Eigen::Index m = b.attack.Q3.dim();
  b.attack.Q1 = has_q1 ? ToSym(q1, "/attack/Q1", &issues)
                       : SymMatrix::Zero(static_cast<int>(n));
  b.attack.Q2 = OrZero(q2, has_q2, n, m);
  if (has_ch) b.attack.channels = ch;

  const Mat xi = r.Matrix(safe, "safe", "Xi", true);
  b.safe.Xi = ToSym(xi, "/safe/Xi", &issues);

  if (const json* phi = Field(root, "phi")) {
    if (!phi->is_string()) {
      issues.push_back("/phi: expected a string");
    } else if (!IsKnownNonlinearity(phi->get<std::string>())) {
      issues.push_back("/phi: unknown nonlinearity '" + phi->get<std::string>() + "'");
    } else {
      b.phi = phi->get<std::string>();
    }
  }

  for (const auto& [key, _] : root.items()) {
    static const char* kKnown[] = {"plant", "primary", "selection", "sector",
                                   "attack", "safe", "phi", "name", "description"};
    bool known = false;
    for (const char* k : kKnown) known = known || key == k;
    if (!known) issues.push_back("/" + key + ": unknown field");
  }

  if (issues.empty()) {
    for (auto& s : DimensionIssues(b)) issues.push_back("dimensions: " + s);
  }
  if (!issues.empty()) throw ModelError(source, issues);
  return b;
}

SystemBundle LoadModel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError(path, {"cannot open file"});
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseModel(ss.str(), path);
}

json ModelToJson(const SystemBundle& b) {
  json j;
  j["plant"] = {{"A", MatToJson(b.plant.A)}, {"B", MatToJson(b.plant.B)},
                {"C", MatToJson(b.plant.C)}, {"G", MatToJson(b.plant.G)},
                {"H", MatToJson(b.plant.H)}};
  j["primary"] = {{"A", MatToJson(b.primary.A)}, {"B", MatToJson(b.primary.B)},
                  {"C", MatToJson(b.primary.C)}, {"D", MatToJson(b.primary.D)},
                  {"G", MatToJson(b.primary.G)}, {"H", MatToJson(b.primary.H)}};
  j["selection"] = {{"Cs", MatToJson(b.selection.Cs)}, {"Eu", MatToJson(b.selection.Eu)}};
  j["sector"] = {{"S1", MatToJson(b.sector.S1)}, {"S2", MatToJson(b.sector.S2)},
                 {"V", MatToJson(b.sector.V.mat())}};
  j["attack"] = {{"Q1", MatToJson(b.attack.Q1.mat())}, {"Q2", MatToJson(b.attack.Q2)},
                 {"Q3", MatToJson(b.attack.Q3.mat())}};
  if (b.attack.channels.size() > 0) j["attack"]["channels"] = MatToJson(b.attack.channels);
  j["safe"] = {{"Xi", MatToJson(b.safe.Xi.mat())}};
  j["phi"] = b.phi;
  return j;
}

}  // namespace safeguard
