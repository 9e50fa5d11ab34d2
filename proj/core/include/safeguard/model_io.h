#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/sysmodel.h"

namespace safeguard {

// Every problem found in a model file. Syntax errors carry line:col,
// schema errors a JSON pointer to the offending field.
class ModelError : public std::runtime_error {
 public:
  ModelError(std::string source, std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

// Model file layout:
//   plant{A, B, C, G?, H?}, primary{D, A?, B?, C?, G?, H?},
//   selection{Cs, Eu}, sector{S1, S2, V}?, attack{Q3, Q1?, Q2?, channels?},
//   safe{Xi}, phi?
// Matrices are row-major nested arrays. A bare number is 1x1 and a flat
// array is a single row. Omitted optional blocks are zero with the
// dimensions implied by the rest of the model.
SystemBundle ParseModel(const std::string& text, const std::string& source = "<string>");
SystemBundle LoadModel(const std::string& path);

nlohmann::json ModelToJson(const SystemBundle& bundle);

// Row-major nested arrays, numbers rounded to 12 significant digits.
nlohmann::json MatToJson(const Mat& m);
// Same conventions as the model file. Appends to `issues` and returns an
// empty matrix on failure.
Mat MatFromJson(const nlohmann::json& j, const std::string& path,
                std::vector<std::string>* issues);

double Round12(double v);

}  // namespace safeguard
