#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "safeguard/model_io.h"
#include "safeguard/simkit.h"

namespace safeguard {
namespace {

const std::string kData = SAFEGUARD_DATA_DIR;

bool AnyContains(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(),
                     [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

std::vector<std::string> IssuesOf(const std::string& text) {
  try {
    ParseModel(text);
  } catch (const ModelError& e) {
    return e.issues();
  }
  return {};
}

TEST(ModelFile, JosephsonMatchesBuiltIn) {
  const SystemBundle f = LoadModel(kData + "/josephson.json");
  const SystemBundle b = JosephsonCaseStudy(50.0);
  EXPECT_TRUE(f.plant.A.isApprox(b.plant.A, 1e-12));
  EXPECT_TRUE(f.plant.G.isApprox(b.plant.G, 1e-9));
  EXPECT_EQ(f.plant.H, b.plant.H);
  EXPECT_EQ(f.primary.D, b.primary.D);
  EXPECT_EQ(f.selection.Cs, b.selection.Cs);
  EXPECT_EQ(f.sector.S1, b.sector.S1);
  EXPECT_EQ(f.attack.Q3.mat(), b.attack.Q3.mat());
  EXPECT_EQ(f.attack.ChannelMatrix(4), b.attack.ChannelMatrix(4));
  EXPECT_EQ(f.safe.Xi.mat(), b.safe.Xi.mat());
  EXPECT_EQ(f.phi, "sin");
}

TEST(ModelFile, DoubleIntegratorDefaults) {
  const SystemBundle b = LoadModel(kData + "/double_integrator.json");
  const Dims d = b.dims();
  EXPECT_EQ(d.np, 2);
  EXPECT_EQ(d.n1, 0);
  EXPECT_EQ(d.q(), 0);
  EXPECT_EQ(b.attack.Q1.mat(), Mat::Zero(2, 2));
  EXPECT_EQ(b.attack.Q2, Mat::Zero(2, 1));
}

TEST(ModelFile, SyntaxErrorHasLineAndColumn) {
  const auto issues = IssuesOf("{\n  \"plant\": {\n    \"A\": [[1, 2,]]\n  }\n}");
  ASSERT_EQ(issues.size(), 1u);
  EXPECT_EQ(issues[0].rfind("3:", 0), 0u) << issues[0];
  EXPECT_NE(issues[0].find("JSON syntax error"), std::string::npos);
}

TEST(ModelFile, EnumeratesSchemaErrors) {
  const auto issues = IssuesOf(R"({
    "plant": {"A": [[0, 1], [0]], "B": [[0], [1]], "C": "x"},
    "primary": {"D": [[1, 1]]},
    "selection": {"Cs": [[1, 0]], "Eu": [[1]]},
    "attack": {"Q3": [[1, 2], [3, 4]]},
    "safe": {"Xi": [[1, 0], [0, 1]]},
    "colour": "blue"
  })");
  EXPECT_GE(issues.size(), 4u);
  EXPECT_TRUE(AnyContains(issues, "/plant/A/1")) ;
  EXPECT_TRUE(AnyContains(issues, "/plant/C"));
  EXPECT_TRUE(AnyContains(issues, "/attack/Q3"));
  EXPECT_TRUE(AnyContains(issues, "/colour: unknown field"));
}

TEST(ModelFile, DimensionMismatchIsReported) {
  const auto issues = IssuesOf(R"({
    "plant": {"A": [[0, 1], [0, 0]], "B": [[0], [1], [2]], "C": [[1, 0]]},
    "primary": {"D": [[1]]},
    "selection": {"Cs": [[1]], "Eu": [[1]]},
    "attack": {"Q3": 1, "channels": [[1], [0]]},
    "safe": {"Xi": [[1, 0], [0, 1]]}
  })");
  ASSERT_FALSE(issues.empty());
  EXPECT_TRUE(AnyContains(issues, "dimensions: "));
  EXPECT_TRUE(AnyContains(issues, "plant.B"));
}

TEST(ModelFile, SectorRequiredWithNonlinearity) {
  const auto issues = IssuesOf(R"({
    "plant": {"A": 0, "B": 1, "C": 1, "G": 1, "H": 1},
    "primary": {"D": -1},
    "selection": {"Cs": 1, "Eu": 1},
    "attack": {"Q3": 1, "channels": [[1], [0]]},
    "safe": {"Xi": 1}
  })");
  EXPECT_TRUE(AnyContains(issues, "/sector"));
}

TEST(ModelFile, RoundTrip) {
  const SystemBundle a = LoadModel(kData + "/josephson.json");
  const SystemBundle b = ParseModel(ModelToJson(a).dump());
  EXPECT_TRUE(a.plant.A.isApprox(b.plant.A, 1e-11));
  EXPECT_TRUE(a.primary.D.isApprox(b.primary.D, 1e-11));
  EXPECT_EQ(a.attack.Q3.mat(), b.attack.Q3.mat());
  EXPECT_EQ(a.sector.S2, b.sector.S2);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_EQ(ModelToJson(a), ModelToJson(b));
}

TEST(ModelFile, MissingFile) {
  EXPECT_THROW(LoadModel(kData + "/does_not_exist.json"), ModelError);
}

TEST(MatJson, Conventions) {
  std::vector<std::string> issues;
  EXPECT_EQ(MatFromJson(nlohmann::json(2.5), "/x", &issues), Mat::Constant(1, 1, 2.5));
  const Mat row = MatFromJson(nlohmann::json::parse("[1, 2, 3]"), "/x", &issues);
  EXPECT_EQ(row.rows(), 1);
  EXPECT_EQ(row.cols(), 3);
  EXPECT_TRUE(issues.empty());
  EXPECT_EQ(MatToJson(Mat::Zero(0, 0)), nlohmann::json::array());
  EXPECT_EQ(Round12(1.0 / 3.0), 0.333333333333);
}

}  // namespace
}  // namespace safeguard
