#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "diffem/error.hpp"
#include "diffem/experiments.hpp"
#include "experiments/common.hpp"

using namespace diffem;
using namespace diffem::experiments;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("diffem_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Unsupported;
}

}  // namespace

TEST(Experiments, ConfigValidation) {
  Config c(Json::parse(R"({"n": 4, "alpha": -1, "name": "x", "extra": true})"));
  EXPECT_EQ(c.integer("n", 1, 1, 10), 4);
  EXPECT_EQ(c.integer("missing", 7, 1, 10), 7);
  EXPECT_EQ(kind_of([&] { c.real("alpha", 0.0, 0.0, 1.0); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { c.text("name", "", {"a", "b"}); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { c.finish(); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([] { Config(Json::array()); }), ErrorKind::InvalidConfig);
}

TEST(Experiments, ExitCodes) {
  EXPECT_EQ(exit_code_for(Error(ErrorKind::InvalidConfig, "")), 2);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::NotFound, "")), 2);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::NumericalFailure, "")), 3);
  EXPECT_EQ(exit_code_for(NonlinearDivergence("", {})), 3);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::TrainingFailure, "")), 3);
}

TEST(Experiments, StreamSeedsDiffer) {
  EXPECT_NE(stream_seed(1, "a"), stream_seed(1, "b"));
  EXPECT_NE(stream_seed(1, "a"), stream_seed(2, "a"));
  EXPECT_EQ(stream_seed(5, "x"), stream_seed(5, "x"));
}

TEST(Experiments, DispatchRejectsUnknownNames) {
  RunContext ctx;
  ctx.out = fresh_dir("dispatch");
  EXPECT_EQ(kind_of([&] { run("nope", "x", ctx); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { run("heat", "fly", ctx); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { run("heat", "train", ctx); }), ErrorKind::NotFound);
}

TEST(Experiments, DivfreeOracles) {
  RunContext ctx;
  ctx.out = fresh_dir("divfree");
  ctx.config = Json::parse(R"({"n": 4, "alpha": 1.0})");
  const Json m = divfree_loss(ctx);
  EXPECT_LT(m["loss_rotation_matched"].get<double>(), 1e-12);
  EXPECT_NEAR(m["loss_expansion"].get<double>(), 2.0 / 3.0 + 4.0, 1e-12);
  EXPECT_LT(m["alpha0_relative_gap"].get<double>(), 1e-12);
  EXPECT_TRUE(fs::exists(ctx.out / "metrics.json"));
  EXPECT_TRUE(fs::exists(ctx.out / "fields" / "random_pair.csv"));
  const std::string first = slurp(ctx.out / "metrics.json");
  divfree_loss(ctx);
  EXPECT_EQ(slurp(ctx.out / "metrics.json"), first);
}

TEST(Experiments, SeismicCflViolationIsInvalidConfig) {
  RunContext ctx;
  ctx.out = fresh_dir("cfl");
  ctx.config = Json::parse(R"({"n": 8, "dt": 0.5, "regulariser": "none"})");
  EXPECT_EQ(kind_of([&] { seismic("invert", ctx); }), ErrorKind::InvalidConfig);
}
