#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "diffem/error.hpp"
#include "diffem/experiments.hpp"

namespace ex = diffem::experiments;

int main(int argc, char** argv) {
  CLI::App app{"diffem: differentiable finite element experiments"};
  std::string experiment, subcommand, config_path, out = "out";
  std::uint64_t seed = 0;
  app.add_option("experiment", experiment, "helmholtz | divfree | heat | constitutive | seismic")->required();
  app.add_option("subcommand", subcommand,
                 "helmholtz: adjoint; divfree: loss; heat, constitutive: gen | train | eval; seismic: pretrain | invert")
      ->required();
  app.add_option("--config", config_path, "JSON config file (defaults apply to missing keys)");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ex::RunContext ctx;
    ctx.seed = seed;
    ctx.out = out;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw diffem::Error(diffem::ErrorKind::InvalidConfig, "cannot read config '" + config_path + "'");
      std::stringstream s;
      s << f.rdbuf();
      ctx.config = ex::Json::parse(s.str());
    }
    const ex::Json metrics = ex::run(experiment, subcommand, ctx);
    std::cout << metrics.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "diffem: " << e.what() << "\n";
    return ex::exit_code_for(e);
  }
}
