// Command-line driver for the area-level Beta regression pipeline.
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>

#include "CLI11.hpp"
#include "spatbeta/error.hpp"
#include "spatbeta/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Spatial Beta regression of area-level claim rates"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::string seed;
  std::string models;
  std::string links;
  int parallel = 0;
  bool mcmc_check = false;

  const std::pair<const char*, const char*> commands[] = {
      {"mesh", "triangulate the region into areas"},
      {"aggregate", "join providers and tax data into per-area rates"},
      {"select", "choose covariates by cross-validated lasso"},
      {"fit", "fit every model and link on the training areas"},
      {"report", "write criterion grids, predictions and the map"},
      {"run", "all stages in order"},
  };
  for (const auto& [name, description] : commands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "run configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    sub->add_option("--seed", seed, "master seed (overrides config)");
    sub->add_option("--models", models, "comma-separated model kinds");
    sub->add_option("--links", links, "comma-separated link names");
    sub->add_option("--parallel", parallel, "maximum concurrent fits");
    sub->add_flag("--mcmc-check", mcmc_check, "compare each fit against an MCMC run");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  spatbeta::RunConfig config;
  try {
    config = spatbeta::RunConfig::load(config_path);
    const fs::path cwd = fs::current_path();
    if (!out_dir.empty()) config.set("out", out_dir, cwd);
    if (!seed.empty()) config.set("seed", seed, cwd);
    if (!models.empty()) config.set("models", models, cwd);
    if (!links.empty()) config.set("links", links, cwd);
    if (parallel > 0) config.set("parallel", std::to_string(parallel), cwd);
    if (mcmc_check) config.mcmc_check = true;
    config.finalize();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return spatbeta::run_command(command, config, std::cout, std::cerr);
}
