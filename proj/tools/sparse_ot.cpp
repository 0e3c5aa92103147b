// sparse_ot: run solves, solver comparisons, clustering and routing from
// JSON configs.

#include "sparseot/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Sparsity-constrained optimal transport"};
  app.require_subcommand(1);

  std::string config;
  auto* solve = app.add_subcommand("solve", "solve one problem; writes plan.csv, trace.csv, report.json");
  solve->add_option("config", config, "JSON config")->required();
  auto* compare = app.add_subcommand("compare", "cross formulations, regularizers and solvers");
  compare->add_option("config", config, "JSON config")->required();
  auto* cluster = app.add_subcommand("cluster", "balanced clustering with an OT E-step");
  cluster->add_option("config", config, "JSON config")->required();
  auto* route = app.add_subcommand("route", "capacity-constrained expert gating");
  route->add_option("config", config, "JSON config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sparseot::cli::kExitConfig;
  }

  using namespace sparseot::cli;
  if (*solve) return cmd_solve(config, std::cout, std::cerr);
  if (*compare) return cmd_compare(config, std::cout, std::cerr);
  if (*cluster) return cmd_cluster(config, std::cout, std::cerr);
  return cmd_route(config, std::cout, std::cerr);
}
