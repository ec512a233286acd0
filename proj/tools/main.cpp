#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "cli_commands.hpp"
#include "nest/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"NEST: hierarchical transformer for event multiset sequences"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;

  for (const std::string name : {"gen-data", "pretrain", "eval-set", "nbr", "bench"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_file, "sectioned key=value configuration file");
    sub->add_option("--set", overrides, "override, e.g. --set model.d_model=128")
        ->take_all();
    sub->add_option("--out", out_dir, "output directory")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  nest::RunConfig cfg;
  try {
    cfg = nest::parse_config(config_file, overrides, nest::cli::required_keys(command));
  } catch (const nest::Error& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return nest::cli::dispatch(command, cfg, out_dir);
}
