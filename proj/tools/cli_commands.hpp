#pragma once

#include <string>
#include <vector>

#include "nest/runconfig.hpp"

namespace nest::cli {

// Keys a command refuses to run without (callers merge these into
// parse_config's `required` list).
std::vector<std::string> required_keys(const std::string& command);

int run_gen_data(const RunConfig& cfg, const std::string& out_dir);
int run_pretrain(const RunConfig& cfg, const std::string& out_dir);
int run_eval_set(const RunConfig& cfg, const std::string& out_dir);
int run_nbr(const RunConfig& cfg, const std::string& out_dir);
int run_bench(const RunConfig& cfg, const std::string& out_dir);

// Routes to the command implementations; unknown command returns nonzero
// after printing usage. Errors surface as a diagnostic plus nonzero exit.
int dispatch(const std::string& command, const RunConfig& cfg, const std::string& out_dir);

std::string usage();

}  // namespace nest::cli
