#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nest/model.hpp"
#include "nest/optim.hpp"

namespace nest {

// Checkpoint = <base>.manifest (JSON: config echo, meta scalars, tensor
// directory) + <base>.blob (raw little-endian doubles). Loading validates
// every shape/offset before touching any destination tensor.
struct Checkpoint {
  std::string config_json;
  std::map<std::string, double> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& base_path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const std::string& config_json, const std::map<std::string, double>& meta);

Checkpoint load_checkpoint(const std::string& base_path);

// Copies checkpoint tensors into same-named destination tensors; every
// destination must be matched with identical shape.
void copy_checkpoint_into(const Checkpoint& ckpt,
                          const std::vector<std::pair<std::string, Tensor>>& dest);

std::string nest_config_to_json(const NestConfig& cfg);
NestConfig nest_config_from_json(const std::string& json_text);

// Model-level wrappers: weights (+ optimizer moments when given).
void save_model_checkpoint(const std::string& base_path, const NestModel& model,
                           const AdamW* optim, std::map<std::string, double> meta);

struct LoadedModel {
  NestModel model;
  std::map<std::string, double> meta;
  bool has_optim_state = false;
  std::vector<std::vector<double>> optim_m;
  std::vector<std::vector<double>> optim_v;
  std::size_t optim_step = 0;
};

LoadedModel load_model_checkpoint(const std::string& base_path);

}  // namespace nest
