#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nest/model.hpp"
#include "nest/train.hpp"

namespace nest {

// Fully resolved run configuration. Sources merge with precedence
// defaults < config file < command-line overrides; NEST_SEED (environment)
// overrides the seed last. Unknown keys are rejected.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // [model]
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t n_heads = 2;
  std::size_t d_head = 32;
  std::size_t vocab_size = 0;  // 0 = derive from the dataset
  std::size_t n = 8;
  std::size_t m = 8;
  double rope_base = 10000.0;
  double dropout = 0.0;
  std::size_t probe_classes = 2;
  bool cls_time2vec = true;

  // [data]
  std::string dataset;
  std::string orders_csv;
  std::string products_csv;
  double sample_fraction = 1.0;
  std::size_t min_count = 1;
  std::size_t subjects = 200;
  std::size_t topics = 4;
  double stickiness = 0.9;
  double noise = 0.1;

  // [train]
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double mlm_rate = 0.20;
  double msm_rate = 0.40;
  double msm_weight = 1.0;
  std::size_t validation_k = 10;
  std::string validation_decoder = "tied";
  std::size_t patience = 3;

  // [eval]
  std::size_t eval_k = 10;
  std::string eval_decoder = "tied";
  std::string checkpoint;

  // [bench]
  std::size_t bench_batch = 4;
  std::size_t bench_trials = 30;
  std::size_t bench_warmup = 3;
  bool bench_measure = false;
  std::size_t bench_threads = 1;
  bool bench_sweep = false;

  NestConfig to_nest_config() const;
  TrainConfig to_train_config() const;

  // Sectioned key=value text of every resolved key; re-parses to an equal
  // config.
  std::string echo() const;
};

// `file_path` empty = defaults only. Overrides are "section.key=value".
// `required` keys must have been set by the file or an override.
RunConfig parse_config(const std::string& file_path, const std::vector<std::string>& overrides,
                       const std::vector<std::string>& required = {});

}  // namespace nest
