#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nest/inference.hpp"
#include "nest/masking.hpp"
#include "nest/model.hpp"
#include "nest/optim.hpp"

namespace nest {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;  // linear warmup, then constant
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double mlm_rate = 0.20;
  double msm_rate = 0.40;
  double msm_weight = 1.0;  // combined loss = mlm + msm_weight * msm
  std::size_t validation_k = 10;
  SetDecoder validation_decoder = SetDecoder::kTied;
  std::size_t patience = 3;
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLosses {
  double mlm = 0.0;
  double msm = 0.0;
  bool had_mlm = false;
  bool had_msm = false;
  bool skipped = false;
};

// One two-pass update: forward/backward the MLM view, release its
// activations, forward/backward the weighted MSM view, then a single
// optimizer step. A batch with nothing to supervise in either view is
// skipped. Reported losses are unweighted.
StepLosses pretrain_step(NestModel& model, const MaskedBatch& batch, AdamW& optim,
                         const TrainConfig& cfg, double lr_scale = 1.0,
                         std::mt19937_64* dropout_rng = nullptr);

struct ValidationMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  double mlm_loss = 0.0;
  double msm_loss = 0.0;
  std::size_t masked_sets = 0;
  std::size_t skipped_empty = 0;  // masked sets with no non-PAD ground truth
};

// Set-based validation: full-set masking at msm_rate (at least one set per
// subject), vocabulary ranked per masked set from its final CLS state with
// the chosen decoder, Recall@K / NDCG@K averaged over masked sets. The seed
// is fixed by the caller so epochs are compared on identical maskings.
ValidationMetrics validate_set_metrics(const NestModel& model, const std::vector<SeqSet>& val,
                                       std::size_t k, SetDecoder decoder, double mlm_rate,
                                       double msm_rate, std::uint64_t seed);

struct EpochRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global optimizer steps so far
  double mlm_loss = 0.0;
  double msm_loss = 0.0;
  double recall_at_k = 0.0;
  double ndcg_at_k = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRow> rows;
  std::size_t best_epoch = 0;
  double best_ndcg = -1.0;
  bool early_stopped = false;
  std::size_t skipped_steps = 0;
  std::string config_echo;
};

using ValidationHook =
    std::function<ValidationMetrics(const NestModel& model, std::size_t epoch)>;

struct FitOptions {
  std::string out_dir;       // when set: metrics.csv, report.txt, checkpoint.*
  std::string config_echo;   // resolved run configuration, embedded in artifacts
  std::string dataset_hash;  // content hash of the input dataset
  ValidationHook validation_override;  // tests inject metric sequences
};

// Epoch loop of pretrain_step with set-based validation, NDCG early stopping
// (patience epochs without improvement) and best-checkpoint retention. The
// model is left at its best-epoch weights.
TrainReport fit(NestModel& model, const std::vector<SeqSet>& train_data,
                const std::vector<SeqSet>& val_data, const TrainConfig& cfg,
                const FitOptions& opts = {});

std::string train_config_echo(const TrainConfig& cfg);

}  // namespace nest
