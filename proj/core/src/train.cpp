#include "nest/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "nest/checkpoint.hpp"
#include "nest/error.hpp"
#include "nest/ops.hpp"
#include "nest/util.hpp"

namespace nest {

void TrainConfig::validate() const {
  if (!(mlm_rate >= 0.0 && mlm_rate < 1.0) || !(msm_rate >= 0.0 && msm_rate < 1.0)) {
    throw ConfigError("train config: masking rates must lie in [0, 1)");
  }
  if (msm_weight < 0.0) throw ConfigError("train config: msm_weight must be >= 0");
  if (patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (batch_size < 1 || epochs < 1) throw ConfigError("train config: batch_size/epochs >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
    throw ConfigError("train config: warmup_fraction outside [0, 1]");
  }
  if (workers < 1) throw ConfigError("train config: workers must be >= 1");
}

StepLosses pretrain_step(NestModel& model, const MaskedBatch& batch, AdamW& optim,
                         const TrainConfig& cfg, double lr_scale, std::mt19937_64* dropout_rng) {
  StepLosses losses;
  bool have_mlm = false;
  for (auto s : batch.mlm.supervise) {
    if (s) {
      have_mlm = true;
      break;
    }
  }
  const bool have_msm = cfg.msm_weight > 0.0 && batch.msm.num_selected > 0;
  if (!have_mlm && !have_msm) {
    losses.skipped = true;
    return losses;
  }

  optim.zero_grad();
  Tape tape;
  const std::size_t vocab = model.config().vocab_size;

  if (have_mlm) {
    TapeScope scope(tape);
    ModelInput in = input_from_mlm(batch);
    Tensor hidden = model.encode(in, dropout_rng);

    std::vector<std::size_t> rows;
    std::vector<std::int32_t> targets;
    for (std::size_t r = 0; r < batch.mlm.supervise.size(); ++r) {
      if (batch.mlm.supervise[r]) {
        rows.push_back(r);
        targets.push_back(batch.mlm.targets[r]);
      }
    }
    Tensor logits = model.mlm_logits(gather_rows(hidden, rows));
    Tensor loss = masked_cross_entropy(logits, targets,
                                       std::vector<std::uint8_t>(targets.size(), 1));
    losses.mlm = loss.item();
    losses.had_mlm = true;
    tape.backward(loss);
    tape.clear();  // drop MLM activations before the second pass
  }

  if (have_msm) {
    TapeScope scope(tape);
    ModelInput in = input_from_msm(batch);
    Tensor hidden = model.encode(in, dropout_rng);

    std::vector<std::size_t> cls_rows;
    const std::size_t m = model.config().m;
    const std::size_t n = model.config().n;
    for (std::size_t s = 0; s < batch.msm.set_selected.size(); ++s) {
      if (batch.msm.set_selected[s]) cls_rows.push_back(s * n);
    }
    (void)m;
    Tensor cls = gather_rows(hidden, cls_rows);
    Tensor logits = model.msm_logits(cls);
    Tensor p = Tensor::from_data({batch.msm.num_selected, vocab}, batch.msm.targets);
    Tensor kl = kl_simplex_loss(p, logits);
    losses.msm = kl.item();
    losses.had_msm = true;
    Tensor weighted = scale(kl, cfg.msm_weight);
    tape.backward(weighted);
    tape.clear();
  }

  optim.step(lr_scale);
  return losses;
}

ValidationMetrics validate_set_metrics(const NestModel& model, const std::vector<SeqSet>& val,
                                       std::size_t k, SetDecoder decoder, double mlm_rate,
                                       double msm_rate, std::uint64_t seed) {
  if (val.empty()) throw InputError("validate_set_metrics: empty validation data");
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t n = model.config().n;
  const std::size_t m = model.config().m;

  ValidationMetrics out;
  double recall_sum = 0.0;
  double ndcg_sum = 0.0;
  double msm_loss_sum = 0.0;
  std::size_t msm_sets = 0;
  double mlm_loss_sum = 0.0;
  std::size_t mlm_positions = 0;

  const std::size_t batch_size = 16;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < val.size(); begin += batch_size, ++batch_index) {
    const std::size_t end = std::min(begin + batch_size, val.size());
    std::vector<SeqSet> batch(val.begin() + static_cast<std::ptrdiff_t>(begin),
                              val.begin() + static_cast<std::ptrdiff_t>(end));

    // Full-set masking with at least one masked set per subject.
    std::mt19937_64 rng(derive_seed(seed, 0x76616c, batch_index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::uint8_t> selected;
    selected.reserve(batch.size() * m);
    for (const SeqSet& s : batch) {
      std::vector<std::size_t> valid_sets;
      std::size_t chosen = 0;
      const std::size_t base = selected.size();
      for (std::size_t i = 0; i < s.m; ++i) {
        bool pick = s.set_valid[i] && unit(rng) < msm_rate;
        if (s.set_valid[i]) valid_sets.push_back(i);
        selected.push_back(pick ? 1 : 0);
        chosen += pick;
      }
      if (chosen == 0 && !valid_sets.empty()) {
        const std::size_t forced = valid_sets[rng() % valid_sets.size()];
        selected[base + forced] = 1;
      }
    }

    ModelInput in = input_from_subjects(batch);
    std::vector<double> msm_targets;
    std::vector<std::size_t> cls_rows;
    std::vector<std::size_t> mask_rows;  // first masked slot per selected set
    std::vector<std::pair<std::size_t, std::size_t>> origin;  // (subject, set)
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t flat_set = b * m + i;
        if (!selected[flat_set]) continue;
        auto p = empirical_set_distribution(batch[b].tokens.data() + i * n, n, vocab);
        msm_targets.insert(msm_targets.end(), p.begin(), p.end());
        cls_rows.push_back(flat_set * n);
        mask_rows.push_back(flat_set * n + 1);
        origin.emplace_back(b, i);
        for (std::size_t j = 1; j < n; ++j) {
          in.tokens[flat_set * n + j] = Vocab::kMask;
          in.token_valid[flat_set * n + j] = 1;
        }
      }
    }
    if (cls_rows.empty()) continue;

    Tensor hidden = model.encode(in);
    Tensor cls = gather_rows(hidden, cls_rows);
    Tensor head_logits = model.msm_logits(cls);
    Tensor p = Tensor::from_data({cls_rows.size(), vocab}, msm_targets);
    msm_loss_sum += kl_simplex_loss(p, head_logits).item() * static_cast<double>(cls_rows.size());
    msm_sets += cls_rows.size();

    // Tied ranking reads a masked-slot state (the MLM-analogous protocol);
    // the task head ranks from the CLS state it was trained on.
    Tensor rank_scores = decoder == SetDecoder::kTied
                             ? model.mlm_logits(gather_rows(hidden, mask_rows))
                             : head_logits;
    for (std::size_t r = 0; r < cls_rows.size(); ++r) {
      const auto [b, i] = origin[r];
      auto truth = ground_truth_set(batch[b], i);
      if (truth.empty()) {
        ++out.skipped_empty;
        continue;
      }
      auto ranked = rank_top_k(rank_scores.data().data() + r * vocab, vocab, k);
      recall_sum += recall_at_k(truth, ranked, k);
      ndcg_sum += ndcg_at_k(truth, ranked, k);
      ++out.masked_sets;
    }

    // Token-level validation losses on an independent MLM masking.
    if (mlm_rate > 0.0) {
      std::mt19937_64 mlm_rng(derive_seed(seed, 0x766d6c6d, batch_index));
      MlmOptions opt;
      opt.rate = mlm_rate;
      MlmView view = apply_mlm_mask(batch, vocab, opt, mlm_rng);
      std::vector<std::size_t> rows;
      std::vector<std::int32_t> targets;
      for (std::size_t r = 0; r < view.supervise.size(); ++r) {
        if (view.supervise[r]) {
          rows.push_back(r);
          targets.push_back(view.targets[r]);
        }
      }
      if (!rows.empty()) {
        ModelInput mlm_in = input_from_subjects(batch);
        mlm_in.tokens = view.tokens;
        Tensor mlm_hidden = model.encode(mlm_in);
        Tensor logits = model.mlm_logits(gather_rows(mlm_hidden, rows));
        Tensor loss = masked_cross_entropy(logits, targets,
                                           std::vector<std::uint8_t>(targets.size(), 1));
        mlm_loss_sum += loss.item() * static_cast<double>(rows.size());
        mlm_positions += rows.size();
      }
    }
  }

  if (out.masked_sets > 0) {
    out.recall = recall_sum / static_cast<double>(out.masked_sets);
    out.ndcg = ndcg_sum / static_cast<double>(out.masked_sets);
  }
  if (msm_sets > 0) out.msm_loss = msm_loss_sum / static_cast<double>(msm_sets);
  if (mlm_positions > 0) out.mlm_loss = mlm_loss_sum / static_cast<double>(mlm_positions);
  return out;
}

std::string train_config_echo(const TrainConfig& cfg) {
  std::ostringstream ss;
  ss << "lr=" << format_double(cfg.lr) << " beta1=" << format_double(cfg.beta1)
     << " beta2=" << format_double(cfg.beta2) << " adam_eps=" << format_double(cfg.adam_eps)
     << " weight_decay=" << format_double(cfg.weight_decay)
     << " warmup_fraction=" << format_double(cfg.warmup_fraction)
     << " batch_size=" << cfg.batch_size << " epochs=" << cfg.epochs
     << " mlm_rate=" << format_double(cfg.mlm_rate) << " msm_rate=" << format_double(cfg.msm_rate)
     << " msm_weight=" << format_double(cfg.msm_weight) << " validation_k=" << cfg.validation_k
     << " validation_decoder="
     << (cfg.validation_decoder == SetDecoder::kTied ? "tied" : "msm_head")
     << " patience=" << cfg.patience << " workers=" << cfg.workers << " seed=" << cfg.seed;
  return ss.str();
}

namespace {

std::vector<std::uint8_t> decay_mask_for(const NestModel& model) {
  std::vector<std::uint8_t> mask;
  for (const auto& [name, t] : model.named_parameters()) {
    const bool skip = name.find("gain") != std::string::npos || name.rfind("t2v.", 0) == 0;
    mask.push_back(skip ? 0 : 1);
  }
  return mask;
}

std::string csv_preamble(const FitOptions& opts, const TrainConfig& cfg) {
  std::ostringstream ss;
  ss << "# config: " << (opts.config_echo.empty() ? train_config_echo(cfg) : opts.config_echo)
     << '\n';
  if (!opts.dataset_hash.empty()) ss << "# dataset_sha1: " << opts.dataset_hash << '\n';
  return ss.str();
}

}  // namespace

TrainReport fit(NestModel& model, const std::vector<SeqSet>& train_data,
                const std::vector<SeqSet>& val_data, const TrainConfig& cfg,
                const FitOptions& opts) {
  cfg.validate();
  if (train_data.empty()) throw InputError("fit: empty training data");
  if (val_data.empty() && !opts.validation_override) {
    throw InputError("fit: empty validation data");
  }

  AdamW optim(model.parameters(),
              AdamWConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay},
              decay_mask_for(model));

  const std::size_t vocab = model.config().vocab_size;
  const std::size_t steps_per_epoch =
      (train_data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  const std::size_t warmup_steps = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps))));

  TrainReport report;
  report.config_echo = opts.config_echo.empty() ? train_config_echo(cfg) : opts.config_echo;

  const bool write_artifacts = !opts.out_dir.empty();
  std::ofstream metrics_csv;
  if (write_artifacts) {
    std::filesystem::create_directories(opts.out_dir);
    metrics_csv.open(opts.out_dir + "/metrics.csv", std::ios::binary);
    if (!metrics_csv) throw InputError("fit: cannot write metrics.csv");
    metrics_csv << csv_preamble(opts, cfg);
    metrics_csv << "epoch,step,mlm_loss,msm_loss,recall_at_k,ndcg_at_k,seconds\n";
  }

  // Best-epoch weights retained in memory; the disk checkpoint mirrors them.
  std::vector<std::vector<double>> best_weights;
  const std::uint64_t validation_seed = derive_seed(cfg.seed, 0x76616c6964);
  std::size_t global_step = 0;
  std::size_t epochs_since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x73687566, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    // Batch masking is seeded per (epoch, batch) so results are identical
    // whether views are computed inline or by worker threads running ahead.
    auto make_batch = [&](std::size_t batch_idx) {
      const std::size_t begin = batch_idx * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, train_data.size());
      std::vector<SeqSet> subjects;
      subjects.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) subjects.push_back(train_data[order[i]]);
      return make_masked_batch(std::move(subjects), vocab, cfg.mlm_rate, cfg.msm_rate,
                               derive_seed(cfg.seed, epoch, batch_idx));
    };

    std::deque<std::future<MaskedBatch>> ahead;
    std::size_t next_scheduled = 0;
    if (cfg.workers > 1) {
      while (next_scheduled < steps_per_epoch && ahead.size() < cfg.workers) {
        ahead.push_back(std::async(std::launch::async, make_batch, next_scheduled));
        ++next_scheduled;
      }
    }

    double mlm_sum = 0.0;
    std::size_t mlm_count = 0;
    double msm_sum = 0.0;
    std::size_t msm_count = 0;

    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      MaskedBatch batch;
      if (cfg.workers > 1) {
        batch = ahead.front().get();
        ahead.pop_front();
        if (next_scheduled < steps_per_epoch) {
          ahead.push_back(std::async(std::launch::async, make_batch, next_scheduled));
          ++next_scheduled;
        }
      } else {
        batch = make_batch(b);
      }

      ++global_step;
      const double lr_scale =
          std::min(1.0, static_cast<double>(global_step) / static_cast<double>(warmup_steps));
      std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 0x64726f70, global_step));
      std::mt19937_64* rng_ptr = model.config().dropout > 0.0 ? &dropout_rng : nullptr;
      StepLosses losses = pretrain_step(model, batch, optim, cfg, lr_scale, rng_ptr);
      if (losses.skipped) {
        ++report.skipped_steps;
        continue;
      }
      if (losses.had_mlm) {
        if (!std::isfinite(losses.mlm)) {
          throw TrainingError("fit: non-finite MLM loss at step " + std::to_string(global_step));
        }
        mlm_sum += losses.mlm;
        ++mlm_count;
      }
      if (losses.had_msm) {
        if (!std::isfinite(losses.msm)) {
          throw TrainingError("fit: non-finite MSM loss at step " + std::to_string(global_step));
        }
        msm_sum += losses.msm;
        ++msm_count;
      }
    }

    ValidationMetrics metrics =
        opts.validation_override
            ? opts.validation_override(model, epoch)
            : validate_set_metrics(model, val_data, cfg.validation_k, cfg.validation_decoder,
                                   cfg.mlm_rate, cfg.msm_rate, validation_seed);

    EpochRow row;
    row.epoch = epoch;
    row.step = global_step;
    row.mlm_loss = mlm_count > 0 ? mlm_sum / static_cast<double>(mlm_count) : 0.0;
    row.msm_loss = msm_count > 0 ? msm_sum / static_cast<double>(msm_count) : 0.0;
    row.recall_at_k = metrics.recall;
    row.ndcg_at_k = metrics.ndcg;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                      .count();
    report.rows.push_back(row);

    if (write_artifacts) {
      metrics_csv << row.epoch << ',' << row.step << ',' << format_double(row.mlm_loss) << ','
                  << format_double(row.msm_loss) << ',' << format_double(row.recall_at_k) << ','
                  << format_double(row.ndcg_at_k) << ',' << format_double(row.seconds) << '\n';
      metrics_csv.flush();
    }

    if (metrics.ndcg > report.best_ndcg) {
      report.best_ndcg = metrics.ndcg;
      report.best_epoch = epoch;
      epochs_since_best = 0;
      best_weights.clear();
      for (const Tensor& p : model.parameters()) best_weights.push_back(p.data());
      if (write_artifacts) {
        save_model_checkpoint(opts.out_dir + "/checkpoint", model, &optim,
                              {{"epoch", static_cast<double>(epoch)},
                               {"global_step", static_cast<double>(global_step)},
                               {"ndcg", metrics.ndcg}});
      }
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) {
        report.early_stopped = true;
        break;
      }
    }
  }

  // Leave the model at its best validation point.
  if (!best_weights.empty()) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = best_weights[i];
  }

  if (write_artifacts) {
    std::ostringstream rep;
    rep << "pretraining report\n";
    rep << "config: " << report.config_echo << '\n';
    if (!opts.dataset_hash.empty()) rep << "dataset_sha1: " << opts.dataset_hash << '\n';
    rep << "epochs_run: " << report.rows.size() << '\n';
    rep << "skipped_steps: " << report.skipped_steps << '\n';
    rep << "early_stopped: " << (report.early_stopped ? "yes" : "no") << '\n';
    rep << "best_epoch: " << report.best_epoch << " ndcg@" << cfg.validation_k << "="
        << format_double(report.best_ndcg) << '\n';
    for (const EpochRow& r : report.rows) {
      rep << "epoch " << r.epoch << ": mlm=" << format_double(r.mlm_loss)
          << " msm=" << format_double(r.msm_loss) << " recall=" << format_double(r.recall_at_k)
          << " ndcg=" << format_double(r.ndcg_at_k) << '\n';
    }
    write_text_file(opts.out_dir + "/report.txt", rep.str());
  }
  return report;
}

}  // namespace nest
