#include "cli_commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nest/checkpoint.hpp"
#include "nest/cost.hpp"
#include "nest/error.hpp"
#include "nest/inference.hpp"
#include "nest/instacart.hpp"
#include "nest/synthetic.hpp"
#include "nest/train.hpp"
#include "nest/util.hpp"

namespace nest::cli {

namespace {

namespace fs = std::filesystem;

void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("an --out directory is required");
  fs::create_directories(out_dir);
}

struct LoadedData {
  std::string source_path;  // hashed into artifacts
  std::vector<RawSubject> subjects;
};

LoadedData load_raw_data(const RunConfig& cfg) {
  LoadedData data;
  if (!cfg.dataset.empty()) {
    data.source_path = cfg.dataset;
    data.subjects = load_jsonl(cfg.dataset);
  } else if (!cfg.orders_csv.empty()) {
    if (cfg.products_csv.empty()) {
      throw ConfigError("data.products_csv is required with data.orders_csv");
    }
    data.source_path = cfg.orders_csv;
    data.subjects = ingest_instacart(cfg.orders_csv, cfg.products_csv, cfg.sample_fraction);
  } else {
    throw ConfigError("set data.dataset (JSONL) or data.orders_csv/data.products_csv");
  }
  return data;
}

struct PreparedSplits {
  Vocab vocab;
  std::vector<SeqSet> train, valid, test;
};

PreparedSplits prepare_splits(const std::vector<RawSubject>& subjects, const RunConfig& cfg,
                              const Vocab* fixed_vocab) {
  PreparedSplits out;
  std::vector<const RawSubject*> train_raw;
  std::vector<const RawSubject*> valid_raw;
  std::vector<const RawSubject*> test_raw;
  for (const RawSubject& s : subjects) {
    if (s.sets.empty()) continue;
    switch (subject_split(s.subject_id)) {
      case Split::kTrain: train_raw.push_back(&s); break;
      case Split::kValid: valid_raw.push_back(&s); break;
      case Split::kTest: test_raw.push_back(&s); break;
    }
  }
  if (fixed_vocab != nullptr) {
    out.vocab = *fixed_vocab;
  } else {
    std::vector<std::string> stream;
    for (const RawSubject* s : train_raw) {
      for (const RawSet& set : s->sets) {
        stream.insert(stream.end(), set.tokens.begin(), set.tokens.end());
      }
    }
    out.vocab = Vocab::build(stream, cfg.min_count);
  }
  auto pad_all = [&](const std::vector<const RawSubject*>& raw, std::vector<SeqSet>& dst) {
    for (const RawSubject* s : raw) dst.push_back(pad_truncate(*s, out.vocab, cfg.n, cfg.m));
  };
  pad_all(train_raw, out.train);
  pad_all(valid_raw, out.valid);
  pad_all(test_raw, out.test);
  return out;
}

std::size_t resolve_vocab_size(const RunConfig& cfg, const Vocab& vocab) {
  if (cfg.vocab_size == 0) return vocab.size();
  if (cfg.vocab_size != vocab.size()) {
    throw ConfigError("model.vocab_size=" + std::to_string(cfg.vocab_size) +
                      " disagrees with the dataset vocabulary (" + std::to_string(vocab.size()) +
                      "); use 0 to derive it");
  }
  return cfg.vocab_size;
}

SetDecoder decoder_from(const std::string& name) {
  if (name == "tied") return SetDecoder::kTied;
  if (name == "msm_head") return SetDecoder::kMsmHead;
  throw ConfigError("decoder must be tied|msm_head, got '" + name + "'");
}

void write_artifact_header(std::ostream& os, const RunConfig& cfg, const std::string& hash) {
  std::istringstream echo(cfg.echo());
  std::string line;
  os << "# resolved config\n";
  while (std::getline(echo, line)) os << "# " << line << '\n';
  if (!hash.empty()) os << "# dataset_sha1: " << hash << '\n';
}

}  // namespace

std::vector<std::string> required_keys(const std::string& command) {
  if (command == "pretrain" || command == "eval-set" || command == "nbr") {
    return {"model.d_model", "model.layers", "model.d_ff", "model.n_heads",
            "model.d_head",  "model.n",      "model.m"};
  }
  if (command == "bench") {
    return {"model.d_model", "model.layers", "model.d_ff",
            "model.n_heads", "model.d_head", "model.vocab_size",
            "model.n",       "model.m"};
  }
  return {};
}

int run_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  SyntheticConfig synth;
  synth.num_subjects = cfg.subjects;
  synth.m = cfg.m;
  synth.n = cfg.n;
  synth.vocab_size = cfg.vocab_size != 0 ? cfg.vocab_size : 128;
  synth.num_topics = cfg.topics;
  synth.stickiness = cfg.stickiness;
  synth.noise = cfg.noise;
  synth.seed = cfg.seed;

  auto subjects = generate_synthetic(synth);
  const std::string path = out_dir + "/dataset.jsonl";
  save_jsonl(subjects, path);

  std::ostringstream report;
  write_artifact_header(report, cfg, git_blob_sha1(path));
  report << "subjects: " << subjects.size() << '\n';
  write_text_file(out_dir + "/report.txt", report.str());
  std::cout << "wrote " << subjects.size() << " subjects to " << path << '\n';
  return 0;
}

int run_pretrain(const RunConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  LoadedData data = load_raw_data(cfg);
  PreparedSplits splits = prepare_splits(data.subjects, cfg, nullptr);
  if (splits.train.empty() || splits.valid.empty()) {
    throw InputError("pretrain: train or validation split is empty");
  }
  splits.vocab.save(out_dir + "/vocab.txt");

  NestConfig model_cfg = cfg.to_nest_config();
  model_cfg.vocab_size = resolve_vocab_size(cfg, splits.vocab);
  NestModel model = NestModel::init(model_cfg);

  FitOptions opts;
  opts.out_dir = out_dir;
  opts.config_echo = cfg.echo();
  opts.dataset_hash = git_blob_sha1(data.source_path);
  TrainReport report = fit(model, splits.train, splits.valid, cfg.to_train_config(), opts);

  std::cout << "pretrain finished: " << report.rows.size() << " epochs, best epoch "
            << report.best_epoch << " (ndcg@" << cfg.validation_k << "="
            << format_double(report.best_ndcg) << ")\n";
  return 0;
}

int run_eval_set(const RunConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  if (cfg.checkpoint.empty()) throw ConfigError("eval.checkpoint is required");
  LoadedModel loaded = load_model_checkpoint(cfg.checkpoint);
  const fs::path ckpt_dir = fs::path(cfg.checkpoint).parent_path();
  Vocab vocab = Vocab::load((ckpt_dir / "vocab.txt").string());

  LoadedData data = load_raw_data(cfg);
  PreparedSplits splits = prepare_splits(data.subjects, cfg, &vocab);
  if (splits.test.empty()) throw InputError("eval-set: test split is empty");

  const SetDecoder decoder = decoder_from(cfg.eval_decoder);
  const std::string hash = git_blob_sha1(data.source_path);

  std::ofstream jsonl(out_dir + "/eval.jsonl", std::ios::binary);
  double recall_sum = 0.0;
  double ndcg_sum = 0.0;
  std::size_t scored = 0;
  std::size_t skipped = 0;
  for (std::size_t si = 0; si < splits.test.size(); ++si) {
    const SeqSet& subject = splits.test[si];
    std::vector<std::size_t> valid_sets;
    for (std::size_t i = 0; i < subject.m; ++i) {
      if (subject.set_valid[i] && !ground_truth_set(subject, i).empty()) valid_sets.push_back(i);
    }
    if (valid_sets.empty()) {
      ++skipped;
      continue;
    }
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x6576616c, si));
    const std::size_t target = valid_sets[rng() % valid_sets.size()];
    RankingResult r = tied_set_prediction(loaded.model, subject, target, cfg.eval_k, decoder);
    recall_sum += r.recall;
    ndcg_sum += r.ndcg;
    ++scored;
    std::ostringstream topk;
    topk << '[';
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
      if (i) topk << ',';
      topk << '"' << vocab.decode(r.predictions[i]) << '"';
    }
    topk << ']';
    jsonl << "{\"subject_id\":\"" << subject.subject_id << "\",\"recall\":" << format_double(r.recall)
          << ",\"ndcg\":" << format_double(r.ndcg) << ",\"topk\":" << topk.str() << "}\n";
  }

  std::ofstream csv(out_dir + "/eval_summary.csv", std::ios::binary);
  write_artifact_header(csv, cfg, hash);
  csv << "decoder,k,subjects,skipped,mean_recall,mean_ndcg\n";
  csv << cfg.eval_decoder << ',' << cfg.eval_k << ',' << scored << ',' << skipped << ','
      << format_double(scored ? recall_sum / static_cast<double>(scored) : 0.0) << ','
      << format_double(scored ? ndcg_sum / static_cast<double>(scored) : 0.0) << '\n';
  std::cout << "eval-set: " << scored << " subjects, mean recall@" << cfg.eval_k << " = "
            << format_double(scored ? recall_sum / static_cast<double>(scored) : 0.0) << '\n';
  return 0;
}

int run_nbr(const RunConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  if (cfg.checkpoint.empty()) throw ConfigError("eval.checkpoint is required");
  LoadedModel loaded = load_model_checkpoint(cfg.checkpoint);
  const fs::path ckpt_dir = fs::path(cfg.checkpoint).parent_path();
  Vocab vocab = Vocab::load((ckpt_dir / "vocab.txt").string());

  LoadedData data = load_raw_data(cfg);
  PreparedSplits splits = prepare_splits(data.subjects, cfg, &vocab);
  if (splits.test.empty()) throw InputError("nbr: test split is empty");

  const std::string hash = git_blob_sha1(data.source_path);
  std::ofstream jsonl(out_dir + "/nbr.jsonl", std::ios::binary);
  double recall_sum = 0.0;
  double ndcg_sum = 0.0;
  std::size_t scored = 0;
  std::size_t skipped = 0;
  for (const SeqSet& subject : splits.test) {
    const std::size_t valid = subject.num_valid_sets();
    if (valid < 2) {
      ++skipped;
      continue;
    }
    const std::size_t target = valid - 1;
    auto truth = ground_truth_set(subject, target);
    if (truth.empty()) {
      ++skipped;
      continue;
    }
    SeqSet history = subject;
    for (std::size_t j = 0; j < history.n; ++j) {
      history.tokens[target * history.n + j] = Vocab::kPad;
      history.token_valid[target * history.n + j] = 0;
    }
    history.set_valid[target] = 0;
    history.set_times[target] = 0.0;

    auto ranked = predict_next_basket(loaded.model, history, cfg.eval_k);
    const double recall = recall_at_k(truth, ranked, cfg.eval_k);
    const double ndcg = ndcg_at_k(truth, ranked, cfg.eval_k);
    recall_sum += recall;
    ndcg_sum += ndcg;
    ++scored;
    std::ostringstream topk;
    topk << '[';
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (i) topk << ',';
      topk << '"' << vocab.decode(ranked[i]) << '"';
    }
    topk << ']';
    jsonl << "{\"subject_id\":\"" << subject.subject_id << "\",\"recall\":" << format_double(recall)
          << ",\"ndcg\":" << format_double(ndcg) << ",\"topk\":" << topk.str() << "}\n";
  }
  if (scored == 0) throw InputError("nbr: no test subject has two valid sets");

  const double usable = static_cast<double>(vocab.size() - Vocab::kNumReserved);
  const double random_recall = static_cast<double>(cfg.eval_k) / usable;
  const double mean_recall = recall_sum / static_cast<double>(scored);

  std::ofstream csv(out_dir + "/nbr_summary.csv", std::ios::binary);
  write_artifact_header(csv, cfg, hash);
  csv << "k,subjects,skipped,mean_recall,mean_ndcg,random_recall,lift_over_random\n";
  csv << cfg.eval_k << ',' << scored << ',' << skipped << ',' << format_double(mean_recall) << ','
      << format_double(ndcg_sum / static_cast<double>(scored)) << ','
      << format_double(random_recall) << ',' << format_double(mean_recall / random_recall) << '\n';
  std::cout << "nbr: " << scored << " subjects, recall@" << cfg.eval_k << " = "
            << format_double(mean_recall) << " (random " << format_double(random_recall) << ")\n";
  return 0;
}

int run_bench(const RunConfig& cfg, const std::string& out_dir) {
  ensure_out_dir(out_dir);
  NestConfig model_cfg = cfg.to_nest_config();
  model_cfg.validate();

  CostReport report = analytic_cost_report(model_cfg);
  if (cfg.bench_measure) {
    if (cfg.bench_threads != 1) {
      throw ConfigError("bench.threads: only single-threaded timing is supported");
    }
    NestModel nest_model = NestModel::init(model_cfg);
    FlatModel flat_model = FlatModel::init(FlatConfig::paired_with(model_cfg));
    const std::size_t tokens = cfg.bench_batch * model_cfg.n * model_cfg.m;
    report.measured = true;
    report.measured_batch = cfg.bench_batch;
    report.threads = cfg.bench_threads;
    report.nest_throughput = measure_throughput(
        [&](std::size_t trial) {
          return nest_benchmark_trial(nest_model, cfg.bench_batch, derive_seed(cfg.seed, trial));
        },
        tokens, cfg.bench_trials, cfg.bench_warmup);
    report.dense_throughput = measure_throughput(
        [&](std::size_t trial) {
          return flat_benchmark_trial(flat_model, cfg.bench_batch, model_cfg.m, model_cfg.n,
                                      derive_seed(cfg.seed, trial));
        },
        tokens, cfg.bench_trials, cfg.bench_warmup);
  }

  write_text_file(out_dir + "/cost.json", report.to_json(cfg.echo(), ""));
  if (cfg.bench_sweep) {
    write_text_file(out_dir + "/sweep.csv",
                    cost_sweep_csv({8, 16, 32, 64}, {16, 32, 64, 128}, {128, 256, 768},
                                   model_cfg.layers, model_cfg.vocab_size));
  }
  std::cout << "bench: dense " << format_double(report.dense_gflops_per_token)
            << " GF/token, nest " << format_double(report.nest_gflops_per_token)
            << " GF/token\n";
  return 0;
}

std::string usage() {
  return "usage: nest <gen-data|pretrain|eval-set|nbr|bench> [--config FILE] [--set k=v ...] "
         "--out DIR\n";
}

int dispatch(const std::string& command, const RunConfig& cfg, const std::string& out_dir) {
  try {
    if (command == "gen-data") return run_gen_data(cfg, out_dir);
    if (command == "pretrain") return run_pretrain(cfg, out_dir);
    if (command == "eval-set") return run_eval_set(cfg, out_dir);
    if (command == "nbr") return run_nbr(cfg, out_dir);
    if (command == "bench") return run_bench(cfg, out_dir);
    std::cerr << "unknown command '" << command << "'\n" << usage();
    return 2;
  } catch (const Error& e) {
    std::cerr << command << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << command << ": unexpected error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace nest::cli
