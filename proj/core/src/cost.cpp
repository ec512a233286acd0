#include "nest/cost.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <sstream>

#include "nest/error.hpp"
#include "nest/ops.hpp"
#include "nest/util.hpp"

namespace nest {

using json = nlohmann::json;

Arch arch_from_string(const std::string& name) {
  if (name == "dense" || name == "bert" || name == "flat") return Arch::kDense;
  if (name == "nest") return Arch::kNest;
  throw UsageError("unknown architecture '" + name + "' (expected dense|nest)");
}

std::string arch_name(Arch arch) { return arch == Arch::kDense ? "dense" : "nest"; }

double count_flops_per_token(const NestConfig& cfg, Arch arch) {
  const double d = static_cast<double>(cfg.d_model);
  const double dff = static_cast<double>(cfg.d_ff);
  const double n = static_cast<double>(cfg.n);
  const double m = static_cast<double>(cfg.m);
  const double big_n = n * m;
  const double layers = static_cast<double>(cfg.layers);
  const double vocab = static_cast<double>(cfg.vocab_size);

  const double proj = 2.0 * 4.0 * d * d;   // Q, K, V, O projections
  const double ffn = 2.0 * 3.0 * d * dff;  // SwiGLU triple
  const double head = 2.0 * d * vocab;     // tied vocabulary projection

  double per_layer_token;
  if (arch == Arch::kDense) {
    const double attn = 2.0 * 2.0 * big_n * d;  // scores + attention*values
    per_layer_token = proj + attn + ffn;
  } else {
    const double swe_attn = 2.0 * 2.0 * n * d;
    const double cse_per_cls = proj + 2.0 * 2.0 * m * d + ffn;
    per_layer_token = proj + swe_attn + ffn + cse_per_cls / n;
  }
  return (layers * per_layer_token + head) / 1e9;
}

std::size_t count_params(const NestConfig& cfg, Arch arch) {
  const std::size_t d = cfg.d_model;
  const std::size_t block = 4 * d * d + 3 * d * cfg.d_ff + 2 * d;  // attn + ffn + 2 norm gains
  const std::size_t blocks_per_layer = arch == Arch::kDense ? 1 : 2;  // SWE (+ CSE)
  std::size_t total = cfg.vocab_size * d;  // embeddings (tied decoder adds none)
  total += 2 * d;                          // time-encoding omega and phi
  total += cfg.layers * blocks_per_layer * block;
  total += d;  // final norm gain
  return total;
}

AttentionMemoryEstimate attention_memory_estimate(const NestConfig& cfg, Arch arch) {
  AttentionMemoryEstimate est;
  const std::size_t big_n = cfg.n * cfg.m;
  if (arch == Arch::kDense) {
    est.per_layer_head = big_n * big_n;
    est.complexity = "O(N^2)";
  } else {
    est.per_layer_head = cfg.m * cfg.n * cfg.n + cfg.m * cfg.m;
    est.complexity = "O(nN + m^2)";
  }
  est.total = cfg.layers * cfg.n_heads * est.per_layer_head;
  return est;
}

ThroughputResult measure_throughput(const std::function<double(std::size_t)>& run_trial,
                                    std::size_t tokens_per_trial, std::size_t trials,
                                    std::size_t warmup) {
  if (trials < 10) throw BenchmarkError("measure_throughput: need at least 10 trials");
  using clock = std::chrono::steady_clock;

  for (std::size_t w = 0; w < warmup; ++w) {
    const double loss = run_trial(w);
    if (!std::isfinite(loss)) throw BenchmarkError("measure_throughput: non-finite warmup loss");
  }

  ThroughputResult result;
  result.trials = trials;
  result.per_trial.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto start = clock::now();
    const double loss = run_trial(warmup + t);
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    if (!std::isfinite(loss)) throw BenchmarkError("measure_throughput: non-finite loss");
    result.per_trial.push_back(static_cast<double>(tokens_per_trial) / secs);
  }

  double mean = 0.0;
  for (double v : result.per_trial) mean += v;
  mean /= static_cast<double>(trials);
  double var = 0.0;
  for (double v : result.per_trial) var += (v - mean) * (v - mean);
  var /= static_cast<double>(trials);
  result.mean_tokens_per_sec = mean;
  result.std_tokens_per_sec = std::sqrt(var);
  return result;
}

namespace {

// Random benchmark batch in grid form: every slot holds a real token, uniform
// times, roughly 15% of non-CLS slots supervised for the MLM loss.
ModelInput random_benchmark_input(std::size_t batch, std::size_t m, std::size_t n,
                                  std::size_t vocab, std::uint64_t seed,
                                  std::vector<std::size_t>* supervised_rows,
                                  std::vector<std::int32_t>* targets) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> token(Vocab::kNumReserved,
                                                    static_cast<std::int32_t>(vocab) - 1);
  std::uniform_real_distribution<double> gap(0.5, 3.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ModelInput in;
  in.batch = batch;
  in.m = m;
  in.n = n;
  in.tokens.resize(batch * m * n);
  in.token_valid.assign(batch * m * n, 1);
  in.set_valid.assign(batch * m, 1);
  in.set_times.resize(batch * m);
  for (std::size_t s = 0; s < batch * m; ++s) {
    in.set_times[s] = (s % m == 0 ? 0.0 : in.set_times[s - 1] + gap(rng));
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t r = s * n + j;
      if (j == 0) {
        in.tokens[r] = Vocab::kCls;
      } else if (unit(rng) < 0.15) {
        targets->push_back(token(rng));
        supervised_rows->push_back(r);
        in.tokens[r] = Vocab::kMask;
      } else {
        in.tokens[r] = token(rng);
      }
    }
  }
  return in;
}

ModelInput slice_subject(const ModelInput& in, std::size_t b) {
  ModelInput one;
  one.batch = 1;
  one.m = in.m;
  one.n = in.n;
  const std::size_t sets = in.m;
  const std::size_t rows = sets * in.n;
  one.tokens.assign(in.tokens.begin() + static_cast<std::ptrdiff_t>(b * rows),
                    in.tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * rows));
  one.token_valid.assign(in.token_valid.begin() + static_cast<std::ptrdiff_t>(b * rows),
                         in.token_valid.begin() + static_cast<std::ptrdiff_t>((b + 1) * rows));
  one.set_valid.assign(in.set_valid.begin() + static_cast<std::ptrdiff_t>(b * sets),
                       in.set_valid.begin() + static_cast<std::ptrdiff_t>((b + 1) * sets));
  one.set_times.assign(in.set_times.begin() + static_cast<std::ptrdiff_t>(b * sets),
                       in.set_times.begin() + static_cast<std::ptrdiff_t>((b + 1) * sets));
  return one;
}

template <typename Model>
double benchmark_trial(const Model& model, std::size_t batch, std::size_t m, std::size_t n,
                       std::size_t vocab, std::uint64_t seed) {
  std::vector<std::size_t> supervised;
  std::vector<std::int32_t> targets;
  ModelInput full = random_benchmark_input(batch, m, n, vocab, seed, &supervised, &targets);

  const std::size_t rows_per_subject = m * n;
  double total_loss = 0.0;
  for (Tensor p : model.parameters()) p.zero_grad();

  for (std::size_t b = 0; b < batch; ++b) {
    ModelInput one = slice_subject(full, b);
    std::vector<std::size_t> rows;
    std::vector<std::int32_t> tgts;
    for (std::size_t i = 0; i < supervised.size(); ++i) {
      if (supervised[i] / rows_per_subject == b) {
        rows.push_back(supervised[i] % rows_per_subject);
        tgts.push_back(targets[i]);
      }
    }
    if (rows.empty()) continue;

    Tape tape;
    TapeScope scope(tape);
    Tensor hidden = model.encode(one);
    Tensor logits = model.mlm_logits(gather_rows(hidden, rows));
    Tensor loss =
        masked_cross_entropy(logits, tgts, std::vector<std::uint8_t>(tgts.size(), 1));
    total_loss += loss.item();
    tape.backward(loss);
    tape.clear();
  }
  return total_loss;
}

}  // namespace

double nest_benchmark_trial(const NestModel& model, std::size_t batch, std::uint64_t seed) {
  const NestConfig& cfg = model.config();
  return benchmark_trial(model, batch, cfg.m, cfg.n, cfg.vocab_size, seed);
}

double flat_benchmark_trial(const FlatModel& model, std::size_t batch, std::size_t m,
                            std::size_t n, std::uint64_t seed) {
  const FlatConfig& cfg = model.config();
  if (m * n != cfg.context) throw BenchmarkError("flat_benchmark_trial: m*n must equal context");
  return benchmark_trial(model, batch, m, n, cfg.vocab_size, seed);
}

std::string CostReport::to_json(const std::string& config_echo,
                                const std::string& dataset_hash) const {
  json j;
  j["convention"] =
      "2 FLOPs per multiply-add; projections, attention scores/values, SwiGLU and tied "
      "vocabulary head counted; softmax, norms, rotary and time encodings excluded";
  j["config"] = json::parse(R"({})");
  j["config"]["layers"] = config.layers;
  j["config"]["d_model"] = config.d_model;
  j["config"]["d_ff"] = config.d_ff;
  j["config"]["n_heads"] = config.n_heads;
  j["config"]["d_head"] = config.d_head;
  j["config"]["vocab_size"] = config.vocab_size;
  j["config"]["n"] = config.n;
  j["config"]["m"] = config.m;
  if (!config_echo.empty()) j["run_config"] = config_echo;
  if (!dataset_hash.empty()) j["dataset_sha1"] = dataset_hash;

  j["gflops_per_token"] = {{"dense", dense_gflops_per_token}, {"nest", nest_gflops_per_token}};
  j["param_count"] = {{"dense", dense_params}, {"nest", nest_params}};
  j["attention_score_elements_per_layer_head"] = {{"dense", dense_memory.per_layer_head},
                                                  {"nest", nest_memory.per_layer_head}};
  j["attention_memory_complexity"] = {{"dense", dense_memory.complexity},
                                      {"nest", nest_memory.complexity}};
  if (measured) {
    j["measured"] = {{"batch", measured_batch},
                     {"threads", threads},
                     {"trials", dense_throughput.trials},
                     {"dense_tokens_per_sec",
                      {{"mean", dense_throughput.mean_tokens_per_sec},
                       {"std", dense_throughput.std_tokens_per_sec}}},
                     {"nest_tokens_per_sec",
                      {{"mean", nest_throughput.mean_tokens_per_sec},
                       {"std", nest_throughput.std_tokens_per_sec}}}};
  }
  return j.dump(2);
}

CostReport analytic_cost_report(const NestConfig& cfg) {
  CostReport report;
  report.config = cfg;
  report.dense_gflops_per_token = count_flops_per_token(cfg, Arch::kDense);
  report.nest_gflops_per_token = count_flops_per_token(cfg, Arch::kNest);
  report.dense_params = count_params(cfg, Arch::kDense);
  report.nest_params = count_params(cfg, Arch::kNest);
  report.dense_memory = attention_memory_estimate(cfg, Arch::kDense);
  report.nest_memory = attention_memory_estimate(cfg, Arch::kNest);
  return report;
}

std::string cost_sweep_csv(const std::vector<std::size_t>& ns, const std::vector<std::size_t>& ms,
                           const std::vector<std::size_t>& d_models, std::size_t layers,
                           std::size_t vocab_size) {
  std::ostringstream ss;
  ss << "n,m,d_model,dense_gflops_per_token,nest_gflops_per_token,"
        "dense_params,nest_params,dense_score_elements,nest_score_elements\n";
  for (std::size_t n : ns) {
    for (std::size_t m : ms) {
      for (std::size_t d : d_models) {
        NestConfig cfg;
        cfg.layers = layers;
        cfg.d_model = d;
        cfg.d_ff = 8 * d / 3;
        cfg.n_heads = std::max<std::size_t>(1, d / 64);
        cfg.d_head = d / cfg.n_heads;
        cfg.vocab_size = vocab_size;
        cfg.n = n;
        cfg.m = m;
        auto dm = attention_memory_estimate(cfg, Arch::kDense);
        auto nm = attention_memory_estimate(cfg, Arch::kNest);
        ss << n << ',' << m << ',' << d << ','
           << format_double(count_flops_per_token(cfg, Arch::kDense)) << ','
           << format_double(count_flops_per_token(cfg, Arch::kNest)) << ','
           << count_params(cfg, Arch::kDense) << ',' << count_params(cfg, Arch::kNest) << ','
           << dm.per_layer_head << ',' << nm.per_layer_head << '\n';
      }
    }
  }
  return ss.str();
}

}  // namespace nest
