#include "nest/runconfig.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "nest/error.hpp"
#include "nest/util.hpp"

namespace nest {

namespace {

struct Entry {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;  // (cfg, key, text)
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config: expected true/false for " + key + ", got '" + text + "'");
  } else if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos != text.size()) throw std::invalid_argument("");
      return static_cast<T>(v);
    } catch (...) {
      throw ConfigError("config: expected a real number for " + key + ", got '" + text + "'");
    }
  } else {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(text, &pos);
      if (pos != text.size() || !text.empty() && text[0] == '-') throw std::invalid_argument("");
      return static_cast<T>(v);
    } catch (...) {
      throw ConfigError("config: expected a non-negative integer for " + key + ", got '" + text +
                        "'");
    }
  }
}

template <typename T>
Entry entry(T RunConfig::* member) {
  return Entry{
      [member](RunConfig& cfg, const std::string& key, const std::string& text) {
        cfg.*member = parse_value<T>(key, text);
      },
      [member](const RunConfig& cfg) {
        if constexpr (std::is_same_v<T, double>) {
          return format_double(cfg.*member);
        } else if constexpr (std::is_same_v<T, bool>) {
          return std::string(cfg.*member ? "true" : "false");
        } else if constexpr (std::is_same_v<T, std::string>) {
          return cfg.*member;
        } else {
          return std::to_string(cfg.*member);
        }
      }};
}

const std::map<std::string, Entry>& registry() {
  static const std::map<std::string, Entry> table = {
      {"run.seed", entry(&RunConfig::seed)},
      {"run.workers", entry(&RunConfig::workers)},

      {"model.layers", entry(&RunConfig::layers)},
      {"model.d_model", entry(&RunConfig::d_model)},
      {"model.d_ff", entry(&RunConfig::d_ff)},
      {"model.n_heads", entry(&RunConfig::n_heads)},
      {"model.d_head", entry(&RunConfig::d_head)},
      {"model.vocab_size", entry(&RunConfig::vocab_size)},
      {"model.n", entry(&RunConfig::n)},
      {"model.m", entry(&RunConfig::m)},
      {"model.rope_base", entry(&RunConfig::rope_base)},
      {"model.dropout", entry(&RunConfig::dropout)},
      {"model.probe_classes", entry(&RunConfig::probe_classes)},
      {"model.cls_time2vec", entry(&RunConfig::cls_time2vec)},

      {"data.dataset", entry(&RunConfig::dataset)},
      {"data.orders_csv", entry(&RunConfig::orders_csv)},
      {"data.products_csv", entry(&RunConfig::products_csv)},
      {"data.sample_fraction", entry(&RunConfig::sample_fraction)},
      {"data.min_count", entry(&RunConfig::min_count)},
      {"data.subjects", entry(&RunConfig::subjects)},
      {"data.topics", entry(&RunConfig::topics)},
      {"data.stickiness", entry(&RunConfig::stickiness)},
      {"data.noise", entry(&RunConfig::noise)},

      {"train.lr", entry(&RunConfig::lr)},
      {"train.beta1", entry(&RunConfig::beta1)},
      {"train.beta2", entry(&RunConfig::beta2)},
      {"train.adam_eps", entry(&RunConfig::adam_eps)},
      {"train.weight_decay", entry(&RunConfig::weight_decay)},
      {"train.warmup_fraction", entry(&RunConfig::warmup_fraction)},
      {"train.batch_size", entry(&RunConfig::batch_size)},
      {"train.epochs", entry(&RunConfig::epochs)},
      {"train.mlm_rate", entry(&RunConfig::mlm_rate)},
      {"train.msm_rate", entry(&RunConfig::msm_rate)},
      {"train.msm_weight", entry(&RunConfig::msm_weight)},
      {"train.validation_k", entry(&RunConfig::validation_k)},
      {"train.validation_decoder", entry(&RunConfig::validation_decoder)},
      {"train.patience", entry(&RunConfig::patience)},

      {"eval.k", entry(&RunConfig::eval_k)},
      {"eval.decoder", entry(&RunConfig::eval_decoder)},
      {"eval.checkpoint", entry(&RunConfig::checkpoint)},

      {"bench.batch", entry(&RunConfig::bench_batch)},
      {"bench.trials", entry(&RunConfig::bench_trials)},
      {"bench.warmup", entry(&RunConfig::bench_warmup)},
      {"bench.measure", entry(&RunConfig::bench_measure)},
      {"bench.threads", entry(&RunConfig::bench_threads)},
      {"bench.sweep", entry(&RunConfig::bench_sweep)},
  };
  return table;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(cfg, key, value);
}

}  // namespace

NestConfig RunConfig::to_nest_config() const {
  NestConfig cfg;
  cfg.layers = layers;
  cfg.d_model = d_model;
  cfg.d_ff = d_ff;
  cfg.n_heads = n_heads;
  cfg.d_head = d_head;
  cfg.vocab_size = vocab_size;
  cfg.n = n;
  cfg.m = m;
  cfg.rope_base = rope_base;
  cfg.dropout = dropout;
  cfg.probe_classes = probe_classes;
  cfg.cls_gets_time2vec = cls_time2vec;
  cfg.seed = seed;
  return cfg;
}

TrainConfig RunConfig::to_train_config() const {
  TrainConfig cfg;
  cfg.lr = lr;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  cfg.adam_eps = adam_eps;
  cfg.weight_decay = weight_decay;
  cfg.warmup_fraction = warmup_fraction;
  cfg.batch_size = batch_size;
  cfg.epochs = epochs;
  cfg.mlm_rate = mlm_rate;
  cfg.msm_rate = msm_rate;
  cfg.msm_weight = msm_weight;
  cfg.validation_k = validation_k;
  if (validation_decoder == "tied") {
    cfg.validation_decoder = SetDecoder::kTied;
  } else if (validation_decoder == "msm_head") {
    cfg.validation_decoder = SetDecoder::kMsmHead;
  } else {
    throw ConfigError("config: train.validation_decoder must be tied|msm_head");
  }
  cfg.patience = patience;
  cfg.workers = workers;
  cfg.seed = seed;
  return cfg;
}

std::string RunConfig::echo() const {
  std::ostringstream ss;
  std::string current_section;
  for (const auto& [key, e] : registry()) {
    const std::string section = key.substr(0, key.find('.'));
    if (section != current_section) {
      if (!current_section.empty()) ss << '\n';
      ss << '[' << section << "]\n";
      current_section = section;
    }
    ss << key.substr(key.find('.') + 1) << '=' << e.get(*this) << '\n';
  }
  return ss.str();
}

RunConfig parse_config(const std::string& file_path, const std::vector<std::string>& overrides,
                       const std::vector<std::string>& required) {
  RunConfig cfg;
  std::vector<std::string> seen;

  if (!file_path.empty()) {
    std::ifstream in(file_path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + file_path);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']') {
          throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
        }
        section = t.substr(1, t.size() - 2);
        continue;
      }
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: expected key=value at line " + std::to_string(lineno));
      }
      if (section.empty()) {
        throw ConfigError("config: key outside any [section] at line " + std::to_string(lineno));
      }
      const std::string key = section + "." + trim(t.substr(0, eq));
      apply_key(cfg, key, trim(t.substr(eq + 1)));
      seen.push_back(key);
    }
  }

  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: override must look like section.key=value, got '" + ov + "'");
    }
    const std::string key = trim(ov.substr(0, eq));
    apply_key(cfg, key, trim(ov.substr(eq + 1)));
    seen.push_back(key);
  }

  if (const char* env_seed = std::getenv("NEST_SEED")) {
    cfg.seed = parse_value<std::uint64_t>("run.seed", env_seed);
    seen.push_back("run.seed");
  }

  for (const std::string& key : required) {
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      throw ConfigError("config: missing required key " + key);
    }
  }
  return cfg;
}

}  // namespace nest
