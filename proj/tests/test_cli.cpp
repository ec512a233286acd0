#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cli_commands.hpp"
#include "nest/error.hpp"
#include "nest/runconfig.hpp"
#include "nest/util.hpp"

using namespace nest;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string write_config(const std::string& text) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "nest_cli_cfg.ini").string();
  write_text_file(path, text);
  return path;
}

}  // namespace

TEST_CASE("parse_config precedence: defaults < file < overrides") {
  const std::string path = write_config(
      "[model]\n"
      "d_model = 32\n"
      "n_heads = 4\n"
      "d_head = 8\n"
      "\n"
      "[train]\n"
      "lr = 0.01\n");

  RunConfig cfg = parse_config(path, {});
  CHECK(cfg.d_model == 32);
  CHECK(cfg.lr == 0.01);
  CHECK(cfg.epochs == 10);  // untouched default

  RunConfig over = parse_config(path, {"model.d_model=64", "train.lr=0.5"});
  CHECK(over.d_model == 64);
  CHECK(over.lr == 0.5);
  CHECK(over.n_heads == 4);  // file value survives
}

TEST_CASE("parse_config rejects unknown keys and type mismatches") {
  CHECK_THROWS_AS(parse_config("", {"model.banana=1"}), ConfigError);
  CHECK_THROWS_AS(parse_config("", {"model.d_model=abc"}), ConfigError);
  CHECK_THROWS_AS(parse_config("", {"bench.measure=maybe"}), ConfigError);
  CHECK_THROWS_AS(parse_config("", {"no_equals"}), ConfigError);

  const std::string bad = write_config("d_model = 3\n");  // key before any section
  CHECK_THROWS_AS(parse_config(bad, {}), ConfigError);
}

TEST_CASE("missing required keys are reported by name") {
  try {
    parse_config("", {"model.layers=2"}, {"model.d_model"});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.d_model") != std::string::npos);
  }
}

TEST_CASE("echo round-trips to an equal configuration") {
  RunConfig cfg = parse_config("", {"model.d_model=48", "model.n_heads=3", "model.d_head=16",
                                    "train.msm_weight=0.25", "data.dataset=/tmp/x.jsonl",
                                    "bench.measure=true", "run.seed=9"});
  const std::string echo_path = write_config(cfg.echo());
  RunConfig again = parse_config(echo_path, {});
  CHECK(again.echo() == cfg.echo());
  CHECK(again.d_model == 48);
  CHECK(again.msm_weight == 0.25);
  CHECK(again.bench_measure == true);
  CHECK(again.seed == 9);
}

TEST_CASE("NEST_SEED environment variable overrides the configured seed") {
  setenv("NEST_SEED", "777", 1);
  RunConfig cfg = parse_config("", {"run.seed=5"});
  CHECK(cfg.seed == 777);
  unsetenv("NEST_SEED");
  RunConfig cfg2 = parse_config("", {"run.seed=5"});
  CHECK(cfg2.seed == 5);
}

TEST_CASE("dispatch: unknown command is a usage error") {
  RunConfig cfg;
  CHECK(nest::cli::dispatch("compress", cfg, temp_dir("nest_cli_unknown")) == 2);
}

TEST_CASE("gen-data -> pretrain -> eval-set -> nbr -> bench round trip") {
  const std::string data_dir = temp_dir("nest_cli_data");
  const std::string run_dir = temp_dir("nest_cli_run");
  const std::string eval_dir = temp_dir("nest_cli_eval");
  const std::string nbr_dir = temp_dir("nest_cli_nbr");
  const std::string bench_dir = temp_dir("nest_cli_bench");

  std::vector<std::string> common{
      "model.layers=1",  "model.d_model=16", "model.d_ff=24",   "model.n_heads=2",
      "model.d_head=8",  "model.n=5",        "model.m=4",       "run.seed=3",
      "data.subjects=60", "data.topics=4",   "data.stickiness=0.85",
  };

  auto with = [&](std::initializer_list<std::string> extra) {
    std::vector<std::string> v = common;
    v.insert(v.end(), extra);
    return v;
  };

  RunConfig gen_cfg = parse_config("", with({"model.vocab_size=40"}));
  REQUIRE(nest::cli::run_gen_data(gen_cfg, data_dir) == 0);
  REQUIRE(std::filesystem::exists(data_dir + "/dataset.jsonl"));

  RunConfig train_cfg = parse_config(
      "", with({"data.dataset=" + data_dir + "/dataset.jsonl", "train.epochs=2",
                "train.batch_size=8", "train.validation_k=5"}));
  REQUIRE(nest::cli::run_pretrain(train_cfg, run_dir) == 0);
  CHECK(std::filesystem::exists(run_dir + "/metrics.csv"));
  CHECK(std::filesystem::exists(run_dir + "/report.txt"));
  CHECK(std::filesystem::exists(run_dir + "/checkpoint.manifest"));
  CHECK(std::filesystem::exists(run_dir + "/checkpoint.blob"));
  CHECK(std::filesystem::exists(run_dir + "/vocab.txt"));

  // The metrics artifact embeds the resolved config and the dataset hash.
  const std::string csv = read_text_file(run_dir + "/metrics.csv");
  CHECK(csv.find("# dataset_sha1: ") != std::string::npos);
  CHECK(csv.find("d_model=16") != std::string::npos);

  RunConfig eval_cfg = parse_config(
      "", with({"data.dataset=" + data_dir + "/dataset.jsonl",
                "eval.checkpoint=" + run_dir + "/checkpoint", "eval.k=5"}));
  REQUIRE(nest::cli::run_eval_set(eval_cfg, eval_dir) == 0);
  CHECK(std::filesystem::exists(eval_dir + "/eval.jsonl"));
  CHECK(std::filesystem::exists(eval_dir + "/eval_summary.csv"));

  REQUIRE(nest::cli::run_nbr(eval_cfg, nbr_dir) == 0);
  CHECK(std::filesystem::exists(nbr_dir + "/nbr.jsonl"));
  CHECK(std::filesystem::exists(nbr_dir + "/nbr_summary.csv"));

  RunConfig bench_cfg = parse_config(
      "", with({"model.vocab_size=40", "bench.measure=true", "bench.trials=10",
                "bench.warmup=1", "bench.batch=1", "bench.sweep=true"}));
  REQUIRE(nest::cli::run_bench(bench_cfg, bench_dir) == 0);
  const std::string cost = read_text_file(bench_dir + "/cost.json");
  CHECK(cost.find("gflops_per_token") != std::string::npos);
  CHECK(cost.find("nest_tokens_per_sec") != std::string::npos);
  CHECK(std::filesystem::exists(bench_dir + "/sweep.csv"));

  // Vocabulary disagreement between a config and the dataset is an error.
  RunConfig wrong_vocab = parse_config(
      "", with({"data.dataset=" + data_dir + "/dataset.jsonl", "model.vocab_size=22"}));
  CHECK(nest::cli::dispatch("pretrain", wrong_vocab, temp_dir("nest_cli_bad")) == 1);
}
