#pragma once

#include <functional>
#include <set>
#include <stdexcept>
#include <string>

#include "pnet/model.hpp"
#include "pnet/trainer.hpp"

namespace pnet {

// Bad input, bad config, missing files: anything the user can fix. Mapped to
// exit code 2 (internal failures exit 1).
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a command can be configured with: model + training settings,
// file paths, and generation flags. Loaded from a JSON config file, then
// overridden by CLI flags; set_keys records which keys were given explicitly.
struct RunConfig {
  ModelConfig model;  // vocab_size 0 means: take it from the vocab file
  TrainConfig train;

  std::string corpus;
  std::string vocab;
  std::string pairs;
  std::string checkpoint;
  std::string init_checkpoint;
  std::string input;
  std::string output;
  std::string metrics;    // default: <checkpoint>.metrics.jsonl
  std::string candidate;  // eval
  std::string reference;  // eval
  std::int64_t max_vocab = 32000;

  int beam = 5;
  double alpha = 1.2;  // length penalty exponent
  std::int64_t min_len = 1;
  std::int64_t gen_max_len = 0;  // 0: model max_len
  bool block_trigrams = false;
  bool resume = false;

  std::set<std::string> set_keys;
  bool is_set(const std::string& key) const { return set_keys.count(key) != 0; }
};

// Parses the JSON config file into rc; unknown keys or wrong types throw
// UserError. Keys mirror the struct fields (model + train + paths + flags).
void apply_config_file(RunConfig& rc, const std::string& path);
// PNET_SEED beats both the config file and --seed.
void apply_env_seed(RunConfig& rc);
// Clamps warmup to steps when warmup was left at its default.
void finalize_config(RunConfig& rc);

// Deterministic one-line JSON rendering of the effective config, written as
// the metrics log header.
std::string config_json_line(const RunConfig& rc);

int cmd_pretrain(const RunConfig& rc);
int cmd_finetune(const RunConfig& rc);
int cmd_generate(const RunConfig& rc);
int cmd_eval(const RunConfig& rc);
int cmd_gradcheck(const RunConfig& rc);
int cmd_build_vocab(const RunConfig& rc);

// Runs f, mapping UserError to exit 2 and any other exception to exit 1.
int run_guarded(const std::function<int()>& f);

}  // namespace pnet
