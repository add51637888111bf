#pragma once

#include <cstdint>
#include <vector>

#include "pnet/model.hpp"

namespace pnet {

struct GenOptions {
  int beam = 5;
  double length_penalty = 1.2;   // score = sum_logprob / len^penalty
  std::int64_t min_len = 1;      // eos masked before this many tokens
  std::int64_t max_len = 0;      // 0: model max_len; eos forced at the limit
  bool block_trigrams = false;   // never re-create an existing consecutive triple
};

struct GenResult {
  std::vector<std::int64_t> tokens;  // without the terminating eos
  double score = 0.0;                // length-normalized log-probability
};

// Length-normalized hypothesis score; len counts generated tokens including
// the terminator.
double hypothesis_score(double sum_logprob, std::int64_t len, double length_penalty);

// Deterministic argmax decoding (ties -> lower token id). Written without the
// beam machinery so the two can check each other.
std::vector<std::int64_t> greedy(const Model& model, const std::vector<std::int64_t>& src,
                                 std::int64_t max_len = 0, std::int64_t min_len = 1);

GenResult beam_search(const Model& model, const std::vector<std::int64_t>& src, const GenOptions& opts);

}  // namespace pnet
