#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnet/data.hpp"
#include "pnet/rng.hpp"

namespace pnet {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Clipped n-gram overlap: each candidate n-gram counts at most as often as it
// appears in the reference.
RougeScore rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   int n);
// Longest common subsequence variant.
RougeScore rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

// Fraction of positions where pred == gold, skipping gold == ignore_id.
// Length mismatches count the missing tail as wrong. All positions ignored
// returns 1.0 and sets *warned.
double token_accuracy(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gold,
                      std::int64_t ignore_id, bool* warned = nullptr);

double perplexity(double mean_nll);

enum class SynthKind { Copy, Reverse, LeadK };

SynthKind synth_kind_from_name(const std::string& name);  // "copy", "reverse", "lead_k"

struct SynthData {
  std::vector<Example> train, test;
};

// Deterministic toy sequence tasks over non-reserved ids. Targets carry a
// trailing eos so trained models learn to terminate.
SynthData synth_task(SynthKind kind, std::int64_t size, std::int64_t vocab, std::uint64_t seed,
                     int k = 3);

}  // namespace pnet
