#pragma once

#include <cstdint>
#include <vector>

#include "pnet/ops.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

// Boolean [Q,K] matrix; true = query q may attend key k.
struct AttentionMask {
  std::int64_t q = 0;
  std::int64_t k = 0;
  std::vector<unsigned char> allow;

  bool at(std::int64_t qi, std::int64_t ki) const { return allow[static_cast<std::size_t>(qi * k + ki)] != 0; }
};

// Lower-triangular inclusive: query t attends keys 0..t.
AttentionMask causal_mask(std::int64_t t);
AttentionMask full_mask(std::int64_t q, std::int64_t k);
// For predicting streams over keys = main(0..T-1) ++ stream(0..T-1): row j
// permits main keys 0..j plus the stream's own slot T+j, nothing else.
AttentionMask stream_mask(std::int64_t t);

// Exact buckets for small |rel|, logarithmic up to max_distance, clamped
// beyond. Unidirectional mode folds positive offsets into bucket 0 territory
// (they are masked in the decoder anyway).
int relative_bucket(int relative_position, int num_buckets, int max_distance, bool bidirectional);

std::vector<int> buckets_from_rel(const std::vector<int>& rel, int num_buckets, int max_distance,
                                  bool bidirectional);

// Learned per-bucket additive score bias, one column per head.
struct RelativeBias {
  Tensor table;  // [num_buckets, heads]
  int num_buckets = 32;
  int max_distance = 128;
  bool bidirectional = false;
};

// Absolute positions carried by stream queries and the relative offsets of
// their keys. Stream i's query at slot j stands at the position of the token
// it predicts (j+i); stream 0 is the main stream (query at its own slot).
// rel is row-major [t, key_count]; key_count is t for the main stream and 2t
// for predicting streams (main keys then the stream's own slots).
struct StreamPositions {
  std::vector<std::int64_t> absolute;
  std::vector<int> rel;
  std::int64_t key_count = 0;
};

StreamPositions positions_for_stream(int stream_index, std::int64_t t);

struct AttnWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Per-layer stream states captured during teacher-forced evaluation:
// main[k] = H^(k), streams[k][i-1] = state of predicting stream i at layer k.
struct StreamStates {
  std::vector<Tensor> main;
  std::vector<std::vector<Tensor>> streams;
};

// Scaled dot-product multi-head attention with additive relative bias and
// boolean masking. Fully masked rows yield zeros. `buckets` must be the
// [Q*K] bucket matrix when `bias` is given.
Tensor multi_head(const Tensor& query, const Tensor& key, const Tensor& value,
                  const AttentionMask& mask, const RelativeBias* bias,
                  const std::vector<int>* buckets, const AttnWeights& w, int heads);

// One predicting-stream self-attention step for the whole sequence: queries
// are the stream states, keys/values are main states 0..j plus the stream's
// own slot, realized as one batched call under stream_mask.
Tensor stream_attention(const Tensor& stream, const Tensor& main_states, const AttnWeights& w,
                        const RelativeBias* bias, const std::vector<int>* buckets, int heads,
                        int stream_index, int ngram);

}  // namespace pnet
