#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pnet/attention.hpp"
#include "pnet/ids.hpp"
#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

struct ModelConfig {
  std::int64_t vocab_size = 0;
  int layers_enc = 3;
  int layers_dec = 3;
  std::int64_t hidden = 128;
  std::int64_t ffn = 512;
  int heads = 4;
  int ngram = 2;
  double gamma = 1.0;
  std::int64_t max_len = 128;
  double dropout = 0.1;
  int num_buckets = 32;
  int max_distance = 128;

  void validate() const;  // throws std::invalid_argument naming the bad field
};

// Named parameters in fixed registration order; the order defines the
// checkpoint tensor layout and the optimizer state alignment.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct LayerNormWeights {
  Tensor gain, bias;
};

struct FfnWeights {
  Tensor w1, b1, w2, b2;
};

struct EncLayer {
  AttnWeights self;
  LayerNormWeights ln_self;
  FfnWeights ffn;
  LayerNormWeights ln_ffn;
};

struct DecLayer {
  AttnWeights self;
  LayerNormWeights ln_self;
  AttnWeights cross;
  LayerNormWeights ln_cross;
  FfnWeights ffn;
  LayerNormWeights ln_ffn;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;            // required when training and dropout > 0
  bool compute_streams = true;   // predicting streams alongside the main stream
};

// Per-layer input states for incremental decoding; layer_inputs[k] holds the
// first `len` rows of layer k's input, so a new slot only appends.
struct DecoderCache {
  std::vector<Tensor> layer_inputs;
  std::int64_t len = 0;
};

struct TrainForward {
  std::vector<Tensor> stream_logits;  // [0] = main stream, [i] predicts i steps further ahead
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> nll;  // per stream; 0 for streams with no valid position
};

class Model {
 public:
  ModelConfig config;
  ParamStore params;

  Tensor tok_embed;    // [V, D]; also the tied output projection
  Tensor pos_enc;      // [max_len, D]
  Tensor pos_dec;      // [max_len + ngram - 1, D]
  Tensor stream_init;  // [ngram-1, D], one learned start state per predicting stream
  RelativeBias bias_enc;
  RelativeBias bias_dec;
  std::vector<EncLayer> enc;
  std::vector<DecLayer> dec;

  static Model init(const ModelConfig& cfg, Rng& rng);
  // Wires views into an existing store (e.g. loaded from a checkpoint);
  // missing names or shape mismatches throw naming the tensor.
  static Model from_store(const ModelConfig& cfg, ParamStore store);

  Tensor encode(const std::vector<std::int64_t>& src, const ForwardOptions& opts = {}) const;
  TrainForward decode_train(const std::vector<std::int64_t>& targets, const Tensor& h_enc,
                            const ForwardOptions& opts = {}, StreamStates* states = nullptr) const;
  // Advances one slot with streams disabled: processes token prefix.back()
  // (BOS when empty) at slot prefix.size() and returns next-token logits [V].
  // Requires cache.len == prefix.size().
  Tensor decode_infer_step(const std::vector<std::int64_t>& prefix, const Tensor& h_enc,
                           DecoderCache& cache) const;
  DecoderCache make_cache() const;
  Tensor output_logits(const Tensor& h) const;  // H · E^T

 private:
  Tensor encoder_layer(const EncLayer& l, const Tensor& x, const AttentionMask& mask,
                       const std::vector<int>& buckets, const ForwardOptions& opts) const;
  Tensor apply_dropout(const Tensor& x, const ForwardOptions& opts) const;
  void wire(ParamStore store);
};

// Normalized future token weights: [1, g, g^2, ...] / sum, highest weight on
// the next token.
std::vector<double> alpha_weights(double gamma, int n);

// Weighted sum of per-stream NLLs; stream i scores targets shifted i steps
// ahead, averaged over its valid positions. Streams with no valid position
// contribute zero. Non-finite logits throw naming the stream.
Tensor future_ngram_loss(const std::vector<Tensor>& stream_logits,
                         const std::vector<std::int64_t>& targets, const std::vector<double>& alpha,
                         LossBreakdown* breakdown = nullptr);

// Re-fits saved parameters to a config that changed ngram and/or max_len:
// position and stream-init tables keep their overlapping rows, new rows are
// drawn at 0.02 stddev, everything else passes through unchanged.
ParamStore adapt_params(const ParamStore& src, const ModelConfig& from, const ModelConfig& to,
                        std::uint64_t seed);

}  // namespace pnet
