#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pnet/ids.hpp"
#include "pnet/rng.hpp"

namespace pnet {

struct Example {
  std::vector<std::int64_t> src, tgt;
};

// Whitespace-token vocabulary. Ids 0..3 are reserved; corpus tokens start at
// id 4 ranked by frequency (ties broken lexicographically).
class Vocab {
 public:
  std::int64_t size() const { return kReservedIds + static_cast<std::int64_t>(words_.size()); }
  std::int64_t id(const std::string& token) const;          // kUnkId when absent
  const std::string& token(std::int64_t id) const;          // reserved ids included

  // max_size caps the total size including the reserved block; overflow
  // tokens map to unk.
  static Vocab build(const std::vector<std::string>& lines, std::int64_t max_size);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;                 // one token per line

  std::vector<std::int64_t> encode_line(const std::string& line) const;
  std::string decode_ids(const std::vector<std::int64_t>& ids, bool skip_reserved = true) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int64_t> to_id_;
  void index();
};

// Span-denoising example: every full window of `window` tokens gets one span
// of round(ratio*window) tokens; a trailing partial window of L tokens gets
// round(ratio*L) if that rounds to >= 1. Span tokens are corrupted in the
// encoder input (80% mask / 10% random / 10% kept); the target is the
// original span contents in order.
struct DenoisedExample {
  std::vector<std::int64_t> encoder_input;
  std::vector<std::int64_t> target;
  std::vector<std::int64_t> span_starts;
  std::vector<std::int64_t> span_lens;
};

DenoisedExample mask_spans(const std::vector<std::int64_t>& tokens, std::int64_t window, double ratio,
                           Rng& rng, std::int64_t vocab_size);

// Restores the original sequence from a denoised example (inverse of the
// corruption, used to verify no tokens are lost).
std::vector<std::int64_t> reconstruct(const DenoisedExample& ex);

// 80% mask id, 10% uniform random non-reserved id, 10% unchanged.
std::int64_t corrupt_token(std::int64_t id, Rng& rng, std::int64_t vocab_size);

struct PaddedBatch {
  std::int64_t rows = 0, src_cols = 0, tgt_cols = 0;
  std::vector<std::int64_t> src, tgt;  // row-major, padded with pad id
  std::vector<std::int64_t> src_len, tgt_len;

  std::vector<std::int64_t> src_row(std::int64_t i) const;  // trimmed to src_len[i]
  std::vector<std::int64_t> tgt_row(std::int64_t i) const;
};

// Shuffles deterministically (Fisher-Yates driven by rng), truncates to
// max_len, groups into batches of batch_size (last batch may be short), and
// pads each batch to its longest row.
std::vector<PaddedBatch> make_batches(const std::vector<Example>& examples, std::int64_t batch_size,
                                      std::int64_t max_len, std::int64_t pad_id, Rng& rng);

// Corpus helpers: one example per line. Lines are whitespace-tokenized;
// empty lines are skipped.
std::vector<std::string> read_lines(const std::string& path);  // throws on missing file
std::vector<std::string> split_ws(const std::string& line);

}  // namespace pnet
