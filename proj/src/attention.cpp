#include "pnet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace pnet {

AttentionMask causal_mask(std::int64_t t) {
  AttentionMask m;
  m.q = t;
  m.k = t;
  m.allow.assign(static_cast<std::size_t>(t * t), 0);
  for (std::int64_t qi = 0; qi < t; ++qi)
    for (std::int64_t ki = 0; ki <= qi; ++ki) m.allow[static_cast<std::size_t>(qi * t + ki)] = 1;
  return m;
}

AttentionMask full_mask(std::int64_t q, std::int64_t k) {
  AttentionMask m;
  m.q = q;
  m.k = k;
  m.allow.assign(static_cast<std::size_t>(q * k), 1);
  return m;
}

AttentionMask stream_mask(std::int64_t t) {
  AttentionMask m;
  m.q = t;
  m.k = 2 * t;
  m.allow.assign(static_cast<std::size_t>(t * 2 * t), 0);
  for (std::int64_t j = 0; j < t; ++j) {
    for (std::int64_t ki = 0; ki <= j; ++ki) m.allow[static_cast<std::size_t>(j * 2 * t + ki)] = 1;
    m.allow[static_cast<std::size_t>(j * 2 * t + t + j)] = 1;
  }
  return m;
}

int relative_bucket(int relative_position, int num_buckets, int max_distance, bool bidirectional) {
  if (num_buckets < 2) throw std::invalid_argument("relative_bucket: num_buckets must be at least 2");
  int bucket = 0;
  int n = num_buckets;
  int rel = relative_position;
  if (bidirectional) {
    n /= 2;
    if (rel > 0) bucket += n;
    rel = std::abs(rel);
  } else {
    rel = -std::min(rel, 0);
  }
  const int max_exact = n / 2;
  if (rel < max_exact) {
    bucket += rel;
  } else {
    const double scaled = max_exact + std::log(static_cast<double>(rel) / max_exact) /
                                          std::log(static_cast<double>(max_distance) / max_exact) *
                                          (n - max_exact);
    bucket += std::min(static_cast<int>(scaled), n - 1);
  }
  return bucket;
}

std::vector<int> buckets_from_rel(const std::vector<int>& rel, int num_buckets, int max_distance,
                                  bool bidirectional) {
  std::vector<int> out(rel.size());
  for (std::size_t i = 0; i < rel.size(); ++i)
    out[i] = relative_bucket(rel[i], num_buckets, max_distance, bidirectional);
  return out;
}

StreamPositions positions_for_stream(int stream_index, std::int64_t t) {
  if (stream_index < 0) throw std::invalid_argument("positions_for_stream: stream index must be >= 0");
  StreamPositions p;
  p.absolute.resize(static_cast<std::size_t>(t));
  for (std::int64_t j = 0; j < t; ++j) p.absolute[static_cast<std::size_t>(j)] = j + stream_index;
  if (stream_index == 0) {
    p.key_count = t;
    p.rel.resize(static_cast<std::size_t>(t * t));
    for (std::int64_t j = 0; j < t; ++j)
      for (std::int64_t m = 0; m < t; ++m)
        p.rel[static_cast<std::size_t>(j * t + m)] = static_cast<int>(m - j);
  } else {
    // Keys are main states 0..t-1 followed by the stream's own slots; the
    // stream's slot j sits at the predicted position j+i, so its self key has
    // offset zero and main key m sits at m-(j+i).
    p.key_count = 2 * t;
    p.rel.resize(static_cast<std::size_t>(t * 2 * t));
    for (std::int64_t j = 0; j < t; ++j) {
      for (std::int64_t m = 0; m < t; ++m)
        p.rel[static_cast<std::size_t>(j * 2 * t + m)] = static_cast<int>(m - (j + stream_index));
      for (std::int64_t m = 0; m < t; ++m)
        p.rel[static_cast<std::size_t>(j * 2 * t + t + m)] = static_cast<int>(m - j);
    }
  }
  return p;
}

Tensor multi_head(const Tensor& query, const Tensor& key, const Tensor& value,
                  const AttentionMask& mask, const RelativeBias* bias,
                  const std::vector<int>* buckets, const AttnWeights& w, int heads) {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2)
    throw std::invalid_argument("multi_head: query/key/value must be rank-2");
  const std::int64_t q_len = query.shape[0];
  const std::int64_t k_len = key.shape[0];
  const std::int64_t dim = query.shape[1];
  if (key.shape[1] != dim || value.shape[1] != dim)
    throw std::invalid_argument("multi_head: model dimension mismatch");
  if (key.shape[0] != value.shape[0]) throw std::invalid_argument("multi_head: key/value length mismatch");
  if (heads < 1 || dim % heads != 0) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "multi_head: hidden dim %lld not divisible by %d heads",
                  static_cast<long long>(dim), heads);
    throw std::invalid_argument(buf);
  }
  if (mask.q != q_len || mask.k != k_len) throw std::invalid_argument("multi_head: mask shape mismatch");
  if (bias != nullptr && buckets == nullptr)
    throw std::invalid_argument("multi_head: relative bias requires a bucket matrix");
  if (buckets != nullptr && static_cast<std::int64_t>(buckets->size()) != q_len * k_len)
    throw std::invalid_argument("multi_head: bucket matrix shape mismatch");

  const std::int64_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = ops::add(ops::matmul(query, w.wq), w.bq);
  Tensor k = ops::add(ops::matmul(key, w.wk), w.bk);
  Tensor v = ops::add(ops::matmul(value, w.wv), w.bv);

  std::vector<Tensor> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = ops::slice_cols(q, h * dh, dh);
    Tensor kh = ops::slice_cols(k, h * dh, dh);
    Tensor vh = ops::slice_cols(v, h * dh, dh);
    Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
    if (bias != nullptr) scores = ops::add(scores, ops::gather_bias(bias->table, *buckets, q_len, k_len, h));
    Tensor weights = ops::masked_softmax(scores, mask.allow);
    head_out.push_back(ops::matmul(weights, vh));
  }
  Tensor merged = heads == 1 ? head_out[0] : ops::concat_cols(head_out);
  return ops::add(ops::matmul(merged, w.wo), w.bo);
}

Tensor stream_attention(const Tensor& stream, const Tensor& main_states, const AttnWeights& w,
                        const RelativeBias* bias, const std::vector<int>* buckets, int heads,
                        int stream_index, int ngram) {
  if (ngram < 2) throw std::invalid_argument("stream_attention: needs ngram >= 2");
  if (stream_index < 1 || stream_index > ngram - 1) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "stream_attention: stream index %d outside 1..%d", stream_index,
                  ngram - 1);
    throw std::invalid_argument(buf);
  }
  if (stream.rank() != 2 || main_states.rank() != 2 || stream.shape != main_states.shape)
    throw std::invalid_argument("stream_attention: stream/main shape mismatch");
  const std::int64_t t = stream.shape[0];
  Tensor kv = ops::concat_rows(main_states, stream);
  return multi_head(stream, kv, kv, stream_mask(t), bias, buckets, w, heads);
}

}  // namespace pnet
