#pragma once

#include <cstdint>
#include <vector>

#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

namespace pnet::ops {

// a [..,M,K] x b [..,K,N] -> [..,M,N]; a leading batch dimension on one side
// broadcasts over the other.
Tensor matmul(const Tensor& a, const Tensor& b);
// a [M,K] x b [N,K] -> [M,N] (b transposed); avoids materializing transposes
// in attention scores and tied output projections.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
// scores [Q,K] with mask[q*K+k] != 0 permitting the pair. Fully masked rows
// yield zeros, never NaN.
Tensor masked_softmax(const Tensor& scores, const std::vector<unsigned char>& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Same-shape elementwise; b may also be a vector matching the last dimension
// of a (broadcast over leading dimensions).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& x);
// Identity when !training; otherwise zeroes each element with probability p
// and scales survivors by 1/(1-p). Draws come from `rng`.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids);

// Mean of -log softmax(logits)[t, targets[t]] over positions whose target is
// not ignore_index. Throws if every position is ignored.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets,
                     std::int64_t ignore_index = -1);

Tensor sum(const Tensor& x);

Tensor concat_rows(const Tensor& a, const Tensor& b);                  // [Ta,D]+[Tb,D] -> [Ta+Tb,D]
Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len);
Tensor concat_cols(const std::vector<Tensor>& xs);

// bias[q,k] = table[buckets[q*K+k], head]; backward scatter-adds into table.
Tensor gather_bias(const Tensor& table, const std::vector<int>& buckets,
                   std::int64_t rows, std::int64_t cols, std::int64_t head);

}  // namespace pnet::ops
