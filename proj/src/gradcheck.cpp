#include "pnet/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "pnet/attention.hpp"
#include "pnet/model.hpp"
#include "pnet/ops.hpp"
#include "pnet/rng.hpp"

namespace pnet {

std::vector<std::vector<double>> tape_gradients(const ForwardFn& fwd, const std::vector<Tensor>& inputs) {
  for (const Tensor& t : inputs) {
    if (!t.requires_grad) throw std::logic_error("tape_gradients: input does not require grad");
    Tensor& mt = const_cast<Tensor&>(t);
    mt.ensure_grad();
    mt.zero_grad();
  }
  Tensor loss = fwd();
  backward(loss);
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const Tensor& t : inputs) out.emplace_back(t.grad->begin(), t.grad->end());
  return out;
}

std::vector<std::vector<double>> fd_gradients(const ForwardFn& fwd, const std::vector<Tensor>& inputs,
                                              double eps) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double* data = const_cast<Tensor&>(inputs[i]).ptr();
    const std::int64_t n = inputs[i].numel();
    out[i].resize(static_cast<std::size_t>(n));
    for (std::int64_t c = 0; c < n; ++c) {
      const double orig = data[c];
      data[c] = orig + eps;
      const double fp = fwd().value();
      data[c] = orig - eps;
      const double fm = fwd().value();
      data[c] = orig;
      out[i][static_cast<std::size_t>(c)] = (fp - fm) / (2.0 * eps);
    }
  }
  return out;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

GradMismatch compare_gradients(const std::vector<std::vector<double>>& tape,
                               const std::vector<std::vector<double>>& fd) {
  if (tape.size() != fd.size()) throw std::logic_error("compare_gradients: input count mismatch");
  GradMismatch worst;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    if (tape[i].size() != fd[i].size()) throw std::logic_error("compare_gradients: coord count mismatch");
    for (std::size_t c = 0; c < tape[i].size(); ++c) {
      const double e = rel_err(tape[i][c], fd[i][c]);
      if (e > worst.max_rel_err) {
        worst.max_rel_err = e;
        worst.input = i;
        worst.coord = static_cast<std::int64_t>(c);
        worst.tape = tape[i][c];
        worst.fd = fd[i][c];
      }
    }
  }
  return worst;
}

namespace {

std::string describe(const GradMismatch& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "input %zu coord %lld: tape=%.10g fd=%.10g", m.input,
                static_cast<long long>(m.coord), m.tape, m.fd);
  return buf;
}

SuiteCase run_case(const std::string& name, double tol, const ForwardFn& fwd,
                   const std::vector<Tensor>& inputs) {
  const auto tape = tape_gradients(fwd, inputs);
  const auto fd = fd_gradients(fwd, inputs);
  const GradMismatch m = compare_gradients(tape, fd);
  SuiteCase c;
  c.name = name;
  c.max_rel_err = m.max_rel_err;
  c.tolerance = tol;
  c.worst = describe(m);
  c.pass = m.max_rel_err < tol;
  return c;
}

// Reduces an op output to a scalar with nontrivial per-element weights so the
// checked gradient exercises every output coordinate.
Tensor weighted(const Tensor& x, const Tensor& w) { return ops::sum(ops::mul(x, w)); }

Tensor fixed_weights(const Shape& shape, Rng& rng) { return Tensor::randn(shape, rng, 1.0); }

}  // namespace

std::vector<SuiteCase> run_gradient_suite(std::uint64_t seed) {
  std::vector<SuiteCase> results;
  const double op_tol = 1e-4;
  const double e2e_tol = 1e-3;
  int case_id = 0;
  auto case_rng = [&]() { return Rng(mix_seed(seed, static_cast<std::uint64_t>(case_id++))); };

  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 5}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 5}, rng);
    results.push_back(run_case("matmul", op_tol, [&] { return weighted(ops::matmul(a, b), w); }, {a, b}));
  }
  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({2, 4, 2}, rng, 1.0, true);
    Tensor w = fixed_weights({2, 3, 2}, rng);
    results.push_back(
        run_case("matmul_batched", op_tol, [&] { return weighted(ops::matmul(a, b), w); }, {a, b}));
  }
  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
    Tensor w = fixed_weights({2, 3, 2}, rng);
    results.push_back(
        run_case("matmul_broadcast_b", op_tol, [&] { return weighted(ops::matmul(a, b), w); }, {a, b}));
  }
  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({5, 4}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 5}, rng);
    results.push_back(
        run_case("matmul_nt", op_tol, [&] { return weighted(ops::matmul_nt(a, b), w); }, {a, b}));
  }
  {
    Rng rng = case_rng();
    Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 6}, rng);
    results.push_back(
        run_case("softmax_last_axis", op_tol, [&] { return weighted(ops::softmax(x, 1), w); }, {x}));
    results.push_back(
        run_case("softmax_axis0", op_tol, [&] { return weighted(ops::softmax(x, 0), w); }, {x}));
  }
  {
    Rng rng = case_rng();
    Tensor x = Tensor::randn({4, 6}, rng, 1.0, true);
    Tensor w = fixed_weights({4, 6}, rng);
    std::vector<unsigned char> mask(4 * 6, 0);
    for (std::int64_t q = 0; q < 4; ++q)
      for (std::int64_t k = 0; k < 6; ++k)
        if (q != 2 && k <= q + 2) mask[static_cast<std::size_t>(q * 6 + k)] = 1;  // row 2 fully masked
    results.push_back(run_case(
        "masked_softmax", op_tol, [&] { return weighted(ops::masked_softmax(x, mask), w); }, {x}));
  }
  {
    Rng rng = case_rng();
    Tensor x = Tensor::randn({4, 8}, rng, 1.0, true);
    Tensor gain = Tensor::randn({8}, rng, 0.2, true);
    Tensor bias = Tensor::randn({8}, rng, 0.2, true);
    Tensor w = fixed_weights({4, 8}, rng);
    results.push_back(run_case(
        "layer_norm", op_tol, [&] { return weighted(ops::layer_norm(x, gain, bias), w); },
        {x, gain, bias}));
  }
  {
    Rng rng = case_rng();
    Tensor x = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor b = Tensor::randn({5}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 5}, rng);
    results.push_back(run_case("add_broadcast", op_tol, [&] { return weighted(ops::add(x, b), w); }, {x, b}));
  }
  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 5}, rng);
    results.push_back(run_case("mul", op_tol, [&] { return weighted(ops::mul(a, b), w); }, {a, b}));
    results.push_back(run_case("scale", op_tol, [&] { return weighted(ops::scale(a, 0.7), w); }, {a}));
  }
  {
    Rng rng = case_rng();
    Tensor x = Tensor::randn({2, 7}, rng, 2.0, true);
    Tensor w = fixed_weights({2, 7}, rng);
    results.push_back(run_case("gelu", op_tol, [&] { return weighted(ops::gelu(x), w); }, {x}));
  }
  {
    Rng rng = case_rng();
    Tensor table = Tensor::randn({7, 4}, rng, 1.0, true);
    const std::vector<std::int64_t> ids = {0, 3, 3, 6, 1};
    Tensor w = fixed_weights({5, 4}, rng);
    results.push_back(run_case(
        "embedding_lookup", op_tol, [&] { return weighted(ops::embedding_lookup(table, ids), w); },
        {table}));
  }
  {
    Rng rng = case_rng();
    Tensor logits = Tensor::randn({5, 7}, rng, 1.0, true);
    const std::vector<std::int64_t> targets = {1, 4, -1, 6, 2};
    results.push_back(run_case(
        "cross_entropy", op_tol, [&] { return ops::cross_entropy(logits, targets, -1); }, {logits}));
  }
  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({2, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor w = fixed_weights({5, 4}, rng);
    results.push_back(
        run_case("concat_rows", op_tol, [&] { return weighted(ops::concat_rows(a, b), w); }, {a, b}));
  }
  {
    Rng rng = case_rng();
    Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 3}, rng);
    results.push_back(
        run_case("slice_cols", op_tol, [&] { return weighted(ops::slice_cols(x, 1, 3), w); }, {x}));
  }
  {
    Rng rng = case_rng();
    Tensor a = Tensor::randn({3, 2}, rng, 1.0, true);
    Tensor b = Tensor::randn({3, 3}, rng, 1.0, true);
    Tensor w = fixed_weights({3, 5}, rng);
    results.push_back(run_case(
        "concat_cols", op_tol, [&] { return weighted(ops::concat_cols({a, b}), w); }, {a, b}));
  }
  {
    Rng rng = case_rng();
    Tensor table = Tensor::randn({8, 2}, rng, 1.0, true);
    std::vector<int> buckets(4 * 5);
    for (std::size_t i = 0; i < buckets.size(); ++i) buckets[i] = static_cast<int>((i * 3) % 8);
    Tensor w = fixed_weights({4, 5}, rng);
    results.push_back(run_case(
        "gather_bias", op_tol, [&] { return weighted(ops::gather_bias(table, buckets, 4, 5, 1), w); },
        {table}));
  }
  {
    Rng rng = case_rng();
    const std::int64_t t = 4, d = 8;
    Tensor x = Tensor::randn({t, d}, rng, 1.0, true);
    AttnWeights aw;
    aw.wq = Tensor::randn({d, d}, rng, 0.3, true);
    aw.bq = Tensor::randn({d}, rng, 0.1, true);
    aw.wk = Tensor::randn({d, d}, rng, 0.3, true);
    aw.bk = Tensor::randn({d}, rng, 0.1, true);
    aw.wv = Tensor::randn({d, d}, rng, 0.3, true);
    aw.bv = Tensor::randn({d}, rng, 0.1, true);
    aw.wo = Tensor::randn({d, d}, rng, 0.3, true);
    aw.bo = Tensor::randn({d}, rng, 0.1, true);
    RelativeBias bias{Tensor::randn({6, 2}, rng, 0.3, true), 6, 12, false};
    const AttentionMask mask = causal_mask(t);
    const StreamPositions sp = positions_for_stream(0, t);
    const std::vector<int> buckets = buckets_from_rel(sp.rel, 6, 12, false);
    Tensor w = fixed_weights({t, d}, rng);
    const std::vector<Tensor> inputs = {x,     aw.wq, aw.bq, aw.wk, aw.bk,
                                        aw.wv, aw.bv, aw.wo, aw.bo, bias.table};
    results.push_back(run_case(
        "multi_head", op_tol,
        [&] { return weighted(multi_head(x, x, x, mask, &bias, &buckets, aw, 2), w); }, inputs));

    Tensor main_states = Tensor::randn({t, d}, rng, 1.0, true);
    const StreamPositions sps = positions_for_stream(1, t);
    const std::vector<int> sbuckets = buckets_from_rel(sps.rel, 6, 12, false);
    std::vector<Tensor> sinputs = inputs;
    sinputs.push_back(main_states);
    results.push_back(run_case(
        "stream_attention", op_tol,
        [&] { return weighted(stream_attention(x, main_states, aw, &bias, &sbuckets, 2, 1, 2), w); },
        sinputs));
  }
  {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.layers_enc = 1;
    cfg.layers_dec = 1;
    cfg.hidden = 8;
    cfg.ffn = 16;
    cfg.heads = 2;
    cfg.ngram = 2;
    cfg.gamma = 1.0;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
    cfg.num_buckets = 8;
    cfg.max_distance = 16;
    Rng rng = case_rng();
    Model model = Model::init(cfg, rng);
    const std::vector<std::int64_t> src = {4, 5, 6, 7};
    const std::vector<std::int64_t> targets = {5, 6, 7, 8, 9};
    const std::vector<double> alpha = alpha_weights(cfg.gamma, cfg.ngram);
    std::vector<Tensor> inputs;
    for (const auto& [name, t] : model.params.items()) inputs.push_back(t);
    results.push_back(run_case(
        "end_to_end_tiny", e2e_tol,
        [&] {
          Tensor h = model.encode(src);
          TrainForward f = model.decode_train(targets, h);
          return future_ngram_loss(f.stream_logits, targets, alpha);
        },
        inputs));
  }
  return results;
}

}  // namespace pnet
