#include "pnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "pnet/ops.hpp"

namespace pnet {

namespace {

enum class ParamKind { Weight, Zero, One };

std::string idx_name(const char* stack, int k, const char* rest) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s.%d.%s", stack, k, rest);
  return buf;
}

// Canonical parameter enumeration. Registration order here defines the
// checkpoint layout and the optimizer state alignment; keep it stable.
template <class F>
void for_each_param(const ModelConfig& cfg, F&& f) {
  const std::int64_t v = cfg.vocab_size;
  const std::int64_t d = cfg.hidden;
  f("embed.tok", Shape{v, d}, ParamKind::Weight);
  f("embed.pos_enc", Shape{cfg.max_len, d}, ParamKind::Weight);
  f("embed.pos_dec", Shape{cfg.max_len + cfg.ngram - 1, d}, ParamKind::Weight);
  if (cfg.ngram >= 2) f("embed.stream_init", Shape{cfg.ngram - 1, d}, ParamKind::Weight);
  f("relbias.enc", Shape{cfg.num_buckets, cfg.heads}, ParamKind::Weight);
  f("relbias.dec", Shape{cfg.num_buckets, cfg.heads}, ParamKind::Weight);
  auto attn = [&](const std::string& base) {
    for (const char* part : {"wq", "wk", "wv", "wo"}) f(base + "." + part, Shape{d, d}, ParamKind::Weight);
    for (const char* part : {"bq", "bk", "bv", "bo"}) f(base + "." + part, Shape{d}, ParamKind::Zero);
  };
  auto lnorm = [&](const std::string& base) {
    f(base + ".gain", Shape{d}, ParamKind::One);
    f(base + ".bias", Shape{d}, ParamKind::Zero);
  };
  auto ffn = [&](const std::string& base) {
    f(base + ".w1", Shape{d, cfg.ffn}, ParamKind::Weight);
    f(base + ".b1", Shape{cfg.ffn}, ParamKind::Zero);
    f(base + ".w2", Shape{cfg.ffn, d}, ParamKind::Weight);
    f(base + ".b2", Shape{d}, ParamKind::Zero);
  };
  for (int k = 0; k < cfg.layers_enc; ++k) {
    attn(idx_name("enc", k, "self"));
    lnorm(idx_name("enc", k, "ln_self"));
    ffn(idx_name("enc", k, "ffn"));
    lnorm(idx_name("enc", k, "ln_ffn"));
  }
  for (int k = 0; k < cfg.layers_dec; ++k) {
    attn(idx_name("dec", k, "self"));
    lnorm(idx_name("dec", k, "ln_self"));
    attn(idx_name("dec", k, "cross"));
    lnorm(idx_name("dec", k, "ln_cross"));
    ffn(idx_name("dec", k, "ffn"));
    lnorm(idx_name("dec", k, "ln_ffn"));
  }
}

std::vector<std::int64_t> iota_ids(std::int64_t n, std::int64_t start = 0) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), start);
  return ids;
}

Tensor ffn_forward(const FfnWeights& w, const Tensor& x) {
  Tensor h = ops::gelu(ops::add(ops::matmul(x, w.w1), w.b1));
  return ops::add(ops::matmul(h, w.w2), w.b2);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (vocab_size <= kReservedIds) fail("vocab_size must exceed the 4 reserved ids");
  if (layers_enc < 1) fail("layers_enc must be >= 1");
  if (layers_dec < 1) fail("layers_dec must be >= 1");
  if (hidden < 1) fail("hidden must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (hidden % heads != 0) fail("hidden must be divisible by heads");
  if (ffn < 1) fail("ffn must be >= 1");
  if (ngram < 1) fail("ngram must be >= 1");
  if (!(gamma > 0.0)) fail("gamma must be > 0");
  if (max_len < 1) fail("max_len must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (num_buckets < 2 || num_buckets % 2 != 0) fail("num_buckets must be even and >= 2");
  if (max_distance <= num_buckets / 2) fail("max_distance must exceed num_buckets/2");
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name) != 0) throw std::logic_error("duplicate parameter: " + name);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_) {
    if (t.requires_grad) {
      t.ensure_grad();
      t.zero_grad();
    }
  }
}

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore store;
  for_each_param(cfg, [&](const std::string& name, Shape shape, ParamKind kind) {
    switch (kind) {
      case ParamKind::Weight:
        store.add(name, Tensor::randn(std::move(shape), rng, 0.02, true));
        break;
      case ParamKind::Zero:
        store.add(name, Tensor::zeros(std::move(shape), true));
        break;
      case ParamKind::One:
        store.add(name, Tensor::full(std::move(shape), 1.0, true));
        break;
    }
  });
  Model m;
  m.config = cfg;
  m.wire(std::move(store));
  return m;
}

Model Model::from_store(const ModelConfig& cfg, ParamStore store) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.wire(std::move(store));
  return m;
}

void Model::wire(ParamStore source) {
  ParamStore clean;
  for_each_param(config, [&](const std::string& name, Shape shape, ParamKind) {
    if (!source.has(name)) throw std::runtime_error("missing parameter: " + name);
    Tensor& t = source.get(name);
    if (t.shape != shape)
      throw std::runtime_error("parameter " + name + " has shape " + shape_str(t.shape) +
                               ", expected " + shape_str(shape));
    t.requires_grad = true;
    t.ensure_grad();
    clean.add(name, t);
  });
  params = std::move(clean);

  tok_embed = params.get("embed.tok");
  pos_enc = params.get("embed.pos_enc");
  pos_dec = params.get("embed.pos_dec");
  if (config.ngram >= 2) stream_init = params.get("embed.stream_init");
  bias_enc = RelativeBias{params.get("relbias.enc"), config.num_buckets, config.max_distance, true};
  bias_dec = RelativeBias{params.get("relbias.dec"), config.num_buckets, config.max_distance, false};

  auto attn = [&](const std::string& base) {
    AttnWeights w;
    w.wq = params.get(base + ".wq");
    w.bq = params.get(base + ".bq");
    w.wk = params.get(base + ".wk");
    w.bk = params.get(base + ".bk");
    w.wv = params.get(base + ".wv");
    w.bv = params.get(base + ".bv");
    w.wo = params.get(base + ".wo");
    w.bo = params.get(base + ".bo");
    return w;
  };
  auto lnorm = [&](const std::string& base) {
    return LayerNormWeights{params.get(base + ".gain"), params.get(base + ".bias")};
  };
  auto ffn = [&](const std::string& base) {
    return FfnWeights{params.get(base + ".w1"), params.get(base + ".b1"), params.get(base + ".w2"),
                      params.get(base + ".b2")};
  };

  enc.clear();
  dec.clear();
  for (int k = 0; k < config.layers_enc; ++k) {
    EncLayer l;
    l.self = attn(idx_name("enc", k, "self"));
    l.ln_self = lnorm(idx_name("enc", k, "ln_self"));
    l.ffn = ffn(idx_name("enc", k, "ffn"));
    l.ln_ffn = lnorm(idx_name("enc", k, "ln_ffn"));
    enc.push_back(std::move(l));
  }
  for (int k = 0; k < config.layers_dec; ++k) {
    DecLayer l;
    l.self = attn(idx_name("dec", k, "self"));
    l.ln_self = lnorm(idx_name("dec", k, "ln_self"));
    l.cross = attn(idx_name("dec", k, "cross"));
    l.ln_cross = lnorm(idx_name("dec", k, "ln_cross"));
    l.ffn = ffn(idx_name("dec", k, "ffn"));
    l.ln_ffn = lnorm(idx_name("dec", k, "ln_ffn"));
    dec.push_back(std::move(l));
  }
}

Tensor Model::apply_dropout(const Tensor& x, const ForwardOptions& opts) const {
  if (!opts.training || config.dropout == 0.0) return x;
  if (opts.rng == nullptr) throw std::logic_error("training forward needs an rng for dropout");
  return ops::dropout(x, config.dropout, true, *opts.rng);
}

Tensor Model::encoder_layer(const EncLayer& l, const Tensor& x, const AttentionMask& mask,
                            const std::vector<int>& buckets, const ForwardOptions& opts) const {
  Tensor a = multi_head(x, x, x, mask, &bias_enc, &buckets, l.self, config.heads);
  Tensor h = ops::layer_norm(ops::add(x, apply_dropout(a, opts)), l.ln_self.gain, l.ln_self.bias);
  Tensor f = ffn_forward(l.ffn, h);
  return ops::layer_norm(ops::add(h, apply_dropout(f, opts)), l.ln_ffn.gain, l.ln_ffn.bias);
}

Tensor Model::encode(const std::vector<std::int64_t>& src, const ForwardOptions& opts) const {
  const std::int64_t m = static_cast<std::int64_t>(src.size());
  if (m == 0) throw std::invalid_argument("encode: empty source");
  if (m > config.max_len) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "encode: source length %lld exceeds max_len %lld",
                  static_cast<long long>(m), static_cast<long long>(config.max_len));
    throw std::invalid_argument(buf);
  }
  Tensor x = ops::add(ops::embedding_lookup(tok_embed, src), ops::embedding_lookup(pos_enc, iota_ids(m)));
  x = apply_dropout(x, opts);
  const AttentionMask mask = full_mask(m, m);
  const StreamPositions sp = positions_for_stream(0, m);
  const std::vector<int> buckets =
      buckets_from_rel(sp.rel, config.num_buckets, config.max_distance, true);
  for (const auto& l : enc) x = encoder_layer(l, x, mask, buckets, opts);
  return x;
}

TrainForward Model::decode_train(const std::vector<std::int64_t>& targets, const Tensor& h_enc,
                                 const ForwardOptions& opts, StreamStates* states) const {
  const std::int64_t t = static_cast<std::int64_t>(targets.size());
  if (t == 0) throw std::invalid_argument("decode_train: empty target");
  if (t > config.max_len) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "decode_train: target length %lld exceeds max_len %lld",
                  static_cast<long long>(t), static_cast<long long>(config.max_len));
    throw std::invalid_argument(buf);
  }
  if (h_enc.rank() != 2 || h_enc.shape[1] != config.hidden)
    throw std::invalid_argument("decode_train: encoder state shape mismatch");

  const int n = config.ngram;
  const int n_pred = (opts.compute_streams && n >= 2) ? n - 1 : 0;

  std::vector<std::int64_t> input(static_cast<std::size_t>(t));
  input[0] = kBosId;
  for (std::int64_t j = 1; j < t; ++j) input[static_cast<std::size_t>(j)] = targets[static_cast<std::size_t>(j - 1)];

  const StreamPositions main_pos = positions_for_stream(0, t);
  const std::vector<int> main_buckets =
      buckets_from_rel(main_pos.rel, config.num_buckets, config.max_distance, false);
  Tensor x = ops::add(ops::embedding_lookup(tok_embed, input),
                      ops::embedding_lookup(pos_dec, main_pos.absolute));
  x = apply_dropout(x, opts);

  std::vector<Tensor> g;
  std::vector<std::vector<int>> stream_buckets;
  for (int js = 1; js <= n_pred; ++js) {
    const StreamPositions sp = positions_for_stream(js, t);
    stream_buckets.push_back(buckets_from_rel(sp.rel, config.num_buckets, config.max_distance, false));
    Tensor init_rows =
        ops::embedding_lookup(stream_init, std::vector<std::int64_t>(static_cast<std::size_t>(t), js - 1));
    Tensor gj = ops::add(init_rows, ops::embedding_lookup(pos_dec, sp.absolute));
    g.push_back(apply_dropout(gj, opts));
  }

  const AttentionMask cmask = causal_mask(t);
  const AttentionMask xmask = full_mask(t, h_enc.shape[0]);

  if (states != nullptr) {
    states->main.clear();
    states->streams.assign(static_cast<std::size_t>(n_pred), {});
  }

  for (const auto& l : dec) {
    if (states != nullptr) {
      states->main.push_back(x);
      for (int js = 1; js <= n_pred; ++js)
        states->streams[static_cast<std::size_t>(js - 1)].push_back(g[static_cast<std::size_t>(js - 1)]);
    }
    const Tensor x_in = x;  // layer input; predicting streams attend these states
    Tensor a = multi_head(x, x, x, cmask, &bias_dec, &main_buckets, l.self, config.heads);
    Tensor h1 = ops::layer_norm(ops::add(x, apply_dropout(a, opts)), l.ln_self.gain, l.ln_self.bias);
    Tensor c = multi_head(h1, h_enc, h_enc, xmask, nullptr, nullptr, l.cross, config.heads);
    Tensor h2 = ops::layer_norm(ops::add(h1, apply_dropout(c, opts)), l.ln_cross.gain, l.ln_cross.bias);
    Tensor f = ffn_forward(l.ffn, h2);
    x = ops::layer_norm(ops::add(h2, apply_dropout(f, opts)), l.ln_ffn.gain, l.ln_ffn.bias);

    for (int js = 1; js <= n_pred; ++js) {
      Tensor& gj = g[static_cast<std::size_t>(js - 1)];
      Tensor sa = stream_attention(gj, x_in, l.self, &bias_dec,
                                   &stream_buckets[static_cast<std::size_t>(js - 1)], config.heads, js, n);
      Tensor s1 = ops::layer_norm(ops::add(gj, apply_dropout(sa, opts)), l.ln_self.gain, l.ln_self.bias);
      Tensor sc = multi_head(s1, h_enc, h_enc, xmask, nullptr, nullptr, l.cross, config.heads);
      Tensor s2 = ops::layer_norm(ops::add(s1, apply_dropout(sc, opts)), l.ln_cross.gain, l.ln_cross.bias);
      Tensor sf = ffn_forward(l.ffn, s2);
      gj = ops::layer_norm(ops::add(s2, apply_dropout(sf, opts)), l.ln_ffn.gain, l.ln_ffn.bias);
    }
  }

  if (states != nullptr) {
    states->main.push_back(x);
    for (int js = 1; js <= n_pred; ++js)
      states->streams[static_cast<std::size_t>(js - 1)].push_back(g[static_cast<std::size_t>(js - 1)]);
  }

  TrainForward out;
  out.stream_logits.push_back(output_logits(x));
  for (int js = 1; js <= n_pred; ++js) out.stream_logits.push_back(output_logits(g[static_cast<std::size_t>(js - 1)]));
  return out;
}

DecoderCache Model::make_cache() const {
  DecoderCache c;
  c.layer_inputs.resize(dec.size());
  return c;
}

Tensor Model::decode_infer_step(const std::vector<std::int64_t>& prefix, const Tensor& h_enc,
                                DecoderCache& cache) const {
  NoGradGuard no_grad;
  const std::int64_t slot = static_cast<std::int64_t>(prefix.size());
  if (cache.layer_inputs.size() != dec.size())
    throw std::logic_error("decode_infer_step: cache layer count mismatch");
  if (cache.len != slot) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "decode_infer_step: cache holds %lld slots, prefix has %lld",
                  static_cast<long long>(cache.len), static_cast<long long>(slot));
    throw std::logic_error(buf);
  }
  if (slot >= config.max_len) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "decode_infer_step: slot %lld beyond max_len %lld",
                  static_cast<long long>(slot), static_cast<long long>(config.max_len));
    throw std::invalid_argument(buf);
  }
  const std::int64_t token = slot == 0 ? kBosId : prefix.back();

  Tensor x = ops::add(ops::embedding_lookup(tok_embed, {token}), ops::embedding_lookup(pos_dec, {slot}));
  const AttentionMask self_mask = full_mask(1, slot + 1);
  const AttentionMask cross_mask = full_mask(1, h_enc.shape[0]);
  std::vector<int> row_buckets(static_cast<std::size_t>(slot + 1));
  for (std::int64_t k = 0; k <= slot; ++k)
    row_buckets[static_cast<std::size_t>(k)] =
        relative_bucket(static_cast<int>(k - slot), config.num_buckets, config.max_distance, false);

  for (std::size_t k = 0; k < dec.size(); ++k) {
    const auto& l = dec[k];
    Tensor keys = cache.len == 0 ? x : ops::concat_rows(cache.layer_inputs[k], x);
    cache.layer_inputs[k] = keys;
    Tensor a = multi_head(x, keys, keys, self_mask, &bias_dec, &row_buckets, l.self, config.heads);
    Tensor h1 = ops::layer_norm(ops::add(x, a), l.ln_self.gain, l.ln_self.bias);
    Tensor c = multi_head(h1, h_enc, h_enc, cross_mask, nullptr, nullptr, l.cross, config.heads);
    Tensor h2 = ops::layer_norm(ops::add(h1, c), l.ln_cross.gain, l.ln_cross.bias);
    Tensor f = ffn_forward(l.ffn, h2);
    x = ops::layer_norm(ops::add(h2, f), l.ln_ffn.gain, l.ln_ffn.bias);
  }
  cache.len += 1;

  Tensor logits = output_logits(x);  // [1, V]
  return Tensor::from({config.vocab_size}, *logits.data);
}

Tensor Model::output_logits(const Tensor& h) const { return ops::matmul_nt(h, tok_embed); }

std::vector<double> alpha_weights(double gamma, int n) {
  if (n < 1) throw std::invalid_argument("alpha_weights: n must be >= 1");
  if (!(gamma > 0.0)) throw std::invalid_argument("alpha_weights: gamma must be > 0");
  std::vector<double> w(static_cast<std::size_t>(n));
  double power = 1.0;
  double denom = 0.0;
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = power;
    denom += power;
    power *= gamma;
  }
  for (auto& v : w) v /= denom;
  return w;
}

Tensor future_ngram_loss(const std::vector<Tensor>& stream_logits,
                         const std::vector<std::int64_t>& targets, const std::vector<double>& alpha,
                         LossBreakdown* breakdown) {
  if (stream_logits.empty()) throw std::invalid_argument("future_ngram_loss: no streams");
  if (alpha.size() != stream_logits.size())
    throw std::invalid_argument("future_ngram_loss: alpha count does not match stream count");
  const std::int64_t t = static_cast<std::int64_t>(targets.size());
  if (breakdown != nullptr) {
    breakdown->total = 0.0;
    breakdown->nll.assign(stream_logits.size(), 0.0);
  }
  Tensor total;
  bool any = false;
  for (std::size_t js = 0; js < stream_logits.size(); ++js) {
    const Tensor& logits = stream_logits[js];
    if (logits.rank() != 2 || logits.shape[0] != t)
      throw std::invalid_argument("future_ngram_loss: stream logits must be [targets, vocab]");
    const double* p = logits.ptr();
    const std::int64_t count = logits.numel();
    for (std::int64_t i = 0; i < count; ++i) {
      if (!std::isfinite(p[i])) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "future_ngram_loss: non-finite logit in stream %zu", js);
        throw std::runtime_error(buf);
      }
    }
    const std::int64_t ahead = static_cast<std::int64_t>(js);
    if (t - ahead <= 0) continue;  // sequence too short for this stream
    std::vector<std::int64_t> shifted(static_cast<std::size_t>(t), -1);
    for (std::int64_t s = 0; s + ahead < t; ++s) shifted[static_cast<std::size_t>(s)] = targets[static_cast<std::size_t>(s + ahead)];
    Tensor nll = ops::cross_entropy(logits, shifted, -1);
    if (breakdown != nullptr) breakdown->nll[js] = nll.value();
    Tensor term = ops::scale(nll, alpha[js]);
    total = any ? ops::add(total, term) : term;
    any = true;
  }
  if (!any) throw std::invalid_argument("future_ngram_loss: no stream has a valid position");
  if (breakdown != nullptr) breakdown->total = total.value();
  return total;
}

ParamStore adapt_params(const ParamStore& src, const ModelConfig& from, const ModelConfig& to,
                        std::uint64_t seed) {
  ModelConfig fixed = to;
  fixed.ngram = from.ngram;
  fixed.gamma = from.gamma;
  fixed.dropout = from.dropout;
  fixed.max_len = from.max_len;
  ModelConfig base = from;
  base.gamma = to.gamma;
  base.dropout = to.dropout;
  if (fixed.vocab_size != base.vocab_size || fixed.layers_enc != base.layers_enc ||
      fixed.layers_dec != base.layers_dec || fixed.hidden != base.hidden ||
      fixed.ffn != base.ffn || fixed.heads != base.heads ||
      fixed.num_buckets != base.num_buckets || fixed.max_distance != base.max_distance)
    throw std::invalid_argument("adapt_params: only ngram, gamma, dropout and max_len may change");

  Rng rng(seed);
  auto resize_rows = [&rng](const Tensor& old, std::int64_t rows) {
    const std::int64_t cols = old.shape[1];
    Tensor t = Tensor::zeros({rows, cols});
    const std::int64_t keep = std::min(rows, old.shape[0]);
    std::copy_n(old.ptr(), static_cast<std::size_t>(keep * cols), t.ptr());
    for (std::int64_t i = keep * cols; i < rows * cols; ++i) t.ptr()[i] = 0.02 * rng.next_normal();
    return t;
  };

  ParamStore out;
  for (const auto& [name, tensor] : src.items()) {
    if (name == "embed.stream_init") {
      if (to.ngram >= 2) out.add(name, resize_rows(tensor, to.ngram - 1));
      continue;  // dropped when the target has no predicting streams
    }
    if (name == "embed.pos_dec") {
      out.add(name, resize_rows(tensor, to.max_len + to.ngram - 1));
      continue;
    }
    if (name == "embed.pos_enc") {
      out.add(name, resize_rows(tensor, to.max_len));
      continue;
    }
    out.add(name, tensor);
  }
  if (to.ngram >= 2 && !out.has("embed.stream_init"))
    out.add("embed.stream_init", Tensor::randn({to.ngram - 1, to.hidden}, rng, 0.02));
  return out;
}

}  // namespace pnet
