#include "pnet/generate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

#include "pnet/ids.hpp"
#include "pnet/kernels.hpp"

namespace pnet {

namespace {

std::vector<double> log_probs(const Tensor& logits) {
  std::vector<double> lp(static_cast<std::size_t>(logits.numel()));
  kernels::serial::log_softmax_rows(lp.data(), logits.ptr(), 1, logits.numel());
  return lp;
}

struct Hyp {
  std::vector<std::int64_t> tokens;
  double sum_logprob = 0.0;
  DecoderCache cache;
  std::set<std::array<std::int64_t, 3>> trigrams;
};

struct Cand {
  double sum_logprob = 0.0;
  std::int64_t token = 0;
  std::size_t parent = 0;
};

bool would_repeat_trigram(const Hyp& h, std::int64_t next) {
  if (h.tokens.size() < 2) return false;
  const std::array<std::int64_t, 3> tri = {h.tokens[h.tokens.size() - 2], h.tokens.back(), next};
  return h.trigrams.count(tri) != 0;
}

}  // namespace

double hypothesis_score(double sum_logprob, std::int64_t len, double length_penalty) {
  if (len < 1) throw std::invalid_argument("hypothesis_score: len must be >= 1");
  return sum_logprob / std::pow(static_cast<double>(len), length_penalty);
}

std::vector<std::int64_t> greedy(const Model& model, const std::vector<std::int64_t>& src,
                                 std::int64_t max_len, std::int64_t min_len) {
  NoGradGuard no_grad;
  if (max_len <= 0) max_len = model.config.max_len;
  max_len = std::min(max_len, model.config.max_len);
  const Tensor h = model.encode(src);
  DecoderCache cache = model.make_cache();
  std::vector<std::int64_t> out;
  for (std::int64_t step = 0; step < max_len; ++step) {
    const Tensor logits = model.decode_infer_step(out, h, cache);
    std::int64_t best = kEosId;
    if (step < max_len - 1) {  // at the length limit eos is forced
      const double* p = logits.ptr();
      best = -1;
      double best_v = 0.0;
      for (std::int64_t v = 0; v < logits.numel(); ++v) {
        if (v == kEosId && step < min_len) continue;
        if (best < 0 || p[v] > best_v) {  // strict: ties keep the lower id
          best = v;
          best_v = p[v];
        }
      }
    }
    if (best == kEosId) break;
    out.push_back(best);
  }
  return out;
}

GenResult beam_search(const Model& model, const std::vector<std::int64_t>& src, const GenOptions& opts) {
  if (opts.beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (opts.length_penalty < 0.0) throw std::invalid_argument("beam_search: length_penalty must be >= 0");
  NoGradGuard no_grad;
  std::int64_t max_len = opts.max_len <= 0 ? model.config.max_len : opts.max_len;
  max_len = std::min(max_len, model.config.max_len);
  const std::int64_t min_len = std::max<std::int64_t>(0, opts.min_len);

  const Tensor h = model.encode(src);
  std::vector<Hyp> live;
  {
    Hyp root;
    root.cache = model.make_cache();
    live.push_back(std::move(root));
  }
  std::vector<GenResult> finished;

  for (std::int64_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Cand> cands;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const Tensor logits = model.decode_infer_step(live[p].tokens, h, live[p].cache);
      const std::vector<double> lp = log_probs(logits);
      if (step == max_len - 1) {  // length limit: force termination
        cands.push_back({live[p].sum_logprob + lp[kEosId], kEosId, p});
        continue;
      }
      bool any = false;
      for (std::int64_t v = 0; v < static_cast<std::int64_t>(lp.size()); ++v) {
        if (v == kEosId && step < min_len) continue;
        if (opts.block_trigrams && v != kEosId && would_repeat_trigram(live[p], v)) continue;
        cands.push_back({live[p].sum_logprob + lp[static_cast<std::size_t>(v)], v, p});
        any = true;
      }
      if (!any) cands.push_back({live[p].sum_logprob + lp[kEosId], kEosId, p});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.sum_logprob != b.sum_logprob) return a.sum_logprob > b.sum_logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    if (cands.size() > static_cast<std::size_t>(opts.beam)) cands.resize(static_cast<std::size_t>(opts.beam));

    std::vector<Hyp> next_live;
    for (const Cand& c : cands) {
      const Hyp& parent = live[c.parent];
      if (c.token == kEosId) {
        finished.push_back({parent.tokens, hypothesis_score(c.sum_logprob, step + 1, opts.length_penalty)});
        continue;
      }
      Hyp child;
      child.tokens = parent.tokens;
      child.tokens.push_back(c.token);
      child.sum_logprob = c.sum_logprob;
      child.cache = parent.cache;  // shared tensors; later steps only append
      child.trigrams = parent.trigrams;
      if (child.tokens.size() >= 3)
        child.trigrams.insert({child.tokens[child.tokens.size() - 3],
                               child.tokens[child.tokens.size() - 2], child.tokens.back()});
      next_live.push_back(std::move(child));
    }
    live = std::move(next_live);
  }

  if (finished.empty()) throw std::logic_error("beam_search: no finished hypothesis");
  const GenResult* best = &finished[0];
  for (const GenResult& f : finished) {
    if (f.score > best->score || (f.score == best->score && f.tokens < best->tokens)) best = &f;
  }
  return *best;
}

}  // namespace pnet
