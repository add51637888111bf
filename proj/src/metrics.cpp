#include "pnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace pnet {

namespace {

std::map<std::vector<std::string>, std::int64_t> ngram_counts(const std::vector<std::string>& toks,
                                                              int n) {
  std::map<std::vector<std::string>, std::int64_t> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

RougeScore prf(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace

RougeScore rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::int64_t overlap = 0, cand_total = 0, ref_total = 0;
  for (const auto& [g, c] : cand) {
    cand_total += c;
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);  // clipped
  }
  for (const auto& [g, c] : ref) ref_total += c;
  return prf(static_cast<double>(overlap), static_cast<double>(cand_total),
             static_cast<double>(ref_total));
}

RougeScore rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<std::int64_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[n]);
  return prf(lcs, static_cast<double>(m), static_cast<double>(n));
}

double token_accuracy(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gold,
                      std::int64_t ignore_id, bool* warned) {
  if (warned != nullptr) *warned = false;
  std::int64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == ignore_id) continue;
    ++total;
    if (i < pred.size() && pred[i] == gold[i]) ++correct;
  }
  if (total == 0) {
    if (warned != nullptr) *warned = true;
    return 1.0;  // nothing to score
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double perplexity(double mean_nll) { return std::exp(mean_nll); }

SynthKind synth_kind_from_name(const std::string& name) {
  if (name == "copy") return SynthKind::Copy;
  if (name == "reverse") return SynthKind::Reverse;
  if (name == "lead_k") return SynthKind::LeadK;
  throw std::invalid_argument("unknown synthetic task: " + name + " (expected copy, reverse, or lead_k)");
}

SynthData synth_task(SynthKind kind, std::int64_t size, std::int64_t vocab, std::uint64_t seed, int k) {
  if (size < 1) throw std::invalid_argument("synth_task: size must be >= 1");
  if (vocab < kReservedIds + 2) throw std::invalid_argument("synth_task: vocab must be >= 6");
  if (kind == SynthKind::LeadK && k < 1) throw std::invalid_argument("synth_task: k must be >= 1");

  auto draw = [&](Rng& rng) {
    return kReservedIds + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(vocab - kReservedIds)));
  };
  auto make = [&](std::int64_t count, std::uint64_t part_seed) {
    std::vector<Example> out;
    Rng rng(part_seed);
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      const std::int64_t lo = kind == SynthKind::LeadK ? k + 3 : 4;
      const std::int64_t hi = kind == SynthKind::LeadK ? k + 9 : 10;
      const std::int64_t len = lo + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(hi - lo + 1)));
      Example e;
      e.src.resize(static_cast<std::size_t>(len));
      for (auto& t : e.src) t = draw(rng);
      switch (kind) {
        case SynthKind::Copy:
          e.tgt = e.src;
          break;
        case SynthKind::Reverse:
          e.tgt.assign(e.src.rbegin(), e.src.rend());
          break;
        case SynthKind::LeadK:
          e.tgt.assign(e.src.begin(), e.src.begin() + k);
          break;
      }
      e.tgt.push_back(kEosId);
      out.push_back(std::move(e));
    }
    return out;
  };
  SynthData d;
  d.train = make(size, mix_seed(seed, 0));
  d.test = make(std::max<std::int64_t>(1, size / 5), mix_seed(seed, 1));
  return d;
}

}  // namespace pnet
