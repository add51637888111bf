#include "pnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pnet {

namespace {

const std::string kReservedNames[kReservedIds] = {"<s>", "<pad>", "<mask>", "<unk>"};

}  // namespace

std::int64_t Vocab::id(const std::string& token) const {
  auto it = to_id_.find(token);
  return it == to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::int64_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id out of range");
  if (id < kReservedIds) return kReservedNames[id];
  return words_[static_cast<std::size_t>(id - kReservedIds)];
}

void Vocab::index() {
  to_id_.clear();
  for (std::size_t i = 0; i < words_.size(); ++i)
    to_id_[words_[i]] = kReservedIds + static_cast<std::int64_t>(i);
}

Vocab Vocab::build(const std::vector<std::string>& lines, std::int64_t max_size) {
  if (max_size <= kReservedIds)
    throw std::invalid_argument("vocab: max_size must exceed the 4 reserved ids");
  std::unordered_map<std::string, std::int64_t> counts;
  for (const auto& line : lines)
    for (const auto& tok : split_ws(line)) ++counts[tok];
  if (counts.empty()) throw std::invalid_argument("vocab: empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep =
      std::min(ranked.size(), static_cast<std::size_t>(max_size - kReservedIds));
  Vocab v;
  v.words_.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) v.words_.push_back(ranked[i].first);
  v.index();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& w : words_) os << w << '\n';
  os.flush();
  if (!os) throw std::runtime_error("write failed for vocab file: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.find_first_of(" \t") != std::string::npos)
      throw std::runtime_error("vocab file " + path + ": token contains whitespace: " + line);
    v.words_.push_back(line);
  }
  v.index();
  return v;
}

std::vector<std::int64_t> Vocab::encode_line(const std::string& line) const {
  std::vector<std::int64_t> ids;
  for (const auto& tok : split_ws(line)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode_ids(const std::vector<std::int64_t>& ids, bool skip_reserved) const {
  std::string out;
  for (std::int64_t v : ids) {
    if (skip_reserved && (v == kBosId || v == kPadId)) continue;  // <mask>/<unk> stay visible
    if (!out.empty()) out += ' ';
    out += token(v);
  }
  return out;
}

std::int64_t corrupt_token(std::int64_t id, Rng& rng, std::int64_t vocab_size) {
  if (vocab_size <= kReservedIds) throw std::invalid_argument("corrupt_token: vocab has no usable ids");
  const double r = rng.next_double();
  if (r < 0.8) return kMaskId;
  if (r < 0.9)
    return kReservedIds +
           static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(vocab_size - kReservedIds)));
  return id;
}

DenoisedExample mask_spans(const std::vector<std::int64_t>& tokens, std::int64_t window, double ratio,
                           Rng& rng, std::int64_t vocab_size) {
  if (window < 1) throw std::invalid_argument("mask_spans: window must be >= 1");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("mask_spans: ratio must be in (0, 1)");
  DenoisedExample ex;
  ex.encoder_input = tokens;
  const std::int64_t n = static_cast<std::int64_t>(tokens.size());
  for (std::int64_t win_start = 0; win_start < n; win_start += window) {
    const std::int64_t win_len = std::min(window, n - win_start);
    const std::int64_t span_len = static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(win_len)));
    if (span_len < 1) continue;
    const std::int64_t start =
        win_start + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(win_len - span_len + 1)));
    ex.span_starts.push_back(start);
    ex.span_lens.push_back(span_len);
    for (std::int64_t p = start; p < start + span_len; ++p) {
      ex.target.push_back(tokens[static_cast<std::size_t>(p)]);
      ex.encoder_input[static_cast<std::size_t>(p)] =
          corrupt_token(tokens[static_cast<std::size_t>(p)], rng, vocab_size);
    }
  }
  return ex;
}

std::vector<std::int64_t> reconstruct(const DenoisedExample& ex) {
  std::vector<std::int64_t> out = ex.encoder_input;
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < ex.span_starts.size(); ++s) {
    for (std::int64_t p = 0; p < ex.span_lens[s]; ++p)
      out[static_cast<std::size_t>(ex.span_starts[s] + p)] = ex.target[cursor++];
  }
  if (cursor != ex.target.size()) throw std::logic_error("reconstruct: span lengths do not cover target");
  return out;
}

std::vector<std::int64_t> PaddedBatch::src_row(std::int64_t i) const {
  const auto* base = src.data() + i * src_cols;
  return {base, base + src_len[static_cast<std::size_t>(i)]};
}

std::vector<std::int64_t> PaddedBatch::tgt_row(std::int64_t i) const {
  const auto* base = tgt.data() + i * tgt_cols;
  return {base, base + tgt_len[static_cast<std::size_t>(i)]};
}

std::vector<PaddedBatch> make_batches(const std::vector<Example>& examples, std::int64_t batch_size,
                                      std::int64_t max_len, std::int64_t pad_id, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  if (max_len < 1) throw std::invalid_argument("make_batches: max_len must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(examples.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  std::vector<PaddedBatch> batches;
  for (std::int64_t at = 0; at < n; at += batch_size) {
    const std::int64_t rows = std::min(batch_size, n - at);
    PaddedBatch b;
    b.rows = rows;
    for (std::int64_t r = 0; r < rows; ++r) {
      const Example& e = examples[static_cast<std::size_t>(order[static_cast<std::size_t>(at + r)])];
      const std::int64_t sl = std::min<std::int64_t>(static_cast<std::int64_t>(e.src.size()), max_len);
      const std::int64_t tl = std::min<std::int64_t>(static_cast<std::int64_t>(e.tgt.size()), max_len);
      b.src_len.push_back(sl);
      b.tgt_len.push_back(tl);
      b.src_cols = std::max(b.src_cols, sl);
      b.tgt_cols = std::max(b.tgt_cols, tl);
    }
    b.src.assign(static_cast<std::size_t>(rows * b.src_cols), pad_id);
    b.tgt.assign(static_cast<std::size_t>(rows * b.tgt_cols), pad_id);
    for (std::int64_t r = 0; r < rows; ++r) {
      const Example& e = examples[static_cast<std::size_t>(order[static_cast<std::size_t>(at + r)])];
      for (std::int64_t c = 0; c < b.src_len[static_cast<std::size_t>(r)]; ++c)
        b.src[static_cast<std::size_t>(r * b.src_cols + c)] = e.src[static_cast<std::size_t>(c)];
      for (std::int64_t c = 0; c < b.tgt_len[static_cast<std::size_t>(r)]; ++c)
        b.tgt[static_cast<std::size_t>(r * b.tgt_cols + c)] = e.tgt[static_cast<std::size_t>(c)];
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace pnet
