#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pnet/data.hpp"
#include "pnet/rng.hpp"

using namespace pnet;

namespace {

std::vector<std::int64_t> sequential_tokens(std::int64_t n, std::int64_t vocab) {
  std::vector<std::int64_t> t(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = kReservedIds + i % (vocab - kReservedIds);
  return t;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/pnet_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("span masking takes one span per 64-token window") {
  Rng rng(301);
  const std::int64_t v = 1000;

  SUBCASE("two full windows") {
    const auto ex = mask_spans(sequential_tokens(128, v), 64, 0.15, rng, v);
    REQUIRE(ex.span_lens == std::vector<std::int64_t>{10, 10});
    CHECK(ex.target.size() == 20);
    CHECK(ex.span_starts[0] >= 0);
    CHECK(ex.span_starts[0] + 10 <= 64);
    CHECK(ex.span_starts[1] >= 64);
    CHECK(ex.span_starts[1] + 10 <= 128);
  }
  SUBCASE("one full window") {
    const auto ex = mask_spans(sequential_tokens(64, v), 64, 0.15, rng, v);
    CHECK(ex.span_lens == std::vector<std::int64_t>{10});
  }
  SUBCASE("short trailing window rounds its share") {
    const auto ex = mask_spans(sequential_tokens(70, v), 64, 0.15, rng, v);
    CHECK(ex.span_lens == std::vector<std::int64_t>{10, 1});
    CHECK(ex.span_starts[1] >= 64);
    CHECK(ex.span_starts[1] < 70);
  }
  SUBCASE("five tokens still yield a single-token span") {
    const auto ex = mask_spans(sequential_tokens(5, v), 64, 0.15, rng, v);
    CHECK(ex.span_lens == std::vector<std::int64_t>{1});
    CHECK(ex.target.size() == 1);
  }
  SUBCASE("too short for any span") {
    const auto tokens = sequential_tokens(3, v);
    const auto ex = mask_spans(tokens, 64, 0.15, rng, v);
    CHECK(ex.span_lens.empty());
    CHECK(ex.target.empty());
    CHECK(ex.encoder_input == tokens);
  }
  SUBCASE("parameter validation") {
    CHECK_THROWS_AS(mask_spans({4, 5}, 0, 0.15, rng, v), std::invalid_argument);
    CHECK_THROWS_AS(mask_spans({4, 5}, 64, 0.0, rng, v), std::invalid_argument);
    CHECK_THROWS_AS(mask_spans({4, 5}, 64, 1.0, rng, v), std::invalid_argument);
  }
}

TEST_CASE("masking never loses tokens: reconstruct inverts it") {
  const std::int64_t v = 500;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(9000 + seed);
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.next_below(300));
    std::vector<std::int64_t> tokens(static_cast<std::size_t>(n));
    for (auto& t : tokens) t = kReservedIds + static_cast<std::int64_t>(rng.next_below(v - kReservedIds));
    const auto ex = mask_spans(tokens, 64, 0.15, rng, v);
    REQUIRE(reconstruct(ex) == tokens);
    // target really is the in-order concatenation of the masked spans
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < ex.span_starts.size(); ++s)
      for (std::int64_t p = 0; p < ex.span_lens[s]; ++p)
        REQUIRE(ex.target[cursor++] == tokens[static_cast<std::size_t>(ex.span_starts[s] + p)]);
  }
}

TEST_CASE("corruption draws mask/random/keep at 80/10/10") {
  const std::int64_t v = 10004;
  const std::int64_t id = 7;
  Rng rng(302);
  const int n = 20000;
  int masked = 0, kept = 0, random = 0;
  for (int i = 0; i < n; ++i) {
    const std::int64_t out = corrupt_token(id, rng, v);
    if (out == kMaskId) {
      ++masked;
    } else if (out == id) {
      ++kept;
    } else {
      ++random;
      CHECK(out >= kReservedIds);
      CHECK(out < v);
    }
  }
  CHECK(std::abs(masked / double(n) - 0.8) < 0.01);
  CHECK(std::abs(kept / double(n) - 0.1) < 0.01);
  CHECK(std::abs(random / double(n) - 0.1) < 0.01);
  CHECK_THROWS_AS(corrupt_token(5, rng, kReservedIds), std::invalid_argument);
}

TEST_CASE("vocab ranks by frequency with lexicographic ties") {
  Vocab v = Vocab::build({"b a b c", "a b", "e d d e"}, 100);
  // counts: b=3, a=2, d=2, e=2, c=1
  CHECK(v.id("b") == 4);
  CHECK(v.id("a") == 5);  // a < d < e at count 2
  CHECK(v.id("d") == 6);
  CHECK(v.id("e") == 7);
  CHECK(v.id("c") == 8);
  CHECK(v.size() == 9);
  CHECK(v.id("zzz") == kUnkId);
  CHECK(v.token(4) == "b");
  CHECK(v.token(kMaskId) == "<mask>");
  CHECK_THROWS_AS(v.token(9), std::out_of_range);
  CHECK_THROWS_AS(v.token(-1), std::out_of_range);
}

TEST_CASE("vocab cap sends overflow tokens to unk") {
  Vocab v = Vocab::build({"b a b c a b"}, 6);  // room for 2 words
  CHECK(v.size() == 6);
  CHECK(v.id("b") == 4);
  CHECK(v.id("a") == 5);
  CHECK(v.id("c") == kUnkId);
  CHECK_THROWS_AS(Vocab::build({"a"}, 4), std::invalid_argument);
  CHECK_THROWS_AS(Vocab::build({"", "  "}, 10), std::invalid_argument);
}

TEST_CASE("vocab survives a save/load round trip") {
  Vocab v = Vocab::build({"roundtrip keeps every word in rank order order order"}, 50);
  TempFile f("vocab.txt");
  v.save(f.path);
  Vocab loaded = Vocab::load(f.path);
  REQUIRE(loaded.size() == v.size());
  for (std::int64_t id = 0; id < v.size(); ++id) CHECK(loaded.token(id) == v.token(id));
  CHECK(loaded.id("order") == v.id("order"));
  CHECK_THROWS_AS(Vocab::load("/tmp/pnet_test_no_such_vocab"), std::runtime_error);
}

TEST_CASE("encode/decode keep mask and unk visible but drop padding") {
  Vocab v = Vocab::build({"x y z"}, 100);
  const auto ids = v.encode_line("y q x");
  CHECK(ids == std::vector<std::int64_t>{v.id("y"), kUnkId, v.id("x")});
  CHECK(v.decode_ids({kBosId, v.id("x"), kPadId, kMaskId, v.id("z"), kUnkId}) == "x <mask> z <unk>");
  CHECK(v.decode_ids({kBosId, kPadId}).empty());
  CHECK(v.decode_ids({v.id("x"), kBosId, v.id("y")}, false) == "x <s> y");
}

TEST_CASE("batching pads per batch and visits every example once") {
  std::vector<Example> ex(5);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ex[i].src = sequential_tokens(static_cast<std::int64_t>(2 + 3 * i), 100);
    ex[i].tgt = sequential_tokens(static_cast<std::int64_t>(1 + i), 100);
  }
  Rng rng(303);
  const auto batches = make_batches(ex, 2, 10, kPadId, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].rows == 2);
  CHECK(batches[1].rows == 2);
  CHECK(batches[2].rows == 1);

  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    std::int64_t longest_src = 0, longest_tgt = 0;
    for (std::int64_t r = 0; r < b.rows; ++r) {
      longest_src = std::max(longest_src, b.src_len[static_cast<std::size_t>(r)]);
      longest_tgt = std::max(longest_tgt, b.tgt_len[static_cast<std::size_t>(r)]);
      const auto src = b.src_row(r);
      CHECK(static_cast<std::int64_t>(src.size()) == b.src_len[static_cast<std::size_t>(r)]);
      CHECK(static_cast<std::int64_t>(src.size()) <= 10);  // max_len truncation
      // padded cells past the row length hold the pad id
      for (std::int64_t c = b.src_len[static_cast<std::size_t>(r)]; c < b.src_cols; ++c)
        CHECK(b.src[static_cast<std::size_t>(r * b.src_cols + c)] == kPadId);
      seen.insert(src.size());
    }
    CHECK(b.src_cols == longest_src);
    CHECK(b.tgt_cols == longest_tgt);
  }
  // lengths 2,5,8,10(truncated from 11),10(truncated from 14) in some order
  CHECK(seen == std::multiset<std::size_t>{2, 5, 8, 10, 10});
}

TEST_CASE("batch order is a deterministic function of the seed") {
  std::vector<Example> ex(12);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ex[i].src = {static_cast<std::int64_t>(kReservedIds + i)};
    ex[i].tgt = {static_cast<std::int64_t>(kReservedIds + i)};
  }
  auto order_of = [&](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::int64_t> order;
    for (const auto& b : make_batches(ex, 4, 8, kPadId, rng))
      for (std::int64_t r = 0; r < b.rows; ++r) order.push_back(b.src_row(r)[0]);
    return order;
  };
  const auto a = order_of(42);
  CHECK(a == order_of(42));
  CHECK(a != order_of(43));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    CHECK(sorted[i] == static_cast<std::int64_t>(kReservedIds + i));
}

TEST_CASE("line reading trims carriage returns and empty lines") {
  TempFile f("lines.txt");
  {
    std::ofstream os(f.path);
    os << "first line\r\n\nsecond  line\n   \n";
  }
  const auto lines = read_lines(f.path);
  REQUIRE(lines.size() == 3);  // "   " is non-empty; tokenization decides later
  CHECK(lines[0] == "first line");
  CHECK(lines[1] == "second  line");
  CHECK(split_ws(lines[2]).empty());
  CHECK(split_ws(" a  bb\tc ") == std::vector<std::string>{"a", "bb", "c"});
  CHECK_THROWS_AS(read_lines("/tmp/pnet_test_absent.txt"), std::runtime_error);
}
