#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "pnet/metrics.hpp"

using namespace pnet;

namespace {
using Toks = std::vector<std::string>;
}

TEST_CASE("rouge-1 counts clipped unigram overlap") {
  const RougeScore s = rouge_n({"a", "b", "c"}, {"a", "b", "d"}, 1);
  CHECK(s.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // clipping: the second "a" finds no unmatched reference copy
  const RougeScore c = rouge_n({"a", "a"}, {"a"}, 1);
  CHECK(c.precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c.recall == 1.0);
  CHECK(c.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("rouge-2 scores bigram overlap") {
  const RougeScore s = rouge_n({"a", "b", "c"}, {"a", "b", "d"}, 2);
  CHECK(s.precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.recall == doctest::Approx(0.5).epsilon(1e-15));
  // too short for any bigram
  const RougeScore t = rouge_n({"a"}, {"a", "b"}, 2);
  CHECK(t.precision == 0.0);
  CHECK(t.f1 == 0.0);
  CHECK_THROWS_AS(rouge_n({"a"}, {"a"}, 0), std::invalid_argument);
}

TEST_CASE("rouge-l uses the longest common subsequence") {
  // LCS of (a b g c d) and (a x b c y) is (a b c), length 3
  const RougeScore s = rouge_l({"a", "b", "g", "c", "d"}, {"a", "x", "b", "c", "y"});
  CHECK(s.precision == doctest::Approx(3.0 / 5.0).epsilon(1e-15));
  CHECK(s.recall == doctest::Approx(3.0 / 5.0).epsilon(1e-15));
  // subsequences need not be contiguous
  const RougeScore gap = rouge_l({"a", "z", "b"}, {"a", "b"});
  CHECK(gap.recall == 1.0);
}

TEST_CASE("identical sequences score a perfect rouge") {
  const Toks t = {"one", "two", "three", "four"};
  for (int n : {1, 2}) {
    const RougeScore s = rouge_n(t, t, n);
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f1 == 1.0);
  }
  CHECK(rouge_l(t, t).f1 == 1.0);
}

TEST_CASE("disjoint sequences score zero without dividing by zero") {
  const RougeScore s = rouge_n({"a", "b"}, {"c", "d"}, 1);
  CHECK(s.precision == 0.0);
  CHECK(s.recall == 0.0);
  CHECK(s.f1 == 0.0);
  const RougeScore e = rouge_n({}, {"a"}, 1);
  CHECK(e.precision == 0.0);
  CHECK(e.f1 == 0.0);
  CHECK(rouge_l({}, {}).f1 == 0.0);
}

TEST_CASE("token accuracy skips ignored gold positions") {
  CHECK(token_accuracy({4, 5, 6}, {4, 5, 6}, -1) == 1.0);
  CHECK(token_accuracy({4, 9, 6}, {4, 5, 6}, -1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(token_accuracy({4, 9, 6}, {4, -1, 6}, -1) == 1.0);  // middle position ignored
  // missing tail counts as wrong
  CHECK(token_accuracy({4}, {4, 5}, -1) == 0.5);
  bool warned = false;
  CHECK(token_accuracy({}, {-1, -1}, -1, &warned) == 1.0);
  CHECK(warned);
  CHECK(token_accuracy({4}, {4}, -1, &warned) == 1.0);
  CHECK_FALSE(warned);
}

TEST_CASE("perplexity is the exponential of the mean nll") {
  CHECK(perplexity(0.0) == 1.0);
  CHECK(perplexity(std::log(50.0)) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("synthetic tasks are deterministic and shaped as promised") {
  const SynthData a = synth_task(SynthKind::Copy, 50, 20, 7);
  const SynthData b = synth_task(SynthKind::Copy, 50, 20, 7);
  REQUIRE(a.train.size() == 50);
  REQUIRE(a.test.size() == 10);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].src == b.train[i].src);
    CHECK(a.train[i].tgt == b.train[i].tgt);
  }
  const SynthData c = synth_task(SynthKind::Copy, 50, 20, 8);
  bool differs = false;
  for (std::size_t i = 0; i < c.train.size() && !differs; ++i) differs = c.train[i].src != a.train[i].src;
  CHECK(differs);

  for (const Example& e : a.train) {
    REQUIRE(e.tgt.size() == e.src.size() + 1);
    CHECK(e.tgt.back() == kEosId);
    CHECK(std::equal(e.src.begin(), e.src.end(), e.tgt.begin()));
    CHECK(e.src.size() >= 4);
    CHECK(e.src.size() <= 10);
    for (auto t : e.src) {
      CHECK(t >= kReservedIds);
      CHECK(t < 20);
    }
  }
  // train and test draw from separate streams
  CHECK(a.train[0].src != a.test[0].src);
}

TEST_CASE("reverse and lead_k build their targets correctly") {
  const SynthData rev = synth_task(SynthKind::Reverse, 10, 15, 3);
  for (const Example& e : rev.train) {
    REQUIRE(e.tgt.size() == e.src.size() + 1);
    for (std::size_t i = 0; i < e.src.size(); ++i) CHECK(e.tgt[i] == e.src[e.src.size() - 1 - i]);
  }
  const SynthData lead = synth_task(SynthKind::LeadK, 10, 15, 4, 3);
  for (const Example& e : lead.train) {
    REQUIRE(e.tgt.size() == 4);  // k tokens plus eos
    CHECK(e.src.size() >= 6);    // k+3 minimum keeps the task non-trivial
    for (std::size_t i = 0; i < 3; ++i) CHECK(e.tgt[i] == e.src[i]);
  }
}

TEST_CASE("task names parse to kinds") {
  CHECK(synth_kind_from_name("copy") == SynthKind::Copy);
  CHECK(synth_kind_from_name("reverse") == SynthKind::Reverse);
  CHECK(synth_kind_from_name("lead_k") == SynthKind::LeadK);
  CHECK_THROWS_WITH_AS(synth_kind_from_name("sort"), doctest::Contains("unknown synthetic task"),
                       std::invalid_argument);
  CHECK_THROWS_AS(synth_task(SynthKind::Copy, 0, 20, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_task(SynthKind::LeadK, 5, 20, 1, 0), std::invalid_argument);
}
