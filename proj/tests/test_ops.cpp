#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "pnet/gradcheck.hpp"
#include "pnet/ops.hpp"
#include "pnet/rng.hpp"

using namespace pnet;

TEST_CASE("finite-difference suite passes for every op") {
  const auto cases = run_gradient_suite(20240501);
  for (const auto& c : cases) {
    INFO(c.name, ": ", c.worst);
    CHECK(c.pass);
    CHECK(c.max_rel_err < c.tolerance);
  }
}

TEST_CASE("gradient comparison catches an injected sign flip") {
  // A corrupted backward rule (wrong sign) must not slip through the checker.
  std::vector<std::vector<double>> tape = {{0.5, -1.25, 2.0}};
  std::vector<std::vector<double>> fd = tape;
  fd[0][1] = -fd[0][1];
  const GradMismatch m = compare_gradients(tape, fd);
  CHECK(m.max_rel_err > 0.5);
  CHECK(m.coord == 1);
}

TEST_CASE("gradient comparison catches a dropped term") {
  std::vector<std::vector<double>> tape = {{1.0, 0.0}};  // rule forgot coordinate 1
  std::vector<std::vector<double>> fd = {{1.0, 3.0}};
  const GradMismatch m = compare_gradients(tape, fd);
  CHECK(m.max_rel_err == doctest::Approx(1.0));
}

TEST_CASE("softmax rows sum to one on both axes") {
  Rng rng(3);
  Tensor x = Tensor::randn({4, 6}, rng);
  Tensor y = ops::softmax(x, 1);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += y.ptr()[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor y0 = ops::softmax(x, 0);
  for (int c = 0; c < 6; ++c) {
    double s = 0.0;
    for (int r = 0; r < 4; ++r) s += y0.ptr()[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cross_entropy equals hand-computed value and honors ignore") {
  // logits row [1,2,3]: logsumexp = 3 + log(1 + e^-1 + e^-2)
  Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  const double lse = 3.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
  SUBCASE("plain mean") {
    Tensor nll = ops::cross_entropy(logits, {0, 1});
    const double expect = ((lse - 1.0) + std::log(3.0)) / 2.0;
    CHECK(nll.value() == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("ignored position drops out of the mean") {
    Tensor nll = ops::cross_entropy(logits, {0, -1}, -1);
    CHECK(nll.value() == doctest::Approx(lse - 1.0).epsilon(1e-12));
  }
}

TEST_CASE("dropout is identity in eval and rescales in training") {
  Rng rng(17);
  Tensor x = Tensor::full({64, 8}, 1.0);
  Tensor eval_y = ops::dropout(x, 0.4, false, rng);
  for (std::int64_t i = 0; i < eval_y.numel(); ++i) CHECK(eval_y.ptr()[i] == 1.0);

  Tensor train_y = ops::dropout(x, 0.4, true, rng);
  std::int64_t kept = 0;
  for (std::int64_t i = 0; i < train_y.numel(); ++i) {
    const double v = train_y.ptr()[i];
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.6).epsilon(1e-12)));
    if (v != 0.0) ++kept;
  }
  // 512 draws at keep probability 0.6: expect ~307, allow a wide band
  CHECK(kept > 230);
  CHECK(kept < 380);
}

TEST_CASE("dropout stream is reproducible from the seed") {
  Tensor x = Tensor::full({16, 4}, 1.0);
  Rng r1(99), r2(99);
  Tensor a = ops::dropout(x, 0.3, true, r1);
  Tensor b = ops::dropout(x, 0.3, true, r2);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.ptr()[i] == b.ptr()[i]);
}

TEST_CASE("concat and slice round trip") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({1, 2}, {5, 6});
  Tensor cat = ops::concat_rows(a, b);
  CHECK(cat.shape[0] == 3);
  CHECK(cat.ptr()[4] == 5.0);

  Tensor wide = ops::concat_cols({a, a});
  CHECK(wide.shape[1] == 4);
  Tensor back = ops::slice_cols(wide, 2, 2);
  for (int i = 0; i < 4; ++i) CHECK(back.ptr()[i] == a.ptr()[i]);
}

TEST_CASE("matmul validates inner dimensions") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(ops::matmul(a, b), std::invalid_argument);
}

TEST_CASE("embedding_lookup rejects out-of-range ids") {
  Tensor table = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(ops::embedding_lookup(table, {0, 4}), std::out_of_range);
  CHECK_THROWS_AS(ops::embedding_lookup(table, {-1}), std::out_of_range);
}
