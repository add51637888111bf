#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "pnet/attention.hpp"
#include "pnet/rng.hpp"

using namespace pnet;

TEST_CASE("causal mask is inclusive lower triangular") {
  const AttentionMask m = causal_mask(4);
  for (std::int64_t q = 0; q < 4; ++q)
    for (std::int64_t k = 0; k < 4; ++k) CHECK(m.at(q, k) == (k <= q));
}

TEST_CASE("stream mask row j permits exactly j+2 keys") {
  const std::int64_t t = 5;
  const AttentionMask m = stream_mask(t);
  REQUIRE(m.k == 2 * t);
  for (std::int64_t j = 0; j < t; ++j) {
    std::int64_t permitted = 0;
    for (std::int64_t k = 0; k < 2 * t; ++k)
      if (m.at(j, k)) ++permitted;
    CHECK(permitted == j + 2);
    // specifically: main keys 0..j and the stream's own slot t+j
    for (std::int64_t k = 0; k <= j; ++k) CHECK(m.at(j, k));
    CHECK(m.at(j, t + j));
    CHECK_FALSE(m.at(j, t + (j + 1) % t));  // other stream slots blocked
  }
}

TEST_CASE("relative buckets: unidirectional decoder geometry") {
  const int nb = 32, md = 128;
  CHECK(relative_bucket(0, nb, md, false) == 0);
  CHECK(relative_bucket(-1, nb, md, false) == 1);
  CHECK(relative_bucket(-2, nb, md, false) == 2);
  CHECK(relative_bucket(-1, nb, md, false) != relative_bucket(-2, nb, md, false));
  CHECK(relative_bucket(-15, nb, md, false) == 15);
  CHECK(relative_bucket(-16, nb, md, false) == 16);  // first log-spaced bucket
  CHECK(relative_bucket(-127, nb, md, false) == 31);
  CHECK(relative_bucket(-128, nb, md, false) == 31);   // clamp at max_distance
  CHECK(relative_bucket(-100000, nb, md, false) == 31);
  // future offsets are masked; they collapse to bucket 0
  CHECK(relative_bucket(3, nb, md, false) == 0);
}

TEST_CASE("relative buckets: bidirectional encoder splits by sign") {
  const int nb = 32, md = 128;
  CHECK(relative_bucket(0, nb, md, true) == 0);
  CHECK(relative_bucket(-1, nb, md, true) == 1);
  CHECK(relative_bucket(1, nb, md, true) == 17);
  CHECK(relative_bucket(-7, nb, md, true) == 7);
  CHECK(relative_bucket(-8, nb, md, true) == 8);
  CHECK(relative_bucket(127, nb, md, true) == 31);
  CHECK(relative_bucket(-127, nb, md, true) == 15);
  CHECK(relative_bucket(-1000000, nb, md, true) == 15);
}

TEST_CASE("stream positions measure offsets from the predicted slot") {
  // stream 1, t=3: query slot j predicts position j+1
  const StreamPositions p = positions_for_stream(1, 3);
  CHECK(p.key_count == 6);
  CHECK(p.absolute == std::vector<std::int64_t>{1, 2, 3});  // query j predicts slot j+1
  // main key m for query j: rel = m - (j+1)
  CHECK(p.rel[0 * 6 + 0] == -1);
  CHECK(p.rel[1 * 6 + 0] == -2);
  CHECK(p.rel[1 * 6 + 1] == -1);
  // self keys sit at the same predicted position: rel 0 on the diagonal
  CHECK(p.rel[0 * 6 + 3 + 0] == 0);
  CHECK(p.rel[2 * 6 + 3 + 2] == 0);
}

TEST_CASE("main stream positions are plain relative offsets") {
  const StreamPositions p = positions_for_stream(0, 4);
  CHECK(p.key_count == 4);
  CHECK(p.absolute == std::vector<std::int64_t>{0, 1, 2, 3});
  CHECK(p.rel[2 * 4 + 0] == -2);
  CHECK(p.rel[2 * 4 + 3] == 1);
}

namespace {

AttnWeights identity_weights(std::int64_t d) {
  AttnWeights w;
  w.wq = Tensor::zeros({d, d});
  w.wk = Tensor::zeros({d, d});
  w.wv = Tensor::zeros({d, d});
  w.wo = Tensor::zeros({d, d});
  for (std::int64_t i = 0; i < d; ++i) {
    w.wq.ptr()[i * d + i] = 1.0;
    w.wk.ptr()[i * d + i] = 1.0;
    w.wv.ptr()[i * d + i] = 1.0;
    w.wo.ptr()[i * d + i] = 1.0;
  }
  w.bq = Tensor::zeros({d});
  w.bk = Tensor::zeros({d});
  w.bv = Tensor::zeros({d});
  w.bo = Tensor::zeros({d});
  return w;
}

}  // namespace

TEST_CASE("single query/key attention has weight one") {
  const std::int64_t d = 4;
  Rng rng(11);
  Tensor x = Tensor::randn({1, d}, rng);
  Tensor v = Tensor::randn({1, d}, rng);
  const AttnWeights w = identity_weights(d);
  Tensor out = multi_head(x, x, v, full_mask(1, 1), nullptr, nullptr, w, 2);
  for (std::int64_t c = 0; c < d; ++c) CHECK(out.ptr()[c] == doctest::Approx(v.ptr()[c]).epsilon(1e-12));
}

TEST_CASE("equal keys split attention evenly") {
  const std::int64_t d = 2;
  Tensor q = Tensor::from({1, d}, {1.0, 0.5});
  Tensor k = Tensor::from({2, d}, {0.3, 0.7, 0.3, 0.7});  // identical rows
  Tensor v = Tensor::from({2, d}, {2.0, 0.0, 0.0, 4.0});
  const AttnWeights w = identity_weights(d);
  Tensor out = multi_head(q, k, v, full_mask(1, 2), nullptr, nullptr, w, 1);
  CHECK(out.ptr()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.ptr()[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("heads=1 multi_head equals a hand-rolled single head") {
  const std::int64_t t = 3, d = 4;
  Rng rng(23);
  Tensor x = Tensor::randn({t, d}, rng);
  AttnWeights w;
  w.wq = Tensor::randn({d, d}, rng);
  w.wk = Tensor::randn({d, d}, rng);
  w.wv = Tensor::randn({d, d}, rng);
  w.wo = Tensor::randn({d, d}, rng);
  w.bq = Tensor::randn({d}, rng);
  w.bk = Tensor::randn({d}, rng);
  w.bv = Tensor::randn({d}, rng);
  w.bo = Tensor::randn({d}, rng);

  Tensor got = multi_head(x, x, x, causal_mask(t), nullptr, nullptr, w, 1);

  auto proj = [&](const Tensor& wm, const Tensor& b) {
    std::vector<std::vector<double>> y(t, std::vector<double>(d, 0.0));
    for (std::int64_t r = 0; r < t; ++r)
      for (std::int64_t c = 0; c < d; ++c) {
        double s = b.ptr()[c];
        for (std::int64_t i = 0; i < d; ++i) s += x.ptr()[r * d + i] * wm.ptr()[i * d + c];
        y[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = s;
      }
    return y;
  };
  const auto q = proj(w.wq, w.bq), k = proj(w.wk, w.bk), v = proj(w.wv, w.bv);
  for (std::int64_t j = 0; j < t; ++j) {
    std::vector<double> scores(static_cast<std::size_t>(j + 1), 0.0);
    for (std::int64_t m = 0; m <= j; ++m) {
      double s = 0.0;
      for (std::int64_t c = 0; c < d; ++c)
        s += q[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] * k[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];
      scores[static_cast<std::size_t>(m)] = s / std::sqrt(static_cast<double>(d));
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double z = 0.0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      z += s;
    }
    for (std::int64_t c = 0; c < d; ++c) {
      double attnv = 0.0;
      for (std::int64_t m = 0; m <= j; ++m)
        attnv += (scores[static_cast<std::size_t>(m)] / z) * v[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];
      // then the output projection
      (void)attnv;
    }
    std::vector<double> merged(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t c = 0; c < d; ++c)
      for (std::int64_t m = 0; m <= j; ++m)
        merged[static_cast<std::size_t>(c)] += (scores[static_cast<std::size_t>(m)] / z) * v[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)];
    for (std::int64_t c = 0; c < d; ++c) {
      double s = w.bo.ptr()[c];
      for (std::int64_t i = 0; i < d; ++i) s += merged[static_cast<std::size_t>(i)] * w.wo.ptr()[i * d + c];
      CHECK(got.ptr()[j * d + c] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("relative bias shifts attention as an additive score") {
  const std::int64_t d = 2;
  const int nb = 4, md = 8;
  Tensor q = Tensor::from({1, d}, {0.0, 0.0});  // zero scores before bias
  Tensor k = Tensor::from({2, d}, {0.0, 0.0, 0.0, 0.0});
  Tensor v = Tensor::from({2, d}, {1.0, 0.0, 0.0, 1.0});
  const AttnWeights w = identity_weights(d);
  RelativeBias bias;
  bias.table = Tensor::zeros({nb, 1});
  bias.num_buckets = nb;
  bias.max_distance = md;
  // rel for the two keys relative to query 0: 0 and +1; buckets differ
  const std::vector<int> buckets = buckets_from_rel({0, 1}, nb, md, true);
  REQUIRE(buckets[0] != buckets[1]);
  bias.table.ptr()[buckets[1] * 1] = std::log(3.0);  // key 1 gets 3x the weight
  Tensor out = multi_head(q, k, v, full_mask(1, 2), &bias, &buckets, w, 1);
  CHECK(out.ptr()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(out.ptr()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("stream_attention validates the stream index") {
  const std::int64_t t = 2, d = 4;
  Rng rng(7);
  Tensor stream = Tensor::randn({t, d}, rng);
  Tensor main = Tensor::randn({t, d}, rng);
  const AttnWeights w = identity_weights(d);
  CHECK_THROWS_WITH_AS(stream_attention(stream, main, w, nullptr, nullptr, 2, 0, 3),
                       doctest::Contains("stream index"), std::invalid_argument);
  CHECK_THROWS_AS(stream_attention(stream, main, w, nullptr, nullptr, 2, 3, 3), std::invalid_argument);
  CHECK_NOTHROW(stream_attention(stream, main, w, nullptr, nullptr, 2, 2, 3));
}

TEST_CASE("multi_head validates shapes and bias pairing") {
  const std::int64_t d = 4;
  Rng rng(9);
  Tensor x = Tensor::randn({2, d}, rng);
  const AttnWeights w = identity_weights(d);
  CHECK_THROWS_AS(multi_head(x, x, x, full_mask(2, 2), nullptr, nullptr, w, 3), std::invalid_argument);
  CHECK_THROWS_AS(multi_head(x, x, x, full_mask(3, 2), nullptr, nullptr, w, 2), std::invalid_argument);
  RelativeBias bias;
  bias.table = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(multi_head(x, x, x, full_mask(2, 2), &bias, nullptr, w, 2), std::invalid_argument);
}
