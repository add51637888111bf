#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pnet/checkpoint.hpp"
#include "pnet/model.hpp"
#include "pnet/rng.hpp"
#include "pnet/trainer.hpp"

using namespace pnet;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.vocab_size = 23;
  cfg.layers_enc = 1;
  cfg.layers_dec = 1;
  cfg.hidden = 8;
  cfg.ffn = 16;
  cfg.heads = 2;
  cfg.ngram = 2;
  cfg.max_len = 16;
  cfg.dropout = 0.1;
  return cfg;
}

std::vector<Example> micro_batch(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<Example> out(count);
  for (auto& e : out) {
    e.src.resize(4 + rng.next_below(3));
    e.tgt.resize(3 + rng.next_below(3));
    for (auto& t : e.src) t = kReservedIds + static_cast<std::int64_t>(rng.next_below(19));
    for (auto& t : e.tgt) t = kReservedIds + static_cast<std::int64_t>(rng.next_below(19));
  }
  return out;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/pnet_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("learning rate ramps to peak then decays with inverse sqrt") {
  const double peak = 3e-4;
  CHECK(lr_at(1, peak, 1000) == doctest::Approx(peak / 1000).epsilon(1e-15));
  CHECK(lr_at(500, peak, 1000) == doctest::Approx(peak / 2).epsilon(1e-15));
  CHECK(lr_at(1000, peak, 1000) == peak);
  CHECK(lr_at(4000, peak, 1000) == doctest::Approx(peak / 2).epsilon(1e-15));
  CHECK(lr_at(16000, peak, 1000) == doctest::Approx(peak / 4).epsilon(1e-15));
  CHECK(lr_at(1, peak, 1) == peak);
  CHECK_THROWS_AS(lr_at(0, peak, 10), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(5, peak, 0), std::invalid_argument);
}

TEST_CASE("first adam update matches the closed form") {
  ParamStore params;
  Tensor& p = params.add("w", Tensor::zeros({2}, true));
  p.ensure_grad();
  p.grad_ptr()[0] = 4.0;
  p.grad_ptr()[1] = -0.5;
  AdamState st = AdamState::init(params);
  adam_step(params, st, 1e-3, 0.9, 0.999, 1e-8);
  CHECK(st.step == 1);
  // mhat = g, vhat = g^2  =>  delta = -lr * g / (|g| + eps)
  CHECK(p.ptr()[0] == doctest::Approx(-1e-3 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(p.ptr()[1] == doctest::Approx(1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(st.m[0].ptr()[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(st.v[0].ptr()[0] == doctest::Approx(0.016).epsilon(1e-15));

  p.grad_ptr()[0] = std::nan("");
  CHECK_THROWS_WITH_AS(adam_step(params, st, 1e-3, 0.9, 0.999, 1e-8),
                       doctest::Contains("non-finite gradient in parameter w"), std::runtime_error);
}

TEST_CASE("gradient clipping rescales to the norm budget") {
  ParamStore params;
  params.add("a", Tensor::zeros({1}, true));
  params.add("b", Tensor::zeros({1}, true));
  Tensor& a = params.get("a");  // add() references dangle once the store grows
  Tensor& b = params.get("b");
  a.ensure_grad();
  b.ensure_grad();
  a.grad_ptr()[0] = 3.0;
  b.grad_ptr()[0] = -4.0;
  CHECK(global_grad_norm(params) == doctest::Approx(5.0).epsilon(1e-15));
  const double pre = clip_gradients(params, 1.0);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(a.grad_ptr()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(b.grad_ptr()[0] == doctest::Approx(-0.8).epsilon(1e-12));
  // already within budget: untouched
  const double pre2 = clip_gradients(params, 10.0);
  CHECK(pre2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.grad_ptr()[0] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("micro-batches accumulate the same gradients as one batch") {
  Rng rng(401);
  Model full = Model::init(micro_config(), rng);
  Rng rng2(401);  // independent twin from the same init sequence
  Model twin = Model::init(micro_config(), rng2);

  const auto batch = micro_batch(77, 4);
  const auto alpha = alpha_weights(full.config.gamma, full.config.ngram);
  const std::uint64_t step_seed = mix_seed(5, 1);

  full.params.zero_grads();
  std::vector<double> nll_full;
  const double loss_full =
      accumulate_gradients(full, batch, alpha, step_seed, 1.0 / 4.0, 0, &nll_full, true);

  twin.params.zero_grads();
  std::vector<Example> first(batch.begin(), batch.begin() + 2);
  std::vector<Example> second(batch.begin() + 2, batch.end());
  const double loss_a = accumulate_gradients(twin, first, alpha, step_seed, 1.0 / 4.0, 0, nullptr, true);
  const double loss_b = accumulate_gradients(twin, second, alpha, step_seed, 1.0 / 4.0, 2, nullptr, true);

  CHECK(std::abs(loss_full - (loss_a + loss_b)) < 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < full.params.items().size(); ++i) {
    const Tensor& g1 = full.params.items()[i].second;
    const Tensor& g2 = twin.params.items()[i].second;
    for (std::int64_t c = 0; c < g1.numel(); ++c)
      worst = std::max(worst, std::abs(g1.grad_ptr()[c] - g2.grad_ptr()[c]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("metrics lines have the fixed field order and exact numbers") {
  StepInfo info;
  info.step = 3;
  info.loss = 1.5;
  info.lr = 0.25;
  info.grad_norm = 9.0;  // deliberately not part of the line
  info.nll = {0.5, 0.25};
  CHECK(metrics_json_line(info) ==
        "{\"step\":3,\"loss\":1.5,\"nll_per_stream\":[0.5,0.25],\"lr\":0.25,\"tokens_per_sec\":null}");
}

TEST_CASE("training is a pure function of config and seed") {
  auto run = [](std::int64_t steps) {
    Rng rng(402);
    Model m = Model::init(micro_config(), rng);
    AdamState adam = AdamState::init(m.params);
    TrainConfig tc;
    tc.steps = steps;
    tc.batch_size = 3;
    tc.warmup = 2;
    tc.peak_lr = 1e-3;
    tc.seed = 31;
    std::vector<std::string> lines;
    const auto provider = [](std::int64_t step) { return micro_batch(900 + static_cast<std::uint64_t>(step), 3); };
    train_loop(m, adam, tc, provider, [&](const StepInfo& si) { lines.push_back(metrics_json_line(si)); });
    return lines;
  };
  const auto a = run(6);
  const auto b = run(6);
  REQUIRE(a.size() == 6);
  CHECK(a == b);
}

TEST_CASE("loss falls on a learnable fixed batch") {
  Rng rng(403);
  Model m = Model::init(micro_config(), rng);
  AdamState adam = AdamState::init(m.params);
  TrainConfig tc;
  tc.steps = 120;
  tc.batch_size = 2;
  tc.warmup = 20;
  tc.peak_lr = 1e-2;
  tc.seed = 8;
  const auto fixed = micro_batch(55, 2);
  std::vector<double> losses;
  const auto provider = [&](std::int64_t) { return fixed; };
  TrainResult res =
      train_loop(m, adam, tc, provider, [&](const StepInfo& si) { losses.push_back(si.loss); });
  CHECK(res.steps_done == 120);
  REQUIRE(losses.size() == 120);
  CHECK(losses.back() < 0.5 * losses.front());
  for (double l : losses) CHECK(std::isfinite(l));
}

TEST_CASE("resuming from a checkpoint replays the uninterrupted run") {
  TempFile ck("resume.ckpt");
  const auto provider = [](std::int64_t step) { return micro_batch(700 + static_cast<std::uint64_t>(step), 2); };

  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 2;
  tc.warmup = 2;
  tc.peak_lr = 1e-3;
  tc.seed = 99;

  // uninterrupted reference
  std::vector<std::string> straight;
  {
    Rng rng(404);
    Model m = Model::init(micro_config(), rng);
    AdamState adam = AdamState::init(m.params);
    train_loop(m, adam, tc, provider,
               [&](const StepInfo& si) { straight.push_back(metrics_json_line(si)); });
  }

  // same run cut at step 3 and resumed from disk
  {
    Rng rng(404);
    Model m = Model::init(micro_config(), rng);
    AdamState adam = AdamState::init(m.params);
    TrainConfig half = tc;
    half.steps = 3;
    half.checkpoint_path = ck.path;
    train_loop(m, adam, half, provider);
  }
  std::vector<std::string> resumed;
  {
    LoadedTrainState st = load_train_checkpoint(ck.path);
    CHECK(st.step == 3);
    TrainConfig rest = tc;
    rest.start_step = st.step;
    train_loop(st.model, st.adam, rest, provider,
               [&](const StepInfo& si) { resumed.push_back(metrics_json_line(si)); });
  }
  REQUIRE(resumed.size() == 3);
  CHECK(resumed[0] == straight[3]);
  CHECK(resumed[1] == straight[4]);
  CHECK(resumed[2] == straight[5]);
}

TEST_CASE("checkpoints round trip byte-for-byte") {
  Rng rng(405);
  Model m = Model::init(micro_config(), rng);
  TempFile f1("ck1.ckpt"), f2("ck2.ckpt");
  save_checkpoint(f1.path, m.config, m.params, {{"note", "first"}});
  Checkpoint ck = load_checkpoint(f1.path);
  CHECK(ck.extras.at("note") == "first");
  CHECK(ck.config.vocab_size == m.config.vocab_size);
  CHECK(ck.config.ngram == m.config.ngram);
  for (const auto& [name, t] : m.params.items()) {
    REQUIRE(ck.tensors.has(name));
    const Tensor& lt = ck.tensors.get(name);
    REQUIRE(lt.shape == t.shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(lt.ptr()[i] == t.ptr()[i]);
  }
  save_checkpoint(f2.path, ck.config, ck.tensors, ck.extras);
  CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("full train state round trips through disk") {
  Rng rng(406);
  Model m = Model::init(micro_config(), rng);
  AdamState adam = AdamState::init(m.params);
  TrainConfig tc;
  tc.steps = 2;
  tc.warmup = 1;
  tc.batch_size = 2;
  tc.peak_lr = 1e-3;
  const auto provider = [](std::int64_t step) { return micro_batch(444 + static_cast<std::uint64_t>(step), 2); };
  train_loop(m, adam, tc, provider);

  TempFile f("state.ckpt");
  save_train_checkpoint(f.path, m, adam, 2);
  LoadedTrainState st = load_train_checkpoint(f.path);
  CHECK(st.step == 2);
  CHECK(st.adam.step == adam.step);
  REQUIRE(st.adam.m.size() == adam.m.size());
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    for (std::int64_t c = 0; c < adam.m[i].numel(); ++c) {
      REQUIRE(st.adam.m[i].ptr()[c] == adam.m[i].ptr()[c]);
      REQUIRE(st.adam.v[i].ptr()[c] == adam.v[i].ptr()[c]);
    }
  }
  for (std::size_t i = 0; i < m.params.items().size(); ++i) {
    const Tensor& a = m.params.items()[i].second;
    const Tensor& b = st.model.params.items()[i].second;
    REQUIRE(m.params.items()[i].first == st.model.params.items()[i].first);
    for (std::int64_t c = 0; c < a.numel(); ++c) REQUIRE(a.ptr()[c] == b.ptr()[c]);
  }
}

TEST_CASE("damaged checkpoints are reported precisely") {
  TempFile f("bad.ckpt");
  {
    std::ofstream os(f.path, std::ios::binary);
    os << "JUNKDATA";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("bad magic"), std::runtime_error);

  Rng rng(407);
  Model m = Model::init(micro_config(), rng);
  TempFile good("good.ckpt");
  save_checkpoint(good.path, m.config, m.params);
  const std::string bytes = slurp(good.path);

  {
    std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), 10);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("truncated"), std::runtime_error);

  {
    std::string wrong = bytes;
    wrong[4] = 9;  // version field
    std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
    os.write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("unsupported checkpoint version 9"),
                       std::runtime_error);

  CHECK_THROWS_AS(load_checkpoint("/tmp/pnet_test_never_written.ckpt"), std::runtime_error);
  // params-only checkpoints carry no optimizer state
  CHECK_THROWS_WITH_AS(load_train_checkpoint(good.path), doctest::Contains("no training state"),
                       std::runtime_error);
}

TEST_CASE("epoch sampler covers every index once per epoch") {
  EpochSampler s(5, 2, 17);
  std::multiset<std::int64_t> seen;
  std::vector<std::vector<std::int64_t>> first_epoch;
  for (int b = 0; b < 3; ++b) {
    auto batch = s.next_batch();
    first_epoch.push_back(batch);
    for (auto i : batch) seen.insert(i);
  }
  CHECK(first_epoch[0].size() == 2);
  CHECK(first_epoch[1].size() == 2);
  CHECK(first_epoch[2].size() == 1);
  CHECK(seen == std::multiset<std::int64_t>{0, 1, 2, 3, 4});

  // skip() fast-forwards to the same stream position
  EpochSampler a(5, 2, 17);
  EpochSampler b(5, 2, 17);
  a.next_batch();
  a.next_batch();
  b.skip(2);
  CHECK(a.next_batch() == b.next_batch());
  CHECK(a.next_batch() == b.next_batch());  // crosses into epoch 2
}

TEST_CASE("train config validation names the bad field") {
  TrainConfig tc;
  tc.steps = 0;
  CHECK_THROWS_WITH_AS(tc.validate(), doctest::Contains("steps"), std::invalid_argument);
  tc = TrainConfig{};
  tc.warmup = tc.steps + 1;
  CHECK_THROWS_WITH_AS(tc.validate(), doctest::Contains("warmup must be <= steps"), std::invalid_argument);
  tc = TrainConfig{};
  tc.peak_lr = 0.0;
  CHECK_THROWS_WITH_AS(tc.validate(), doctest::Contains("peak_lr"), std::invalid_argument);
  tc = TrainConfig{};
  tc.start_step = tc.steps + 1;
  CHECK_THROWS_WITH_AS(tc.validate(), doctest::Contains("start_step"), std::invalid_argument);
}
