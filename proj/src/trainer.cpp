#include "pnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "pnet/checkpoint.hpp"
#include "pnet/kernels.hpp"
#include "pnet/ops.hpp"

namespace pnet {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (steps < 1) fail("steps must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (warmup < 1) fail("warmup must be >= 1");
  if (!(peak_lr > 0.0)) fail("peak_lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (warmup > steps) fail("warmup must be <= steps");
  if (log_interval < 1) fail("log_interval must be >= 1");
  if (checkpoint_interval < 0) fail("checkpoint_interval must be >= 0");
  if (eval_interval < 0) fail("eval_interval must be >= 0");
  if (start_step < 0 || start_step > steps) fail("start_step must be in [0, steps]");
}

AdamState AdamState::init(const ParamStore& params) {
  AdamState s;
  s.m.reserve(params.items().size());
  s.v.reserve(params.items().size());
  for (const auto& [name, t] : params.items()) {
    s.m.push_back(Tensor::zeros(t.shape));
    s.v.push_back(Tensor::zeros(t.shape));
  }
  return s;
}

double lr_at(std::int64_t step, double peak, std::int64_t warmup) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("lr_at: warmup must be >= 1");
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

double global_grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.items()) {
    if (!t.grad) continue;
    const double* g = t.grad_ptr();
    for (std::int64_t i = 0; i < t.numel(); ++i) sq += g[i] * g[i];
  }
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, t] : params.items()) {
      if (!t.grad) continue;
      double* g = t.grad_ptr();
      for (std::int64_t i = 0; i < t.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

void adam_step(ParamStore& params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  auto& items = params.items();
  if (state.m.size() != items.size() || state.v.size() != items.size())
    throw std::logic_error("adam_step: optimizer state not aligned with parameters");
  state.step += 1;
  const double b1p = std::pow(beta1, static_cast<double>(state.step));
  const double b2p = std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& [name, t] = items[i];
    t.ensure_grad();
    const double* g = t.grad_ptr();
    for (std::int64_t c = 0; c < t.numel(); ++c) {
      if (!std::isfinite(g[c]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter " + name);
    }
    kernels::adam_update(t.ptr(), g, state.m[i].ptr(), state.v[i].ptr(), t.numel(), lr, beta1, beta2,
                         eps, b1p, b2p);
  }
}

std::string metrics_json_line(const StepInfo& info) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string line = "{\"step\":" + std::to_string(info.step);
  line += ",\"loss\":" + num(info.loss);
  line += ",\"nll_per_stream\":[";
  for (std::size_t i = 0; i < info.nll.size(); ++i) {
    if (i > 0) line += ',';
    line += num(info.nll[i]);
  }
  line += "],\"lr\":" + num(info.lr);
  // Throughput is wall-clock and would break byte-for-byte reproducibility of
  // the log, so the field stays null here; the measured rate goes to stderr.
  line += ",\"tokens_per_sec\":null}";
  return line;
}

double accumulate_gradients(Model& model, const std::vector<Example>& examples,
                            const std::vector<double>& alpha, std::uint64_t step_seed, double scale,
                            std::int64_t idx_offset, std::vector<double>* nll_out, bool training) {
  if (examples.empty()) throw std::invalid_argument("accumulate_gradients: empty batch");
  double total = 0.0;
  std::vector<double> nll_sum(alpha.size(), 0.0);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Rng ex_rng(mix_seed(step_seed, static_cast<std::uint64_t>(idx_offset + static_cast<std::int64_t>(i))));
    ForwardOptions opts;
    opts.training = training;
    opts.rng = &ex_rng;
    Tensor h = model.encode(examples[i].src, opts);
    TrainForward f = model.decode_train(examples[i].tgt, h, opts);
    LossBreakdown bd;
    Tensor loss = future_ngram_loss(f.stream_logits, examples[i].tgt, alpha, &bd);
    backward(ops::scale(loss, scale));
    total += bd.total * scale;
    for (std::size_t j = 0; j < nll_sum.size(); ++j) nll_sum[j] += bd.nll[j];
  }
  if (nll_out != nullptr) {
    nll_out->resize(nll_sum.size());
    for (std::size_t j = 0; j < nll_sum.size(); ++j)
      (*nll_out)[j] = nll_sum[j] / static_cast<double>(examples.size());
  }
  return total;
}

TrainResult train_loop(Model& model, AdamState& adam, const TrainConfig& cfg,
                       const BatchProvider& provider, const MetricsSink& sink, const EvalHook& hook) {
  cfg.validate();
  const std::vector<double> alpha = alpha_weights(model.config.gamma, model.config.ngram);
  TrainResult res;
  res.steps_done = cfg.start_step;
  for (std::int64_t step = cfg.start_step + 1; step <= cfg.steps; ++step) {
    const std::vector<Example> batch = provider(step);
    if (batch.empty()) throw std::runtime_error("training: batch provider returned no examples");
    model.params.zero_grads();
    const std::uint64_t step_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(step));
    StepInfo info;
    info.step = step;
    info.loss = accumulate_gradients(model, batch, alpha, step_seed,
                                     1.0 / static_cast<double>(batch.size()), 0, &info.nll, true);
    if (!std::isfinite(info.loss)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "training diverged: non-finite loss at step %lld; last checkpoint: %s",
                    static_cast<long long>(step),
                    cfg.checkpoint_path.empty() ? "none" : cfg.checkpoint_path.c_str());
      throw std::runtime_error(buf);
    }
    info.grad_norm = clip_gradients(model.params, cfg.grad_clip);
    info.lr = lr_at(step, cfg.peak_lr, cfg.warmup);
    adam_step(model.params, adam, info.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    res.steps_done = step;
    res.last_loss = info.loss;
    if (sink && (step % cfg.log_interval == 0 || step == cfg.steps)) sink(info);
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
        step % cfg.checkpoint_interval == 0)
      save_train_checkpoint(cfg.checkpoint_path, model, adam, step);
    if (hook && cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && hook(step, model)) {
      res.stopped_early = true;
      break;
    }
  }
  if (!cfg.checkpoint_path.empty()) save_train_checkpoint(cfg.checkpoint_path, model, adam, res.steps_done);
  return res;
}

EpochSampler::EpochSampler(std::int64_t n, std::int64_t batch_size, std::uint64_t seed)
    : n_(n), batch_(batch_size), cursor_(0), seed_(seed) {
  if (n < 1) throw std::invalid_argument("epoch sampler: need at least one example");
  if (batch_size < 1) throw std::invalid_argument("epoch sampler: batch_size must be >= 1");
  reshuffle();
}

void EpochSampler::reshuffle() {
  epoch_ += 1;
  cursor_ = 0;
  order_.resize(static_cast<std::size_t>(n_));
  for (std::int64_t i = 0; i < n_; ++i) order_[static_cast<std::size_t>(i)] = i;
  Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch_)));
  for (std::int64_t i = n_ - 1; i > 0; --i) {
    const std::int64_t j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(j)]);
  }
}

std::vector<std::int64_t> EpochSampler::next_batch() {
  if (cursor_ >= n_) reshuffle();
  const std::int64_t take = std::min(batch_, n_ - cursor_);
  std::vector<std::int64_t> out(order_.begin() + cursor_, order_.begin() + cursor_ + take);
  cursor_ += take;
  return out;
}

void EpochSampler::skip(std::int64_t batches) {
  for (std::int64_t i = 0; i < batches; ++i) next_batch();
}

void save_train_checkpoint(const std::string& path, const Model& model, const AdamState& adam,
                           std::int64_t step) {
  ParamStore store;
  const auto& items = model.params.items();
  if (adam.m.size() != items.size() || adam.v.size() != items.size())
    throw std::logic_error("save_train_checkpoint: optimizer state not aligned with parameters");
  for (const auto& [name, t] : items) store.add(name, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    store.add("adam.m." + items[i].first, adam.m[i]);
    store.add("adam.v." + items[i].first, adam.v[i]);
  }
  std::map<std::string, std::string> extras;
  extras["step"] = std::to_string(step);
  extras["adam_step"] = std::to_string(adam.step);
  save_checkpoint(path, model.config, store, extras);
}

LoadedTrainState load_train_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  auto step_it = ck.extras.find("step");
  auto adam_it = ck.extras.find("adam_step");
  if (step_it == ck.extras.end() || adam_it == ck.extras.end())
    throw std::runtime_error("checkpoint has no training state: " + path);
  LoadedTrainState st{Model::from_store(ck.config, ck.tensors), AdamState{}, std::stoll(step_it->second)};
  st.adam.step = std::stoll(adam_it->second);
  for (const auto& [name, t] : st.model.params.items()) {
    for (const char* kind : {"m", "v"}) {
      const std::string key = std::string("adam.") + kind + "." + name;
      if (!ck.tensors.has(key)) throw std::runtime_error("checkpoint missing optimizer tensor: " + key);
      const Tensor& mt = ck.tensors.get(key);
      if (mt.shape != t.shape)
        throw std::runtime_error("optimizer tensor " + key + " has shape " + shape_str(mt.shape) +
                                 ", expected " + shape_str(t.shape));
      (kind[0] == 'm' ? st.adam.m : st.adam.v).push_back(mt);
    }
  }
  return st;
}

}  // namespace pnet
