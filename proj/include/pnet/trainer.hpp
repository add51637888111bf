#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pnet/data.hpp"
#include "pnet/model.hpp"

namespace pnet {

struct TrainConfig {
  std::int64_t steps = 1000;
  std::int64_t batch_size = 32;
  std::int64_t warmup = 1000;
  double peak_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_interval = 0;  // 0: checkpoint only at the end
  std::int64_t log_interval = 1;
  std::int64_t eval_interval = 0;  // 0: never call the eval hook
  std::string checkpoint_path;     // empty: never checkpoint
  std::int64_t start_step = 0;     // steps already taken (resume)

  void validate() const;
};

// First moments, second moments, and update count, aligned with the
// ParamStore registration order.
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m, v;

  static AdamState init(const ParamStore& params);
};

// Linear ramp 0 -> peak over `warmup` steps, then peak * sqrt(warmup/step).
double lr_at(std::int64_t step, double peak, std::int64_t warmup);

double global_grad_norm(const ParamStore& params);
// Scales all gradients so their global norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(ParamStore& params, double max_norm);
// One update from the accumulated gradients; throws on a non-finite gradient
// naming the parameter.
void adam_step(ParamStore& params, AdamState& state, double lr, double beta1, double beta2, double eps);

struct StepInfo {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::vector<double> nll;  // per stream, batch mean
};

// One JSON object per line; every field is a pure function of config+seed so
// repeated runs produce byte-identical logs (throughput is measured out of
// band and reported on stderr instead).
std::string metrics_json_line(const StepInfo& info);

using MetricsSink = std::function<void(const StepInfo&)>;
using EvalHook = std::function<bool(std::int64_t step, Model& model)>;       // true stops training
using BatchProvider = std::function<std::vector<Example>(std::int64_t step)>;  // 1-based step

// Forward+backward over examples; gradients scaled by `scale` accumulate into
// the params (call zero_grads first for a fresh batch). idx_offset keeps
// per-example rng streams stable when a batch is split into micro-batches.
// Returns the scale-weighted loss sum; nll_out gets per-stream batch means.
double accumulate_gradients(Model& model, const std::vector<Example>& examples,
                            const std::vector<double>& alpha, std::uint64_t step_seed, double scale,
                            std::int64_t idx_offset, std::vector<double>* nll_out, bool training);

struct TrainResult {
  std::int64_t steps_done = 0;
  double last_loss = 0.0;
  bool stopped_early = false;
};

TrainResult train_loop(Model& model, AdamState& adam, const TrainConfig& cfg,
                       const BatchProvider& provider, const MetricsSink& sink = {},
                       const EvalHook& hook = {});

// Deterministic epoch shuffles with sequential (possibly short) batches.
class EpochSampler {
 public:
  EpochSampler(std::int64_t n, std::int64_t batch_size, std::uint64_t seed);
  std::vector<std::int64_t> next_batch();
  void skip(std::int64_t batches);

 private:
  void reshuffle();
  std::int64_t n_;
  std::int64_t batch_;
  std::int64_t cursor_;
  std::int64_t epoch_ = -1;
  std::uint64_t seed_;
  std::vector<std::int64_t> order_;
};

void save_train_checkpoint(const std::string& path, const Model& model, const AdamState& adam,
                           std::int64_t step);

struct LoadedTrainState {
  Model model;
  AdamState adam;
  std::int64_t step = 0;
};

// Full training state (params + optimizer moments + step). Missing optimizer
// tensors are an error; use load_checkpoint + Model::from_store to start a
// fresh optimizer from saved params.
LoadedTrainState load_train_checkpoint(const std::string& path);

}  // namespace pnet
