#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pnet/rng.hpp"

namespace pnet {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

struct TapeNode;

// Dense 64-bit tensor, row-major. Value-semantic handle: copies share the
// underlying data buffer. Gradients accumulate into `grad`, allocated only
// for requires_grad tensors.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  std::shared_ptr<std::vector<double>> grad;
  std::shared_ptr<TapeNode> node;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

  std::int64_t numel() const;
  std::int64_t dim(std::size_t i) const { return shape[i]; }
  std::size_t rank() const { return shape.size(); }

  double value() const;  // scalar tensors only
  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double* grad_ptr() { return grad->data(); }
  const double* grad_ptr() const { return grad->data(); }

  // Allocates the grad buffer if missing. requires_grad must be true.
  void ensure_grad();
  void zero_grad();
};

// One recorded operation. Keeps its inputs alive; the backward rule reads the
// output's gradient buffer and accumulates into the inputs' buffers.
struct TapeNode {
  std::vector<Tensor> inputs;
  std::shared_ptr<std::vector<double>> out_data;
  std::shared_ptr<std::vector<double>> out_grad;
  Shape out_shape;
  std::function<void(TapeNode&)> backward;
  std::uint64_t generation = 0;
  std::size_t index = 0;
  bool has_out_grad = false;
};

// Thread-confined record of operations in execution order (so the list is
// topologically sorted by construction). backward() walks it once in reverse
// and then consumes it.
class Tape {
 public:
  static Tape& current();  // thread-local instance

  bool recording() const { return enabled_; }
  void set_recording(bool on) { enabled_ = on; }

  std::shared_ptr<TapeNode> record(std::vector<Tensor> inputs, const Tensor& output,
                                   std::function<void(TapeNode&)> backward);

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
  // requires_grad tensor reachable from `loss`. Consumes the tape.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<TapeNode>> nodes_;
  std::uint64_t generation_ = 1;
  bool enabled_ = true;
};

void backward(const Tensor& loss);

// Marks a tensor's gradient buffer dirty and accumulates `src` into it.
// Used by backward rules; respects requires_grad=false by doing nothing.
void accumulate_grad(const Tensor& t, const double* src, std::int64_t n);

// RAII guard disabling tape recording (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(Tape::current().recording()) { Tape::current().set_recording(false); }
  ~NoGradGuard() { Tape::current().set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace pnet
