#include "pnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace pnet {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {
std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(s));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  const auto n = shape_numel(shape);
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), 0.0);
  t.requires_grad = requires_grad;
  // Allocate the grad buffer up front: copies share it, so gradients land in
  // the same place no matter when a handle was copied.
  if (requires_grad) t.ensure_grad();
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor: " + shape_str(shape) + " needs " + std::to_string(n) +
                                " values, got " + std::to_string(values.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : *t.data) v = rng.next_normal() * stddev;
  return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data ? data->size() : 0); }

double Tensor::value() const {
  if (!data || data->size() != 1) throw std::logic_error("tensor: value() requires a scalar");
  return (*data)[0];
}

void Tensor::ensure_grad() {
  if (!requires_grad) throw std::logic_error("tensor: grad buffer on requires_grad=false tensor");
  if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

std::shared_ptr<TapeNode> Tape::record(std::vector<Tensor> inputs, const Tensor& output,
                                       std::function<void(TapeNode&)> backward) {
  auto node = std::make_shared<TapeNode>();
  node->inputs = std::move(inputs);
  node->out_data = output.data;
  node->out_grad = output.grad;
  node->out_shape = output.shape;
  node->backward = std::move(backward);
  node->generation = generation_;
  node->index = nodes_.size();
  nodes_.push_back(node);
  return node;
}

void accumulate_grad(const Tensor& t, const double* src, std::int64_t n) {
  if (!t.requires_grad) return;
  if (!t.grad) const_cast<Tensor&>(t).ensure_grad();
  double* g = t.grad->data();
  for (std::int64_t i = 0; i < n; ++i) g[i] += src[i];
  if (t.node) t.node->has_out_grad = true;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::logic_error("backward: loss must be a scalar, got " + shape_str(loss.shape));
  if (!loss.node) {
    // A leaf scalar has no recorded history; only its own grad is defined.
    if (loss.requires_grad) {
      const_cast<Tensor&>(loss).ensure_grad();
      (*loss.grad)[0] += 1.0;
    }
    return;
  }
  if (loss.node->generation != generation_)
    throw std::logic_error("backward: tape already consumed; re-record the forward pass");

  auto seed = loss.node;
  if (!loss.grad) throw std::logic_error("backward: loss tensor carries no grad buffer");
  (*loss.grad)[0] += 1.0;
  seed->has_out_grad = true;

  for (std::size_t i = seed->index + 1; i-- > 0;) {
    TapeNode& node = *nodes_[i];
    if (!node.has_out_grad || !node.backward) continue;
    node.backward(node);
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

}  // namespace pnet
