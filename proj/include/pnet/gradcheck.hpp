#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pnet/tensor.hpp"

namespace pnet {

// Forward pass returning a scalar loss; re-invoked per finite-difference
// probe, so it must be a pure function of the checked tensors' data.
using ForwardFn = std::function<Tensor()>;

// Reverse-mode gradients of fwd() w.r.t. each input, flattened.
std::vector<std::vector<double>> tape_gradients(const ForwardFn& fwd, const std::vector<Tensor>& inputs);

// Central finite differences, same layout as tape_gradients.
std::vector<std::vector<double>> fd_gradients(const ForwardFn& fwd, const std::vector<Tensor>& inputs,
                                              double eps = 1e-5);

// |a-b| / max(1, |a|, |b|)
double rel_err(double a, double b);

struct GradMismatch {
  double max_rel_err = 0.0;
  std::size_t input = 0;
  std::int64_t coord = 0;
  double tape = 0.0;
  double fd = 0.0;
};

GradMismatch compare_gradients(const std::vector<std::vector<double>>& tape,
                               const std::vector<std::vector<double>>& fd);

struct SuiteCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::string worst;  // human-readable worst offender
  bool pass = false;
};

// Per-op checks plus a tiny end-to-end model; op tolerance 1e-4, end-to-end 1e-3.
std::vector<SuiteCase> run_gradient_suite(std::uint64_t seed);

}  // namespace pnet
