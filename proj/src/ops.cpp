#include "pnet/ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "pnet/kernels.hpp"

namespace pnet::ops {

namespace {

bool want_grad(const Tensor& t) { return Tape::current().recording() && t.requires_grad; }

Tensor make_output(Shape shape, bool rec) {
  Tensor out = Tensor::zeros(std::move(shape), rec);
  if (rec) out.ensure_grad();
  return out;
}

void finish(Tensor& out, std::vector<Tensor> inputs, std::function<void(TapeNode&)> bw) {
  if (out.requires_grad)
    out.node = Tape::current().record(std::move(inputs), out, std::move(bw));
}

struct MatmulDims {
  std::int64_t batch;  // broadcast batch count (1 for plain 2D)
  std::int64_t m, k, n;
  bool a_batched, b_batched;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
  if (a.rank() > 3 || b.rank() > 3)
    throw std::invalid_argument("matmul: rank > 3 unsupported, got " + shape_str(a.shape) + " and " +
                                shape_str(b.shape));
  MatmulDims d;
  d.a_batched = a.rank() == 3;
  d.b_batched = b.rank() == 3;
  d.m = a.shape[a.rank() - 2];
  d.k = a.shape[a.rank() - 1];
  const std::int64_t bk = b.shape[b.rank() - 2];
  d.n = b.shape[b.rank() - 1];
  if (d.k != bk)
    throw std::invalid_argument("matmul: inner dimensions disagree between " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
  const std::int64_t ab = d.a_batched ? a.shape[0] : 1;
  const std::int64_t bb = d.b_batched ? b.shape[0] : 1;
  if (d.a_batched && d.b_batched && ab != bb)
    throw std::invalid_argument("matmul: batch dimensions not broadcastable between " +
                                shape_str(a.shape) + " and " + shape_str(b.shape));
  d.batch = std::max(ab, bb);
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  const bool rec = want_grad(a) || want_grad(b);
  Shape out_shape = (d.a_batched || d.b_batched) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  Tensor out = make_output(std::move(out_shape), rec);

  const std::int64_t a_stride = d.a_batched ? d.m * d.k : 0;
  const std::int64_t b_stride = d.b_batched ? d.k * d.n : 0;
  for (std::int64_t i = 0; i < d.batch; ++i)
    kernels::matmul_nn(out.ptr() + i * d.m * d.n, a.ptr() + i * a_stride, b.ptr() + i * b_stride,
                       d.m, d.k, d.n, false);

  finish(out, {a, b}, [d, a_stride, b_stride](TapeNode& node) {
    const Tensor& pa = node.inputs[0];
    const Tensor& pb = node.inputs[1];
    const double* dc = node.out_grad->data();
    if (pa.requires_grad) {
      const_cast<Tensor&>(pa).ensure_grad();
      // dA = dC * B^T
      for (std::int64_t i = 0; i < d.batch; ++i)
        kernels::matmul_nt(pa.grad->data() + i * a_stride, dc + i * d.m * d.n,
                           pb.data->data() + i * b_stride, d.m, d.n, d.k, true);
      if (pa.node) pa.node->has_out_grad = true;
    }
    if (pb.requires_grad) {
      const_cast<Tensor&>(pb).ensure_grad();
      // dB = A^T * dC
      for (std::int64_t i = 0; i < d.batch; ++i)
        kernels::matmul_tn(pb.grad->data() + i * b_stride, pa.data->data() + i * a_stride,
                           dc + i * d.m * d.n, d.k, d.m, d.n, true);
      if (pb.node) pb.node->has_out_grad = true;
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul_nt: rank-2 operands required, got " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
  const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  if (b.shape[1] != k)
    throw std::invalid_argument("matmul_nt: inner dimensions disagree between " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
  const bool rec = want_grad(a) || want_grad(b);
  Tensor out = make_output({m, n}, rec);
  kernels::matmul_nt(out.ptr(), a.ptr(), b.ptr(), m, k, n, false);

  finish(out, {a, b}, [m, k, n](TapeNode& node) {
    const Tensor& pa = node.inputs[0];
    const Tensor& pb = node.inputs[1];
    const double* dc = node.out_grad->data();
    if (pa.requires_grad) {
      const_cast<Tensor&>(pa).ensure_grad();
      kernels::matmul_nn(pa.grad->data(), dc, pb.data->data(), m, n, k, true);
      if (pa.node) pa.node->has_out_grad = true;
    }
    if (pb.requires_grad) {
      const_cast<Tensor&>(pb).ensure_grad();
      kernels::matmul_tn(pb.grad->data(), dc, pa.data->data(), n, m, k, true);
      if (pb.node) pb.node->has_out_grad = true;
    }
  });
  return out;
}

namespace {

// (outer, axis_len, inner) decomposition for reductions along an axis.
struct AxisDims {
  std::int64_t outer, len, inner;
};

AxisDims axis_dims(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw std::invalid_argument("softmax: axis out of range for " + shape_str(shape));
  AxisDims d{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) d.outer *= shape[i];
  for (int i = axis + 1; i < rank; ++i) d.inner *= shape[i];
  return d;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisDims d = axis_dims(x.shape, axis);
  const bool rec = want_grad(x);
  Tensor out = make_output(x.shape, rec);

  if (d.inner == 1) {
    kernels::softmax_rows(out.ptr(), x.ptr(), d.outer, d.len);
  } else {
    std::vector<double> row(static_cast<std::size_t>(d.len));
    std::vector<double> srow(static_cast<std::size_t>(d.len));
    for (std::int64_t o = 0; o < d.outer; ++o)
      for (std::int64_t i = 0; i < d.inner; ++i) {
        const double* src = x.ptr() + o * d.len * d.inner + i;
        for (std::int64_t j = 0; j < d.len; ++j) row[static_cast<std::size_t>(j)] = src[j * d.inner];
        kernels::serial::softmax_rows(srow.data(), row.data(), 1, d.len);
        double* dst = out.ptr() + o * d.len * d.inner + i;
        for (std::int64_t j = 0; j < d.len; ++j) dst[j * d.inner] = srow[static_cast<std::size_t>(j)];
      }
  }

  Tensor y = out;  // shares data; keeps the forward result alive for backward
  finish(out, {x}, [d, y](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    if (!px.requires_grad) return;
    const_cast<Tensor&>(px).ensure_grad();
    const double* dy = node.out_grad->data();
    if (d.inner == 1) {
      kernels::softmax_backward_rows(px.grad->data(), y.ptr(), dy, d.outer, d.len, true);
    } else {
      for (std::int64_t o = 0; o < d.outer; ++o)
        for (std::int64_t i = 0; i < d.inner; ++i) {
          const std::int64_t base = o * d.len * d.inner + i;
          double dot = 0.0;
          for (std::int64_t j = 0; j < d.len; ++j)
            dot += y.ptr()[base + j * d.inner] * dy[base + j * d.inner];
          for (std::int64_t j = 0; j < d.len; ++j) {
            const std::int64_t idx = base + j * d.inner;
            (*px.grad)[static_cast<std::size_t>(idx)] += y.ptr()[idx] * (dy[idx] - dot);
          }
        }
    }
    if (px.node) px.node->has_out_grad = true;
  });
  return out;
}

Tensor masked_softmax(const Tensor& scores, const std::vector<unsigned char>& mask) {
  if (scores.rank() != 2)
    throw std::invalid_argument("masked_softmax: rank-2 scores required, got " + shape_str(scores.shape));
  const std::int64_t q = scores.shape[0], k = scores.shape[1];
  if (static_cast<std::int64_t>(mask.size()) != q * k)
    throw std::invalid_argument("masked_softmax: mask size " + std::to_string(mask.size()) +
                                " does not match scores " + shape_str(scores.shape));
  const bool rec = want_grad(scores);
  Tensor out = make_output(scores.shape, rec);
  kernels::masked_softmax_rows(out.ptr(), scores.ptr(), mask.data(), q, k);

  // Masked outputs are exactly 0, so the plain softmax backward routes no
  // gradient through them.
  Tensor y = out;
  finish(out, {scores}, [q, k, y](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    if (!px.requires_grad) return;
    const_cast<Tensor&>(px).ensure_grad();
    kernels::softmax_backward_rows(px.grad->data(), y.ptr(), node.out_grad->data(), q, k, true);
    if (px.node) px.node->has_out_grad = true;
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: input must have rank >= 1");
  const std::int64_t cols = x.shape[x.rank() - 1];
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(cols, 1);
  if (gain.numel() != cols || bias.numel() != cols)
    throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape) + "/" +
                                shape_str(bias.shape) + " must match last dimension of " +
                                shape_str(x.shape));
  const bool rec = want_grad(x) || want_grad(gain) || want_grad(bias);
  Tensor out = make_output(x.shape, rec);
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  kernels::layer_norm_rows(out.ptr(), x.ptr(), gain.ptr(), bias.ptr(), rows, cols, eps,
                           mean->data(), rstd->data());

  finish(out, {x, gain, bias}, [rows, cols, mean, rstd](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    const Tensor& pg = node.inputs[1];
    const Tensor& pb = node.inputs[2];
    const double* dy = node.out_grad->data();

    std::vector<double> dgain(static_cast<std::size_t>(cols), 0.0);
    std::vector<double> dbias(static_cast<std::size_t>(cols), 0.0);
    std::vector<double> dx;
    double* dx_ptr = nullptr;
    if (px.requires_grad) {
      const_cast<Tensor&>(px).ensure_grad();
      dx_ptr = px.grad->data();
    } else {
      dx.assign(px.data->size(), 0.0);
      dx_ptr = dx.data();
    }
    kernels::layer_norm_backward_rows(dx_ptr, dgain.data(), dbias.data(), px.data->data(), dy,
                                      pg.data->data(), mean->data(), rstd->data(), rows, cols);
    if (px.requires_grad && px.node) px.node->has_out_grad = true;
    accumulate_grad(pg, dgain.data(), cols);
    accumulate_grad(pb, dbias.data(), cols);
  });
  return out;
}

namespace {

enum class BroadcastKind { Same, LastDim };

BroadcastKind broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape == b.shape) return BroadcastKind::Same;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape[a.rank() - 1] == b.shape[0])
    return BroadcastKind::LastDim;
  throw std::invalid_argument(std::string(op) + ": shapes not broadcast-compatible: " +
                              shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const BroadcastKind kind = broadcast_kind(a, b, "add");
  const bool rec = want_grad(a) || want_grad(b);
  Tensor out = make_output(a.shape, rec);
  const std::int64_t n = a.numel();
  if (kind == BroadcastKind::Same) {
    kernels::add(out.ptr(), a.ptr(), b.ptr(), n);
  } else {
    const std::int64_t cols = b.numel();
    const std::int64_t rows = n / cols;
    for (std::int64_t r = 0; r < rows; ++r)
      kernels::serial::add(out.ptr() + r * cols, a.ptr() + r * cols, b.ptr(), cols);
  }

  finish(out, {a, b}, [kind, n](TapeNode& node) {
    const Tensor& pa = node.inputs[0];
    const Tensor& pb = node.inputs[1];
    const double* dy = node.out_grad->data();
    accumulate_grad(pa, dy, n);
    if (!pb.requires_grad) return;
    if (kind == BroadcastKind::Same) {
      accumulate_grad(pb, dy, n);
    } else {
      const std::int64_t cols = pb.numel();
      const std::int64_t rows = n / cols;
      std::vector<double> db(static_cast<std::size_t>(cols), 0.0);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) db[static_cast<std::size_t>(c)] += dy[r * cols + c];
      accumulate_grad(pb, db.data(), cols);
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const BroadcastKind kind = broadcast_kind(a, b, "mul");
  const bool rec = want_grad(a) || want_grad(b);
  Tensor out = make_output(a.shape, rec);
  const std::int64_t n = a.numel();
  if (kind == BroadcastKind::Same) {
    kernels::mul(out.ptr(), a.ptr(), b.ptr(), n);
  } else {
    const std::int64_t cols = b.numel();
    const std::int64_t rows = n / cols;
    for (std::int64_t r = 0; r < rows; ++r)
      kernels::serial::mul(out.ptr() + r * cols, a.ptr() + r * cols, b.ptr(), cols);
  }

  finish(out, {a, b}, [kind, n](TapeNode& node) {
    const Tensor& pa = node.inputs[0];
    const Tensor& pb = node.inputs[1];
    const double* dy = node.out_grad->data();
    const std::int64_t cols = kind == BroadcastKind::Same ? n : pb.numel();
    const std::int64_t rows = n / cols;
    if (pa.requires_grad) {
      const_cast<Tensor&>(pa).ensure_grad();
      double* da = pa.grad->data();
      const double* bv = pb.data->data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) da[r * cols + c] += dy[r * cols + c] * bv[c];
      if (pa.node) pa.node->has_out_grad = true;
    }
    if (pb.requires_grad) {
      std::vector<double> db(static_cast<std::size_t>(cols), 0.0);
      const double* av = pa.data->data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) db[static_cast<std::size_t>(c)] += dy[r * cols + c] * av[r * cols + c];
      accumulate_grad(pb, db.data(), cols);
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  const bool rec = want_grad(a);
  Tensor out = make_output(a.shape, rec);
  kernels::axpy(out.ptr(), c, a.ptr(), a.numel(), false);

  finish(out, {a}, [c](TapeNode& node) {
    const Tensor& pa = node.inputs[0];
    if (!pa.requires_grad) return;
    const_cast<Tensor&>(pa).ensure_grad();
    kernels::axpy(pa.grad->data(), c, node.out_grad->data(), static_cast<std::int64_t>(node.out_grad->size()), true);
    if (pa.node) pa.node->has_out_grad = true;
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  const bool rec = want_grad(x);
  Tensor out = make_output(x.shape, rec);
  kernels::gelu(out.ptr(), x.ptr(), x.numel());

  finish(out, {x}, [](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    if (!px.requires_grad) return;
    const_cast<Tensor&>(px).ensure_grad();
    kernels::gelu_backward(px.grad->data(), px.data->data(), node.out_grad->data(),
                           static_cast<std::int64_t>(node.out_grad->size()));
    if (px.node) px.node->has_out_grad = true;
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;

  const bool rec = want_grad(x);
  Tensor out = make_output(x.shape, rec);
  const std::int64_t n = x.numel();
  auto keep = std::make_shared<std::vector<unsigned char>>(static_cast<std::size_t>(n));
  const double inv_keep = 1.0 / (1.0 - p);
  for (std::int64_t i = 0; i < n; ++i) {
    const bool k = rng.next_double() >= p;
    (*keep)[static_cast<std::size_t>(i)] = k;
    out.ptr()[i] = k ? x.ptr()[i] * inv_keep : 0.0;
  }

  finish(out, {x}, [keep, inv_keep, n](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    if (!px.requires_grad) return;
    const_cast<Tensor&>(px).ensure_grad();
    const double* dy = node.out_grad->data();
    double* dx = px.grad->data();
    for (std::int64_t i = 0; i < n; ++i)
      if ((*keep)[static_cast<std::size_t>(i)]) dx[i] += dy[i] * inv_keep;
    if (px.node) px.node->has_out_grad = true;
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding_lookup: table must be [V,D], got " + shape_str(table.shape));
  const std::int64_t v = table.shape[0], d = table.shape[1];
  for (const auto id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(v));
  const auto t = static_cast<std::int64_t>(ids.size());
  const bool rec = want_grad(table);
  Tensor out = make_output({t, d}, rec);
  for (std::int64_t i = 0; i < t; ++i)
    std::memcpy(out.ptr() + i * d, table.ptr() + ids[static_cast<std::size_t>(i)] * d,
                static_cast<std::size_t>(d) * sizeof(double));

  auto ids_copy = std::make_shared<std::vector<std::int64_t>>(ids);
  finish(out, {table}, [ids_copy, d](TapeNode& node) {
    const Tensor& pt = node.inputs[0];
    if (!pt.requires_grad) return;
    const_cast<Tensor&>(pt).ensure_grad();
    const double* dy = node.out_grad->data();
    double* dt = pt.grad->data();
    // scatter-add stays serial: duplicate ids write the same row
    for (std::size_t i = 0; i < ids_copy->size(); ++i) {
      double* row = dt + (*ids_copy)[i] * d;
      const double* src = dy + static_cast<std::int64_t>(i) * d;
      for (std::int64_t j = 0; j < d; ++j) row[j] += src[j];
    }
    if (pt.node) pt.node->has_out_grad = true;
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets,
                     std::int64_t ignore_index) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [T,V], got " + shape_str(logits.shape));
  const std::int64_t t = logits.shape[0], v = logits.shape[1];
  if (static_cast<std::int64_t>(targets.size()) != t)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(t) + " logit rows");
  std::int64_t valid = 0;
  for (const auto tgt : targets) {
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt) +
                              " outside vocabulary of size " + std::to_string(v));
    ++valid;
  }
  if (valid == 0)
    throw std::domain_error("cross_entropy: every position carries the ignore index; loss undefined");

  auto logp = std::make_shared<std::vector<double>>(logits.data->size());
  kernels::log_softmax_rows(logp->data(), logits.ptr(), t, v);

  double loss = 0.0;
  for (std::int64_t i = 0; i < t; ++i) {
    const auto tgt = targets[static_cast<std::size_t>(i)];
    if (tgt == ignore_index) continue;
    loss -= (*logp)[static_cast<std::size_t>(i * v + tgt)];
  }
  loss /= static_cast<double>(valid);

  const bool rec = want_grad(logits);
  Tensor out = make_output({}, rec);
  out.ptr()[0] = loss;

  auto tgts = std::make_shared<std::vector<std::int64_t>>(targets);
  finish(out, {logits}, [logp, tgts, ignore_index, t, v, valid](TapeNode& node) {
    const Tensor& pl = node.inputs[0];
    if (!pl.requires_grad) return;
    const_cast<Tensor&>(pl).ensure_grad();
    const double gout = (*node.out_grad)[0];
    const double w = gout / static_cast<double>(valid);
    double* dl = pl.grad->data();
    for (std::int64_t i = 0; i < t; ++i) {
      const auto tgt = (*tgts)[static_cast<std::size_t>(i)];
      if (tgt == ignore_index) continue;
      const double* lp = logp->data() + i * v;
      double* row = dl + i * v;
      for (std::int64_t j = 0; j < v; ++j) row[j] += w * std::exp(lp[j]);
      row[tgt] -= w;
    }
    if (pl.node) pl.node->has_out_grad = true;
  });
  return out;
}

Tensor sum(const Tensor& x) {
  const bool rec = want_grad(x);
  Tensor out = make_output({}, rec);
  double acc = 0.0;
  const double* src = x.ptr();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += src[i];
  out.ptr()[0] = acc;

  finish(out, {x}, [n](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    if (!px.requires_grad) return;
    const_cast<Tensor&>(px).ensure_grad();
    const double g = (*node.out_grad)[0];
    double* dx = px.grad->data();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
    if (px.node) px.node->has_out_grad = true;
  });
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
    throw std::invalid_argument("concat_rows: incompatible shapes " + shape_str(a.shape) + " and " +
                                shape_str(b.shape));
  const std::int64_t ta = a.shape[0], tb = b.shape[0], d = a.shape[1];
  const bool rec = want_grad(a) || want_grad(b);
  Tensor out = make_output({ta + tb, d}, rec);
  std::memcpy(out.ptr(), a.ptr(), static_cast<std::size_t>(ta * d) * sizeof(double));
  std::memcpy(out.ptr() + ta * d, b.ptr(), static_cast<std::size_t>(tb * d) * sizeof(double));

  finish(out, {a, b}, [ta, tb, d](TapeNode& node) {
    const double* dy = node.out_grad->data();
    accumulate_grad(node.inputs[0], dy, ta * d);
    accumulate_grad(node.inputs[1], dy + ta * d, tb * d);
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t len) {
  if (x.rank() != 2)
    throw std::invalid_argument("slice_cols: rank-2 input required, got " + shape_str(x.shape));
  const std::int64_t rows = x.shape[0], cols = x.shape[1];
  if (start < 0 || len <= 0 || start + len > cols)
    throw std::invalid_argument("slice_cols: slice [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside " + shape_str(x.shape));
  const bool rec = want_grad(x);
  Tensor out = make_output({rows, len}, rec);
  for (std::int64_t r = 0; r < rows; ++r)
    std::memcpy(out.ptr() + r * len, x.ptr() + r * cols + start,
                static_cast<std::size_t>(len) * sizeof(double));

  finish(out, {x}, [rows, cols, start, len](TapeNode& node) {
    const Tensor& px = node.inputs[0];
    if (!px.requires_grad) return;
    const_cast<Tensor&>(px).ensure_grad();
    const double* dy = node.out_grad->data();
    double* dx = px.grad->data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < len; ++c) dx[r * cols + start + c] += dy[r * len + c];
    if (px.node) px.node->has_out_grad = true;
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::int64_t rows = xs[0].shape[0];
  std::int64_t cols = 0;
  bool rec = false;
  for (const auto& x : xs) {
    if (x.rank() != 2 || x.shape[0] != rows)
      throw std::invalid_argument("concat_cols: incompatible input " + shape_str(x.shape));
    cols += x.shape[1];
    rec = rec || want_grad(x);
  }
  Tensor out = make_output({rows, cols}, rec);
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const std::int64_t w = x.shape[1];
    for (std::int64_t r = 0; r < rows; ++r)
      std::memcpy(out.ptr() + r * cols + off, x.ptr() + r * w,
                  static_cast<std::size_t>(w) * sizeof(double));
    off += w;
  }

  finish(out, xs, [rows, cols](TapeNode& node) {
    const double* dy = node.out_grad->data();
    std::int64_t off = 0;
    for (const auto& px : node.inputs) {
      const std::int64_t w = px.shape[1];
      if (px.requires_grad) {
        const_cast<Tensor&>(px).ensure_grad();
        double* dx = px.grad->data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < w; ++c) dx[r * w + c] += dy[r * cols + off + c];
        if (px.node) px.node->has_out_grad = true;
      }
      off += w;
    }
  });
  return out;
}

Tensor gather_bias(const Tensor& table, const std::vector<int>& buckets,
                   std::int64_t rows, std::int64_t cols, std::int64_t head) {
  if (table.rank() != 2)
    throw std::invalid_argument("gather_bias: table must be [buckets,heads], got " + shape_str(table.shape));
  const std::int64_t nb = table.shape[0], nh = table.shape[1];
  if (head < 0 || head >= nh)
    throw std::invalid_argument("gather_bias: head " + std::to_string(head) + " outside " + shape_str(table.shape));
  if (static_cast<std::int64_t>(buckets.size()) != rows * cols)
    throw std::invalid_argument("gather_bias: bucket matrix size mismatch");
  const bool rec = want_grad(table);
  Tensor out = make_output({rows, cols}, rec);
  for (std::int64_t i = 0; i < rows * cols; ++i) {
    const int b = buckets[static_cast<std::size_t>(i)];
    if (b < 0 || b >= nb)
      throw std::out_of_range("gather_bias: bucket " + std::to_string(b) + " outside table of " +
                              std::to_string(nb));
    out.ptr()[i] = table.ptr()[b * nh + head];
  }

  auto idx = std::make_shared<std::vector<int>>(buckets);
  finish(out, {table}, [idx, nh, head](TapeNode& node) {
    const Tensor& pt = node.inputs[0];
    if (!pt.requires_grad) return;
    const_cast<Tensor&>(pt).ensure_grad();
    const double* dy = node.out_grad->data();
    double* dt = pt.grad->data();
    for (std::size_t i = 0; i < idx->size(); ++i) dt[(*idx)[i] * nh + head] += dy[i];
    if (pt.node) pt.node->has_out_grad = true;
  });
  return out;
}

}  // namespace pnet::ops
