#include "tfgrasp/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace tfgrasp {
namespace {

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapR = Eigen::Map<MatR<S>>;
template <typename S>
using CMapR = Eigen::Map<const MatR<S>>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Records `fn` on the active tape when any input needs a gradient.
template <typename Scalar, typename Fn>
Tensor<Scalar> finish(Tensor<Scalar> out, std::initializer_list<const Tensor<Scalar>*> inputs,
                      Fn&& fn) {
  auto* tape = Tape<Scalar>::active();
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<Scalar>* t) { return t->defined() && t->requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(out, std::forward<Fn>(fn));
  return out;
}

template <typename Scalar>
std::vector<Scalar> buffer(Index n) {
  return std::vector<Scalar>(static_cast<std::size_t>(n));
}

Index normalize_axis(Index axis, Index rank) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return a;
}

// Number of times b repeats inside a when b's shape is a trailing block of
// a's shape (or b is a single element).
template <typename Scalar>
Index broadcast_repeats(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (b.numel() == 1 && a.numel() != 1) return a.numel();
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i) {
    ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(sa) + " and " + shape_string(sb) +
                     " are not compatible");
  }
  return a.numel() / b.numel();
}

// Batched product with numpy-style broadcasting of the leading dims.
template <typename Scalar>
Tensor<Scalar> batched_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b) {
  const char* name = transpose_b ? "matmul_transposed" : "matmul";
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError(std::string(name) + " needs rank >= 2 operands, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const Index m = a.dim(-2);
  const Index k = a.dim(-1);
  const Index bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const Index n = transpose_b ? b.dim(-2) : b.dim(-1);
  if (k != bk) {
    throw ShapeError(std::string(name) + ": inner dimensions differ for shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const std::size_t rank = std::max(batch_a.size(), batch_b.size());
  Shape batch(rank);
  std::vector<Index> stride_a(rank, 0), stride_b(rank, 0);
  {
    Index sa = m * k, sb = k * n;
    for (std::size_t i = 0; i < rank; ++i) {
      const std::size_t r = rank - 1 - i;
      const Index da = i < batch_a.size() ? batch_a[batch_a.size() - 1 - i] : 1;
      const Index db = i < batch_b.size() ? batch_b[batch_b.size() - 1 - i] : 1;
      if (da != db && da != 1 && db != 1) {
        throw ShapeError(std::string(name) + ": batch dimensions of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " do not broadcast");
      }
      batch[r] = std::max(da, db);
      stride_a[r] = da == 1 ? 0 : sa;
      stride_b[r] = db == 1 ? 0 : sb;
      sa *= da;
      sb *= db;
    }
  }
  const Index batches = shape_numel(batch);
  std::vector<std::pair<Index, Index>> offsets(static_cast<std::size_t>(batches));
  {
    std::vector<Index> idx(rank, 0);
    for (Index t = 0; t < batches; ++t) {
      Index oa = 0, ob = 0;
      for (std::size_t d = 0; d < rank; ++d) {
        oa += idx[d] * stride_a[d];
        ob += idx[d] * stride_b[d];
      }
      offsets[static_cast<std::size_t>(t)] = {oa, ob};
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < batch[d]) break;
        idx[d] = 0;
      }
    }
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  // Shared right operand: fold the batch into the row dimension.
  const bool fold = batch_b.empty() || std::all_of(batch_b.begin(), batch_b.end(), [](Index d) { return d == 1; });
  const bool a_full = shape_numel(batch_a) == batches;
  auto values = buffer<Scalar>(batches * m * n);
  const Index bm = transpose_b ? n : k;
  const Index bn = transpose_b ? k : n;
  if (fold && a_full) {
    CMapR<Scalar> A(a.data().data(), batches * m, k);
    CMapR<Scalar> B(b.data().data(), bm, bn);
    MapR<Scalar> C(values.data(), batches * m, n);
    if (transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A * B;
  } else {
    for (Index t = 0; t < batches; ++t) {
      const auto [oa, ob] = offsets[static_cast<std::size_t>(t)];
      CMapR<Scalar> A(a.data().data() + oa, m, k);
      CMapR<Scalar> B(b.data().data() + ob, bm, bn);
      MapR<Scalar> C(values.data() + t * m * n, m, n);
      if (transpose_b) C.noalias() = A * B.transpose();
      else C.noalias() = A * B;
    }
  }

  Tensor<Scalar> out(out_shape, std::move(values));
  return finish(out, {&a, &b},
                [a, b, m, k, n, bm, bn, batches, fold, a_full, transpose_b,
                 offsets = std::move(offsets)](std::span<const Scalar> g) mutable {
                  if (fold && a_full) {
                    CMapR<Scalar> G(g.data(), batches * m, n);
                    if (a.requires_grad()) {
                      CMapR<Scalar> B(b.data().data(), bm, bn);
                      MapR<Scalar> dA(a.grad_mut().data(), batches * m, k);
                      if (transpose_b) dA.noalias() += G * B;
                      else dA.noalias() += G * B.transpose();
                    }
                    if (b.requires_grad()) {
                      CMapR<Scalar> A(a.data().data(), batches * m, k);
                      MapR<Scalar> dB(b.grad_mut().data(), bm, bn);
                      if (transpose_b) dB.noalias() += G.transpose() * A;
                      else dB.noalias() += A.transpose() * G;
                    }
                    return;
                  }
                  Scalar* da = a.requires_grad() ? a.grad_mut().data() : nullptr;
                  Scalar* db = b.requires_grad() ? b.grad_mut().data() : nullptr;
                  for (Index t = 0; t < batches; ++t) {
                    const auto [oa, ob] = offsets[static_cast<std::size_t>(t)];
                    CMapR<Scalar> G(g.data() + t * m * n, m, n);
                    if (da) {
                      CMapR<Scalar> B(b.data().data() + ob, bm, bn);
                      MapR<Scalar> dA(da + oa, m, k);
                      if (transpose_b) dA.noalias() += G * B;
                      else dA.noalias() += G * B.transpose();
                    }
                    if (db) {
                      CMapR<Scalar> A(a.data().data() + oa, m, k);
                      MapR<Scalar> dB(db + ob, bm, bn);
                      if (transpose_b) dB.noalias() += G.transpose() * A;
                      else dB.noalias() += A.transpose() * G;
                    }
                  }
                });
}

enum class Binary { kAdd, kSub, kMul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Binary kind, const char* name) {
  const Index reps = broadcast_repeats(a, b, name);
  const Index nb = b.numel();
  const auto av = a.data();
  const auto bv = b.data();
  auto values = buffer<Scalar>(a.numel());
  for (Index r = 0; r < reps; ++r) {
    const Scalar* x = av.data() + r * nb;
    Scalar* y = values.data() + r * nb;
    switch (kind) {
      case Binary::kAdd:
        for (Index i = 0; i < nb; ++i) y[i] = x[i] + bv[static_cast<std::size_t>(i)];
        break;
      case Binary::kSub:
        for (Index i = 0; i < nb; ++i) y[i] = x[i] - bv[static_cast<std::size_t>(i)];
        break;
      case Binary::kMul:
        for (Index i = 0; i < nb; ++i) y[i] = x[i] * bv[static_cast<std::size_t>(i)];
        break;
    }
  }
  Tensor<Scalar> out(a.shape(), std::move(values));
  return finish(out, {&a, &b}, [a, b, reps, nb, kind](std::span<const Scalar> g) mutable {
    if (a.requires_grad()) {
      auto da = a.grad_mut();
      if (kind == Binary::kMul) {
        const auto bv = b.data();
        for (Index r = 0; r < reps; ++r)
          for (Index i = 0; i < nb; ++i) da[r * nb + i] += g[r * nb + i] * bv[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      auto db = b.grad_mut();
      const Scalar sign = kind == Binary::kSub ? Scalar(-1) : Scalar(1);
      const auto av = a.data();
      for (Index r = 0; r < reps; ++r) {
        for (Index i = 0; i < nb; ++i) {
          const Scalar gi = g[r * nb + i];
          db[i] += kind == Binary::kMul ? gi * av[r * nb + i] : sign * gi;
        }
      }
    }
  });
}

// Visits every element of a permuted copy. fn(dst, src, run) copies `run`
// contiguous elements.
template <typename Fn>
void for_each_permuted(const Shape& in_shape, std::span<const Index> order, Fn&& fn) {
  const std::size_t r = in_shape.size();
  std::vector<Index> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<Index> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(order[i])];
    src_stride[i] = in_stride[static_cast<std::size_t>(order[i])];
  }
  Index run = 1;
  std::size_t outer_rank = r;
  if (r > 0 && order[r - 1] == static_cast<Index>(r - 1)) {
    run = in_shape[r - 1];
    outer_rank = r - 1;
  }
  const Index total = shape_numel(in_shape);
  std::vector<Index> idx(outer_rank, 0);
  Index src = 0;
  for (Index dst = 0; dst < total; dst += run) {
    fn(dst, src, run);
    for (std::size_t d = outer_rank; d-- > 0;) {
      src += src_stride[d];
      if (++idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return batched_product(a, b, false);
}

template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return batched_product(a, b, true);
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(w.shape()));
  }
  const Index in = w.dim(0);
  const Index out_dim = w.dim(1);
  if (bias.defined() && bias.numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(w.shape()));
  }
  const Index rows = x.numel() / in;
  auto values = buffer<Scalar>(rows * out_dim);
  {
    CMapR<Scalar> X(x.data().data(), rows, in);
    CMapR<Scalar> W(w.data().data(), in, out_dim);
    MapR<Scalar> Y(values.data(), rows, out_dim);
    Y.noalias() = X * W;
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(bias.data().data(), out_dim);
      Y.rowwise() += b;
    }
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor<Scalar> out(shape, std::move(values));
  return finish(out, {&x, &w, &bias}, [x, w, bias, rows, in, out_dim](std::span<const Scalar> g) mutable {
    CMapR<Scalar> G(g.data(), rows, out_dim);
    if (x.requires_grad()) {
      CMapR<Scalar> W(w.data().data(), in, out_dim);
      MapR<Scalar> dX(x.grad_mut().data(), rows, in);
      dX.noalias() += G * W.transpose();
    }
    if (w.requires_grad()) {
      CMapR<Scalar> X(x.data().data(), rows, in);
      MapR<Scalar> dW(w.grad_mut().data(), in, out_dim);
      dW.noalias() += X.transpose() * G;
    }
    if (bias.defined() && bias.requires_grad()) {
      // Row-by-row so the summation order does not depend on buffer alignment.
      Scalar* db = bias.grad_mut().data();
      for (Index r = 0; r < rows; ++r) {
        for (Index j = 0; j < out_dim; ++j) db[j] += G(r, j);
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, Binary::kAdd, "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, Binary::kSub, "sub");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, Binary::kMul, "mul");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  auto values = buffer<Scalar>(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = xv[i] * factor;
  Tensor<Scalar> out(x.shape(), std::move(values));
  return finish(out, {&x}, [x, factor](std::span<const Scalar> g) mutable {
    auto dx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  auto values = buffer<Scalar>(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = Scalar(0.5) * xv[i] * (Scalar(1) + std::erf(xv[i] * inv_sqrt2));
  }
  Tensor<Scalar> out(x.shape(), std::move(values));
  return finish(out, {&x}, [x, inv_sqrt2](std::span<const Scalar> g) mutable {
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    const auto xv = x.data();
    auto dx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Scalar v = xv[i];
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  auto values = buffer<Scalar>(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = Scalar(1) / (Scalar(1) + std::exp(-xv[i]));
  Tensor<Scalar> out(x.shape(), std::move(values));
  Tensor<Scalar> y = out;
  return finish(out, {&x}, [x, y](std::span<const Scalar> g) mutable {
    const auto yv = y.data();
    auto dx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv[i] * (Scalar(1) - yv[i]);
  });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const Index ax = normalize_axis(axis, x.rank());
  Index outer = 1, inner = 1;
  for (Index i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (Index i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
  const Index len = x.shape()[static_cast<std::size_t>(ax)];
  const auto xv = x.data();
  auto values = buffer<Scalar>(x.numel());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      Scalar mx = xv[static_cast<std::size_t>(base)];
      for (Index j = 0; j < len; ++j) {
        const Scalar v = xv[static_cast<std::size_t>(base + j * inner)];
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
        mx = std::max(mx, v);
      }
      Scalar total = 0;
      for (Index j = 0; j < len; ++j) {
        const auto k = static_cast<std::size_t>(base + j * inner);
        values[k] = std::exp(xv[k] - mx);
        total += values[k];
      }
      const Scalar inv = Scalar(1) / total;
      for (Index j = 0; j < len; ++j) values[static_cast<std::size_t>(base + j * inner)] *= inv;
    }
  }
  Tensor<Scalar> out(x.shape(), std::move(values));
  Tensor<Scalar> y = out;
  return finish(out, {&x}, [x, y, outer, inner, len](std::span<const Scalar> g) mutable {
    const auto yv = y.data();
    auto dx = x.grad_mut();
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        Scalar dot = 0;
        for (Index j = 0; j < len; ++j) {
          const auto k = static_cast<std::size_t>(base + j * inner);
          dot += g[k] * yv[k];
        }
        for (Index j = 0; j < len; ++j) {
          const auto k = static_cast<std::size_t>(base + j * inner);
          dx[k] += yv[k] * (g[k] - dot);
        }
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          double eps) {
  if (!(eps > 0)) throw ParameterError("layer_norm: epsilon must be positive");
  const Index c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " +
                     shape_string(beta.shape()) + " do not match input " + shape_string(x.shape()));
  }
  const Index rows = x.numel() / c;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto values = buffer<Scalar>(x.numel());
  auto stats = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(2 * rows));
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * c;
    Scalar mu = 0;
    for (Index i = 0; i < c; ++i) mu += row[i];
    mu /= Scalar(c);
    Scalar var = 0;
    for (Index i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= Scalar(c);
    const Scalar rstd = Scalar(1) / std::sqrt(var + Scalar(eps));
    (*stats)[static_cast<std::size_t>(2 * r)] = mu;
    (*stats)[static_cast<std::size_t>(2 * r + 1)] = rstd;
    Scalar* y = values.data() + r * c;
    for (Index i = 0; i < c; ++i) y[i] = (row[i] - mu) * rstd * gv[i] + bv[i];
  }
  Tensor<Scalar> out(x.shape(), std::move(values));
  return finish(out, {&x, &gamma, &beta}, [x, gamma, beta, stats, rows, c](std::span<const Scalar> g) mutable {
    const auto xv = x.data();
    const auto gv = gamma.data();
    Scalar* dx = x.requires_grad() ? x.grad_mut().data() : nullptr;
    Scalar* dg = gamma.requires_grad() ? gamma.grad_mut().data() : nullptr;
    Scalar* db = beta.requires_grad() ? beta.grad_mut().data() : nullptr;
    std::vector<Scalar> xhat(static_cast<std::size_t>(c));
    for (Index r = 0; r < rows; ++r) {
      const Scalar mu = (*stats)[static_cast<std::size_t>(2 * r)];
      const Scalar rstd = (*stats)[static_cast<std::size_t>(2 * r + 1)];
      const Scalar* row = xv.data() + r * c;
      const Scalar* gr = g.data() + r * c;
      Scalar mean_dy = 0, mean_dy_xhat = 0;
      for (Index i = 0; i < c; ++i) {
        xhat[i] = (row[i] - mu) * rstd;
        const Scalar dyh = gr[i] * gv[i];
        mean_dy += dyh;
        mean_dy_xhat += dyh * xhat[i];
        if (dg) dg[i] += gr[i] * xhat[i];
        if (db) db[i] += gr[i];
      }
      if (!dx) continue;
      mean_dy /= Scalar(c);
      mean_dy_xhat /= Scalar(c);
      Scalar* dr = dx + r * c;
      for (Index i = 0; i < c; ++i) dr[i] += rstd * (gr[i] * gv[i] - mean_dy - xhat[i] * mean_dy_xhat);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> strided_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernels, const Tensor<Scalar>& bias,
                              Index stride) {
  if (x.rank() < 3 || kernels.rank() != 4) {
    throw ShapeError("strided_conv2d: expected input [.., C, H, W] and kernels [D, C, p, p], got " +
                     shape_string(x.shape()) + " and " + shape_string(kernels.shape()));
  }
  const Index c = x.dim(-3), h = x.dim(-2), w = x.dim(-1);
  const Index d = kernels.dim(0), p = stride;
  if (kernels.dim(1) != c || kernels.dim(2) != p || kernels.dim(3) != p) {
    throw ShapeError("strided_conv2d: kernels " + shape_string(kernels.shape()) + " incompatible with input " +
                     shape_string(x.shape()) + " at stride " + std::to_string(p));
  }
  if (p <= 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("strided_conv2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by stride " + std::to_string(p));
  }
  const Index batch = x.numel() / (c * h * w);
  const Index oh = h / p, ow = w / p, patch = c * p * p;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(batch * oh * ow * patch));
  {
    auto it = index->begin();
    for (Index b = 0; b < batch; ++b)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j)
          for (Index ch = 0; ch < c; ++ch)
            for (Index u = 0; u < p; ++u)
              for (Index v = 0; v < p; ++v) *it++ = ((b * c + ch) * h + i * p + u) * w + j * p + v;
  }
  auto patches = gather(x, std::move(index), Shape{batch * oh * ow, patch});
  auto tokens = matmul_transposed(patches, kernels.reshape(Shape{d, patch}));
  if (bias.defined()) tokens = add(tokens, bias.reshape(Shape{d}));
  auto grid = permute(tokens.reshape(Shape{batch, oh, ow, d}), {0, 3, 1, 2});
  Shape out_shape(x.shape().begin(), x.shape().end() - 3);
  out_shape.insert(out_shape.end(), {d, oh, ow});
  return grid.reshape(out_shape);
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, std::span<const Index> order) {
  const auto r = static_cast<std::size_t>(x.rank());
  if (order.size() != r) throw ShapeError("permute: order length does not match rank of " + shape_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (Index o : order) {
    if (o < 0 || o >= static_cast<Index>(r) || seen[static_cast<std::size_t>(o)]) {
      throw ShapeError("permute: order is not a permutation for shape " + shape_string(x.shape()));
    }
    seen[static_cast<std::size_t>(o)] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[static_cast<std::size_t>(order[i])];
  auto values = buffer<Scalar>(x.numel());
  const auto xv = x.data();
  for_each_permuted(x.shape(), order, [&](Index dst, Index src, Index run) {
    std::copy_n(xv.data() + src, run, values.data() + dst);
  });
  Tensor<Scalar> out(out_shape, std::move(values));
  std::vector<Index> ord(order.begin(), order.end());
  return finish(out, {&x}, [x, ord](std::span<const Scalar> g) mutable {
    auto dx = x.grad_mut();
    for_each_permuted(x.shape(), ord, [&](Index dst, Index src, Index run) {
      for (Index i = 0; i < run; ++i) dx[src + i] += g[dst + i];
    });
  });
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Index rank = parts[0].rank();
  const Index ax = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (Index i = 0; ok && i < rank; ++i) {
      ok = i == ax || p.shape()[static_cast<std::size_t>(i)] == parts[0].shape()[static_cast<std::size_t>(i)];
    }
    if (!ok) {
      throw ShapeError("concat: shape " + shape_string(p.shape()) + " incompatible with " +
                       shape_string(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    out_shape[static_cast<std::size_t>(ax)] += p.shape()[static_cast<std::size_t>(ax)];
  }
  Index outer = 1, inner = 1;
  for (Index i = 0; i < ax; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (Index i = ax + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  const Index out_block = out_shape[static_cast<std::size_t>(ax)] * inner;
  auto values = buffer<Scalar>(outer * out_block);
  std::vector<Tensor<Scalar>> kept(parts.begin(), parts.end());
  std::vector<Index> blocks;
  Index offset = 0;
  for (const auto& p : kept) {
    const Index block = p.shape()[static_cast<std::size_t>(ax)] * inner;
    const auto pv = p.data();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * block, block, values.data() + o * out_block + offset);
    }
    blocks.push_back(block);
    offset += block;
  }
  Tensor<Scalar> out(out_shape, std::move(values));
  auto* tape = Tape<Scalar>::active();
  const bool any = std::any_of(kept.begin(), kept.end(), [](const auto& t) { return t.requires_grad(); });
  if (tape == nullptr || !any) return out;
  out.set_requires_grad(true);
  tape->record(out, [kept, blocks, outer, out_block](std::span<const Scalar> g) mutable {
    Index offset = 0;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const Index block = blocks[k];
      if (kept[k].requires_grad()) {
        auto dp = kept[k].grad_mut();
        for (Index o = 0; o < outer; ++o) {
          const Scalar* src = g.data() + o * out_block + offset;
          Scalar* dst = dp.data() + o * block;
          for (Index i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += block;
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, IndexMap index, Shape out_shape) {
  if (!index || static_cast<Index>(index->size()) != shape_numel(out_shape)) {
    throw ShapeError("gather: index map size does not match output shape " + shape_string(out_shape));
  }
  const Index n = x.numel();
  const auto xv = x.data();
  auto values = buffer<Scalar>(static_cast<Index>(index->size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Index k = (*index)[i];
    if (k < 0 || k >= n) throw ShapeError("gather: index " + std::to_string(k) + " out of range");
    values[i] = xv[static_cast<std::size_t>(k)];
  }
  Tensor<Scalar> out(std::move(out_shape), std::move(values));
  return finish(out, {&x}, [x, index](std::span<const Scalar> g) mutable {
    auto dx = x.grad_mut();
    for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>((*index)[i])] += g[i];
  });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, IndexMap rows) {
  const Index c = x.dim(-1);
  const Index n = x.numel() / c;
  if (!rows || rows->empty()) throw ShapeError("gather_rows: empty row map");
  const auto xv = x.data();
  auto values = buffer<Scalar>(static_cast<Index>(rows->size()) * c);
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const Index k = (*rows)[r];
    if (k < 0 || k >= n) throw ShapeError("gather_rows: row " + std::to_string(k) + " out of range");
    std::copy_n(xv.data() + k * c, c, values.data() + static_cast<Index>(r) * c);
  }
  Tensor<Scalar> out(Shape{static_cast<Index>(rows->size()), c}, std::move(values));
  return finish(out, {&x}, [x, rows, c](std::span<const Scalar> g) mutable {
    auto dx = x.grad_mut();
    for (std::size_t r = 0; r < rows->size(); ++r) {
      Scalar* dst = dx.data() + (*rows)[r] * c;
      const Scalar* src = g.data() + static_cast<Index>(r) * c;
      for (Index i = 0; i < c; ++i) dst[i] += src[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  const auto xv = x.data();
  double acc = 0;
  for (Scalar v : xv) acc += static_cast<double>(v);
  const auto total = static_cast<Scalar>(acc);
  auto out = Tensor<Scalar>::scalar(total);
  return finish(out, {&x}, [x](std::span<const Scalar> g) mutable {
    auto dx = x.grad_mut();
    for (auto& v : dx) v += g[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / Scalar(x.numel()));
}

template <typename Scalar>
Tensor<Scalar> mse_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  const auto pv = pred.data();
  const auto tv = target.data();
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
    total += d * d;
  }
  const Scalar n = Scalar(pred.numel());
  auto out = Tensor<Scalar>::scalar(static_cast<Scalar>(total / static_cast<double>(pred.numel())));
  return finish(out, {&pred, &target}, [pred, target, n](std::span<const Scalar> g) mutable {
    const auto pv = pred.data();
    const auto tv = target.data();
    const Scalar k = Scalar(2) * g[0] / n;
    if (pred.requires_grad()) {
      auto dp = pred.grad_mut();
      for (std::size_t i = 0; i < pv.size(); ++i) dp[i] += k * (pv[i] - tv[i]);
    }
    if (target.requires_grad()) {
      auto dt = target.grad_mut();
      for (std::size_t i = 0; i < pv.size(); ++i) dt[i] -= k * (pv[i] - tv[i]);
    }
  });
}

#define TFGRASP_INSTANTIATE_OPS(S)                                                             \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> matmul_transposed(const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> scale(const Tensor<S>&, S);                                                \
  template Tensor<S> gelu(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                 \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                          \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);  \
  template Tensor<S> strided_conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index); \
  template Tensor<S> permute(const Tensor<S>&, std::span<const Index>);                         \
  template Tensor<S> concat(std::span<const Tensor<S>>, Index);                                 \
  template Tensor<S> gather(const Tensor<S>&, IndexMap, Shape);                                 \
  template Tensor<S> gather_rows(const Tensor<S>&, IndexMap);                                   \
  template Tensor<S> sum(const Tensor<S>&);                                                     \
  template Tensor<S> mean(const Tensor<S>&);                                                    \
  template Tensor<S> mse_loss(const Tensor<S>&, const Tensor<S>&);

TFGRASP_INSTANTIATE_OPS(float)
TFGRASP_INSTANTIATE_OPS(double)

}  // namespace tfgrasp
