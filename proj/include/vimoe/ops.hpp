// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over the tape. All reductions run in flat index
// order; no op mutates its inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vimoe/tensor.hpp"

namespace vimoe {

namespace detail {

inline void check_2d(const Tensor& t, const char* name) {
  if (t.rank() != 2) throw shape_error(std::string(name) + " must be 2-d, got " + shape_str(t.shape()));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

// Rows/cols of a tensor treated as a matrix; 1-d tensors act as a single row.
inline std::size_t mat_rows(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }
inline std::size_t mat_cols(const Tensor& t) { return t.rank() == 1 ? t.dim(0) : t.dim(1); }

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

}  // namespace detail

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_2d(a, "matmul lhs");
  detail::check_2d(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw shape_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  Tensor y = tape.output({m, n}, {&a, &b});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* py = y.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* yrow = py + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
    }
  }
  tape.record(y, {a.node(), b.node()}, [an = a.node(), bn = b.node(), yn = y.node(), m, k, n] {
    const double* dy = yn->grad.data();
    if (an->requires_grad) {
      double* da = an->grad.data();
      const double* pb = bn->data.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* dyrow = dy + i * n;
          const double* brow = pb + kk * n;
          for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
          da[i * k + kk] += acc;
        }
    }
    if (bn->requires_grad) {
      double* db = bn->grad.data();
      const double* pa = an->data.data();
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t i = 0; i < m; ++i) {
          const double av = pa[i * k + kk];
          const double* dyrow = dy + i * n;
          double* dbrow = db + kk * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dyrow[j];
        }
    }
  });
  return y;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  detail::check_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor y = tape.output({n, m}, {&a});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(j, i) = a.at(i, j);
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), m, n] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += yn->grad[j * m + i];
  });
  return y;
}

namespace detail {

enum class BinOp { add, sub, mul, div };

inline Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  check_same_shape(a, b, name);
  Tensor y = tape.output(a.shape(), {&a, &b});
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.at(i), z = b.at(i);
    switch (op) {
      case BinOp::add: y.at(i) = x + z; break;
      case BinOp::sub: y.at(i) = x - z; break;
      case BinOp::mul: y.at(i) = x * z; break;
      case BinOp::div: y.at(i) = x / z; break;
    }
  }
  tape.record(y, {a.node(), b.node()}, [an = a.node(), bn = b.node(), yn = y.node(), op, n] {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = yn->grad[i];
      switch (op) {
        case BinOp::add:
          if (an->requires_grad) an->grad[i] += g;
          if (bn->requires_grad) bn->grad[i] += g;
          break;
        case BinOp::sub:
          if (an->requires_grad) an->grad[i] += g;
          if (bn->requires_grad) bn->grad[i] -= g;
          break;
        case BinOp::mul:
          if (an->requires_grad) an->grad[i] += g * bn->data[i];
          if (bn->requires_grad) bn->grad[i] += g * an->data[i];
          break;
        case BinOp::div:
          if (an->requires_grad) an->grad[i] += g / bn->data[i];
          if (bn->requires_grad) bn->grad[i] -= g * an->data[i] / (bn->data[i] * bn->data[i]);
          break;
      }
    }
  });
  return y;
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(tape, a, b, detail::BinOp::add, "add");
}
inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(tape, a, b, detail::BinOp::sub, "sub");
}
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(tape, a, b, detail::BinOp::mul, "mul");
}
inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary(tape, a, b, detail::BinOp::div, "div");
}

// y[i, j] = m[i, j] + v[j]
inline Tensor add_rowvec(Tape& tape, const Tensor& m, const Tensor& v) {
  detail::check_2d(m, "add_rowvec lhs");
  if (v.rank() != 1 || v.dim(0) != m.dim(1))
    throw shape_error("add_rowvec: vector " + shape_str(v.shape()) + " does not match matrix " +
                      shape_str(m.shape()));
  const std::size_t r = m.dim(0), c = m.dim(1);
  Tensor y = tape.output({r, c}, {&m, &v});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.at(i, j) = m.at(i, j) + v.at(j);
  tape.record(y, {m.node(), v.node()}, [mn = m.node(), vn = v.node(), yn = y.node(), r, c] {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double g = yn->grad[i * c + j];
        if (mn->requires_grad) mn->grad[i * c + j] += g;
        if (vn->requires_grad) vn->grad[j] += g;
      }
  });
  return y;
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor y = tape.output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) y.at(i) = a.at(i) * c;
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), c] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += c * yn->grad[i];
  });
  return y;
}

// Multiply every element of a by the single element of s.
inline Tensor mul_bcast(Tape& tape, const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw shape_error("mul_bcast: scalar operand has shape " + shape_str(s.shape()));
  Tensor y = tape.output(a.shape(), {&a, &s});
  const double sv = s.at(0);
  for (std::size_t i = 0; i < a.size(); ++i) y.at(i) = a.at(i) * sv;
  tape.record(y, {a.node(), s.node()}, [an = a.node(), sn = s.node(), yn = y.node()] {
    const double sv = sn->data[0];
    if (an->requires_grad)
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += sv * yn->grad[i];
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < yn->grad.size(); ++i) acc += yn->grad[i] * an->data[i];
      sn->grad[0] += acc;
    }
  });
  return y;
}

// Divide every element of a by the single element of s.
inline Tensor div_bcast(Tape& tape, const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw shape_error("div_bcast: scalar operand has shape " + shape_str(s.shape()));
  Tensor y = tape.output(a.shape(), {&a, &s});
  const double sv = s.at(0);
  for (std::size_t i = 0; i < a.size(); ++i) y.at(i) = a.at(i) / sv;
  tape.record(y, {a.node(), s.node()}, [an = a.node(), sn = s.node(), yn = y.node()] {
    const double sv = sn->data[0];
    if (an->requires_grad)
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i] / sv;
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < yn->grad.size(); ++i) acc += yn->grad[i] * an->data[i];
      sn->grad[0] -= acc / (sv * sv);
    }
  });
  return y;
}

// y[t, j] = m[t, j] * v[t]
inline Tensor rowwise_scale(Tape& tape, const Tensor& m, const Tensor& v) {
  detail::check_2d(m, "rowwise_scale lhs");
  if (v.rank() != 1 || v.dim(0) != m.dim(0))
    throw shape_error("rowwise_scale: vector " + shape_str(v.shape()) + " does not match matrix " +
                      shape_str(m.shape()));
  const std::size_t r = m.dim(0), c = m.dim(1);
  Tensor y = tape.output({r, c}, {&m, &v});
  for (std::size_t t = 0; t < r; ++t)
    for (std::size_t j = 0; j < c; ++j) y.at(t, j) = m.at(t, j) * v.at(t);
  tape.record(y, {m.node(), v.node()}, [mn = m.node(), vn = v.node(), yn = y.node(), r, c] {
    for (std::size_t t = 0; t < r; ++t) {
      const double vt = vn->data[t];
      double dv = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double g = yn->grad[t * c + j];
        if (mn->requires_grad) mn->grad[t * c + j] += g * vt;
        dv += g * mn->data[t * c + j];
      }
      if (vn->requires_grad) vn->grad[t] += dv;
    }
  });
  return y;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  Tensor y = tape.output({1}, {&a});
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  y.at(0) = acc;
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node()] {
    if (!an->requires_grad) return;
    const double g = yn->grad[0];
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
  return y;
}

inline Tensor mean(Tape& tape, const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor y = tape.output({1}, {&a});
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  y.at(0) = acc * inv;
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), inv] {
    if (!an->requires_grad) return;
    const double g = yn->grad[0] * inv;
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
  return y;
}

inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor y = tape.output(std::move(shape), {&a});
  y.data() = a.data();
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node()] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i];
  });
  return y;
}

// Rows [r0, r1) of a matrix.
inline Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t r0, std::size_t r1) {
  detail::check_2d(a, "slice_rows");
  if (r0 >= r1 || r1 > a.dim(0))
    throw shape_error("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                      ") out of " + shape_str(a.shape()));
  const std::size_t c = a.dim(1);
  Tensor y = tape.output({r1 - r0, c}, {&a});
  std::copy(a.data().begin() + r0 * c, a.data().begin() + r1 * c, y.data().begin());
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), r0, c] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[r0 * c + i] += yn->grad[i];
  });
  return y;
}

// Columns [c0, c1) of a matrix.
inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t c0, std::size_t c1) {
  detail::check_2d(a, "slice_cols");
  if (c0 >= c1 || c1 > a.dim(1))
    throw shape_error("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                      ") out of " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1), w = c1 - c0;
  Tensor y = tape.output({r, w}, {&a});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) y.at(i, j) = a.at(i, c0 + j);
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), r, c, c0, w] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) an->grad[i * c + c0 + j] += yn->grad[i * w + j];
  });
  return y;
}

// Concatenate along axis 0 (1-d or 2-d) or axis 1 (2-d).
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw contract_error("concat of zero tensors");
  if (axis > 1) throw shape_error("concat: axis must be 0 or 1");
  const std::size_t rank = parts[0].rank();
  for (const Tensor& p : parts)
    if (p.rank() != rank) throw shape_error("concat: mixed ranks");

  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != out_shape[d])
        throw shape_error("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                          shape_str(out_shape));
    total += p.dim(axis);
  }
  out_shape[axis] = total;

  std::vector<const Tensor*> ins;
  ins.reserve(parts.size());
  for (const Tensor& p : parts) ins.push_back(&p);
  Tensor y = tape.output(out_shape, ins);

  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  nodes.reserve(parts.size());
  for (const Tensor& p : parts) nodes.push_back(p.node());

  if (axis == 0 || rank == 1) {
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      std::copy(p.data().begin(), p.data().end(), y.data().begin() + off);
      off += p.size();
    }
  } else {
    const std::size_t r = out_shape[0];
    std::size_t coff = 0;
    for (const Tensor& p : parts) {
      const std::size_t pc = p.dim(1);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) y.data()[i * total + coff + j] = p.at(i, j);
      coff += pc;
    }
  }

  tape.record(y, nodes, [nodes, yn = y.node(), axis, rank, total, out_shape] {
    if (axis == 0 || rank == 1) {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        if (n->requires_grad)
          for (std::size_t i = 0; i < n->data.size(); ++i) n->grad[i] += yn->grad[off + i];
        off += n->data.size();
      }
    } else {
      const std::size_t r = out_shape[0];
      std::size_t coff = 0;
      for (const auto& n : nodes) {
        const std::size_t pc = n->shape[1];
        if (n->requires_grad)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) n->grad[i * pc + j] += yn->grad[i * total + coff + j];
        coff += pc;
      }
    }
  });
  return y;
}

// y[j] = a[idx[j]] over the flat buffer. Duplicate indices accumulate in backward.
inline Tensor gather(Tape& tape, const Tensor& a, std::vector<std::size_t> idx) {
  for (std::size_t i : idx)
    if (i >= a.size()) throw contract_error("gather: index " + std::to_string(i) + " out of range");
  Tensor y = tape.output({idx.size()}, {&a});
  for (std::size_t j = 0; j < idx.size(); ++j) y.at(j) = a.at(idx[j]);
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), idx = std::move(idx)] {
    if (!an->requires_grad) return;
    for (std::size_t j = 0; j < idx.size(); ++j) an->grad[idx[j]] += yn->grad[j];
  });
  return y;
}

// Length-n vector with y[idx[j]] = a[j], zero elsewhere. Indices must be distinct.
inline Tensor scatter(Tape& tape, const Tensor& a, std::vector<std::size_t> idx, std::size_t n) {
  if (idx.size() != a.size()) throw shape_error("scatter: index count does not match values");
  for (std::size_t i : idx)
    if (i >= n) throw contract_error("scatter: index " + std::to_string(i) + " out of range");
  Tensor y = tape.output({n}, {&a});
  for (std::size_t j = 0; j < idx.size(); ++j) y.at(idx[j]) = a.at(j);
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), idx = std::move(idx)] {
    if (!an->requires_grad) return;
    for (std::size_t j = 0; j < idx.size(); ++j) an->grad[j] += yn->grad[idx[j]];
  });
  return y;
}

// Row-wise softmax over the last axis with max subtraction. 1-d inputs are a
// single row.
inline Tensor softmax(Tape& tape, const Tensor& a) {
  const std::size_t rows = detail::mat_rows(a), cols = detail::mat_cols(a);
  if (cols == 0) throw shape_error("softmax over an empty axis");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::isnan(a.at(i))) throw numeric_error("softmax: NaN input");
  Tensor y = tape.output(a.shape(), {&a});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * cols;
    double* o = y.data().data() + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(x[j] - mx);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < cols; ++j) o[j] *= inv;
  }
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node(), rows, cols] {
    if (!an->requires_grad) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yv = yn->data.data() + r * cols;
      const double* dy = yn->grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * yv[j];
      double* dx = an->grad.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) dx[j] += yv[j] * (dy[j] - dot);
    }
  });
  return y;
}

// Layer normalization over the last axis followed by the affine map
// gamma * xhat + beta. 1-d inputs are a single row.
inline Tensor layernorm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps = 1e-6) {
  const std::size_t rows = detail::mat_rows(x), cols = detail::mat_cols(x);
  if (gamma.size() != cols || beta.size() != cols)
    throw shape_error("layernorm: affine parameters do not match last axis " + shape_str(x.shape()));
  if (eps <= 0.0) throw contract_error("layernorm: eps must be positive");
  Tensor y = tape.output(x.shape(), {&x, &gamma, &beta});
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xv = x.data().data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xv[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = xv[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xv[j] - mu) * is;
      xhat[r * cols + j] = h;
      y.data()[r * cols + j] = gamma.at(j) * h + beta.at(j);
    }
  }
  tape.record(y, {x.node(), gamma.node(), beta.node()},
              [xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node(),
               xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols] {
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* dy = yn->grad.data() + r * cols;
                  const double* h = xhat.data() + r * cols;
                  if (gn->requires_grad)
                    for (std::size_t j = 0; j < cols; ++j) gn->grad[j] += dy[j] * h[j];
                  if (bn->requires_grad)
                    for (std::size_t j = 0; j < cols; ++j) bn->grad[j] += dy[j];
                  if (xn->requires_grad) {
                    double mean_dh = 0.0, mean_dhh = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                      const double dh = dy[j] * gn->data[j];
                      mean_dh += dh;
                      mean_dhh += dh * h[j];
                    }
                    mean_dh /= static_cast<double>(cols);
                    mean_dhh /= static_cast<double>(cols);
                    double* dx = xn->grad.data() + r * cols;
                    for (std::size_t j = 0; j < cols; ++j) {
                      const double dh = dy[j] * gn->data[j];
                      dx[j] += inv_std[r] * (dh - mean_dh - h[j] * mean_dhh);
                    }
                  }
                }
              });
  return y;
}

// Exact erf-based GELU.
inline Tensor gelu(Tape& tape, const Tensor& a) {
  Tensor y = tape.output(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.at(i);
    y.at(i) = 0.5 * x * (1.0 + std::erf(x * detail::kInvSqrt2));
  }
  tape.record(y, {a.node()}, [an = a.node(), yn = y.node()] {
    if (!an->requires_grad) return;
    for (std::size_t i = 0; i < an->grad.size(); ++i) {
      const double x = an->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * detail::kInvSqrt2));
      const double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * x * x);
      an->grad[i] += yn->grad[i] * (cdf + x * pdf);
    }
  });
  return y;
}

// Mean cross-entropy between rows of logits and integer targets, stabilized
// with log-sum-exp. A 1-d logits tensor is a single row.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& targets) {
  const std::size_t rows = detail::mat_rows(logits), cols = detail::mat_cols(logits);
  if (targets.size() != rows)
    throw shape_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= cols)
      throw contract_error("cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                           std::to_string(cols) + ")");
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (std::isnan(logits.at(i))) throw numeric_error("cross_entropy: NaN input");

  Tensor y = tape.output({1}, {&logits});
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data().data() + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - x[targets[r]];
    for (std::size_t j = 0; j < cols; ++j) probs[r * cols + j] = std::exp(x[j] - lse);
  }
  y.at(0) = loss / static_cast<double>(rows);
  tape.record(y, {logits.node()},
              [ln = logits.node(), yn = y.node(), probs = std::move(probs), targets, rows, cols] {
                if (!ln->requires_grad) return;
                const double g = yn->grad[0] / static_cast<double>(rows);
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t j = 0; j < cols; ++j) {
                    double d = probs[r * cols + j];
                    if (j == static_cast<std::size_t>(targets[r])) d -= 1.0;
                    ln->grad[r * cols + j] += g * d;
                  }
              });
  return y;
}

inline Tensor cross_entropy(Tape& tape, const Tensor& logits, int target) {
  return cross_entropy(tape, logits, std::vector<int>{target});
}

}  // namespace vimoe
