#include "gtp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gtp/error.hpp"

namespace gtp {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& param) {
  Node n;
  n.value = Tensor(param.dims(), std::vector<double>(param.values().begin(), param.values().end()));
  n.param = &param;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape != this) throw UsageError("operation mixes variables from different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

std::span<double> Tape::grad(Var v) {
  auto& node = nodes_[v.id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw UsageError("backward root belongs to another tape");
  if (nodes_[root.id].value.size() != 1) {
    throw ShapeError("backward root must be a single element, got " +
                     dims_to_string(nodes_[root.id].value.dims()));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad(root)[0] = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, node.grad, node.value);
  }
  for (auto& node : nodes_) {
    if (node.param == nullptr || node.grad.empty()) continue;
    auto dst = node.param->grad();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
  }
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     dims_to_string(t.dims()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + dims_to_string(a.dims()) + " and " +
                     dims_to_string(b.dims()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* brow = bp + p * n;
      double* crow = cp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

namespace {

struct AxisLayout {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisLayout axis_layout(const Dims& dims, std::size_t axis, const char* op) {
  if (axis >= dims.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     dims_to_string(dims));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= dims[i];
  l.n = dims[axis];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) l.inner *= dims[i];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x.dims(), axis, "softmax");
  Tensor y(x.dims());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.n * l.inner + i;
      double mx = x[base];
      for (std::size_t j = 1; j < l.n; ++j) mx = std::max(mx, x[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double e = std::exp(x[base + j * l.inner] - mx);
        y[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) y[base + j * l.inner] /= total;
    }
  }
  return y;
}

double sigmoid(double x) {
  // Both branches avoid overflow in exp.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Var matmul(Var a, Var b) {
  Tensor out = matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av_ip * g[i * n + j];
        }
    }
  });
}

Var add(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "add");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "sub");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "mul");
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_rank(xv, 2, "add_bias");
  if (bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
    throw ShapeError("add_bias: bias " + dims_to_string(bv.dims()) + " does not match " +
                     dims_to_string(xv.dims()));
  }
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out(xv.dims());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return x.tape->record(std::move(out), {x, bias}, [x, bias, m, n](Tape& t, std::span<const double> g, const Tensor&) {
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      auto gb = t.grad(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Var affine(Var x, double a, double b) {
  Tensor out(x.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i] + b;
  return x.tape->record(std::move(out), {x}, [x, a](Tape& t, std::span<const double> g, const Tensor&) {
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
  });
}

Var row_scale(Var x, Var s) {
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  require_rank(xv, 2, "row_scale");
  if (sv.rank() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != 1) {
    throw ShapeError("row_scale: scale " + dims_to_string(sv.dims()) + " does not match " +
                     dims_to_string(xv.dims()));
  }
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out(xv.dims());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
  return x.tape->record(std::move(out), {x, s}, [x, s, m, n](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& xv = t.value(x);
    const Tensor& sv = t.value(s);
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * sv[i];
    }
    if (t.requires_grad(s)) {
      auto gs = t.grad(s);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * xv[i * n + j];
        gs[i] += acc;
      }
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Tensor& first = parts.front().value();
  require_rank(first, 2, "concat_cols");
  const std::size_t m = first.dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != 2 || v.dim(0) != m) {
      throw ShapeError("concat_cols: " + dims_to_string(v.dims()) + " incompatible with " +
                       dims_to_string(first.dims()));
    }
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = v[i * widths[k] + j];
    offset += widths[k];
  }
  return parts.front().tape->record(
      std::move(out), parts, [parts, widths, m, total](Tape& t, std::span<const double> g, const Tensor&) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (t.requires_grad(parts[k])) {
            auto gp = t.grad(parts[k]);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * total + offset + j];
          }
          offset += widths[k];
        }
      });
}

Var reshape(Var x, Dims dims) {
  Tensor out = x.value().reshaped(std::move(dims));
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::span<const double> g, const Tensor&) {
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather_rows(Var table, std::vector<std::size_t> rows) {
  const Tensor& tv = table.value();
  require_rank(tv, 2, "gather_rows");
  const std::size_t n = tv.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty row selection");
  Tensor out({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= tv.dim(0)) {
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       dims_to_string(tv.dims()));
    }
    std::copy_n(tv.data() + rows[r] * n, n, out.data() + r * n);
  }
  return table.tape->record(std::move(out), {table},
                            [table, rows = std::move(rows), n](Tape& t, std::span<const double> g, const Tensor&) {
                              auto gt = t.grad(table);
                              for (std::size_t r = 0; r < rows.size(); ++r)
                                for (std::size_t j = 0; j < n; ++j) gt[rows[r] * n + j] += g[r * n + j];
                            });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape->record(Tensor::scalar(total), {x}, [x](Tape& t, std::span<const double> g, const Tensor&) {
    auto gx = t.grad(x);
    for (auto& v : gx) v += g[0];
  });
}

Var relu(Var x) {
  Tensor out(x.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& xv = t.value(x);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var sigmoid(Var x) {
  Tensor out = sigmoid(x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::span<const double> g, const Tensor& y) {
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax(Var x, std::size_t axis) {
  Tensor out = softmax(x.value(), axis);
  return x.tape->record(std::move(out), {x}, [x, axis](Tape& t, std::span<const double> g, const Tensor& y) {
    const auto l = axis_layout(y.dims(), axis, "softmax");
    auto gx = t.grad(x);
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        const std::size_t base = o * l.n * l.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < l.n; ++j) dot += g[base + j * l.inner] * y[base + j * l.inner];
        for (std::size_t j = 0; j < l.n; ++j) {
          const std::size_t idx = base + j * l.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var conv2d_3x3(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_rank(xv, 4, "conv2d_3x3");
  if (wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != 3 || wv.dim(3) != 3) {
    throw ShapeError("conv2d_3x3: weight " + dims_to_string(wv.dims()) + " incompatible with input " +
                     dims_to_string(xv.dims()));
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) {
    throw ShapeError("conv2d_3x3: bias " + dims_to_string(bv.dims()) + " incompatible with weight " +
                     dims_to_string(wv.dims()));
  }
  const std::size_t nb = xv.dim(0), nc = xv.dim(1), h = xv.dim(2), w = xv.dim(3), no = wv.dim(0);
  const std::size_t plane = h * w;
  Tensor out({nb, no, h, w});
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t o = 0; o < no; ++o) {
      double* dst = out.data() + (b * no + o) * plane;
      std::fill(dst, dst + plane, bv[o]);
      for (std::size_t c = 0; c < nc; ++c) {
        const double* src = xv.data() + (b * nc + c) * plane;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double k = wv[((o * nc + c) * 3 + ky) * 3 + kx];
            // Output (y, x) reads input (y + ky - 1, x + kx - 1).
            const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
            const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
            for (std::size_t yy = y0; yy < y1; ++yy) {
              const double* srow = src + (yy + ky - 1) * w + (kx - 1);
              double* drow = dst + yy * w;
              for (std::size_t xx = x0; xx < x1; ++xx) drow[xx] += k * srow[xx];
            }
          }
        }
      }
    }
  }
  return x.tape->record(std::move(out), {x, weight, bias},
                        [x, weight, bias, nb, nc, h, w, no](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(weight);
    const std::size_t plane = h * w;
    const bool need_x = t.requires_grad(x);
    const bool need_w = t.requires_grad(weight);
    std::span<double> gx, gw;
    if (need_x) gx = t.grad(x);
    if (need_w) gw = t.grad(weight);
    if (t.requires_grad(bias)) {
      auto gb = t.grad(bias);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < no; ++o) {
          const double* gp = g.data() + (b * no + o) * plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
          gb[o] += acc;
        }
    }
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t o = 0; o < no; ++o) {
        const double* gp = g.data() + (b * no + o) * plane;
        for (std::size_t c = 0; c < nc; ++c) {
          const double* src = xv.data() + (b * nc + c) * plane;
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::size_t widx = ((o * nc + c) * 3 + ky) * 3 + kx;
              const double k = wv[widx];
              const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
              const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
              double acc = 0.0;
              for (std::size_t yy = y0; yy < y1; ++yy) {
                const std::size_t srow = (yy + ky - 1) * w + (kx - 1);
                const double* grow = gp + yy * w;
                if (need_w) {
                  for (std::size_t xx = x0; xx < x1; ++xx) acc += grow[xx] * src[srow + xx];
                }
                if (need_x) {
                  double* gxr = gx.data() + (b * nc + c) * plane + srow;
                  for (std::size_t xx = x0; xx < x1; ++xx) gxr[xx] += k * grow[xx];
                }
              }
              if (need_w) gw[widx] += acc;
            }
          }
        }
      }
    }
  });
}

Var avg_pool_2x2(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "avg_pool_2x2");
  const std::size_t nb = xv.dim(0), nc = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h < 2 || w < 2) throw ShapeError("avg_pool_2x2: input too small " + dims_to_string(xv.dims()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({nb, nc, oh, ow});
  for (std::size_t p = 0; p < nb * nc; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* s = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  }
  return x.tape->record(std::move(out), {x}, [x, nb, nc, h, w, oh, ow](Tape& t, std::span<const double> g, const Tensor&) {
    auto gx = t.grad(x);
    for (std::size_t p = 0; p < nb * nc; ++p) {
      double* dst = gx.data() + p * h * w;
      const double* src = g.data() + p * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * src[y * ow + xx];
          double* d = dst + 2 * y * w + 2 * xx;
          d[0] += v;
          d[1] += v;
          d[w] += v;
          d[w + 1] += v;
        }
    }
  });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "global_avg_pool");
  const std::size_t nb = xv.dim(0), nc = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out({nb, nc});
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t p = 0; p < nb * nc; ++p) {
    const double* src = xv.data() + p * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[p] = acc * inv;
  }
  return x.tape->record(std::move(out), {x}, [x, nb, nc, plane, inv](Tape& t, std::span<const double> g, const Tensor&) {
    auto gx = t.grad(x);
    for (std::size_t p = 0; p < nb * nc; ++p) {
      const double v = g[p] * inv;
      double* d = gx.data() + p * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] += v;
    }
  });
}

}  // namespace gtp
