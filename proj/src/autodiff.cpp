// Copyright 2026 The ldmrb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ldmrb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ldmrb/error.hpp"

namespace ldmrb::ad {

namespace {

std::size_t product(const std::vector<int>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

void check(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::ShapeMismatch, what);
}

}  // namespace

Tensor::Tensor(std::vector<int> d, double fill) : dims(std::move(d)), data(product(dims), fill) {}

Tensor::Tensor(std::vector<int> d, std::vector<double> values)
    : dims(std::move(d)), data(std::move(values)) {
  check(data.size() == product(dims), "tensor data does not match dims");
}

// --- tape --------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, record_, {}});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::emit(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  if (record_)
    for (Var p : parents) needs = needs || nodes_[static_cast<std::size_t>(p.id)].requires_grad;
  Node node{std::move(value), {}, needs, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, std::span<const double> g) {
  auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (!node.requires_grad) return;
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tape::accumulate_at(Var v, std::size_t i, double g) {
  auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (!node.requires_grad) return;
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  node.grad[i] += g;
}

void Tape::backward(Var root) {
  if (!record_) fail(ErrorCode::NonDifferentiable, "tape was created without recording");
  auto& r = nodes_.at(static_cast<std::size_t>(root.id));
  check(r.value.size() == 1, "backward root must be a scalar");
  if (!r.requires_grad) return;
  r.grad.assign(1, 1.0);
  for (std::size_t i = static_cast<std::size_t>(root.id) + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    // Copy out: the closure may grow other nodes' grads but never this vector's size.
    const Tensor upstream(node.value.dims, node.grad);
    node.backward(*this, upstream);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_.at(static_cast<std::size_t>(v.id));
  if (node.grad.empty()) return Tensor(node.value.dims, 0.0);
  return Tensor(node.value.dims, node.grad);
}

// --- convolution ---------------------------------------------------------------

Var conv2d(Tape& t, Var xv, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  const Tensor& x = t.value(xv);
  check(x.rank() == 3 && weight.rank() == 4, "conv2d expects [C,H,W] input and [O,C,k,k] weight");
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = weight.dim(0), k = weight.dim(2);
  check(weight.dim(1) == cin && weight.dim(3) == k, "conv2d weight/input channel mismatch");
  check(bias.size() == static_cast<std::size_t>(cout), "conv2d bias size mismatch");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  Tensor y({cout, oh, ow});
  for (int o = 0; o < cout; ++o) {
    double* yo = &y.data[static_cast<std::size_t>(o) * oh * ow];
    std::fill(yo, yo + oh * ow, bias.data[static_cast<std::size_t>(o)]);
    for (int c = 0; c < cin; ++c) {
      const double* xc = &x.data[static_cast<std::size_t>(c) * h * w];
      const double* wk = &weight.data[(static_cast<std::size_t>(o) * cin + c) * k * k];
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (int ki = 0; ki < k; ++ki) {
            const int yi = i * stride - pad + ki;
            if (yi < 0 || yi >= h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int xj = j * stride - pad + kj;
              if (xj < 0 || xj >= w) continue;
              acc += wk[ki * k + kj] * xc[yi * w + xj];
            }
          }
          yo[i * ow + j] += acc;
        }
      }
    }
  }
  const Tensor* wp = &weight;
  return t.emit(std::move(y), {xv}, [xv, wp, cin, h, w, cout, k, oh, ow, stride, pad](Tape& tp, const Tensor& g) {
    std::vector<double> gx(static_cast<std::size_t>(cin) * h * w, 0.0);
    for (int o = 0; o < cout; ++o) {
      const double* go = &g.data[static_cast<std::size_t>(o) * oh * ow];
      for (int c = 0; c < cin; ++c) {
        double* gxc = &gx[static_cast<std::size_t>(c) * h * w];
        const double* wk = &wp->data[(static_cast<std::size_t>(o) * cin + c) * k * k];
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            const double gij = go[i * ow + j];
            if (gij == 0.0) continue;
            for (int ki = 0; ki < k; ++ki) {
              const int yi = i * stride - pad + ki;
              if (yi < 0 || yi >= h) continue;
              for (int kj = 0; kj < k; ++kj) {
                const int xj = j * stride - pad + kj;
                if (xj < 0 || xj >= w) continue;
                gxc[yi * w + xj] += wk[ki * k + kj] * gij;
              }
            }
          }
        }
      }
    }
    tp.accumulate(xv, gx);
  });
}

// --- elementwise ---------------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  check(x.size() == y.size(), "add: size mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += y.data[i];
  return t.emit(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g.data);
    tp.accumulate(b, g.data);
  });
}

Var add_const(Tape& t, Var a, const Tensor& c) {
  const Tensor& x = t.value(a);
  check(x.size() == c.size(), "add_const: size mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += c.data[i];
  return t.emit(std::move(out), {a}, [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g.data); });
}

Var add_channel_const(Tape& t, Var a, const std::vector<double>& c) {
  const Tensor& x = t.value(a);
  check(x.rank() == 3 && static_cast<std::size_t>(x.dim(0)) == c.size(), "add_channel_const: shape");
  Tensor out = x;
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  for (std::size_t ch = 0; ch < c.size(); ++ch)
    for (std::size_t i = 0; i < plane; ++i) out.data[ch * plane + i] += c[ch];
  return t.emit(std::move(out), {a}, [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g.data); });
}

Var axpby(Tape& t, double alpha, Var a, double beta, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  check(x.size() == y.size(), "axpby: size mismatch");
  Tensor out(x.dims);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = alpha * x.data[i] + beta * y.data[i];
  return t.emit(std::move(out), {a, b}, [a, b, alpha, beta](Tape& tp, const Tensor& g) {
    std::vector<double> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = alpha * g.data[i];
      gb[i] = beta * g.data[i];
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& v : out.data) v *= s;
  return t.emit(std::move(out), {a}, [a, s](Tape& tp, const Tensor& g) {
    std::vector<double> ga(g.data);
    for (double& v : ga) v *= s;
    tp.accumulate(a, ga);
  });
}

Var mul_const(Tape& t, Var a, const Tensor& c) {
  const Tensor& x = t.value(a);
  check(x.size() == c.size(), "mul_const: size mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= c.data[i];
  // masks are often temporaries, so keep a copy
  return t.emit(std::move(out), {a}, [a, cd = c.data](Tape& tp, const Tensor& g) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g.data[i] * cd[i];
    tp.accumulate(a, ga);
  });
}

namespace {

// Pointwise op where the derivative is expressed in terms of input x and output y.
template <class F, class DF>
Var pointwise(Tape& t, Var a, F f, DF df) {
  const Tensor& x = t.value(a);
  Tensor out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  return t.emit(std::move(out), {a}, [a, df](Tape& tp, const Tensor& g) {
    const Tensor& xin = tp.value(a);
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g.data[i] * df(xin.data[i]);
    tp.accumulate(a, ga);
  });
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

}  // namespace

Var tanh(Tape& t, Var a) {
  return pointwise(t, a, [](double x) { return std::tanh(x); },
                   [](double x) {
                     const double y = std::tanh(x);
                     return 1.0 - y * y;
                   });
}

Var silu(Tape& t, Var a) {
  return pointwise(t, a, [](double x) { return x * sigmoid_scalar(x); },
                   [](double x) {
                     const double s = sigmoid_scalar(x);
                     return s * (1.0 + x * (1.0 - s));
                   });
}

Var sigmoid(Tape& t, Var a) {
  return pointwise(t, a, sigmoid_scalar, [](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

Var gelu(Tape& t, Var a) {
  return pointwise(
      t, a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); },
      [](double x) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

// --- reshaping -------------------------------------------------------------------

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  check(x.rank() == 3 && y.rank() == 3 && x.dim(1) == y.dim(1) && x.dim(2) == y.dim(2),
        "concat_channels: spatial mismatch");
  Tensor out({x.dim(0) + y.dim(0), x.dim(1), x.dim(2)});
  std::copy(x.data.begin(), x.data.end(), out.data.begin());
  std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(x.size()));
  const std::size_t na = x.size();
  return t.emit(std::move(out), {a, b}, [a, b, na](Tape& tp, const Tensor& g) {
    tp.accumulate(a, std::span<const double>(g.data).subspan(0, na));
    tp.accumulate(b, std::span<const double>(g.data).subspan(na));
  });
}

Var slice_channels(Tape& t, Var a, int first, int count) {
  const Tensor& x = t.value(a);
  check(x.rank() == 3 && first >= 0 && first + count <= x.dim(0), "slice_channels: range");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out({count, x.dim(1), x.dim(2)});
  const auto begin = x.data.begin() + static_cast<std::ptrdiff_t>(first * plane);
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(count * plane), out.data.begin());
  const std::size_t offset = first * plane;
  const std::size_t total = x.size();
  return t.emit(std::move(out), {a}, [a, offset, total](Tape& tp, const Tensor& g) {
    std::vector<double> ga(total, 0.0);
    std::copy(g.data.begin(), g.data.end(), ga.begin() + static_cast<std::ptrdiff_t>(offset));
    tp.accumulate(a, ga);
  });
}

Var concat_flat(Tape& t, std::span<const Var> parts) {
  check(!parts.empty(), "concat_flat: no parts");
  std::size_t total = 0;
  for (Var p : parts) total += t.value(p).size();
  Tensor out({static_cast<int>(total)});
  std::size_t at = 0;
  std::vector<std::pair<Var, std::size_t>> offsets;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at));
    offsets.emplace_back(p, at);
    at += v.size();
  }
  // emit() wants an initializer_list of parents; any differentiable part suffices
  // to mark the result, so check them all up front.
  bool needs = false;
  for (Var p : parts) needs = needs || t.requires_grad(p);
  const Var marker = needs ? *std::find_if(parts.begin(), parts.end(),
                                           [&](Var p) { return t.requires_grad(p); })
                           : parts.front();
  return t.emit(std::move(out), {marker}, [offsets](Tape& tp, const Tensor& g) {
    for (const auto& [p, off] : offsets) {
      const std::size_t n = tp.value(p).size();
      tp.accumulate(p, std::span<const double>(g.data).subspan(off, n));
    }
  });
}

Var upsample2(Tape& t, Var a) {
  const Tensor& x = t.value(a);
  check(x.rank() == 3, "upsample2 expects [C,H,W]");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        out.data[(static_cast<std::size_t>(ch) * 2 * h + i) * 2 * w + j] =
            x.data[(static_cast<std::size_t>(ch) * h + i / 2) * w + j / 2];
  return t.emit(std::move(out), {a}, [a, c, h, w](Tape& tp, const Tensor& g) {
    std::vector<double> ga(static_cast<std::size_t>(c) * h * w, 0.0);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
          ga[(static_cast<std::size_t>(ch) * h + i / 2) * w + j / 2] +=
              g.data[(static_cast<std::size_t>(ch) * 2 * h + i) * 2 * w + j];
    tp.accumulate(a, ga);
  });
}

Var to_tokens(Tape& t, Var a) {
  const Tensor& x = t.value(a);
  check(x.rank() == 3, "to_tokens expects [C,H,W]");
  const int c = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor out({n, c});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < n; ++p)
      out.data[static_cast<std::size_t>(p) * c + ch] = x.data[static_cast<std::size_t>(ch) * n + p];
  return t.emit(std::move(out), {a}, [a, c, n](Tape& tp, const Tensor& g) {
    std::vector<double> ga(static_cast<std::size_t>(c) * n);
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < n; ++p)
        ga[static_cast<std::size_t>(ch) * n + p] = g.data[static_cast<std::size_t>(p) * c + ch];
    tp.accumulate(a, ga);
  });
}

Var from_tokens(Tape& t, Var a, int height, int width) {
  const Tensor& x = t.value(a);
  check(x.rank() == 2 && x.dim(0) == height * width, "from_tokens: token count mismatch");
  const int c = x.dim(1), n = x.dim(0);
  Tensor out({c, height, width});
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < n; ++p)
      out.data[static_cast<std::size_t>(ch) * n + p] = x.data[static_cast<std::size_t>(p) * c + ch];
  return t.emit(std::move(out), {a}, [a, c, n](Tape& tp, const Tensor& g) {
    std::vector<double> ga(static_cast<std::size_t>(c) * n);
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < n; ++p)
        ga[static_cast<std::size_t>(p) * c + ch] = g.data[static_cast<std::size_t>(ch) * n + p];
    tp.accumulate(a, ga);
  });
}

// --- matrix products -----------------------------------------------------------

Var linear(Tape& t, Var av, const Tensor& w, const Tensor* bias) {
  const Tensor& a = t.value(av);
  check(a.rank() == 2 && w.rank() == 2 && a.dim(1) == w.dim(0), "linear: shape mismatch");
  const int n = a.dim(0), k = a.dim(1), m = w.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    double* row = &out.data[static_cast<std::size_t>(i) * m];
    if (bias) std::copy(bias->data.begin(), bias->data.end(), row);
    for (int p = 0; p < k; ++p) {
      const double aip = a.data[static_cast<std::size_t>(i) * k + p];
      const double* wrow = &w.data[static_cast<std::size_t>(p) * m];
      for (int j = 0; j < m; ++j) row[j] += aip * wrow[j];
    }
  }
  const Tensor* wp = &w;
  return t.emit(std::move(out), {av}, [av, wp, n, k, m](Tape& tp, const Tensor& g) {
    std::vector<double> ga(static_cast<std::size_t>(n) * k, 0.0);
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* wrow = &wp->data[static_cast<std::size_t>(p) * m];
        const double* grow = &g.data[static_cast<std::size_t>(i) * m];
        for (int j = 0; j < m; ++j) acc += grow[j] * wrow[j];
        ga[static_cast<std::size_t>(i) * k + p] = acc;
      }
    tp.accumulate(av, ga);
  });
}

Var matmul_nt(Tape& t, Var av, Var bv) {
  const Tensor& a = t.value(av);
  const Tensor& b = t.value(bv);
  check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), "matmul_nt: shape mismatch");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(0);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += a.data[static_cast<std::size_t>(i) * k + p] * b.data[static_cast<std::size_t>(j) * k + p];
      out.data[static_cast<std::size_t>(i) * m + j] = acc;
    }
  return t.emit(std::move(out), {av, bv}, [av, bv, n, k, m](Tape& tp, const Tensor& g) {
    const Tensor& a2 = tp.value(av);
    const Tensor& b2 = tp.value(bv);
    if (tp.requires_grad(av)) {
      std::vector<double> ga(static_cast<std::size_t>(n) * k, 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const double gij = g.data[static_cast<std::size_t>(i) * m + j];
          for (int p = 0; p < k; ++p) ga[static_cast<std::size_t>(i) * k + p] += gij * b2.data[static_cast<std::size_t>(j) * k + p];
        }
      tp.accumulate(av, ga);
    }
    if (tp.requires_grad(bv)) {
      std::vector<double> gb(static_cast<std::size_t>(m) * k, 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const double gij = g.data[static_cast<std::size_t>(i) * m + j];
          for (int p = 0; p < k; ++p) gb[static_cast<std::size_t>(j) * k + p] += gij * a2.data[static_cast<std::size_t>(i) * k + p];
        }
      tp.accumulate(bv, gb);
    }
  });
}

Var matmul(Tape& t, Var av, Var bv) {
  const Tensor& a = t.value(av);
  const Tensor& b = t.value(bv);
  check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul: shape mismatch");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = a.data[static_cast<std::size_t>(i) * k + p];
      for (int j = 0; j < m; ++j)
        out.data[static_cast<std::size_t>(i) * m + j] += aip * b.data[static_cast<std::size_t>(p) * m + j];
    }
  return t.emit(std::move(out), {av, bv}, [av, bv, n, k, m](Tape& tp, const Tensor& g) {
    const Tensor& a2 = tp.value(av);
    const Tensor& b2 = tp.value(bv);
    if (tp.requires_grad(av)) {
      std::vector<double> ga(static_cast<std::size_t>(n) * k, 0.0);
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          for (int j = 0; j < m; ++j)
            acc += g.data[static_cast<std::size_t>(i) * m + j] * b2.data[static_cast<std::size_t>(p) * m + j];
          ga[static_cast<std::size_t>(i) * k + p] = acc;
        }
      tp.accumulate(av, ga);
    }
    if (tp.requires_grad(bv)) {
      std::vector<double> gb(static_cast<std::size_t>(k) * m, 0.0);
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          const double aip = a2.data[static_cast<std::size_t>(i) * k + p];
          for (int j = 0; j < m; ++j)
            gb[static_cast<std::size_t>(p) * m + j] += aip * g.data[static_cast<std::size_t>(i) * m + j];
        }
      tp.accumulate(bv, gb);
    }
  });
}

Var softmax_rows(Tape& t, Var av) {
  const Tensor& a = t.value(av);
  check(a.rank() == 2, "softmax_rows expects a matrix");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    const double* row = &a.data[static_cast<std::size_t>(i) * m];
    double* o = &out.data[static_cast<std::size_t>(i) * m];
    const double mx = *std::max_element(row, row + m);
    double sum = 0.0;
    for (int j = 0; j < m; ++j) sum += (o[j] = std::exp(row[j] - mx));
    for (int j = 0; j < m; ++j) o[j] /= sum;
  }
  const Var self{static_cast<int>(t.node_count())};
  return t.emit(std::move(out), {av}, [av, self, n, m](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    std::vector<double> ga(static_cast<std::size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
      const double* yr = &y.data[static_cast<std::size_t>(i) * m];
      const double* gr = &g.data[static_cast<std::size_t>(i) * m];
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += yr[j] * gr[j];
      for (int j = 0; j < m; ++j) ga[static_cast<std::size_t>(i) * m + j] = yr[j] * (gr[j] - dot);
    }
    tp.accumulate(av, ga);
  });
}

// --- reductions ------------------------------------------------------------------

Var l2_distance(Tape& t, Var av, std::span<const double> ref) {
  const Tensor& a = t.value(av);
  check(a.size() == ref.size(), "l2_distance: size mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = a.data[i] - ref[i];
    sq += d * d;
  }
  const double dist = std::sqrt(sq);
  std::vector<double> r(ref.begin(), ref.end());
  return t.emit(Tensor({1}, {dist}), {av}, [av, r = std::move(r), dist](Tape& tp, const Tensor& g) {
    if (dist == 0.0) return;
    const Tensor& x = tp.value(av);
    std::vector<double> ga(r.size());
    const double s = g.data[0] / dist;
    for (std::size_t i = 0; i < r.size(); ++i) ga[i] = s * (x.data[i] - r[i]);
    tp.accumulate(av, ga);
  });
}

Var sum_scalars(Tape& t, std::span<const Var> scalars) {
  check(!scalars.empty(), "sum_scalars: empty");
  Var acc = scalars.front();
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(t, acc, scalars[i]);
  return acc;
}

}  // namespace ldmrb::ad
