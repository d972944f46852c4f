#include "apseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "apseg/errors.hpp"
#include "apseg/kernels.hpp"

namespace apseg {

namespace {

template <typename T>
using NodeT = Node<T>;

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw DimensionError(std::string(op) + ": " + what);
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  require(t.defined() && t.rank() == rank, op,
          "expected rank " + std::to_string(rank) + ", got " +
              (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
}

// Parent i wants a gradient.
template <typename T>
bool wants(NodeT<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

template <typename T>
std::vector<T>& gbuf(NodeT<T>& self, std::size_t i) {
  return self.parents[i]->grad_buffer();
}

template <typename T>
const std::vector<T>& val(NodeT<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

template <typename T, typename F, typename D>
Tensor<T> unary_elementwise(const char* op, const Tensor<T>& a, F f, D dfdx_from_xy) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor<T>::from_op(op, a.shape(), std::move(out), {a}, [dfdx_from_xy](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    const auto& x = val(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dfdx_from_xy(x[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul",
          "inner extents disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  kernels::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return Tensor<T>::from_op("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](NodeT<T>& self) {
    if (wants(self, 0))  // dA = dC·Bᵀ
      kernels::gemm(false, true, m, k, n, self.grad.data(), val(self, 1).data(),
                    gbuf(self, 0).data(), true);
    if (wants(self, 1))  // dB = Aᵀ·dC
      kernels::gemm(true, false, k, n, m, val(self, 0).data(), self.grad.data(),
                    gbuf(self, 1).data(), true);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return Tensor<T>::from_op("transpose", {n, m}, std::move(out), {a}, [m, n](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), "reshape",
          shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::from_op("reshape", std::move(shape), std::move(out), {a}, [](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::from_op("add", a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = gbuf(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor<T>::from_op("sub", a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    if (wants(self, 0)) {
      auto& g = gbuf(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = gbuf(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::from_op("mul", a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    if (wants(self, 0)) {
      auto& g = gbuf(self, 0);
      const auto& y = val(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (wants(self, 1)) {
      auto& g = gbuf(self, 1);
      const auto& x = val(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary_elementwise(
      "scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_elementwise(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_elementwise(
      "sigmoid", a,
      [](T x) {
        // Split by sign so exp never overflows.
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sine(const Tensor<T>& a) {
  return unary_elementwise(
      "sine", a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return Tensor<T>::from_op("sum", {1}, {s}, {a}, [](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(n * d);
  auto in = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * d;
    T* o = out.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    T z = 0;
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return Tensor<T>::from_op("softmax_rows", x.shape(), std::move(out), {x}, [n, d](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const T* y = self.value.data() + r * d;
      const T* dy = self.grad.data() + r * d;
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  require_rank(x, 2, "layer_norm_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  require(gamma.numel() == d && beta.numel() == d, "layer_norm_rows", "affine width mismatch");
  std::vector<T> out(n * d);
  auto xhat = std::make_shared<std::vector<T>>(n * d);
  auto inv_std = std::make_shared<std::vector<T>>(n);
  auto in = x.data();
  auto ga = gamma.data();
  auto be = beta.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = ga[j] * h + be[j];
    }
  }
  return Tensor<T>::from_op(
      "layer_norm_rows", x.shape(), std::move(out), {x, gamma, beta},
      [n, d, xhat, inv_std](NodeT<T>& self) {
        const auto& ga = val(self, 1);
        if (wants(self, 1)) {
          auto& g = gbuf(self, 1);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j] * (*xhat)[r * d + j];
        }
        if (wants(self, 2)) {
          auto& g = gbuf(self, 2);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
        }
        if (wants(self, 0)) {
          auto& g = gbuf(self, 0);
          for (std::size_t r = 0; r < n; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = self.grad[r * d + j] * ga[j];
              m1 += dh;
              m2 += dh * (*xhat)[r * d + j];
            }
            m1 /= static_cast<T>(d);
            m2 /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = self.grad[r * d + j] * ga[j];
              g[r * d + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  require(w.dim(0) == in, "linear",
          "input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  require(b.numel() == out_dim, "linear", "bias width mismatch");
  std::vector<T> out(n * out_dim);
  for (std::size_t r = 0; r < n; ++r)
    std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<long>(r * out_dim));
  kernels::gemm(false, false, n, out_dim, in, x.data().data(), w.data().data(), out.data(), true);
  return Tensor<T>::from_op(
      "linear", {n, out_dim}, std::move(out), {x, w, b}, [n, in, out_dim](NodeT<T>& self) {
        if (wants(self, 0))
          kernels::gemm(false, true, n, in, out_dim, self.grad.data(), val(self, 1).data(),
                        gbuf(self, 0).data(), true);
        if (wants(self, 1))
          kernels::gemm(true, false, in, out_dim, n, val(self, 0).data(), self.grad.data(),
                        gbuf(self, 1).data(), true);
        if (wants(self, 2)) {
          auto& g = gbuf(self, 2);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[r * out_dim + j];
        }
      });
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(x, 3, "conv1x1");
  require_rank(w, 2, "conv1x1");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
  const std::size_t hw = h * wd;
  require(w.dim(1) == cin, "conv1x1",
          "channel mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
  require(bias.numel() == cout, "conv1x1", "bias width mismatch");
  std::vector<T> out(cout * hw);
  for (std::size_t c = 0; c < cout; ++c)
    std::fill(out.begin() + static_cast<long>(c * hw), out.begin() + static_cast<long>((c + 1) * hw),
              bias.data()[c]);
  kernels::gemm(false, false, cout, hw, cin, w.data().data(), x.data().data(), out.data(), true);
  return Tensor<T>::from_op(
      "conv1x1", {cout, h, wd}, std::move(out), {x, w, bias}, [cin, cout, hw](NodeT<T>& self) {
        if (wants(self, 0))  // dX = Wᵀ·dY
          kernels::gemm(true, false, cin, hw, cout, val(self, 1).data(), self.grad.data(),
                        gbuf(self, 0).data(), true);
        if (wants(self, 1))  // dW = dY·Xᵀ
          kernels::gemm(false, true, cout, cin, hw, self.grad.data(), val(self, 0).data(),
                        gbuf(self, 1).data(), true);
        if (wants(self, 2)) {
          auto& g = gbuf(self, 2);
          for (std::size_t c = 0; c < cout; ++c) {
            T s = 0;
            for (std::size_t p = 0; p < hw; ++p) s += self.grad[c * hw + p];
            g[c] += s;
          }
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat", "no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require(p.rank() >= 1 && Shape(p.shape().begin() + 1, p.shape().end()) == tail, "concat",
            "trailing extents disagree: " + shape_str(p.shape()));
    offsets.push_back(lead * shape_numel(tail));
    lead += p.dim(0);
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<T> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor<T>::from_op("concat", std::move(shape), std::move(out), parts,
                            [offsets](NodeT<T>& self) {
                              for (std::size_t p = 0; p < offsets.size(); ++p) {
                                if (!wants(self, p)) continue;
                                auto& g = gbuf(self, p);
                                for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += self.grad[offsets[p] + i];
                              }
                            });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require(x.rank() >= 1 && begin + count <= x.dim(0), "slice_rows", "range out of bounds");
  Shape shape = x.shape();
  shape[0] = count;
  const std::size_t stride = x.numel() / x.dim(0);
  const std::size_t off = begin * stride;
  std::vector<T> out(x.data().begin() + static_cast<long>(off),
                     x.data().begin() + static_cast<long>(off + count * stride));
  return Tensor<T>::from_op("slice_rows", std::move(shape), std::move(out), {x}, [off](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::uint32_t> idx) {
  require_rank(x, 2, "gather_rows");
  const std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<std::uint32_t> rows(idx.begin(), idx.end());
  std::vector<T> out(rows.size() * d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < m, "gather_rows", "row index out of range");
    std::copy_n(x.data().begin() + static_cast<long>(rows[r] * d), d,
                out.begin() + static_cast<long>(r * d));
  }
  return Tensor<T>::from_op("gather_rows", {rows.size(), d}, std::move(out), {x},
                            [rows, d](NodeT<T>& self) {
                              auto& g = gbuf(self, 0);
                              for (std::size_t r = 0; r < rows.size(); ++r)
                                for (std::size_t j = 0; j < d; ++j)
                                  g[rows[r] * d + j] += self.grad[r * d + j];
                            });
}

template <typename T>
Tensor<T> masked_average_pool(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  require_rank(x, 3, "masked_average_pool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  require(mask.size() == hw, "masked_average_pool",
          "mask has " + std::to_string(mask.size()) + " cells, map " + shape_str(x.shape()));
  std::vector<std::uint32_t> sel;
  for (std::size_t p = 0; p < hw; ++p)
    if (mask[p]) sel.push_back(static_cast<std::uint32_t>(p));
  std::vector<T> out(c, T(0));
  if (!sel.empty()) {
    const T inv = T(1) / static_cast<T>(sel.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* plane = x.data().data() + ch * hw;
      T s = 0;
      for (auto p : sel) s += plane[p];
      out[ch] = s * inv;
    }
  }
  return Tensor<T>::from_op("masked_average_pool", {c}, std::move(out), {x},
                            [sel, c, hw](NodeT<T>& self) {
                              if (sel.empty()) return;
                              auto& g = gbuf(self, 0);
                              const T inv = T(1) / static_cast<T>(sel.size());
                              for (std::size_t ch = 0; ch < c; ++ch)
                                for (auto p : sel) g[ch * hw + p] += self.grad[ch] * inv;
                            });
}

template <typename T>
Tensor<T> tile_spatial(const Tensor<T>& v, std::size_t h, std::size_t w) {
  require_rank(v, 1, "tile_spatial");
  require(h > 0 && w > 0, "tile_spatial", "zero-size target");
  const std::size_t c = v.dim(0), hw = h * w;
  std::vector<T> out(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch)
    std::fill(out.begin() + static_cast<long>(ch * hw), out.begin() + static_cast<long>((ch + 1) * hw),
              v.data()[ch]);
  return Tensor<T>::from_op("tile_spatial", {c, h, w}, std::move(out), {v}, [c, hw](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = 0;
      for (std::size_t p = 0; p < hw; ++p) s += self.grad[ch * hw + p];
      g[ch] += s;
    }
  });
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_rank(x, 3, "bilinear_resize");
  require(oh > 0 && ow > 0, "bilinear_resize", "zero-size target");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (oh == h && ow == w) return x;
  std::vector<T> out(c * oh * ow);
  kernels::bilinear_resize(c, h, w, oh, ow, x.data().data(), out.data());
  return Tensor<T>::from_op("bilinear_resize", {c, oh, ow}, std::move(out), {x},
                            [c, h, w, oh, ow](NodeT<T>& self) {
                              kernels::bilinear_resize_backward(c, h, w, oh, ow, self.grad.data(),
                                                                gbuf(self, 0).data());
                            });
}

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  require_rank(x, 3, "adaptive_avg_pool");
  require(oh > 0 && ow > 0, "adaptive_avg_pool", "zero-size target");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (oh == h && ow == w) return x;
  std::vector<T> out(c * oh * ow);
  kernels::adaptive_avg_pool(c, h, w, oh, ow, x.data().data(), out.data());
  return Tensor<T>::from_op(
      "adaptive_avg_pool", {c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](NodeT<T>& self) {
        auto& g = gbuf(self, 0);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto y0 = kernels::pool_bin_begin(oy, h, oh), y1 = kernels::pool_bin_end(oy, h, oh);
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto x0 = kernels::pool_bin_begin(ox, w, ow), x1 = kernels::pool_bin_end(ox, w, ow);
              const T gv = self.grad[(ch * oh + oy) * ow + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
              for (auto y = y0; y < y1; ++y)
                for (auto xx = x0; xx < x1; ++xx) g[(ch * h + y) * w + xx] += gv;
            }
          }
      });
}

template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "cosine_matrix");
  require_rank(b, 2, "cosine_matrix");
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  require(b.dim(1) == d, "cosine_matrix", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const T eps = static_cast<T>(kCosineEps);
  std::vector<T> out(m * n);
  kernels::cosine_matrix(m, n, d, a.data().data(), b.data().data(), out.data(), eps);
  return Tensor<T>::from_op("cosine_matrix", {m, n}, std::move(out), {a, b}, [m, n, d, eps](NodeT<T>& self) {
    const auto& av = val(self, 0);
    const auto& bv = val(self, 1);
    std::vector<T> na(m), nb(n);
    for (std::size_t i = 0; i < m; ++i) {
      T s = 0;
      for (std::size_t k = 0; k < d; ++k) s += av[i * d + k] * av[i * d + k];
      na[i] = std::sqrt(s);
    }
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t k = 0; k < d; ++k) s += bv[j * d + k] * bv[j * d + k];
      nb[j] = std::sqrt(s);
    }
    // S = dot/D with D = |a||b| + eps.
    //   dS/da = b/D - dot·|b|·a/(|a| D²)   (and symmetrically for b)
    std::vector<T> alpha(m * n), beta_a(m, T(0)), beta_b(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T D = na[i] * nb[j] + eps;
        const T g = self.grad[i * n + j];
        const T dot = self.value[i * n + j] * D;
        alpha[i * n + j] = g / D;
        const T common = g * dot / (D * D);
        if (na[i] > T(0)) beta_a[i] += common * nb[j] / na[i];
        if (nb[j] > T(0)) beta_b[j] += common * na[i] / nb[j];
      }
    if (wants(self, 0)) {
      auto& g = gbuf(self, 0);
      kernels::gemm(false, false, m, d, n, alpha.data(), bv.data(), g.data(), true);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) g[i * d + k] -= beta_a[i] * av[i * d + k];
    }
    if (wants(self, 1)) {
      auto& g = gbuf(self, 1);
      kernels::gemm(true, false, n, d, m, alpha.data(), av.data(), g.data(), true);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < d; ++k) g[j * d + k] -= beta_b[j] * bv[j * d + k];
    }
  });
}

template <typename T>
Tensor<T> cosine_map(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 1, "cosine_map");
  require_rank(b, 3, "cosine_map");
  const std::size_t c = b.dim(0), h = b.dim(1), w = b.dim(2);
  require(a.dim(0) == c, "cosine_map", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto locations = transpose(reshape(b, {c, h * w}));
  return reshape(cosine_matrix(reshape(a, {1, c}), locations), {h, w});
}

template <typename T>
Tensor<T> normalize_columns(const Tensor<T>& a) {
  require_rank(a, 2, "normalize_columns");
  const std::size_t c = a.dim(0), n = a.dim(1);
  const T eps = static_cast<T>(kCosineEps);
  std::vector<T> norms(n, T(0));
  auto x = a.data();
  for (std::size_t j = 0; j < n; ++j) {
    T s = 0;
    for (std::size_t i = 0; i < c; ++i) s += x[i * n + j] * x[i * n + j];
    norms[j] = std::sqrt(s);
  }
  std::vector<T> out(c * n);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / std::max(norms[j], eps);
  return Tensor<T>::from_op("normalize_columns", a.shape(), std::move(out), {a},
                            [c, n, eps, norms](NodeT<T>& self) {
                              auto& g = gbuf(self, 0);
                              const auto& x = val(self, 0);
                              for (std::size_t j = 0; j < n; ++j) {
                                // Below the clamp the column is only scaled.
                                const bool clamped = !(norms[j] > eps);
                                const T den = clamped ? eps : norms[j];
                                T dot = 0;
                                for (std::size_t i = 0; i < c; ++i)
                                  dot += x[i * n + j] * self.grad[i * n + j];
                                const T corr = clamped ? T(0) : dot / (den * den * den);
                                for (std::size_t i = 0; i < c; ++i)
                                  g[i * n + j] += self.grad[i * n + j] / den - x[i * n + j] * corr;
                              }
                            });
}

template <typename T>
Tensor<T> row_max(const Tensor<T>& x) {
  require_rank(x, 2, "row_max");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(n > 0, "row_max", "empty rows");
  std::vector<std::uint32_t> arg(m);
  kernels::row_argmax(m, n, x.data().data(), arg.data());
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = x.data()[i * n + arg[i]];
  return Tensor<T>::from_op("row_max", {m}, std::move(out), {x}, [arg, n](NodeT<T>& self) {
    auto& g = gbuf(self, 0);
    for (std::size_t i = 0; i < arg.size(); ++i) g[i * n + arg[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> minmax_normalize(const Tensor<T>& v) {
  const std::size_t n = v.numel();
  require(n > 0, "minmax_normalize", "empty input");
  auto x = v.data();
  std::size_t imin = 0, imax = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] < x[imin]) imin = i;
    if (x[i] > x[imax]) imax = i;
  }
  const T lo = x[imin], range = x[imax] - x[imin];
  if (!(range > static_cast<T>(kConstantRangeTol))) return Tensor<T>::full(v.shape(), T(0.5));
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - lo) / range;
  return Tensor<T>::from_op("minmax_normalize", v.shape(), std::move(out), {v},
                            [imin, imax, n](NodeT<T>& self) {
                              auto& g = gbuf(self, 0);
                              const auto& x = val(self, 0);
                              const T lo = x[imin], hi = x[imax], r = hi - lo;
                              T to_min = 0, to_max = 0;
                              for (std::size_t i = 0; i < n; ++i) {
                                const T dy = self.grad[i];
                                g[i] += dy / r;
                                to_min += dy * (x[i] - hi) / (r * r);
                                to_max -= dy * (x[i] - lo) / (r * r);
                              }
                              g[imin] += to_min;
                              g[imax] += to_max;
                            });
}

template <typename T>
Tensor<T> soft_dice(const Tensor<T>& prob, std::span<const T> target, T smooth) {
  require(prob.numel() == target.size(), "soft_dice",
          "prediction " + shape_str(prob.shape()) + " vs target of " + std::to_string(target.size()));
  T inter = 0, psum = 0, gsum = 0;
  auto p = prob.data();
  for (std::size_t i = 0; i < target.size(); ++i) {
    inter += p[i] * target[i];
    psum += p[i];
    gsum += target[i];
  }
  const T num = T(2) * inter + smooth, den = psum + gsum + smooth;
  std::vector<T> tgt(target.begin(), target.end());
  return Tensor<T>::from_op("soft_dice", {1}, {T(1) - num / den}, {prob},
                            [tgt = std::move(tgt), num, den](NodeT<T>& self) {
                              auto& g = gbuf(self, 0);
                              const T d2 = den * den;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] -= self.grad[0] * (T(2) * tgt[i] * den - num) / d2;
                            });
}

namespace {

template <typename T>
Tensor<T> pinv2_impl(const Tensor<T>& p, double lambda, bool auto_lambda, PinvInfo* info) {
  require_rank(p, 2, "pinv2");
  require(p.dim(1) == 2, "pinv2", "expected c×2, got " + shape_str(p.shape()));
  const std::size_t c = p.dim(0);
  auto x = p.data();
  double g11 = 0, g12 = 0, g22 = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const double a = x[i * 2], b = x[i * 2 + 1];
    g11 += a * a;
    g12 += a * b;
    g22 += b * b;
  }
  const double half_tr = 0.5 * (g11 + g22);
  const double disc = std::sqrt(0.25 * (g11 - g22) * (g11 - g22) + g12 * g12);
  const double lmax = half_tr + disc, lmin = half_tr - disc;
  const double cond = lmin > 0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (auto_lambda) lambda = cond > kPinvConditionLimit ? 1e-6 * half_tr : 0.0;
  if (info) *info = {cond, lambda};
  const double r11 = g11 + lambda, r22 = g22 + lambda;
  const double det = r11 * r22 - g12 * g12;
  if (!(det > 0)) throw NumericError("pinv2: singular PᵀP (det " + std::to_string(det) + ")");
  const double i11 = r22 / det, i12 = -g12 / det, i22 = r11 / det;
  std::vector<T> out(2 * c);
  for (std::size_t i = 0; i < c; ++i) {
    const double a = x[i * 2], b = x[i * 2 + 1];
    out[i] = static_cast<T>(i11 * a + i12 * b);
    out[c + i] = static_cast<T>(i12 * a + i22 * b);
  }
  return Tensor<T>::constant({2, c}, std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> pinv2(const Tensor<T>& p, double lambda, PinvInfo* info) {
  return pinv2_impl(p, lambda, false, info);
}

template <typename T>
Tensor<T> pinv2_auto(const Tensor<T>& p, PinvInfo* info) {
  return pinv2_impl(p, 0.0, true, info);
}

#define APSEG_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                               \
  template Tensor<T> sine(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template Tensor<T> layer_norm_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> conv1x1(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::uint32_t>);           \
  template Tensor<T> masked_average_pool(const Tensor<T>&, std::span<const std::uint8_t>);    \
  template Tensor<T> tile_spatial(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);             \
  template Tensor<T> adaptive_avg_pool(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> cosine_matrix(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> cosine_map(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> normalize_columns(const Tensor<T>&);                                     \
  template Tensor<T> row_max(const Tensor<T>&);                                               \
  template Tensor<T> minmax_normalize(const Tensor<T>&);                                      \
  template Tensor<T> soft_dice(const Tensor<T>&, std::span<const T>, T);                      \
  template Tensor<T> pinv2(const Tensor<T>&, double, PinvInfo*);                              \
  template Tensor<T> pinv2_auto(const Tensor<T>&, PinvInfo*);

APSEG_INSTANTIATE_OPS(float)
APSEG_INSTANTIATE_OPS(double)

}  // namespace apseg
