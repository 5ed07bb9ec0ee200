// SPDX-License-Identifier: Apache-2.0
#include "hialign/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "hialign/errors.hpp"
#include "hialign/kernels.hpp"

namespace hialign::ops {

namespace {

std::atomic<std::size_t> g_bce_clamps{0};

Tape& tape_of(Var v) {
  if (!v.valid()) throw ContractError("operation on an unbound variable");
  return *v.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

void axpy(Tensor& dst, const Tensor& src, double alpha = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha * s[i];
}

// outer * n * inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor softmax_value(const Tensor& x, std::size_t axis, double inv_tau) {
  const auto s = split_axis(x.shape(), axis);
  Tensor y(x.shape());
  if (s.inner == 1) {
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * inv_tau;
    kernels::softmax_rows(y.data(), s.outer, s.n);
    return y;
  }
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner] * inv_tau);
      double sum = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(x[base + j * s.inner] * inv_tau - mx);
        y[base + j * s.inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) y[base + j * s.inner] /= sum;
    }
  }
  return y;
}

// Gradient of softmax w.r.t. its (scaled) logits: y * (g - sum_axis(g * y)).
Tensor softmax_backward(const Tensor& y, const Tensor& g, std::size_t axis) {
  const auto s = split_axis(y.shape(), axis);
  Tensor dz(y.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double dot = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
      for (std::size_t j = 0; j < s.n; ++j) {
        const std::size_t idx = base + j * s.inner;
        dz[idx] = y[idx] * (g[idx] - dot);
      }
    }
  }
  return dz;
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  kernels::gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

}  // namespace

Var add(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("add", av, bv);
  Tensor out = av;
  axpy(out, bv);
  return tape_of(a).record(std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    if (auto* ga = s.grad(0)) axpy(*ga, g);
    if (auto* gb = s.grad(1)) axpy(*gb, g);
  });
}

Var sub(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("sub", av, bv);
  Tensor out = av;
  axpy(out, bv, -1.0);
  return tape_of(a).record(std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    if (auto* ga = s.grad(0)) axpy(*ga, g);
    if (auto* gb = s.grad(1)) axpy(*gb, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    const auto& x = s.input(0);
    const auto& y = s.input(1);
    if (auto* ga = s.grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * y[i];
    if (auto* gb = s.grad(1))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * x[i];
  });
}

Var add_bias(Var x, Var bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  require_rank("add_bias", bv, 1);
  if (xv.rank() == 0 || xv.shape().back() != bv.numel()) {
    throw DimensionError("add_bias: " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  }
  const std::size_t n = bv.numel();
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % n];
  return tape_of(x).record(std::move(out), {x, bias}, [n](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0)) axpy(*gx, g);
    if (auto* gb = s.grad(1))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i % n] += g[i];
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= c;
  return tape_of(a).record(std::move(out), {a}, [c](const Tensor& g, GradSink& s) {
    if (auto* ga = s.grad(0)) axpy(*ga, g, c);
  });
}

Var div_scalar(Var a, Var sv) {
  if (sv.value().numel() != 1) throw DimensionError("div_scalar: divisor must be a scalar");
  const double d = sv.value()[0];
  if (d == 0.0) throw DomainError("div_scalar: division by zero");
  Tensor out = a.value();
  for (auto& v : out.storage()) v /= d;
  return tape_of(a).record(std::move(out), {a, sv}, [](const Tensor& g, GradSink& s) {
    const auto& x = s.input(0);
    const double d = s.input(1)[0];
    if (auto* ga = s.grad(0)) axpy(*ga, g, 1.0 / d);
    if (auto* gs = s.grad(1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * x[i];
      (*gs)[0] -= acc / (d * d);
    }
  });
}

Var matmul(Var a, Var b) {
  Tensor out = matmul_value(a.value(), b.value());
  return tape_of(a).record(std::move(out), {a, b}, [](const Tensor& g, GradSink& s) {
    const auto& x = s.input(0);
    const auto& y = s.input(1);
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    if (auto* ga = s.grad(0)) kernels::gemm_nt(g.data(), y.data(), ga->data(), m, n, k);
    if (auto* gb = s.grad(1)) kernels::gemm_tn(x.data(), g.data(), gb->data(), k, m, n);
  });
}

Var transpose(Var a) {
  require_rank("transpose", a.value(), 2);
  return tape_of(a).record(a.value().transposed(), {a}, [](const Tensor& g, GradSink& s) {
    if (auto* ga = s.grad(0)) axpy(*ga, g.transposed());
  });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  require_rank("linear", xv, 2);
  require_rank("linear", wv, 2);
  if (xv.cols() != wv.cols()) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  const std::size_t t = xv.rows(), in = xv.cols(), out_dim = wv.rows();
  Tensor out({t, out_dim});
  if (b) {
    const auto& bv = b->value();
    if (bv.rank() != 1 || bv.numel() != out_dim) {
      throw DimensionError("linear: bias " + shape_str(bv.shape()) + " vs weight " + shape_str(wv.shape()));
    }
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < out_dim; ++j) out.at(i, j) = bv[j];
  }
  kernels::gemm_nt(xv.data(), wv.data(), out.data(), t, in, out_dim);
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  const bool has_bias = b.has_value();
  return tape_of(x).record(std::move(out), std::move(inputs), [has_bias](const Tensor& g, GradSink& s) {
    const auto& xv = s.input(0);
    const auto& wv = s.input(1);
    const std::size_t t = xv.rows(), in = xv.cols(), out_dim = wv.rows();
    if (auto* gx = s.grad(0)) kernels::gemm_nn(g.data(), wv.data(), gx->data(), t, out_dim, in);
    if (auto* gw = s.grad(1)) kernels::gemm_tn(g.data(), xv.data(), gw->data(), out_dim, t, in);
    if (has_bias) {
      if (auto* gb = s.grad(2))
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g.at(i, j);
    }
  });
}

Var gelu(Var x) {
  const auto& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
  }
  return tape_of(x).record(std::move(out), {x}, [](const Tensor& g, GradSink& s) {
    const auto& xv = s.input(0);
    if (auto* gx = s.grad(0)) {
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < xv.numel(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*gx)[i] += g[i] * (cdf + v * pdf);
      }
    }
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return tape_of(x).record(Tensor::scalar(acc), {x}, [](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0))
      for (auto& v : gx->storage()) v += g[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw DomainError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var x, std::size_t axis) {
  const auto& xv = x.value();
  const auto sp = split_axis(xv.shape(), axis);
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += xv[(o * sp.n + j) * sp.inner + in];
  return tape_of(x).record(std::move(out), {x}, [sp](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0))
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < sp.n; ++j)
          for (std::size_t in = 0; in < sp.inner; ++in)
            (*gx)[(o * sp.n + j) * sp.inner + in] += g[o * sp.inner + in];
  });
}

Var reshape(Var x, Shape shape) {
  return tape_of(x).record(x.value().reshaped(std::move(shape)), {x}, [](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0)) axpy(*gx, g);
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  Tensor out = xv.slice_rows(begin, end);
  const std::size_t stride = xv.shape()[0] ? xv.numel() / xv.shape()[0] : 0;
  return tape_of(x).record(std::move(out), {x}, [begin, stride](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[begin * stride + i] += g[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const auto& first = parts[0].value();
  if (first.rank() == 0) throw DimensionError("concat_rows of scalars");
  Shape shape = first.shape();
  shape[0] = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (v.rank() != first.rank() || !std::equal(v.shape().begin() + 1, v.shape().end(), first.shape().begin() + 1)) {
      throw DimensionError("concat_rows: " + shape_str(v.shape()) + " vs " + shape_str(first.shape()));
    }
    shape[0] += v.shape()[0];
    data.insert(data.end(), v.data().begin(), v.data().end());
  }
  return tape_of(parts[0]).record(Tensor(std::move(shape), std::move(data)), parts,
                                  [n = parts.size()](const Tensor& g, GradSink& s) {
                                    std::size_t off = 0;
                                    for (std::size_t k = 0; k < n; ++k) {
                                      const std::size_t len = s.input(k).numel();
                                      if (auto* gk = s.grad(k))
                                        for (std::size_t i = 0; i < len; ++i) (*gk)[i] += g[off + i];
                                      off += len;
                                    }
                                  });
}

Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("stack of nothing");
  std::vector<Var> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.value().shape();
    s.insert(s.begin(), 1);
    rows.push_back(reshape(p, std::move(s)));
  }
  return concat_rows(rows);
}

Var softmax(Var x, std::size_t axis) { return softmax_temp(x, axis, 1.0); }

Var softmax_temp(Var x, std::size_t axis, double tau) {
  if (!(tau > 0.0)) throw DomainError("softmax_temp: tau must be positive, got " + std::to_string(tau));
  Tensor y = softmax_value(x.value(), axis, 1.0 / tau);
  return tape_of(x).record(std::move(y), {x}, [axis, tau](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0)) axpy(*gx, softmax_backward(s.output(), g, axis), 1.0 / tau);
  });
}

Var softmax_temp(Var x, std::size_t axis, Var tau) {
  if (tau.value().numel() != 1) throw DimensionError("softmax_temp: tau must be a scalar");
  const double t = tau.value()[0];
  if (!(t > 0.0)) throw DomainError("softmax_temp: tau must be positive, got " + std::to_string(t));
  Tensor y = softmax_value(x.value(), axis, 1.0 / t);
  return tape_of(x).record(std::move(y), {x, tau}, [axis](const Tensor& g, GradSink& s) {
    const double t = s.input(1)[0];
    const Tensor dz = softmax_backward(s.output(), g, axis);
    if (auto* gx = s.grad(0)) axpy(*gx, dz, 1.0 / t);
    if (auto* gt = s.grad(1)) {
      const auto& xv = s.input(0);
      double acc = 0.0;
      for (std::size_t i = 0; i < dz.numel(); ++i) acc += dz[i] * xv[i];
      (*gt)[0] -= acc / (t * t);
    }
  });
}

Var cosine_sim_matrix(Var a, Var b, double eps) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank("cosine_sim_matrix", av, 2);
  require_rank("cosine_sim_matrix", bv, 2);
  if (av.cols() != bv.rows()) {
    throw DimensionError("cosine_sim_matrix: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t t = av.rows(), k = av.cols(), u = bv.cols();
  auto na = std::make_shared<std::vector<double>>(t);
  auto nb = std::make_shared<std::vector<double>>(u);
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += av.at(i, p) * av.at(i, p);
    (*na)[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < u; ++j) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += bv.at(p, j) * bv.at(p, j);
    (*nb)[j] = std::sqrt(s);
  }
  Tensor dots({t, u});
  kernels::gemm_nn(av.data(), bv.data(), dots.data(), t, k, u);
  Tensor out({t, u});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < u; ++j)
      out.at(i, j) = dots.at(i, j) / (std::max((*na)[i], eps) * std::max((*nb)[j], eps));
  return tape_of(a).record(std::move(out), {a, b}, [na, nb, eps](const Tensor& g, GradSink& s) {
    const auto& av = s.input(0);
    const auto& bv = s.input(1);
    const auto& sim = s.output();
    const std::size_t t = av.rows(), k = av.cols(), u = bv.cols();
    // d sim_iu / d a_i = b_u / (Na_i Nb_u) - sim_iu * a_i / (Na_i |a_i|)   (second term only off the guard)
    Tensor scaled({t, u});  // g_iu / (Na_i Nb_u)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < u; ++j)
        scaled.at(i, j) = g.at(i, j) / (std::max((*na)[i], eps) * std::max((*nb)[j], eps));
    if (auto* ga = s.grad(0)) {
      kernels::gemm_nt(scaled.data(), bv.data(), ga->data(), t, u, k);
      for (std::size_t i = 0; i < t; ++i) {
        if ((*na)[i] <= eps) continue;
        double c = 0.0;
        for (std::size_t j = 0; j < u; ++j) c += g.at(i, j) * sim.at(i, j);
        c /= (*na)[i] * (*na)[i];
        for (std::size_t p = 0; p < k; ++p) ga->at(i, p) -= c * av.at(i, p);
      }
    }
    if (auto* gb = s.grad(1)) {
      kernels::gemm_tn(av.data(), scaled.data(), gb->data(), k, t, u);
      for (std::size_t j = 0; j < u; ++j) {
        if ((*nb)[j] <= eps) continue;
        double c = 0.0;
        for (std::size_t i = 0; i < t; ++i) c += g.at(i, j) * sim.at(i, j);
        c /= (*nb)[j] * (*nb)[j];
        for (std::size_t p = 0; p < k; ++p) gb->at(p, j) -= c * bv.at(p, j);
      }
    }
  });
}

Var bce_mean(Var pred, const Tensor& target) {
  const auto& p = pred.value();
  require_same_shape("bce_mean", p, target);
  const std::size_t n = p.numel();
  if (n == 0) throw DomainError("bce_mean over zero entries");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double q = p[i];
    if (q < kBceClamp || q > 1.0 - kBceClamp) {
      g_bce_clamps.fetch_add(1, std::memory_order_relaxed);
      q = std::clamp(q, kBceClamp, 1.0 - kBceClamp);
    }
    acc -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  return tape_of(pred).record(Tensor::scalar(acc / static_cast<double>(n)), {pred},
                              [target](const Tensor& g, GradSink& s) {
                                auto* gp = s.grad(0);
                                if (!gp) return;
                                const auto& p = s.input(0);
                                const double scale = g[0] / static_cast<double>(p.numel());
                                for (std::size_t i = 0; i < p.numel(); ++i) {
                                  const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
                                  (*gp)[i] += scale * (-target[i] / q + (1.0 - target[i]) / (1.0 - q));
                                }
                              });
}

std::size_t bce_clamp_events() { return g_bce_clamps.load(); }
void reset_bce_clamp_events() { g_bce_clamps = 0; }

Var cross_entropy_logits(Var logits, std::span<const int> targets, int ignore_id) {
  const auto& lv = logits.value();
  require_rank("cross_entropy_logits", lv, 2);
  const std::size_t t = lv.rows(), v = lv.cols();
  if (targets.size() != t) {
    throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(lv.shape()) + " logits");
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::size_t count = 0;
  for (int id : tg) {
    if (id == ignore_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ContractError("cross_entropy_logits: target " + std::to_string(id) + " outside [0, " +
                          std::to_string(v) + ")");
    }
    ++count;
  }
  if (count == 0) throw DomainError("cross_entropy_logits: every position is ignored");
  auto probs = std::make_shared<Tensor>(lv);
  kernels::softmax_rows(probs->data(), t, v);
  double acc = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (tg[i] == ignore_id) continue;
    // log-sum-exp form keeps tiny probabilities exact.
    double mx = lv.at(i, 0);
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lv.at(i, j));
    double se = 0.0;
    for (std::size_t j = 0; j < v; ++j) se += std::exp(lv.at(i, j) - mx);
    acc += mx + std::log(se) - lv.at(i, static_cast<std::size_t>(tg[i]));
  }
  const double inv = 1.0 / static_cast<double>(count);
  return tape_of(logits).record(Tensor::scalar(acc * inv), {logits},
                                [probs, tg = std::move(tg), ignore_id, inv](const Tensor& g, GradSink& s) {
                                  auto* gl = s.grad(0);
                                  if (!gl) return;
                                  const std::size_t v = probs->cols();
                                  for (std::size_t i = 0; i < tg.size(); ++i) {
                                    if (tg[i] == ignore_id) continue;
                                    for (std::size_t j = 0; j < v; ++j) gl->at(i, j) += g[0] * inv * probs->at(i, j);
                                    gl->at(i, static_cast<std::size_t>(tg[i])) -= g[0] * inv;
                                  }
                                });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const auto& xv = x.value();
  require_rank("layer_norm", xv, 2);
  const std::size_t t = xv.rows(), d = xv.cols();
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
  }
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(t);
  Tensor out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < t; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv.at(i, j) - mu) * is;
      xhat->at(i, j) = h;
      out.at(i, j) = gv[j] * h + bv[j];
    }
  }
  return tape_of(x).record(std::move(out), {x, gamma, beta}, [xhat, inv_std](const Tensor& g, GradSink& s) {
    const auto& gv = s.input(1);
    const std::size_t t = xhat->rows(), d = xhat->cols();
    if (auto* gg = s.grad(1))
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g.at(i, j) * xhat->at(i, j);
    if (auto* gb = s.grad(2))
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g.at(i, j);
    if (auto* gx = s.grad(0)) {
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t i = 0; i < t; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g.at(i, j) * gv[j];
          m1 += dh;
          m2 += dh * xhat->at(i, j);
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g.at(i, j) * gv[j];
          gx->at(i, j) += (*inv_std)[i] * (dh - m1 - xhat->at(i, j) * m2);
        }
      }
    }
  });
}

Var batch_norm_1d(Var x, Var gamma, Var beta, const BatchNormState& state, bool training) {
  const auto& xv = x.value();
  require_rank("batch_norm_1d", xv, 2);
  const std::size_t n = xv.rows(), d = xv.cols();
  if (n == 0) throw DomainError("batch_norm_1d over zero rows");
  if (gamma.value().numel() != d || beta.value().numel() != d || !state.running_mean || !state.running_var ||
      state.running_mean->numel() != d || state.running_var->numel() != d) {
    throw DimensionError("batch_norm_1d: parameters do not match width " + std::to_string(d));
  }
  std::vector<double> mu(d, 0.0), var(d, 0.0);
  if (training) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += xv.at(i, j);
    for (auto& m : mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) var[j] += (xv.at(i, j) - mu[j]) * (xv.at(i, j) - mu[j]);
    for (std::size_t j = 0; j < d; ++j) {
      const double biased = var[j] / static_cast<double>(n);
      const double unbiased = n > 1 ? var[j] / static_cast<double>(n - 1) : biased;
      var[j] = biased;
      auto& rm = (*state.running_mean)[j];
      auto& rv = (*state.running_var)[j];
      rm = (1.0 - state.momentum) * rm + state.momentum * mu[j];
      rv = (1.0 - state.momentum) * rv + state.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mu[j] = (*state.running_mean)[j];
      var[j] = (*state.running_var)[j];
    }
  }
  auto inv_std = std::make_shared<std::vector<double>>(d);
  for (std::size_t j = 0; j < d; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + state.eps);
  auto xhat = std::make_shared<Tensor>(xv.shape());
  Tensor out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv.at(i, j) - mu[j]) * (*inv_std)[j];
      xhat->at(i, j) = h;
      out.at(i, j) = gv[j] * h + bv[j];
    }
  return tape_of(x).record(std::move(out), {x, gamma, beta},
                           [xhat, inv_std, training](const Tensor& g, GradSink& s) {
                             const auto& gv = s.input(1);
                             const std::size_t n = xhat->rows(), d = xhat->cols();
                             if (auto* gg = s.grad(1))
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g.at(i, j) * xhat->at(i, j);
                             if (auto* gb = s.grad(2))
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g.at(i, j);
                             auto* gx = s.grad(0);
                             if (!gx) return;
                             if (!training) {
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < d; ++j) gx->at(i, j) += g.at(i, j) * gv[j] * (*inv_std)[j];
                               return;
                             }
                             const double inv_n = 1.0 / static_cast<double>(n);
                             for (std::size_t j = 0; j < d; ++j) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double dh = g.at(i, j) * gv[j];
                                 m1 += dh;
                                 m2 += dh * xhat->at(i, j);
                               }
                               m1 *= inv_n;
                               m2 *= inv_n;
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double dh = g.at(i, j) * gv[j];
                                 gx->at(i, j) += (*inv_std)[j] * (dh - m1 - xhat->at(i, j) * m2);
                               }
                             }
                           });
}

Var dropout(Var x, double p, Rng* rng, bool training) {
  if (!(p >= 0.0) || p >= 1.0) throw DomainError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (!rng) throw ContractError("dropout in training mode needs a random stream");
  const auto& xv = x.value();
  auto mask = std::make_shared<std::vector<double>>(xv.numel());
  const double keep = 1.0 / (1.0 - p);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    (*mask)[i] = rng->bernoulli(p) ? 0.0 : keep;
    out[i] = xv[i] * (*mask)[i];
  }
  return tape_of(x).record(std::move(out), {x}, [mask](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * (*mask)[i];
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const auto& tv = table.value();
  require_rank("embedding", tv, 2);
  const std::size_t v = tv.rows(), d = tv.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out({idv.size(), d});
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= v) {
      throw ContractError("token id " + std::to_string(idv[i]) + " outside vocabulary of size " + std::to_string(v));
    }
    const std::size_t r = static_cast<std::size_t>(idv[i]);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tv.at(r, j);
  }
  return tape_of(table).record(std::move(out), {table}, [idv = std::move(idv), d](const Tensor& g, GradSink& s) {
    if (auto* gt = s.grad(0))
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt->at(static_cast<std::size_t>(idv[i]), j) += g.at(i, j);
  });
}

Var mean_pool(Var seq, std::span<const bool> mask) {
  const auto& sv = seq.value();
  require_rank("mean_pool", sv, 2);
  const std::size_t n = sv.rows(), d = sv.cols();
  if (!mask.empty() && mask.size() != n) {
    throw DimensionError("mean_pool: mask of length " + std::to_string(mask.size()) + " for " + shape_str(sv.shape()));
  }
  std::vector<char> keep(n, 1);
  std::size_t count = n;
  if (!mask.empty()) {
    count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      keep[i] = mask[i] ? 1 : 0;
      count += keep[i];
    }
  }
  if (count == 0) throw DomainError("mean_pool: every position is masked");
  const double inv = 1.0 / static_cast<double>(count);
  Tensor out({d});
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i])
      for (std::size_t j = 0; j < d; ++j) out[j] += sv.at(i, j);
  for (auto& v : out.storage()) v *= inv;
  return tape_of(seq).record(std::move(out), {seq}, [keep = std::move(keep), inv, d](const Tensor& g, GradSink& s) {
    if (auto* gs = s.grad(0))
      for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i])
          for (std::size_t j = 0; j < d; ++j) gs->at(i, j) += g[j] * inv;
  });
}

Var temporal_downsample(Var x, std::size_t factor) {
  const auto& xv = x.value();
  require_rank("temporal_downsample", xv, 2);
  if (factor == 0) throw DomainError("temporal_downsample: factor must be positive");
  const std::size_t t = xv.rows(), d = xv.cols();
  if (t == 0) throw DomainError("temporal_downsample of an empty sequence");
  const std::size_t out_t = (t + factor - 1) / factor;
  Tensor out({out_t, d});
  for (std::size_t o = 0; o < out_t; ++o) {
    const std::size_t b = o * factor, e = std::min(t, b + factor);
    const double inv = 1.0 / static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < d; ++j) out.at(o, j) += xv.at(i, j) * inv;
  }
  return tape_of(x).record(std::move(out), {x}, [factor, t, d, out_t](const Tensor& g, GradSink& s) {
    if (auto* gx = s.grad(0))
      for (std::size_t o = 0; o < out_t; ++o) {
        const std::size_t b = o * factor, e = std::min(t, b + factor);
        const double inv = 1.0 / static_cast<double>(e - b);
        for (std::size_t i = b; i < e; ++i)
          for (std::size_t j = 0; j < d; ++j) gx->at(i, j) += g.at(o, j) * inv;
      }
  });
}

Tensor rope_rotate(const Tensor& x, std::span<const std::size_t> positions, double base, bool inverse) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("rope_rotate: expected [T, d] or [T, heads, d], got " + shape_str(x.shape()));
  const std::size_t t = x.dim(0);
  const std::size_t dh = x.shape().back();
  const std::size_t heads = x.rank() == 3 ? x.dim(1) : 1;
  if (dh % 2 != 0) throw ConfigError("rope_rotate: head dimension must be even, got " + std::to_string(dh));
  if (positions.size() != t) throw DimensionError("rope_rotate: one position per row required");
  Tensor out(x.shape());
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t r = 0; r < t; ++r) {
    const double pos = static_cast<double>(positions[r]);
    for (std::size_t i = 0; i < dh / 2; ++i) {
      const double theta = sign * pos * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const double c = std::cos(theta), sn = std::sin(theta);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = (r * heads + h) * dh + 2 * i;
        const double x0 = x[off], x1 = x[off + 1];
        out[off] = x0 * c - x1 * sn;
        out[off + 1] = x0 * sn + x1 * c;
      }
    }
  }
  return out;
}

bool attention_allowed(const AttentionSpec& spec, std::size_t i, std::size_t j) {
  switch (spec.mask) {
    case MaskKind::kNone:
      return true;
    case MaskKind::kBand:
      return (i > j ? i - j : j - i) <= spec.half_window;
    case MaskKind::kCausal:
      return j <= i;
  }
  return true;
}

namespace {

struct AttentionCache {
  std::size_t tq = 0, tk = 0, heads = 0, dh = 0;
  // Per head, contiguous: rotated q [tq, dh], rotated k [tk, dh], v [tk, dh], probs [tq, tk].
  std::vector<Tensor> q, k, v, p;
};

Tensor head_block(const Tensor& x, std::size_t h, std::size_t dh) {
  const std::size_t t = x.rows(), d = x.cols();
  Tensor out({t, dh});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < dh; ++j) out.at(i, j) = x[i * d + h * dh + j];
  return out;
}

std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

std::shared_ptr<AttentionCache> attention_forward(const Tensor& q, const Tensor& k, const Tensor* v,
                                                  const AttentionSpec& spec) {
  require_rank("attention", q, 2);
  require_rank("attention", k, 2);
  if (q.cols() != k.cols() || (v && (v->rows() != k.rows() || v->cols() != k.cols()))) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()));
  }
  if (spec.heads == 0 || q.cols() % spec.heads != 0) {
    throw ConfigError("attention: width " + std::to_string(q.cols()) + " not divisible by " +
                      std::to_string(spec.heads) + " heads");
  }
  auto c = std::make_shared<AttentionCache>();
  c->tq = q.rows();
  c->tk = k.rows();
  c->heads = spec.heads;
  c->dh = q.cols() / spec.heads;
  const auto pq = iota_positions(c->tq);
  const auto pk = iota_positions(c->tk);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c->dh));
  for (std::size_t h = 0; h < c->heads; ++h) {
    Tensor qh = head_block(q, h, c->dh);
    Tensor kh = head_block(k, h, c->dh);
    if (spec.rope) {
      qh = rope_rotate(qh, pq, spec.rope_base);
      kh = rope_rotate(kh, pk, spec.rope_base);
    }
    Tensor scores({c->tq, c->tk});
    kernels::gemm_nt(qh.data(), kh.data(), scores.data(), c->tq, c->dh, c->tk);
    for (std::size_t i = 0; i < c->tq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c->tk; ++j)
        if (attention_allowed(spec, i, j)) mx = std::max(mx, scores.at(i, j) * inv_sqrt);
      double sum = 0.0;
      for (std::size_t j = 0; j < c->tk; ++j) {
        if (attention_allowed(spec, i, j)) {
          const double e = std::exp(scores.at(i, j) * inv_sqrt - mx);
          scores.at(i, j) = e;
          sum += e;
        } else {
          scores.at(i, j) = 0.0;
        }
      }
      if (sum > 0.0)
        for (std::size_t j = 0; j < c->tk; ++j) scores.at(i, j) /= sum;
    }
    c->q.push_back(std::move(qh));
    c->k.push_back(std::move(kh));
    if (v) c->v.push_back(head_block(*v, h, c->dh));
    c->p.push_back(std::move(scores));
  }
  return c;
}

}  // namespace

std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, const AttentionSpec& spec) {
  return attention_forward(q, k, nullptr, spec)->p;
}

Var attention(Var q, Var k, Var v, const AttentionSpec& spec) {
  auto cache = attention_forward(q.value(), k.value(), &v.value(), spec);
  const std::size_t d = q.value().cols();
  Tensor out({cache->tq, d});
  for (std::size_t h = 0; h < cache->heads; ++h) {
    Tensor oh({cache->tq, cache->dh});
    kernels::gemm_nn(cache->p[h].data(), cache->v[h].data(), oh.data(), cache->tq, cache->tk, cache->dh);
    for (std::size_t i = 0; i < cache->tq; ++i)
      for (std::size_t j = 0; j < cache->dh; ++j) out[i * d + h * cache->dh + j] = oh.at(i, j);
  }
  return tape_of(q).record(std::move(out), {q, k, v}, [cache, spec, d](const Tensor& g, GradSink& s) {
    auto* gq = s.grad(0);
    auto* gk = s.grad(1);
    auto* gv = s.grad(2);
    const std::size_t tq = cache->tq, tk = cache->tk, dh = cache->dh;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto pq = iota_positions(tq);
    const auto pk = iota_positions(tk);
    for (std::size_t h = 0; h < cache->heads; ++h) {
      Tensor go = head_block(g, h, dh);
      const Tensor& p = cache->p[h];
      if (gv) {
        Tensor dv({tk, dh});
        kernels::gemm_tn(p.data(), go.data(), dv.data(), tk, tq, dh);
        for (std::size_t i = 0; i < tk; ++i)
          for (std::size_t j = 0; j < dh; ++j) (*gv)[i * d + h * dh + j] += dv.at(i, j);
      }
      if (!gq && !gk) continue;
      Tensor dp({tq, tk});
      kernels::gemm_nt(go.data(), cache->v[h].data(), dp.data(), tq, dh, tk);
      // Masked entries have p == 0 and therefore receive no score gradient.
      for (std::size_t i = 0; i < tq; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < tk; ++j) dot += dp.at(i, j) * p.at(i, j);
        for (std::size_t j = 0; j < tk; ++j) dp.at(i, j) = p.at(i, j) * (dp.at(i, j) - dot) * inv_sqrt;
      }
      if (gq) {
        Tensor dq({tq, dh});
        kernels::gemm_nn(dp.data(), cache->k[h].data(), dq.data(), tq, tk, dh);
        if (spec.rope) dq = rope_rotate(dq, pq, spec.rope_base, true);
        for (std::size_t i = 0; i < tq; ++i)
          for (std::size_t j = 0; j < dh; ++j) (*gq)[i * d + h * dh + j] += dq.at(i, j);
      }
      if (gk) {
        Tensor dk({tk, dh});
        kernels::gemm_tn(dp.data(), cache->q[h].data(), dk.data(), tk, tq, dh);
        if (spec.rope) dk = rope_rotate(dk, pk, spec.rope_base, true);
        for (std::size_t i = 0; i < tk; ++i)
          for (std::size_t j = 0; j < dh; ++j) (*gk)[i * d + h * dh + j] += dk.at(i, j);
      }
    }
  });
}

}  // namespace hialign::ops
