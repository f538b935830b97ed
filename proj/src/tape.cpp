#include "dhvc/tape.hpp"

#include <algorithm>
#include <cmath>

#include "dhvc/errors.hpp"

namespace dhvc::nets {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// a[i] += c * b[i]; distinct buffers, written to vectorize.
void axpy(double* __restrict a, const double* __restrict b, double c, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) a[i] += c * b[i];
}

// Four-lane dot product: independent accumulators keep IEEE semantics per
// lane while letting the compiler vectorize the reduction.
double dot(const double* __restrict a, const double* __restrict b, std::int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace

Tape::NodeId Tape::push(Tensor value, bool needs_grad, std::function<void()> backward_fn,
                        const char* op) {
  if (check_finite_ && !value.all_finite())
    throw NumericalError(std::string("tape op '") + op + "' produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr, "leaf");
}

Tensor& Tape::grad_buf(NodeId id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

const Tensor& Tape::grad(NodeId id) { return grad_buf(id); }

void Tape::accumulate(NodeId id, const Tensor& g) {
  Tensor& buf = grad_buf(id);
  for (std::int64_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

void Tape::backward(NodeId loss) {
  const Node& ln = nodes_[static_cast<std::size_t>(loss)];
  if (ln.value.numel() != 1)
    throw ShapeError("tape backward: loss must be scalar, got " + shape_str(ln.value.shape));
  grad_buf(loss)[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.data.empty() || !n.backward_fn) continue;
    n.backward_fn();
  }
}

// ---------------------------------------------------------------------------
// elementwise

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "tape add");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += val(b)[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr, "add");
  if (ng)
    nodes_.back().backward_fn = [this, a, b, id] {
      const Tensor& g = grad_buf(id);
      if (needs_grad(a)) accumulate(a, g);
      if (needs_grad(b)) accumulate(b, g);
    };
  return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "tape sub");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= val(b)[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr, "sub");
  if (ng)
    nodes_.back().backward_fn = [this, a, b, id] {
      const Tensor& g = grad_buf(id);
      if (needs_grad(a)) accumulate(a, g);
      if (needs_grad(b)) {
        Tensor& gb = grad_buf(b);
        for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
      }
    };
  return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "tape mul");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= val(b)[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr, "mul");
  if (ng)
    nodes_.back().backward_fn = [this, a, b, id] {
      const Tensor& g = grad_buf(id);
      if (needs_grad(a)) {
        Tensor& ga = grad_buf(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * val(b)[i];
      }
      if (needs_grad(b)) {
        Tensor& gb = grad_buf(b);
        for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * val(a)[i];
      }
    };
  return id;
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Tensor out = val(a);
  for (auto& v : out.data) v *= c;
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "scale");
  if (ng)
    nodes_.back().backward_fn = [this, a, c, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    };
  return id;
}

Tape::NodeId Tape::add_const(NodeId a, double c) {
  Tensor out = val(a);
  for (auto& v : out.data) v += c;
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "add_const");
  if (ng)
    nodes_.back().backward_fn = [this, a, id] { accumulate(a, grad_buf(id)); };
  return id;
}

Tape::NodeId Tape::tanh_op(NodeId a) {
  Tensor out = val(a);
  for (auto& v : out.data) v = std::tanh(v);
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "tanh");
  if (ng)
    nodes_.back().backward_fn = [this, a, id] {
      const Tensor& g = grad_buf(id);
      const Tensor& y = val(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    };
  return id;
}

Tape::NodeId Tape::silu(NodeId a) {
  Tensor out = val(a);
  for (auto& v : out.data) v = v * sigmoid(v);
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "silu");
  if (ng)
    nodes_.back().backward_fn = [this, a, id] {
      const Tensor& g = grad_buf(id);
      const Tensor& x = val(a);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double s = sigmoid(x[i]);
        ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    };
  return id;
}

Tape::NodeId Tape::gated(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "tape gated");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::tanh(val(a)[i]) * sigmoid(val(b)[i]);
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(std::move(out), ng, nullptr, "gated");
  if (ng)
    nodes_.back().backward_fn = [this, a, b, id] {
      const Tensor& g = grad_buf(id);
      const Tensor& xa = val(a);
      const Tensor& xb = val(b);
      Tensor* ga = needs_grad(a) ? &grad_buf(a) : nullptr;
      Tensor* gb = needs_grad(b) ? &grad_buf(b) : nullptr;
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double ta = std::tanh(xa[i]);
        const double sb = sigmoid(xb[i]);
        if (ga) (*ga)[i] += g[i] * sb * (1.0 - ta * ta);
        if (gb) (*gb)[i] += g[i] * ta * sb * (1.0 - sb);
      }
    };
  return id;
}

Tape::NodeId Tape::mask_fill(NodeId a, const std::vector<std::uint8_t>& mask, double fill) {
  if (static_cast<std::int64_t>(mask.size()) != val(a).numel())
    throw ShapeError("tape mask_fill: mask length does not match tensor");
  Tensor out = val(a);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (mask[static_cast<std::size_t>(i)]) out[i] = fill;
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "mask_fill");
  if (ng)
    nodes_.back().backward_fn = [this, a, mask, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < g.numel(); ++i)
        if (!mask[static_cast<std::size_t>(i)]) ga[i] += g[i];
    };
  return id;
}

// ---------------------------------------------------------------------------
// linear algebra

Tape::NodeId Tape::affine(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(1) != xv.dim(0))
    throw ShapeError("tape affine: want x[N], w[M,N]; got " + shape_str(xv.shape) + ", " +
                     shape_str(wv.shape));
  const std::int64_t m = wv.dim(0), n = wv.dim(1);
  Tensor out({m});
  for (std::int64_t i = 0; i < m; ++i) {
    double acc = (b != kNone) ? val(b)[i] : 0.0;
    const double* row = wv.data.data() + i * n;
    for (std::int64_t j = 0; j < n; ++j) acc += row[j] * xv[j];
    out[i] = acc;
  }
  const bool ng = needs_grad(x) || needs_grad(w) || (b != kNone && needs_grad(b));
  NodeId id = push(std::move(out), ng, nullptr, "affine");
  if (ng)
    nodes_.back().backward_fn = [this, x, w, b, m, n, id] {
      const Tensor& g = grad_buf(id);
      const Tensor& xv2 = val(x);
      const Tensor& wv2 = val(w);
      if (needs_grad(x)) {
        Tensor& gx = grad_buf(x);
        for (std::int64_t i = 0; i < m; ++i) {
          const double gi = g[i];
          const double* row = wv2.data.data() + i * n;
          for (std::int64_t j = 0; j < n; ++j) gx[j] += gi * row[j];
        }
      }
      if (needs_grad(w)) {
        Tensor& gw = grad_buf(w);
        for (std::int64_t i = 0; i < m; ++i) {
          const double gi = g[i];
          double* row = gw.data.data() + i * n;
          for (std::int64_t j = 0; j < n; ++j) row[j] += gi * xv2[j];
        }
      }
      if (b != kNone && needs_grad(b)) accumulate(b, g);
    };
  return id;
}

Tape::NodeId Tape::conv1d(NodeId x, NodeId w, NodeId b, int dilation) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  if (xv.rank() != 2 || wv.rank() != 3 || wv.dim(1) != xv.dim(0))
    throw ShapeError("tape conv1d: want x[Cin,L], w[Cout,Cin,K]; got " +
                     shape_str(xv.shape) + ", " + shape_str(wv.shape));
  const std::int64_t cin = xv.dim(0), len = xv.dim(1);
  const std::int64_t cout = wv.dim(0), k = wv.dim(2);
  const std::int64_t half = k / 2;

  Tensor out({cout, len});
  for (std::int64_t co = 0; co < cout; ++co) {
    double* orow = out.data.data() + co * len;
    if (b != kNone) {
      const double bias = val(b)[co];
      for (std::int64_t i = 0; i < len; ++i) orow[i] = bias;
    }
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const double* xrow = xv.data.data() + ci * len;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double wgt = wv.data[static_cast<std::size_t>((co * cin + ci) * k + kk)];
        if (wgt == 0.0) continue;
        const std::int64_t off = (kk - half) * dilation;
        const std::int64_t lo = std::max<std::int64_t>(0, -off);
        const std::int64_t hi = std::min<std::int64_t>(len, len - off);
        axpy(orow + lo, xrow + lo + off, wgt, hi - lo);
      }
    }
  }

  const bool ng = needs_grad(x) || needs_grad(w) || (b != kNone && needs_grad(b));
  NodeId id = push(std::move(out), ng, nullptr, "conv1d");
  if (ng)
    nodes_.back().backward_fn = [this, x, w, b, dilation, cin, cout, len, k, half, id] {
      const Tensor& g = grad_buf(id);
      const Tensor& xv2 = val(x);
      const Tensor& wv2 = val(w);
      if (needs_grad(b) && b != kNone) {
        Tensor& gb = grad_buf(b);
        for (std::int64_t co = 0; co < cout; ++co) {
          const double* grow = g.data.data() + co * len;
          double acc = 0.0;
          for (std::int64_t i = 0; i < len; ++i) acc += grow[i];
          gb[co] += acc;
        }
      }
      for (std::int64_t co = 0; co < cout; ++co) {
        const double* grow = g.data.data() + co * len;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          const double* xrow = xv2.data.data() + ci * len;
          double* gxrow = needs_grad(x) ? grad_buf(x).data.data() + ci * len : nullptr;
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const std::int64_t off = (kk - half) * dilation;
            const std::int64_t lo = std::max<std::int64_t>(0, -off);
            const std::int64_t hi = std::min<std::int64_t>(len, len - off);
            const std::size_t widx = static_cast<std::size_t>((co * cin + ci) * k + kk);
            if (needs_grad(w))
              grad_buf(w).data[widx] += dot(grow + lo, xrow + lo + off, hi - lo);
            if (gxrow) {
              const double wgt = wv2.data[widx];
              if (wgt != 0.0) axpy(gxrow + lo + off, grow + lo, wgt, hi - lo);
            }
          }
        }
      }
    };
  return id;
}

Tape::NodeId Tape::conv2d(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != 3 ||
      wv.dim(3) != 3)
    throw ShapeError("tape conv2d: want x[Cin,H,W], w[Cout,Cin,3,3]; got " +
                     shape_str(xv.shape) + ", " + shape_str(wv.shape));
  const std::int64_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::int64_t cout = wv.dim(0);

  Tensor out({cout, h, wd});
  for (std::int64_t co = 0; co < cout; ++co) {
    double* oplane = out.data.data() + co * h * wd;
    if (b != kNone) {
      const double bias = val(b)[co];
      for (std::int64_t i = 0; i < h * wd; ++i) oplane[i] = bias;
    }
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const double* xplane = xv.data.data() + ci * h * wd;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wgt =
              wv.data[static_cast<std::size_t>(((co * cin + ci) * 3 + ky) * 3 + kx)];
          if (wgt == 0.0) continue;
          const std::int64_t oy = ky - 1, ox = kx - 1;
          const std::int64_t ylo = std::max<std::int64_t>(0, -oy);
          const std::int64_t yhi = std::min<std::int64_t>(h, h - oy);
          const std::int64_t xlo = std::max<std::int64_t>(0, -ox);
          const std::int64_t xhi = std::min<std::int64_t>(wd, wd - ox);
          for (std::int64_t y = ylo; y < yhi; ++y)
            axpy(oplane + y * wd + xlo, xplane + (y + oy) * wd + ox + xlo, wgt,
                 xhi - xlo);
        }
      }
    }
  }

  const bool ng = needs_grad(x) || needs_grad(w) || (b != kNone && needs_grad(b));
  NodeId id = push(std::move(out), ng, nullptr, "conv2d");
  if (ng)
    nodes_.back().backward_fn = [this, x, w, b, cin, cout, h, wd, id] {
      const Tensor& g = grad_buf(id);
      const Tensor& xv2 = val(x);
      const Tensor& wv2 = val(w);
      if (b != kNone && needs_grad(b)) {
        Tensor& gb = grad_buf(b);
        for (std::int64_t co = 0; co < cout; ++co) {
          const double* gplane = g.data.data() + co * h * wd;
          double acc = 0.0;
          for (std::int64_t i = 0; i < h * wd; ++i) acc += gplane[i];
          gb[co] += acc;
        }
      }
      for (std::int64_t co = 0; co < cout; ++co) {
        const double* gplane = g.data.data() + co * h * wd;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          const double* xplane = xv2.data.data() + ci * h * wd;
          double* gxplane = needs_grad(x) ? grad_buf(x).data.data() + ci * h * wd : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const std::int64_t oy = ky - 1, ox = kx - 1;
              const std::int64_t ylo = std::max<std::int64_t>(0, -oy);
              const std::int64_t yhi = std::min<std::int64_t>(h, h - oy);
              const std::int64_t xlo = std::max<std::int64_t>(0, -ox);
              const std::int64_t xhi = std::min<std::int64_t>(wd, wd - ox);
              const std::size_t widx =
                  static_cast<std::size_t>(((co * cin + ci) * 3 + ky) * 3 + kx);
              if (needs_grad(w)) {
                double acc = 0.0;
                for (std::int64_t y = ylo; y < yhi; ++y)
                  acc += dot(gplane + y * wd + xlo, xplane + (y + oy) * wd + ox + xlo,
                             xhi - xlo);
                grad_buf(w).data[widx] += acc;
              }
              if (gxplane) {
                const double wgt = wv2.data[widx];
                if (wgt == 0.0) continue;
                for (std::int64_t y = ylo; y < yhi; ++y)
                  axpy(gxplane + (y + oy) * wd + ox + xlo, gplane + y * wd + xlo, wgt,
                       xhi - xlo);
              }
            }
          }
        }
      }
    };
  return id;
}

Tape::NodeId Tape::add_channel_bias(NodeId x, NodeId v) {
  const Tensor& xv = val(x);
  const Tensor& vv = val(v);
  if (vv.rank() != 1 || xv.rank() < 1 || xv.dim(0) != vv.dim(0))
    throw ShapeError("tape add_channel_bias: first axis of x must match v");
  const std::int64_t c = xv.dim(0);
  const std::int64_t spatial = xv.numel() / c;
  Tensor out = xv;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double* row = out.data.data() + ch * spatial;
    const double bias = vv[ch];
    for (std::int64_t i = 0; i < spatial; ++i) row[i] += bias;
  }
  const bool ng = needs_grad(x) || needs_grad(v);
  NodeId id = push(std::move(out), ng, nullptr, "add_channel_bias");
  if (ng)
    nodes_.back().backward_fn = [this, x, v, c, spatial, id] {
      const Tensor& g = grad_buf(id);
      if (needs_grad(x)) accumulate(x, g);
      if (needs_grad(v)) {
        Tensor& gv = grad_buf(v);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* row = g.data.data() + ch * spatial;
          double acc = 0.0;
          for (std::int64_t i = 0; i < spatial; ++i) acc += row[i];
          gv[ch] += acc;
        }
      }
    };
  return id;
}

Tape::NodeId Tape::group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, double eps) {
  const Tensor& xv = val(x);
  if (xv.rank() < 1) throw ShapeError("tape group_norm: need channel-major tensor");
  const std::int64_t c = xv.dim(0);
  if (c % groups != 0)
    throw ShapeError("tape group_norm: channels not divisible by groups");
  if (val(gamma).numel() != c || val(beta).numel() != c)
    throw ShapeError("tape group_norm: gamma/beta must have one entry per channel");
  const std::int64_t spatial = xv.numel() / c;
  const std::int64_t cg = c / groups;
  const std::int64_t gs = cg * spatial;  // elements per group

  Tensor xhat(xv.shape);
  std::vector<double> inv_std(static_cast<std::size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    const double* base = xv.data.data() + g * gs;
    double mean = 0.0;
    for (std::int64_t i = 0; i < gs; ++i) mean += base[i];
    mean /= static_cast<double>(gs);
    double var = 0.0;
    for (std::int64_t i = 0; i < gs; ++i) var += (base[i] - mean) * (base[i] - mean);
    var /= static_cast<double>(gs);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(g)] = istd;
    double* hbase = xhat.data.data() + g * gs;
    for (std::int64_t i = 0; i < gs; ++i) hbase[i] = (base[i] - mean) * istd;
  }

  Tensor out(xv.shape);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double ga = val(gamma)[ch];
    const double be = val(beta)[ch];
    const double* h = xhat.data.data() + ch * spatial;
    double* o = out.data.data() + ch * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) o[i] = ga * h[i] + be;
  }

  const bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
  NodeId id = push(std::move(out), ng, nullptr, "group_norm");
  if (ng)
    nodes_.back().backward_fn = [this, x, gamma, beta, groups, c, spatial, cg, gs,
                                 xhat = std::move(xhat), inv_std = std::move(inv_std), id] {
      const Tensor& g = grad_buf(id);
      if (needs_grad(gamma)) {
        Tensor& gg = grad_buf(gamma);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* grow = g.data.data() + ch * spatial;
          const double* hrow = xhat.data.data() + ch * spatial;
          double acc = 0.0;
          for (std::int64_t i = 0; i < spatial; ++i) acc += grow[i] * hrow[i];
          gg[ch] += acc;
        }
      }
      if (needs_grad(beta)) {
        Tensor& gb = grad_buf(beta);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* grow = g.data.data() + ch * spatial;
          double acc = 0.0;
          for (std::int64_t i = 0; i < spatial; ++i) acc += grow[i];
          gb[ch] += acc;
        }
      }
      if (needs_grad(x)) {
        Tensor& gx = grad_buf(x);
        const Tensor& gam = val(gamma);
        for (int grp = 0; grp < groups; ++grp) {
          // dxhat per element, plus the two group means of the standard formula.
          double sum_dh = 0.0, sum_dhh = 0.0;
          for (std::int64_t cc = 0; cc < cg; ++cc) {
            const std::int64_t ch = grp * cg + cc;
            const double ga = gam[ch];
            const double* grow = g.data.data() + ch * spatial;
            const double* hrow = xhat.data.data() + ch * spatial;
            for (std::int64_t i = 0; i < spatial; ++i) {
              const double dh = grow[i] * ga;
              sum_dh += dh;
              sum_dhh += dh * hrow[i];
            }
          }
          const double mean_dh = sum_dh / static_cast<double>(gs);
          const double mean_dhh = sum_dhh / static_cast<double>(gs);
          const double istd = inv_std[static_cast<std::size_t>(grp)];
          for (std::int64_t cc = 0; cc < cg; ++cc) {
            const std::int64_t ch = grp * cg + cc;
            const double ga = gam[ch];
            const double* grow = g.data.data() + ch * spatial;
            const double* hrow = xhat.data.data() + ch * spatial;
            double* gxrow = gx.data.data() + ch * spatial;
            for (std::int64_t i = 0; i < spatial; ++i)
              gxrow[i] += istd * (grow[i] * ga - mean_dh - hrow[i] * mean_dhh);
          }
        }
      }
    };
  return id;
}

// ---------------------------------------------------------------------------
// shape and resolution

Tape::NodeId Tape::reshape(NodeId a, std::vector<std::int64_t> shape) {
  if (numel_of(shape) != val(a).numel())
    throw ShapeError("tape reshape: element count mismatch");
  Tensor out = val(a);
  out.shape = std::move(shape);
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "reshape");
  if (ng)
    nodes_.back().backward_fn = [this, a, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    };
  return id;
}

Tape::NodeId Tape::transpose2(NodeId a) {
  const Tensor& xv = val(a);
  if (xv.rank() != 2) throw ShapeError("tape transpose2: need rank-2 tensor");
  const std::int64_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "transpose2");
  if (ng)
    nodes_.back().backward_fn = [this, a, r, c, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    };
  return id;
}

Tape::NodeId Tape::slice_channels(NodeId a, std::int64_t from, std::int64_t to) {
  const Tensor& xv = val(a);
  if (xv.rank() < 1 || from < 0 || to > xv.dim(0) || from >= to)
    throw ShapeError("tape slice_channels: bad range");
  const std::int64_t c = xv.dim(0);
  const std::int64_t spatial = xv.numel() / c;
  std::vector<std::int64_t> shape = xv.shape;
  shape[0] = to - from;
  Tensor out(shape);
  std::copy(xv.data.begin() + from * spatial, xv.data.begin() + to * spatial,
            out.data.begin());
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "slice_channels");
  if (ng)
    nodes_.back().backward_fn = [this, a, from, spatial, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[from * spatial + i] += g[i];
    };
  return id;
}

Tape::NodeId Tape::avg_pool1d(NodeId a, int k) {
  const Tensor& xv = val(a);
  if (xv.rank() != 2 || xv.dim(1) % k != 0)
    throw ShapeError("tape avg_pool1d: need [C,L] with L divisible by k");
  const std::int64_t c = xv.dim(0), len = xv.dim(1), lo = len / k;
  Tensor out({c, lo});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t j = 0; j < lo; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += xv[ch * len + j * k + t];
      out[ch * lo + j] = acc / k;
    }
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "avg_pool1d");
  if (ng)
    nodes_.back().backward_fn = [this, a, k, c, len, lo, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t j = 0; j < lo; ++j) {
          const double gv = g[ch * lo + j] / k;
          for (int t = 0; t < k; ++t) ga[ch * len + j * k + t] += gv;
        }
    };
  return id;
}

Tape::NodeId Tape::down2(NodeId a) {
  const Tensor& xv = val(a);
  if (xv.rank() != 3 || xv.dim(1) % 2 != 0 || xv.dim(2) % 2 != 0)
    throw ShapeError("tape down2: need [C,H,W] with even H and W");
  const std::int64_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor out({c, h / 2, w / 2});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h / 2; ++y)
      for (std::int64_t x = 0; x < w / 2; ++x)
        out[(ch * (h / 2) + y) * (w / 2) + x] = xv[(ch * h + 2 * y) * w + 2 * x];
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "down2");
  if (ng)
    nodes_.back().backward_fn = [this, a, c, h, w, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h / 2; ++y)
          for (std::int64_t x = 0; x < w / 2; ++x)
            ga[(ch * h + 2 * y) * w + 2 * x] += g[(ch * (h / 2) + y) * (w / 2) + x];
    };
  return id;
}

Tape::NodeId Tape::up2(NodeId a) {
  const Tensor& xv = val(a);
  if (xv.rank() != 3) throw ShapeError("tape up2: need [C,H,W]");
  const std::int64_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t x = 0; x < 2 * w; ++x)
        out[(ch * 2 * h + y) * 2 * w + x] = xv[(ch * h + y / 2) * w + x / 2];
  const bool ng = needs_grad(a);
  NodeId id = push(std::move(out), ng, nullptr, "up2");
  if (ng)
    nodes_.back().backward_fn = [this, a, c, h, w, id] {
      const Tensor& g = grad_buf(id);
      Tensor& ga = grad_buf(a);
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < 2 * h; ++y)
          for (std::int64_t x = 0; x < 2 * w; ++x)
            ga[(ch * h + y / 2) * w + x / 2] += g[(ch * 2 * h + y) * 2 * w + x];
    };
  return id;
}

// ---------------------------------------------------------------------------
// reductions

Tape::NodeId Tape::sum_all(NodeId a) {
  double acc = 0.0;
  for (double v : val(a).data) acc += v;
  const bool ng = needs_grad(a);
  NodeId id = push(Tensor::scalar(acc), ng, nullptr, "sum_all");
  if (ng)
    nodes_.back().backward_fn = [this, a, id] {
      const double g = grad_buf(id)[0];
      Tensor& ga = grad_buf(a);
      for (auto& v : ga.data) v += g;
    };
  return id;
}

Tape::NodeId Tape::mean_all(NodeId a) {
  const double inv = 1.0 / static_cast<double>(val(a).numel());
  double acc = 0.0;
  for (double v : val(a).data) acc += v;
  const bool ng = needs_grad(a);
  NodeId id = push(Tensor::scalar(acc * inv), ng, nullptr, "mean_all");
  if (ng)
    nodes_.back().backward_fn = [this, a, inv, id] {
      const double g = grad_buf(id)[0] * inv;
      Tensor& ga = grad_buf(a);
      for (auto& v : ga.data) v += g;
    };
  return id;
}

Tape::NodeId Tape::mean_abs_diff(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "tape mean_abs_diff");
  const double inv = 1.0 / static_cast<double>(val(a).numel());
  double acc = 0.0;
  for (std::int64_t i = 0; i < val(a).numel(); ++i) acc += std::abs(val(a)[i] - val(b)[i]);
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(Tensor::scalar(acc * inv), ng, nullptr, "mean_abs_diff");
  if (ng)
    nodes_.back().backward_fn = [this, a, b, inv, id] {
      const double g = grad_buf(id)[0] * inv;
      const Tensor& xa = val(a);
      const Tensor& xb = val(b);
      Tensor* ga = needs_grad(a) ? &grad_buf(a) : nullptr;
      Tensor* gb = needs_grad(b) ? &grad_buf(b) : nullptr;
      for (std::int64_t i = 0; i < xa.numel(); ++i) {
        const double d = xa[i] - xb[i];
        const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        if (ga) (*ga)[i] += g * s;
        if (gb) (*gb)[i] -= g * s;
      }
    };
  return id;
}

Tape::NodeId Tape::mean_sq_diff(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "tape mean_sq_diff");
  const double inv = 1.0 / static_cast<double>(val(a).numel());
  double acc = 0.0;
  for (std::int64_t i = 0; i < val(a).numel(); ++i) {
    const double d = val(a)[i] - val(b)[i];
    acc += d * d;
  }
  const bool ng = needs_grad(a) || needs_grad(b);
  NodeId id = push(Tensor::scalar(acc * inv), ng, nullptr, "mean_sq_diff");
  if (ng)
    nodes_.back().backward_fn = [this, a, b, inv, id] {
      const double g = grad_buf(id)[0] * inv * 2.0;
      const Tensor& xa = val(a);
      const Tensor& xb = val(b);
      Tensor* ga = needs_grad(a) ? &grad_buf(a) : nullptr;
      Tensor* gb = needs_grad(b) ? &grad_buf(b) : nullptr;
      for (std::int64_t i = 0; i < xa.numel(); ++i) {
        const double d = xa[i] - xb[i];
        if (ga) (*ga)[i] += g * d;
        if (gb) (*gb)[i] -= g * d;
      }
    };
  return id;
}

Tape::NodeId Tape::dot_const(NodeId a, const Tensor& w) {
  require_same_shape(val(a), w, "tape dot_const");
  double acc = 0.0;
  for (std::int64_t i = 0; i < w.numel(); ++i) acc += val(a)[i] * w[i];
  const bool ng = needs_grad(a);
  NodeId id = push(Tensor::scalar(acc), ng, nullptr, "dot_const");
  if (ng)
    nodes_.back().backward_fn = [this, a, w, id] {
      const double g = grad_buf(id)[0];
      Tensor& ga = grad_buf(a);
      for (std::int64_t i = 0; i < w.numel(); ++i) ga[i] += g * w[i];
    };
  return id;
}

// ---------------------------------------------------------------------------
// parameters

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::insert(const std::string& name, Tensor t) {
  if (!tensors.emplace(name, std::move(t)).second)
    throw ShapeError("duplicate parameter: " + name);
}

std::int64_t ParamStore::total_params() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

Tape::NodeId ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tape::NodeId id = tape_.leaf(store_.at(name), trainable_);
  bound_.emplace(name, id);
  return id;
}

void ParamBinder::collect_grads(GradMap& out) {
  for (const auto& [name, id] : bound_) {
    const Tensor& g = tape_.grad(id);
    auto it = out.find(name);
    if (it == out.end()) {
      out.emplace(name, g);
    } else {
      for (std::int64_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
    }
  }
}

}  // namespace dhvc::nets
