#include "taigan/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "taigan/errors.hpp"

namespace taigan::nn {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return node;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!(a->shape() == b->shape()))
    throw ValidationError(std::string(op) + ": shape mismatch " + a->shape().str() + " vs " + b->shape().str());
}

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

struct ConvGeometry {
  int ci, z, y, x;      // input
  int kz, ky, kx;
  int sz, sy, sx;
  int pz, py, px;
  int oz, oy, ox;       // output
};

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(int out_n, int in_n, int stride, int pad, int k, int& lo, int& hi) {
  // need 0 <= o*stride - pad + k < in_n
  const int a = pad - k;  // o*stride >= a
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const int b = in_n - 1 + pad - k;  // o*stride <= b
  hi = b < 0 ? 0 : std::min(out_n, b / stride + 1);
  if (hi < lo) hi = lo;
}

// Direct convolution, one output row at a time; the innermost loop runs over
// contiguous x and vectorises for stride 1.
void conv_forward(const double* __restrict in, const double* __restrict w, const double* bias, const ConvGeometry& g,
                  int co_n, double* __restrict out) {
  const std::size_t in_plane = static_cast<std::size_t>(g.z) * g.y * g.x;
  const std::size_t out_plane = static_cast<std::size_t>(g.oz) * g.oy * g.ox;
  const std::size_t kvol = static_cast<std::size_t>(g.kz) * g.ky * g.kx;
  std::vector<int> xlo(g.kx), xhi(g.kx);
  for (int dx = 0; dx < g.kx; ++dx) valid_range(g.ox, g.x, g.sx, g.px, dx, xlo[dx], xhi[dx]);
  for (int co = 0; co < co_n; ++co) {
    double* oplane = out + co * out_plane;
    const double b = bias ? bias[co] : 0.0;
    for (int oz = 0; oz < g.oz; ++oz)
      for (int oy = 0; oy < g.oy; ++oy) {
        double* __restrict acc = oplane + (static_cast<std::size_t>(oz) * g.oy + oy) * g.ox;
        for (int ox = 0; ox < g.ox; ++ox) acc[ox] = b;
        for (int ci = 0; ci < g.ci; ++ci) {
          const double* iplane = in + ci * in_plane;
          const double* wk = w + (static_cast<std::size_t>(co) * g.ci + ci) * kvol;
          for (int dz = 0; dz < g.kz; ++dz) {
            const int iz = oz * g.sz - g.pz + dz;
            if (iz < 0 || iz >= g.z) continue;
            for (int dy = 0; dy < g.ky; ++dy) {
              const int iy = oy * g.sy - g.py + dy;
              if (iy < 0 || iy >= g.y) continue;
              const double* row = iplane + (static_cast<std::size_t>(iz) * g.y + iy) * g.x;
              for (int dx = 0; dx < g.kx; ++dx) {
                const double wv = wk[(dz * g.ky + dy) * g.kx + dx];
                const int shift = dx - g.px;
                if (g.sx == 1) {
                  const double* r = row + shift;
                  for (int ox = xlo[dx]; ox < xhi[dx]; ++ox) acc[ox] += wv * r[ox];
                } else {
                  for (int ox = xlo[dx]; ox < xhi[dx]; ++ox) acc[ox] += wv * row[ox * g.sx + shift];
                }
              }
            }
          }
        }
      }
  }
}

// Accumulates input and weight gradients from the output gradient of one sample.
void conv_backward(const double* __restrict in, const double* __restrict w, const double* __restrict dout,
                   const ConvGeometry& g, int co_n, double* __restrict din, double* __restrict dw, double* dbias) {
  const std::size_t in_plane = static_cast<std::size_t>(g.z) * g.y * g.x;
  const std::size_t out_plane = static_cast<std::size_t>(g.oz) * g.oy * g.ox;
  const std::size_t kvol = static_cast<std::size_t>(g.kz) * g.ky * g.kx;
  std::vector<int> xlo(g.kx), xhi(g.kx);
  for (int dx = 0; dx < g.kx; ++dx) valid_range(g.ox, g.x, g.sx, g.px, dx, xlo[dx], xhi[dx]);
  for (int co = 0; co < co_n; ++co) {
    const double* gplane = dout + co * out_plane;
    if (dbias) {
      double s = 0;
      for (std::size_t i = 0; i < out_plane; ++i) s += gplane[i];
      dbias[co] += s;
    }
    for (int oz = 0; oz < g.oz; ++oz)
      for (int oy = 0; oy < g.oy; ++oy) {
        const double* __restrict grow = gplane + (static_cast<std::size_t>(oz) * g.oy + oy) * g.ox;
        for (int ci = 0; ci < g.ci; ++ci) {
          const double* iplane = in + ci * in_plane;
          double* dplane = din ? din + ci * in_plane : nullptr;
          const std::size_t wbase = (static_cast<std::size_t>(co) * g.ci + ci) * kvol;
          for (int dz = 0; dz < g.kz; ++dz) {
            const int iz = oz * g.sz - g.pz + dz;
            if (iz < 0 || iz >= g.z) continue;
            for (int dy = 0; dy < g.ky; ++dy) {
              const int iy = oy * g.sy - g.py + dy;
              if (iy < 0 || iy >= g.y) continue;
              const std::size_t roff = (static_cast<std::size_t>(iz) * g.y + iy) * g.x;
              const double* row = iplane + roff;
              for (int dx = 0; dx < g.kx; ++dx) {
                const std::size_t wi = wbase + (dz * g.ky + dy) * g.kx + dx;
                const int shift = dx - g.px;
                if (g.sx == 1) {
                  const double* r = row + shift;
                  if (dw) {
                    double s = 0;
                    for (int ox = xlo[dx]; ox < xhi[dx]; ++ox) s += grow[ox] * r[ox];
                    dw[wi] += s;
                  }
                  if (dplane) {
                    double* __restrict d = dplane + roff + shift;
                    const double wv = w[wi];
                    for (int ox = xlo[dx]; ox < xhi[dx]; ++ox) d[ox] += wv * grow[ox];
                  }
                } else {
                  if (dw) {
                    double s = 0;
                    for (int ox = xlo[dx]; ox < xhi[dx]; ++ox) s += grow[ox] * row[ox * g.sx + shift];
                    dw[wi] += s;
                  }
                  if (dplane) {
                    double* d = dplane + roff;
                    const double wv = w[wi];
                    for (int ox = xlo[dx]; ox < xhi[dx]; ++ox) d[ox * g.sx + shift] += wv * grow[ox];
                  }
                }
              }
            }
          }
        }
      }
  }
}

// Stride-1 convolution on a zero-padded copy of the input. In the padded
// layout every kernel offset is a constant shift of the flat index, so the
// convolution is a sum of kz*ky*kx small GEMMs over strided views, with no
// column buffer.
struct PaddedLayout {
  int zp, yp, xp;
  std::size_t plane;  // padded voxels per channel
  std::size_t span;   // flat output span covering all valid outputs
};

PaddedLayout padded_layout(const ConvGeometry& g) {
  PaddedLayout l{g.z + 2 * g.pz, g.y + 2 * g.py, g.x + 2 * g.px, 0, 0};
  l.plane = static_cast<std::size_t>(l.zp) * l.yp * l.xp;
  l.span = (static_cast<std::size_t>(g.oz - 1) * l.yp + (g.oy - 1)) * l.xp + g.ox;
  return l;
}

void pad_input(const double* in, const ConvGeometry& g, const PaddedLayout& l, double* out) {
  std::fill(out, out + l.plane * g.ci, 0.0);
  for (int c = 0; c < g.ci; ++c)
    for (int z = 0; z < g.z; ++z)
      for (int y = 0; y < g.y; ++y)
        std::copy_n(in + ((static_cast<std::size_t>(c) * g.z + z) * g.y + y) * g.x, g.x,
                    out + c * l.plane + (static_cast<std::size_t>(z + g.pz) * l.yp + (y + g.py)) * l.xp + g.px);
}

std::size_t kernel_shift(const PaddedLayout& l, int dz, int dy, int dx) {
  return (static_cast<std::size_t>(dz) * l.yp + dy) * l.xp + dx;
}

using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Weight slice W[:, :, dz, dy, dx] as a dense (co x ci) matrix.
RowMat kernel_slice(const double* w, int co, const ConvGeometry& g, std::size_t k) {
  const std::size_t kvol = static_cast<std::size_t>(g.kz) * g.ky * g.kx;
  RowMat m(co, g.ci);
  for (int o = 0; o < co; ++o)
    for (int c = 0; c < g.ci; ++c) m(o, c) = w[(static_cast<std::size_t>(o) * g.ci + c) * kvol + k];
  return m;
}

void conv_forward_padded(const double* in, const double* w, const double* bias, const ConvGeometry& g, int co,
                         double* out) {
  const auto l = padded_layout(g);
  std::vector<double> pin(l.plane * g.ci);
  pad_input(in, g, l, pin.data());
  RowMat acc = RowMat::Zero(co, static_cast<Eigen::Index>(l.span));
  std::size_t k = 0;
  for (int dz = 0; dz < g.kz; ++dz)
    for (int dy = 0; dy < g.ky; ++dy)
      for (int dx = 0; dx < g.kx; ++dx, ++k) {
        CStridedMap view(pin.data() + kernel_shift(l, dz, dy, dx), g.ci, static_cast<Eigen::Index>(l.span),
                         Eigen::OuterStride<>(static_cast<Eigen::Index>(l.plane)));
        acc.noalias() += kernel_slice(w, co, g, k) * view;
      }
  for (int o = 0; o < co; ++o) {
    const double b = bias ? bias[o] : 0.0;
    for (int z = 0; z < g.oz; ++z)
      for (int y = 0; y < g.oy; ++y) {
        const double* src = acc.data() + static_cast<std::size_t>(o) * l.span + (static_cast<std::size_t>(z) * l.yp + y) * l.xp;
        double* dst = out + ((static_cast<std::size_t>(o) * g.oz + z) * g.oy + y) * g.ox;
        for (int x = 0; x < g.ox; ++x) dst[x] = src[x] + b;
      }
  }
}

void conv_backward_padded(const double* in, const double* w, const double* dout, const ConvGeometry& g, int co,
                          double* din, double* dw, double* dbias) {
  const auto l = padded_layout(g);
  const std::size_t kvol = static_cast<std::size_t>(g.kz) * g.ky * g.kx;
  // Output gradient scattered into the padded span; positions that are not real outputs stay zero.
  RowMat gspan = RowMat::Zero(co, static_cast<Eigen::Index>(l.span));
  for (int o = 0; o < co; ++o)
    for (int z = 0; z < g.oz; ++z)
      for (int y = 0; y < g.oy; ++y) {
        const double* src = dout + ((static_cast<std::size_t>(o) * g.oz + z) * g.oy + y) * g.ox;
        double* dst = gspan.data() + static_cast<std::size_t>(o) * l.span + (static_cast<std::size_t>(z) * l.yp + y) * l.xp;
        std::copy_n(src, g.ox, dst);
        if (dbias) {
          double s = 0;
          for (int x = 0; x < g.ox; ++x) s += src[x];
          dbias[o] += s;
        }
      }
  std::vector<double> pin;
  if (dw) {
    pin.resize(l.plane * g.ci);
    pad_input(in, g, l, pin.data());
  }
  std::vector<double> pdin(din ? l.plane * g.ci : 0, 0.0);
  std::size_t k = 0;
  for (int dz = 0; dz < g.kz; ++dz)
    for (int dy = 0; dy < g.ky; ++dy)
      for (int dx = 0; dx < g.kx; ++dx, ++k) {
        const std::size_t shift = kernel_shift(l, dz, dy, dx);
        if (dw) {
          CStridedMap view(pin.data() + shift, g.ci, static_cast<Eigen::Index>(l.span),
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(l.plane)));
          const RowMat gw = gspan * view.transpose();
          for (int o = 0; o < co; ++o)
            for (int c = 0; c < g.ci; ++c) dw[(static_cast<std::size_t>(o) * g.ci + c) * kvol + k] += gw(o, c);
        }
        if (din) {
          StridedMap view(pdin.data() + shift, g.ci, static_cast<Eigen::Index>(l.span),
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(l.plane)));
          view.noalias() += kernel_slice(w, co, g, k).transpose() * gspan;
        }
      }
  if (din) {
    for (int c = 0; c < g.ci; ++c)
      for (int z = 0; z < g.z; ++z)
        for (int y = 0; y < g.y; ++y) {
          const double* src = pdin.data() + c * l.plane + (static_cast<std::size_t>(z + g.pz) * l.yp + (y + g.py)) * l.xp + g.px;
          double* dst = din + ((static_cast<std::size_t>(c) * g.z + z) * g.y + y) * g.x;
          for (int x = 0; x < g.x; ++x) dst[x] += src[x];
        }
  }
}

}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(z) + "," + std::to_string(y) + "," +
         std::to_string(x) + ")";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.numel(), 0.0);
  return grad;
}

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (root->value.numel() != 1) throw ValidationError("backward needs a scalar root");
  if (!root->requires_grad) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && p->backward_fn && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var conv3d(const Var& x, const Var& weight, const Var& bias, const Conv3dOptions& opt) {
  const Shape xs = x->shape();
  const Shape ws = weight->shape();
  if (ws.c != xs.c) throw ValidationError("conv3d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.c));
  if (bias && bias->value.numel() != static_cast<std::size_t>(ws.n)) throw ValidationError("conv3d: bias length mismatch");
  ConvGeometry g{xs.c, xs.z, xs.y, xs.x, ws.z, ws.y, ws.x, opt.stride[0], opt.stride[1], opt.stride[2],
                 opt.padding[0], opt.padding[1], opt.padding[2], 0, 0, 0};
  g.oz = conv_out(g.z, g.kz, g.sz, g.pz);
  g.oy = conv_out(g.y, g.ky, g.sy, g.py);
  g.ox = conv_out(g.x, g.kx, g.sx, g.px);
  if (g.oz < 1 || g.oy < 1 || g.ox < 1) throw ValidationError("conv3d: input " + xs.str() + " too small for kernel");
  const int co = ws.n;
  Tensor out(Shape{xs.n, co, g.oz, g.oy, g.ox});
  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.spatial();
  const std::size_t out_stride = static_cast<std::size_t>(co) * out.shape.spatial();
  const bool unit_stride = g.sz == 1 && g.sy == 1 && g.sx == 1;
  for (int n = 0; n < xs.n; ++n)
    (unit_stride ? conv_forward_padded : conv_forward)(x->value.data.data() + n * in_stride, weight->value.data.data(), bias ? bias->value.data.data() : nullptr,
                 g, co, out.data.data() + n * out_stride);
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [g, co, in_stride, out_stride](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    double* din = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
    double* dw = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
    double* db = bn && bn->requires_grad ? bn->grad_buffer().data() : nullptr;
    const bool unit_stride = g.sz == 1 && g.sy == 1 && g.sx == 1;
    for (int n = 0; n < self.value.shape.n; ++n)
      (unit_stride ? conv_backward_padded : conv_backward)(xn.value.data.data() + n * in_stride, wn.value.data.data(), self.grad.data() + n * out_stride, g, co,
                    din ? din + n * in_stride : nullptr, dw, db);
  });
}

Var upsample_nearest(const Var& x, int oz, int oy, int ox) {
  const Shape s = x->shape();
  Tensor out(Shape{s.n, s.c, oz, oy, ox});
  std::vector<std::size_t> src(out.shape.spatial());
  for (int z = 0; z < oz; ++z)
    for (int y = 0; y < oy; ++y)
      for (int xx = 0; xx < ox; ++xx) {
        const int iz = static_cast<int>(static_cast<long long>(z) * s.z / oz);
        const int iy = static_cast<int>(static_cast<long long>(y) * s.y / oy);
        const int ix = static_cast<int>(static_cast<long long>(xx) * s.x / ox);
        src[(static_cast<std::size_t>(z) * oy + y) * ox + xx] = (static_cast<std::size_t>(iz) * s.y + iy) * s.x + ix;
      }
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  const std::size_t in_sp = s.spatial(), out_sp = out.shape.spatial();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < out_sp; ++i) out.data[p * out_sp + i] = x->value.data[p * in_sp + src[i]];
  return make_result(std::move(out), {x}, [src = std::move(src), planes, in_sp, out_sp](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < out_sp; ++i) g[p * in_sp + src[i]] += self.grad[p * out_sp + i];
  });
}

Var instance_norm(const Var& x, double eps) {
  const Shape s = x->shape();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  const std::size_t sp = s.spatial();
  Tensor out(s);
  std::vector<double> inv_std(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* v = x->value.data.data() + p * sp;
    double mean = 0;
    for (std::size_t i = 0; i < sp; ++i) mean += v[i];
    mean /= static_cast<double>(sp);
    double var = 0;
    for (std::size_t i = 0; i < sp; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(sp);
    inv_std[p] = 1.0 / std::sqrt(var + eps);
    double* o = out.data.data() + p * sp;
    for (std::size_t i = 0; i < sp; ++i) o[i] = (v[i] - mean) * inv_std[p];
  }
  return make_result(std::move(out), {x}, [inv_std = std::move(inv_std), planes, sp](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const double* dy = self.grad.data() + p * sp;
      const double* y = self.value.data.data() + p * sp;
      double mdy = 0, mdyy = 0;
      for (std::size_t i = 0; i < sp; ++i) {
        mdy += dy[i];
        mdyy += dy[i] * y[i];
      }
      mdy /= static_cast<double>(sp);
      mdyy /= static_cast<double>(sp);
      double* dx = g.data() + p * sp;
      for (std::size_t i = 0; i < sp; ++i) dx[i] += inv_std[p] * (dy[i] - mdy - y[i] * mdyy);
    }
  });
}

namespace {

template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx_from_x_y) {
  Tensor out(x->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = f(x->value.data[i]);
  return make_result(std::move(out), {x}, [dfdx_from_x_y](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& xv = self.parents[0]->value.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx_from_x_y(xv[i], self.value.data[i]);
  });
}

}  // namespace

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; }, [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var scale(const Var& x, double factor) {
  return unary(x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto& g = self.parents[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto& g = self.parents[k]->grad_buffer();
      const auto& other = self.parents[1 - k]->value.data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape sa = a->shape(), sb = b->shape();
  if (sa.n != sb.n || sa.z != sb.z || sa.y != sb.y || sa.x != sb.x)
    throw ValidationError("concat: incompatible shapes " + sa.str() + " and " + sb.str());
  const std::size_t sp = sa.spatial();
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.z, sa.y, sa.x});
  const std::size_t la = sa.c * sp, lb = sb.c * sp;
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a->value.data.begin() + n * la, la, out.data.begin() + n * (la + lb));
    std::copy_n(b->value.data.begin() + n * lb, lb, out.data.begin() + n * (la + lb) + la);
  }
  return make_result(std::move(out), {a, b}, [la, lb, batch = sa.n](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto& g = self.parents[k]->grad_buffer();
      const std::size_t len = k == 0 ? la : lb;
      const std::size_t off = k == 0 ? 0 : la;
      for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < len; ++i) g[n * len + i] += self.grad[n * (la + lb) + off + i];
    }
  });
}

Var slice_channels(const Var& x, int start, int count) {
  const Shape s = x->shape();
  if (start < 0 || count < 1 || start + count > s.c) throw ValidationError("slice_channels out of range");
  const std::size_t sp = s.spatial();
  Tensor out(Shape{s.n, count, s.z, s.y, s.x});
  for (int n = 0; n < s.n; ++n)
    std::copy_n(x->value.data.begin() + (static_cast<std::size_t>(n) * s.c + start) * sp, count * sp,
                out.data.begin() + static_cast<std::size_t>(n) * count * sp);
  return make_result(std::move(out), {x}, [s, start, count, sp](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < count * sp; ++i)
        g[(static_cast<std::size_t>(n) * s.c + start) * sp + i] += self.grad[static_cast<std::size_t>(n) * count * sp + i];
  });
}

Var stack_z(const std::vector<Var>& steps) {
  if (steps.empty()) throw ValidationError("stack_z: no inputs");
  const Shape s0 = steps[0]->shape();
  if (s0.spatial() != 1) throw ValidationError("stack_z expects (N, C, 1, 1, 1) inputs");
  const int T = static_cast<int>(steps.size());
  Tensor out(Shape{s0.n, s0.c, T, 1, 1});
  for (int t = 0; t < T; ++t) {
    if (!(steps[t]->shape() == s0)) throw ValidationError("stack_z: inconsistent step shapes");
    for (int n = 0; n < s0.n; ++n)
      for (int c = 0; c < s0.c; ++c)
        out.data[(static_cast<std::size_t>(n) * s0.c + c) * T + t] = steps[t]->value.data[static_cast<std::size_t>(n) * s0.c + c];
  }
  return make_result(std::move(out), steps, [s0, T](Node& self) {
    for (int t = 0; t < T; ++t) {
      if (!self.parents[t]->requires_grad) continue;
      auto& g = self.parents[t]->grad_buffer();
      for (int n = 0; n < s0.n; ++n)
        for (int c = 0; c < s0.c; ++c)
          g[static_cast<std::size_t>(n) * s0.c + c] += self.grad[(static_cast<std::size_t>(n) * s0.c + c) * T + t];
    }
  });
}

Var flatten(const Var& x) {
  const Shape s = x->shape();
  Tensor out(Shape{s.n, static_cast<int>(s.c * s.spatial()), 1, 1, 1});
  out.data = x->value.data;
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x->shape(), ws = weight->shape();
  const int f = static_cast<int>(xs.c * xs.spatial());
  if (ws.c * static_cast<int>(ws.spatial()) != f) throw ValidationError("linear: feature size mismatch");
  const int o = ws.n;
  Tensor out(Shape{xs.n, o, 1, 1, 1});
  CMapMat X(x->value.data.data(), xs.n, f);
  CMapMat W(weight->value.data.data(), o, f);
  MapMat Y(out.data.data(), xs.n, o);
  Y.noalias() = X * W.transpose();
  if (bias) {
    for (int n = 0; n < xs.n; ++n)
      for (int k = 0; k < o; ++k) Y(n, k) += bias->value.data[k];
  }
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_result(std::move(out), std::move(parents), [n = xs.n, f, o](Node& self) {
    CMapMat dY(self.grad.data(), n, o);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    if (xn.requires_grad) {
      MapMat dX(xn.grad_buffer().data(), n, f);
      dX.noalias() += dY * CMapMat(wn.value.data.data(), o, f);
    }
    if (wn.requires_grad) {
      MapMat dW(wn.grad_buffer().data(), o, f);
      dW.noalias() += dY.transpose() * CMapMat(xn.value.data.data(), n, f);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& db = self.parents[2]->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < o; ++k) db[k] += dY(i, k);
    }
  });
}

Var film(const Var& x, const Var& gamma, const Var& beta) {
  const Shape s = x->shape();
  const std::size_t expect = static_cast<std::size_t>(s.n) * s.c;
  if (gamma->value.numel() != expect || beta->value.numel() != expect)
    throw ValidationError("film: gamma/beta length must equal the channel count");
  const std::size_t sp = s.spatial();
  Tensor out(s);
  for (std::size_t p = 0; p < expect; ++p) {
    const double gm = gamma->value.data[p], bt = beta->value.data[p];
    for (std::size_t i = 0; i < sp; ++i) out.data[p * sp + i] = gm * x->value.data[p * sp + i] + bt;
  }
  return make_result(std::move(out), {x, gamma, beta}, [expect, sp](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    for (std::size_t p = 0; p < expect; ++p) {
      double dg = 0, db = 0;
      const double gm = gn.value.data[p];
      for (std::size_t i = 0; i < sp; ++i) {
        const double d = self.grad[p * sp + i];
        dg += d * xn.value.data[p * sp + i];
        db += d;
      }
      if (xn.requires_grad) {
        auto& gx = xn.grad_buffer();
        for (std::size_t i = 0; i < sp; ++i) gx[p * sp + i] += gm * self.grad[p * sp + i];
      }
      if (gn.requires_grad) gn.grad_buffer()[p] += dg;
      if (bn.requires_grad) bn.grad_buffer()[p] += db;
    }
  });
}

Var detach(const Var& x) { return constant(x->value); }

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a->value.numel();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a->value.data[i] - b->value.data[i];
    acc += d * d;
  }
  Tensor out(Shape{}, acc / static_cast<double>(n));
  return make_result(std::move(out), {a, b}, [n](Node& self) {
    const double g0 = self.grad[0] * 2.0 / static_cast<double>(n);
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    for (int k = 0; k < 2; ++k) {
      if (!self.parents[k]->requires_grad) continue;
      auto& g = self.parents[k]->grad_buffer();
      const double sign = k == 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < n; ++i) g[i] += sign * g0 * (av[i] - bv[i]);
    }
  });
}

Var bce_with_logits(const Var& logits, double label) {
  const std::size_t n = logits->value.numel();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = logits->value.data[i];
    acc += std::max(l, 0.0) - l * label + std::log1p(std::exp(-std::abs(l)));
  }
  Tensor out(Shape{}, acc / static_cast<double>(n));
  return make_result(std::move(out), {logits}, [n, label](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& lv = self.parents[0]->value.data;
    const double g0 = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double l = lv[i];
      const double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
      g[i] += g0 * (s - label);
    }
  });
}

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.numel(), 0.0);
    v_.emplace_back(p->value.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->grad.clear();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    if (p.grad.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = opt_.beta1 * m[i] + (1 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1 - opt_.beta2) * g * g;
      p.value.data[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

Tensor random_normal(Shape s, Rng& rng, double sd) {
  Tensor t(s);
  for (auto& v : t.data) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace taigan::nn
