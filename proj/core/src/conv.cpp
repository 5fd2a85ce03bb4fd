#include <array>
#include <string>
#include <vector>

#include "adlj/autodiff.hpp"
#include "adlj/errors.hpp"

namespace adlj::ad {
namespace {

// Three spatial axes; conv2d runs with a unit-extent third axis and kernel depth 1.
struct ConvGeometry {
  std::size_t batch = 0, cin = 0, cout = 0;
  std::array<std::size_t, 3> in{}, out{}, k{};
  std::array<int, 3> pad{};
  int stride = 1;

  // lut[a][i * k[a] + kk]: output coordinate along axis a, or -1.
  std::array<std::vector<long>, 3> lut;

  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::size_t k_volume() const { return k[0] * k[1] * k[2]; }
};

// Output coordinate reached from input coordinate `i` through kernel tap `kk`,
// or -1 when the tap does not land on the strided output lattice.
inline long out_coord(std::size_t i, std::size_t kk, int pad, int stride, std::size_t extent) {
  const long num = static_cast<long>(i) + pad - static_cast<long>(kk);
  if (num < 0 || num % stride != 0) return -1;
  const long o = num / stride;
  return o < static_cast<long>(extent) ? o : -1;
}

// Visits every (input voxel, tap, output voxel) triple of one batch element's
// spatial lattice. fn(in_index, tap_index, out_index).
template <class Fn>
void for_each_tap(const ConvGeometry& g, std::size_t in_spatial, Fn&& fn) {
  const std::size_t iz = in_spatial % g.in[2];
  const std::size_t iy = (in_spatial / g.in[2]) % g.in[1];
  const std::size_t ix = in_spatial / (g.in[2] * g.in[1]);
  const long* lx = g.lut[0].data() + ix * g.k[0];
  const long* ly = g.lut[1].data() + iy * g.k[1];
  const long* lz = g.lut[2].data() + iz * g.k[2];
  for (std::size_t kx = 0; kx < g.k[0]; ++kx) {
    const long ox = lx[kx];
    if (ox < 0) continue;
    for (std::size_t ky = 0; ky < g.k[1]; ++ky) {
      const long oy = ly[ky];
      if (oy < 0) continue;
      const std::size_t row = (static_cast<std::size_t>(ox) * g.out[1] + static_cast<std::size_t>(oy)) * g.out[2];
      const std::size_t tap_row = (kx * g.k[1] + ky) * g.k[2];
      for (std::size_t kz = 0; kz < g.k[2]; ++kz) {
        const long oz = lz[kz];
        if (oz < 0) continue;
        fn(tap_row + kz, row + static_cast<std::size_t>(oz));
      }
    }
  }
}

std::size_t checked_out_extent(std::size_t in, std::size_t k, int pad, int stride, const char* axis) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
  if (span < 0) {
    throw ShapeError(std::string("conv: kernel larger than padded input along axis ") + axis);
  }
  return static_cast<std::size_t>(span / stride) + 1;
}

Var conv_impl(const Var& input, const Var& kernel, const Var& bias, int stride, int padding, bool two_d) {
  if (&input.tape() != &kernel.tape()) throw std::invalid_argument("conv: operands on different tapes");
  if (bias.valid() && &bias.tape() != &input.tape()) throw std::invalid_argument("conv: bias on a different tape");
  const char* op = two_d ? "conv2d" : "conv3d";
  const std::size_t spatial = two_d ? 2 : 3;
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  if (xs.size() != spatial + 2) {
    throw ShapeError(std::string(op) + ": input must have rank " + std::to_string(spatial + 2) + ", got " + shape_str(xs));
  }
  if (ks.size() != spatial + 2) {
    throw ShapeError(std::string(op) + ": kernel must have rank " + std::to_string(spatial + 2) + ", got " + shape_str(ks));
  }
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (padding < 0) throw ShapeError(std::string(op) + ": padding must be >= 0");
  if (ks[1] != xs[1]) {
    throw ShapeError(std::string(op) + ": axis 1 (input channels) mismatch: input " + std::to_string(xs[1]) +
                     " vs kernel " + std::to_string(ks[1]));
  }
  static constexpr const char* kAxisNames[] = {"2 (X)", "3 (Y)", "4 (Z)"};
  for (std::size_t a = 0; a < spatial; ++a) {
    if (ks[2 + a] % 2 == 0) throw ShapeError(std::string(op) + ": kernel extent on axis " + kAxisNames[a] + " must be odd");
  }
  if (bias.valid() && bias.shape() != Shape{ks[0]}) {
    throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(ks[0]) + "]");
  }

  ConvGeometry g;
  g.batch = xs[0];
  g.cin = xs[1];
  g.cout = ks[0];
  g.stride = stride;
  for (std::size_t a = 0; a < 3; ++a) {
    if (a < spatial) {
      g.in[a] = xs[2 + a];
      g.k[a] = ks[2 + a];
      g.pad[a] = padding;
      g.out[a] = checked_out_extent(g.in[a], g.k[a], padding, stride, kAxisNames[a]);
    } else {
      g.in[a] = g.k[a] = g.out[a] = 1;
      g.pad[a] = 0;
    }
    g.lut[a].resize(g.in[a] * g.k[a]);
    for (std::size_t i = 0; i < g.in[a]; ++i)
      for (std::size_t kk = 0; kk < g.k[a]; ++kk)
        g.lut[a][i * g.k[a] + kk] = out_coord(i, kk, g.pad[a], g.stride, g.out[a]);
  }

  Shape out_shape{g.batch, g.cout};
  for (std::size_t a = 0; a < spatial; ++a) out_shape.push_back(g.out[a]);
  Tensor out(out_shape);

  const auto& x = input.value().data;
  const auto& w = kernel.value().data;
  const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.k_volume();
  const std::size_t w_co_stride = g.cin * kv;

  if (bias.valid()) {
    const auto& b = bias.value().data;
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t co = 0; co < g.cout; ++co)
        std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>((n * g.cout + co) * vout), vout, b[co]);
  }

  for (std::size_t n = 0; n < g.batch; ++n) {
    double* y = out.data.data() + n * g.cout * vout;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* xc = x.data() + (n * g.cin + ci) * vin;
      const double* wc = w.data() + ci * kv;
      for (std::size_t s = 0; s < vin; ++s) {
        const double v = xc[s];
        if (v == 0.0) continue;
        for_each_tap(g, s, [&](std::size_t tap, std::size_t o) {
          for (std::size_t co = 0; co < g.cout; ++co) y[co * vout + o] += wc[co * w_co_stride + tap] * v;
        });
      }
    }
  }

  const auto ix = input.id(), ik = kernel.id();
  const bool has_bias = bias.valid();
  const auto ib = has_bias ? bias.id() : 0;
  const bool rg = input.requires_grad() || kernel.requires_grad() || (has_bias && bias.requires_grad());
  return input.tape().record(std::move(out), rg, [g, ix, ik, ib, has_bias](Tape& t, std::size_t self) {
    const auto& gy = t.grad(self);
    const auto& x = t.value(ix).data;
    const auto& w = t.value(ik).data;
    const std::size_t vin = g.in_volume(), vout = g.out_volume(), kv = g.k_volume();
    const std::size_t w_co_stride = g.cin * kv;

    if (has_bias && t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.cout; ++co) {
          const double* gp = gy.data() + (n * g.cout + co) * vout;
          double acc = 0.0;
          for (std::size_t o = 0; o < vout; ++o) acc += gp[o];
          gb[co] += acc;
        }
    }
    if (t.requires_grad(ik)) {
      auto& gw = t.grad(ik);
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* gyn = gy.data() + n * g.cout * vout;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
          const double* xc = x.data() + (n * g.cin + ci) * vin;
          double* gwc = gw.data() + ci * kv;
          for (std::size_t s = 0; s < vin; ++s) {
            const double v = xc[s];
            if (v == 0.0) continue;
            for_each_tap(g, s, [&](std::size_t tap, std::size_t o) {
              for (std::size_t co = 0; co < g.cout; ++co) gwc[co * w_co_stride + tap] += gyn[co * vout + o] * v;
            });
          }
        }
      }
    }
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* gyn = gy.data() + n * g.cout * vout;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
          double* gxc = gx.data() + (n * g.cin + ci) * vin;
          const double* wc = w.data() + ci * kv;
          for (std::size_t s = 0; s < vin; ++s) {
            double acc = 0.0;
            for_each_tap(g, s, [&](std::size_t tap, std::size_t o) {
              for (std::size_t co = 0; co < g.cout; ++co) acc += wc[co * w_co_stride + tap] * gyn[co * vout + o];
            });
            gxc[s] += acc;
          }
        }
      }
    }
  });
}

}  // namespace

Var conv3d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding) {
  return conv_impl(input, kernel, bias, stride, padding, false);
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding) {
  return conv_impl(input, kernel, bias, stride, padding, true);
}

}  // namespace adlj::ad
