#include "layers.hpp"

#include <algorithm>
#include <span>
#include <vector>

#include "fraclens/kernels.hpp"

namespace fraclens::detail {

namespace {

struct ConvGeometry {
  std::size_t in_c, in_h, in_w, out_c, out_h, out_w, k, pad;

  // Output columns [x0, x1) whose tap kx lands inside the input row.
  std::size_t x0(std::size_t kx) const { return pad > kx ? pad - kx : 0; }
  std::size_t x1(std::size_t kx) const { return std::min(out_w, in_w + pad - kx); }
};

ConvGeometry conv_geometry(const Model& model, std::size_t layer) {
  const auto& spec = model.layers()[layer];
  const auto& in = model.layer_input_shape(layer);
  const auto& out = model.layer_output_shape(layer);
  return {in[0], in[1], in[2], out[0], out[1], out[2], spec.kernel,
          spec.padding == Padding::same ? (spec.kernel - 1) / 2 : 0};
}

const Tensor& param(const Model& model, std::size_t layer, std::size_t slot) {
  return model.parameters()[model.layer_parameters(layer)[slot]].value;
}

// Column matrix [in_c * k * k, out_h * out_w]: row (i, ky, kx) holds the input
// pixel under tap (ky, kx) for every output position, 0 where it falls in padding.
std::vector<double> im2col(const ConvGeometry& g, const double* src) {
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<double> col(g.in_c * g.k * g.k * plane, 0.0);
  double* row_dst = col.data();
  for (std::size_t i = 0; i < g.in_c; ++i) {
    const double* in_plane = src + i * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, row_dst += plane) {
        const std::size_t x0 = g.x0(kx), x1 = g.x1(kx);
        if (x1 <= x0) continue;
        for (std::size_t y = 0; y < g.out_h; ++y) {
          const std::size_t iy_shift = y + ky;
          if (iy_shift < g.pad || iy_shift - g.pad >= g.in_h) continue;
          const double* row = in_plane + (iy_shift - g.pad) * g.in_w + (x0 + kx - g.pad);
          std::copy(row, row + (x1 - x0), row_dst + y * g.out_w + x0);
        }
      }
    }
  }
  return col;
}

// Adds each column-matrix row back onto the input positions it was read from.
void col2im_add(const ConvGeometry& g, const std::vector<double>& col, double* dst) {
  const std::size_t plane = g.out_h * g.out_w;
  const double* row_src = col.data();
  for (std::size_t i = 0; i < g.in_c; ++i) {
    double* in_plane = dst + i * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, row_src += plane) {
        const std::size_t x0 = g.x0(kx), x1 = g.x1(kx);
        if (x1 <= x0) continue;
        for (std::size_t y = 0; y < g.out_h; ++y) {
          const std::size_t iy_shift = y + ky;
          if (iy_shift < g.pad || iy_shift - g.pad >= g.in_h) continue;
          double* row = in_plane + (iy_shift - g.pad) * g.in_w + (x0 + kx - g.pad);
          const double* seg = row_src + y * g.out_w + x0;
          for (std::size_t x = 0; x < x1 - x0; ++x) row[x] += seg[x];
        }
      }
    }
  }
}

Tensor conv_forward(const Model& model, std::size_t layer, const Tensor& in) {
  const auto g = conv_geometry(model, layer);
  const auto& w = param(model, layer, 0);
  const auto& b = param(model, layer, 1);
  const std::size_t plane = g.out_h * g.out_w, taps = g.in_c * g.k * g.k;
  const auto col = im2col(g, in.data().data());
  Tensor out({g.out_c, g.out_h, g.out_w});
  for (std::size_t o = 0; o < g.out_c; ++o) {
    std::span<double> dst = out.data().subspan(o * plane, plane);
    std::fill(dst.begin(), dst.end(), b[o]);
    for (std::size_t t = 0; t < taps; ++t) {
      const double wv = w[o * taps + t];
      if (wv != 0.0) kernels::axpy(wv, {col.data() + t * plane, plane}, dst);
    }
  }
  return out;
}

Tensor conv_backward_input(const Model& model, std::size_t layer, const Tensor& grad_out) {
  const auto g = conv_geometry(model, layer);
  const auto& w = param(model, layer, 0);
  const std::size_t plane = g.out_h * g.out_w, taps = g.in_c * g.k * g.k;
  std::vector<double> gcol(taps * plane, 0.0);
  for (std::size_t o = 0; o < g.out_c; ++o) {
    const std::span<const double> go = grad_out.data().subspan(o * plane, plane);
    for (std::size_t t = 0; t < taps; ++t) {
      const double wv = w[o * taps + t];
      if (wv != 0.0) kernels::axpy(wv, go, {gcol.data() + t * plane, plane});
    }
  }
  Tensor gin({g.in_c, g.in_h, g.in_w});
  col2im_add(g, gcol, gin.data().data());
  return gin;
}

void conv_backward_params(const Model& model, std::size_t layer, const Tensor& in, const Tensor& grad_out,
                          Tensor* gw, Tensor* gb) {
  const auto g = conv_geometry(model, layer);
  const std::size_t plane = g.out_h * g.out_w, taps = g.in_c * g.k * g.k;
  std::vector<double> col;
  if (gw) col = im2col(g, in.data().data());
  for (std::size_t o = 0; o < g.out_c; ++o) {
    const std::span<const double> go = grad_out.data().subspan(o * plane, plane);
    if (gb) {
      double s = 0.0;
      for (double v : go) s += v;
      (*gb)[o] += s;
    }
    if (!gw) continue;
    for (std::size_t t = 0; t < taps; ++t) (*gw)[o * taps + t] += kernels::dot(go, {col.data() + t * plane, plane});
  }
}

}  // namespace

bool is_affine(LayerKind kind) {
  return kind != LayerKind::relu && kind != LayerKind::maxpool2;
}

Tensor layer_forward(const Model& model, std::size_t layer, const Tensor& in, std::vector<std::uint32_t>* argmax) {
  const auto& spec = model.layers()[layer];
  const auto& out_shape = model.layer_output_shape(layer);
  switch (spec.kind) {
    case LayerKind::standardize: {
      const auto& scale = param(model, layer, 0);
      const auto& shift = param(model, layer, 1);
      Tensor out = in;
      const std::size_t plane = in.dim(1) * in.dim(2);
      for (std::size_t c = 0; c < in.dim(0); ++c)
        for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = in[c * plane + p] * scale[c] + shift[c];
      return out;
    }
    case LayerKind::conv2d:
      return conv_forward(model, layer, in);
    case LayerKind::relu: {
      Tensor out = in;
      for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::maxpool2: {
      Tensor out(out_shape);
      const std::size_t h = in.dim(1), w = in.dim(2);
      if (argmax) argmax->assign(out.size(), 0);
      std::size_t k = 0;
      for (std::size_t c = 0; c < out_shape[0]; ++c)
        for (std::size_t y = 0; y < out_shape[1]; ++y)
          for (std::size_t x = 0; x < out_shape[2]; ++x, ++k) {
            const std::size_t base = (c * h + 2 * y) * w + 2 * x;
            const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
            std::size_t best = cand[0];
            // strict > keeps the first row-major maximum on ties
            for (int t = 1; t < 4; ++t)
              if (in[cand[t]] > in[best]) best = cand[t];
            out[k] = in[best];
            if (argmax) (*argmax)[k] = static_cast<std::uint32_t>(best);
          }
      return out;
    }
    case LayerKind::global_avg_pool: {
      Tensor out(out_shape);
      const std::size_t plane = in.dim(1) * in.dim(2);
      for (std::size_t c = 0; c < in.dim(0); ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += in[c * plane + p];
        out[c] = s / static_cast<double>(plane);
      }
      return out;
    }
    case LayerKind::flatten:
      return in.reshaped(out_shape);
    case LayerKind::dense: {
      const auto& w = param(model, layer, 0);
      const auto& b = param(model, layer, 1);
      const std::size_t n = in.size();
      Tensor out(out_shape);
      for (std::size_t u = 0; u < spec.units; ++u)
        out[u] = b[u] + kernels::dot({w.data().data() + u * n, n}, in.data());
      return out;
    }
  }
  return in;
}

Tensor layer_backward_input(const Model& model, std::size_t layer, const Tensor& in,
                            const std::vector<std::uint32_t>& argmax, const Tensor& grad_out) {
  const auto& spec = model.layers()[layer];
  const auto& in_shape = model.layer_input_shape(layer);
  switch (spec.kind) {
    case LayerKind::standardize: {
      const auto& scale = param(model, layer, 0);
      Tensor gin = grad_out;
      const std::size_t plane = in_shape[1] * in_shape[2];
      for (std::size_t c = 0; c < in_shape[0]; ++c)
        for (std::size_t p = 0; p < plane; ++p) gin[c * plane + p] *= scale[c];
      return gin;
    }
    case LayerKind::conv2d:
      return conv_backward_input(model, layer, grad_out);
    case LayerKind::relu: {
      Tensor gin = grad_out;
      for (std::size_t i = 0; i < gin.size(); ++i)
        if (!(in[i] > 0.0)) gin[i] = 0.0;
      return gin;
    }
    case LayerKind::maxpool2: {
      Tensor gin(in_shape);
      for (std::size_t k = 0; k < grad_out.size(); ++k) gin[argmax[k]] += grad_out[k];
      return gin;
    }
    case LayerKind::global_avg_pool: {
      Tensor gin(in_shape);
      const std::size_t plane = in_shape[1] * in_shape[2];
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t c = 0; c < in_shape[0]; ++c)
        for (std::size_t p = 0; p < plane; ++p) gin[c * plane + p] = grad_out[c] * inv;
      return gin;
    }
    case LayerKind::flatten:
      return grad_out.reshaped(in_shape);
    case LayerKind::dense: {
      const auto& w = param(model, layer, 0);
      const std::size_t n = in_shape[0];
      Tensor gin(in_shape);
      for (std::size_t u = 0; u < spec.units; ++u)
        kernels::axpy(grad_out[u], {w.data().data() + u * n, n}, gin.data());
      return gin;
    }
  }
  return grad_out;
}

void layer_backward_params(const Model& model, std::size_t layer, const Tensor& in, const Tensor& grad_out,
                           std::vector<Tensor>& grads) {
  const auto& spec = model.layers()[layer];
  const auto ids = model.layer_parameters(layer);
  if (ids.empty()) return;
  const auto& params = model.parameters();
  auto slot = [&](std::size_t s) -> Tensor* {
    const std::size_t id = ids[s];
    if (!params[id].trainable) return nullptr;
    if (grads[id].empty()) grads[id] = Tensor(params[id].value.shape(), 0.0);
    return &grads[id];
  };
  switch (spec.kind) {
    case LayerKind::standardize: {
      Tensor* gs = slot(0);
      Tensor* gt = slot(1);
      const std::size_t plane = in.dim(1) * in.dim(2);
      for (std::size_t c = 0; c < in.dim(0); ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          if (gs) (*gs)[c] += grad_out[c * plane + p] * in[c * plane + p];
          if (gt) (*gt)[c] += grad_out[c * plane + p];
        }
      break;
    }
    case LayerKind::conv2d: {
      Tensor* gw = slot(0);
      Tensor* gb = slot(1);
      if (gw || gb) conv_backward_params(model, layer, in, grad_out, gw, gb);
      break;
    }
    case LayerKind::dense: {
      Tensor* gw = slot(0);
      Tensor* gb = slot(1);
      const std::size_t n = in.size();
      for (std::size_t u = 0; u < spec.units; ++u) {
        if (gw) kernels::axpy(grad_out[u], in.data(), {gw->data().data() + u * n, n});
        if (gb) (*gb)[u] += grad_out[u];
      }
      break;
    }
    default:
      break;
  }
}

}  // namespace fraclens::detail
