#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "cellseg/tensor.hpp"

namespace cellseg {

enum class LayerKind : std::uint32_t {
  kConv2d = 0,
  kRelu = 1,
  kMaxPool2x2 = 2,
  kUpsample2x = 3,
  kConcat = 4,
  kOutputHead = 5,  // linear conv, no activation; clamped to [0,1] at inference
};

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2x2: return "maxpool2x2";
    case LayerKind::kUpsample2x: return "upsample2x";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kOutputHead: return "output-head";
  }
  return "unknown";
}

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int kernel = 0;     // conv/output-head: odd kernel extent
  int stride = 1;     // convs are stride 1 (spatial dims preserved)
  int pad = 0;        // zero-fill same-padding, (kernel - 1) / 2
  int in_channels = 0;
  int out_channels = 0;
  int skip_from = -1;  // concat: index of the layer whose output is appended

  static LayerSpec conv(int in_ch, int out_ch, int kernel) {
    return {LayerKind::kConv2d, kernel, 1, (kernel - 1) / 2, in_ch, out_ch, -1};
  }
  static LayerSpec output_head(int in_ch, int out_ch) {
    return {LayerKind::kOutputHead, 1, 1, 0, in_ch, out_ch, -1};
  }
  static LayerSpec relu(int ch) {
    return {LayerKind::kRelu, 0, 1, 0, ch, ch, -1};
  }
  static LayerSpec maxpool(int ch) {
    return {LayerKind::kMaxPool2x2, 2, 2, 0, ch, ch, -1};
  }
  static LayerSpec upsample(int ch) {
    return {LayerKind::kUpsample2x, 2, 1, 0, ch, ch, -1};
  }
  static LayerSpec concat(int main_ch, int skip_ch, int skip_from) {
    return {LayerKind::kConcat, 0, 1, 0, main_ch, main_ch + skip_ch, skip_from};
  }

  bool has_parameters() const {
    return kind == LayerKind::kConv2d || kind == LayerKind::kOutputHead;
  }

  std::string describe() const {
    std::string s = layer_kind_name(kind);
    if (has_parameters())
      s += " " + std::to_string(in_channels) + "->" +
           std::to_string(out_channels) + " k" + std::to_string(kernel);
    else if (kind == LayerKind::kConcat)
      s += " +skip(" + std::to_string(skip_from) + ")";
    return s;
  }
};

// A layer with its parameters. Non-parametric kinds keep empty tensors.
// Conv weights are stored {out_channels, in_channels, k, k}, bias {out_channels}.
template <typename Scalar>
struct Layer {
  LayerSpec spec;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;

  Eigen::Index parameter_count() const {
    return weights.size() + bias.size();
  }
};

namespace detail {

inline void check_input_shape(const LayerSpec& spec, int layer_index,
                              const std::vector<Eigen::Index>& shape) {
  auto fail = [&](const std::string& why) {
    throw InvalidInput("layer " + std::to_string(layer_index) + " (" +
                       spec.describe() + "): " + why + ", input shape " +
                       TensorD::shape_string(shape));
  };
  if (shape.size() != 3) fail("expected a {C,H,W} tensor");
  if (shape[0] != spec.in_channels)
    fail("expected " + std::to_string(spec.in_channels) + " channels");
  if (spec.kind == LayerKind::kMaxPool2x2 && (shape[1] % 2 || shape[2] % 2))
    fail("pool needs even spatial extents");
}

// Patch matrix for stride-1 same-padded convolution: row (c*k + ki)*k + kj
// holds input channel c shifted by (ki - pad, kj - pad), zero outside.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> im2col(
    const Tensor<Scalar>& x, int kernel, int pad) {
  const Eigen::Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols(
      C * kernel * kernel, H * W);
  cols.setZero();
  for (Eigen::Index c = 0; c < C; ++c) {
    auto plane = x.channel(c);
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const Eigen::Index row = (c * kernel + ki) * kernel + kj;
        const Eigen::Index dy = ki - pad, dx = kj - pad;
        const Eigen::Index y0 = std::max<Eigen::Index>(0, -dy);
        const Eigen::Index y1 = std::min<Eigen::Index>(H, H - dy);
        const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
        const Eigen::Index x1 = std::min<Eigen::Index>(W, W - dx);
        if (y0 >= y1 || x0 >= x1) continue;
        auto dst = Eigen::Map<ImageT<Scalar>>(cols.row(row).data(), H, W);
        dst.block(y0, x0, y1 - y0, x1 - x0) =
            plane.block(y0 + dy, x0 + dx, y1 - y0, x1 - x0);
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-adds patch-matrix rows back into an image tensor.
template <typename Scalar>
Tensor<Scalar> col2im(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>&
        cols,
    Eigen::Index C, Eigen::Index H, Eigen::Index W, int kernel, int pad) {
  Tensor<Scalar> out({C, H, W});
  for (Eigen::Index c = 0; c < C; ++c) {
    auto plane = out.channel(c);
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const Eigen::Index row = (c * kernel + ki) * kernel + kj;
        const Eigen::Index dy = ki - pad, dx = kj - pad;
        const Eigen::Index y0 = std::max<Eigen::Index>(0, -dy);
        const Eigen::Index y1 = std::min<Eigen::Index>(H, H - dy);
        const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx);
        const Eigen::Index x1 = std::min<Eigen::Index>(W, W - dx);
        if (y0 >= y1 || x0 >= x1) continue;
        auto src = Eigen::Map<const ImageT<Scalar>>(cols.row(row).data(), H, W);
        plane.block(y0 + dy, x0 + dx, y1 - y0, x1 - x0) +=
            src.block(y0, x0, y1 - y0, x1 - x0);
      }
    }
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Layer<Scalar>& layer, const Tensor<Scalar>& x) {
  const auto& s = layer.spec;
  const Eigen::Index H = x.dim(1), W = x.dim(2);
  auto cols = detail::im2col(x, s.kernel, s.pad);
  auto wmat = layer.weights.as_matrix(s.out_channels,
                                      s.in_channels * s.kernel * s.kernel);
  Tensor<Scalar> out({s.out_channels, H, W});
  auto omat = out.as_matrix(s.out_channels, H * W);
  omat.noalias() = wmat * cols;
  omat.colwise() += layer.bias.flat().matrix();
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
  Tensor<Scalar> input;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Layer<Scalar>& layer,
                                  const Tensor<Scalar>& x,
                                  const Tensor<Scalar>& grad_out,
                                  bool want_param_grads) {
  const auto& s = layer.spec;
  const Eigen::Index H = x.dim(1), W = x.dim(2);
  const Eigen::Index patch = s.in_channels * s.kernel * s.kernel;
  auto wmat = layer.weights.as_matrix(s.out_channels, patch);
  auto gmat = grad_out.as_matrix(s.out_channels, H * W);

  ConvGrads<Scalar> grads;
  if (want_param_grads) {
    auto cols = detail::im2col(x, s.kernel, s.pad);
    grads.weights = Tensor<Scalar>(layer.weights.shape());
    grads.weights.as_matrix(s.out_channels, patch).noalias() =
        gmat * cols.transpose();
    grads.bias = Tensor<Scalar>(layer.bias.shape());
    grads.bias.flat() = gmat.rowwise().sum().array();
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcols(
      patch, H * W);
  gcols.noalias() = wmat.transpose() * gmat;
  grads.input = detail::col2im(gcols, s.in_channels, H, W, s.kernel, s.pad);
  return grads;
}

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.flat() = x.flat().max(Scalar(0));
  return out;
}

// Training rule: pass the gradient where the forward input was positive.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x,
                             const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> out(x.shape());
  out.flat() = (x.flat() > Scalar(0))
                   .select(grad_out.flat(), Tensor<Scalar>::Flat::Zero(x.size()));
  return out;
}

// Guided rule: the signal passes only where both the forward input and the
// incoming backward value are strictly positive.
template <typename Scalar>
Tensor<Scalar> relu_backward_guided(const Tensor<Scalar>& x,
                                    const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> out(x.shape());
  out.flat() = (x.flat() > Scalar(0) && grad_out.flat() > Scalar(0))
                   .select(grad_out.flat(), Tensor<Scalar>::Flat::Zero(x.size()));
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2x2_forward(const Tensor<Scalar>& x) {
  const Eigen::Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<Scalar> out({C, H / 2, W / 2});
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = x.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index y = 0; y < H / 2; ++y)
      for (Eigen::Index xx = 0; xx < W / 2; ++xx)
        o(y, xx) = in.block(2 * y, 2 * xx, 2, 2).maxCoeff();
  }
  return out;
}

// Gradient is routed to the first maximum in scan order within each window.
template <typename Scalar>
Tensor<Scalar> maxpool2x2_backward(const Tensor<Scalar>& x,
                                   const Tensor<Scalar>& grad_out) {
  const Eigen::Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<Scalar> out({C, H, W});
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = x.channel(c);
    auto g = grad_out.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index y = 0; y < H / 2; ++y) {
      for (Eigen::Index xx = 0; xx < W / 2; ++xx) {
        Eigen::Index by = 2 * y, bx = 2 * xx;
        Scalar best = in(by, bx);
        Eigen::Index my = by, mx = bx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            if (in(by + dy, bx + dx) > best) {
              best = in(by + dy, bx + dx);
              my = by + dy;
              mx = bx + dx;
            }
        o(my, mx) += g(y, xx);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample2x_forward(const Tensor<Scalar>& x) {
  const Eigen::Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<Scalar> out({C, 2 * H, 2 * W});
  for (Eigen::Index c = 0; c < C; ++c) {
    auto in = x.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index y = 0; y < H; ++y)
      for (Eigen::Index xx = 0; xx < W; ++xx)
        o.block(2 * y, 2 * xx, 2, 2).setConstant(in(y, xx));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample2x_backward(const Tensor<Scalar>& grad_out) {
  const Eigen::Index C = grad_out.dim(0), H2 = grad_out.dim(1),
                     W2 = grad_out.dim(2);
  Tensor<Scalar> out({C, H2 / 2, W2 / 2});
  for (Eigen::Index c = 0; c < C; ++c) {
    auto g = grad_out.channel(c);
    auto o = out.channel(c);
    for (Eigen::Index y = 0; y < H2 / 2; ++y)
      for (Eigen::Index xx = 0; xx < W2 / 2; ++xx)
        o(y, xx) = g.block(2 * y, 2 * xx, 2, 2).sum();
  }
  return out;
}

// Channel concatenation, main input first, skip input second.
template <typename Scalar>
Tensor<Scalar> concat_forward(const Tensor<Scalar>& main,
                              const Tensor<Scalar>& skip) {
  if (main.dim(1) != skip.dim(1) || main.dim(2) != skip.dim(2))
    throw InvalidInput("concat: spatial extents differ, " + main.shape_string() +
                       " vs " + skip.shape_string());
  Tensor<Scalar> out({main.dim(0) + skip.dim(0), main.dim(1), main.dim(2)});
  out.flat().head(main.size()) = main.flat();
  out.flat().tail(skip.size()) = skip.flat();
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> concat_backward(
    const Tensor<Scalar>& grad_out, Eigen::Index main_channels) {
  const Eigen::Index H = grad_out.dim(1), W = grad_out.dim(2);
  const Eigen::Index skip_channels = grad_out.dim(0) - main_channels;
  Tensor<Scalar> gmain({main_channels, H, W});
  Tensor<Scalar> gskip({skip_channels, H, W});
  gmain.flat() = grad_out.flat().head(gmain.size());
  gskip.flat() = grad_out.flat().tail(gskip.size());
  return {std::move(gmain), std::move(gskip)};
}

// Single-layer forward. `skip` is required for concat layers and ignored
// otherwise; `layer_index` only feeds diagnostics.
template <typename Scalar>
Tensor<Scalar> layer_forward(const Layer<Scalar>& layer, const Tensor<Scalar>& x,
                             const Tensor<Scalar>* skip = nullptr,
                             int layer_index = -1) {
  detail::check_input_shape(layer.spec, layer_index, x.shape());
  switch (layer.spec.kind) {
    case LayerKind::kConv2d:
    case LayerKind::kOutputHead:
      return conv2d_forward(layer, x);
    case LayerKind::kRelu:
      return relu_forward(x);
    case LayerKind::kMaxPool2x2:
      return maxpool2x2_forward(x);
    case LayerKind::kUpsample2x:
      return upsample2x_forward(x);
    case LayerKind::kConcat:
      if (!skip)
        throw InvalidInput("layer " + std::to_string(layer_index) +
                           ": concat needs its skip input");
      return concat_forward(x, *skip);
  }
  throw InvalidInput("layer_forward: unknown layer kind");
}

}  // namespace cellseg
