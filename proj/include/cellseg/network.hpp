#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cellseg/layers.hpp"
#include "cellseg/rng.hpp"
#include "cellseg/tensor.hpp"

namespace cellseg {

// Recorded activations of one forward evaluation: the network input plus each
// layer's output in order. Immutable once `complete`; a layer's input is the
// previous layer's output (plus the skip source for concat layers).
template <typename Scalar>
struct ForwardTrace {
  Tensor<Scalar> input;
  std::vector<Tensor<Scalar>> outputs;
  bool complete = false;

  const Tensor<Scalar>& layer_input(int i) const {
    return i == 0 ? input : outputs[static_cast<std::size_t>(i) - 1];
  }
};

template <typename Scalar>
struct NetworkGradients {
  std::vector<Tensor<Scalar>> weights;  // one per layer, empty when non-parametric
  std::vector<Tensor<Scalar>> biases;
  Tensor<Scalar> input;
};

// Fixed feed-forward layer chain with optional skip edges consumed by concat
// layers. Parameters are mutated only by training; all evaluation paths are
// const and safe to run concurrently.
template <typename Scalar>
class Network {
 public:
  Network() = default;

  void add_layer(Layer<Scalar> layer) { layers_.push_back(std::move(layer)); }

  int layer_count() const { return static_cast<int>(layers_.size()); }
  const Layer<Scalar>& layer(int i) const {
    return layers_[static_cast<std::size_t>(i)];
  }
  Layer<Scalar>& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }
  const std::vector<Layer<Scalar>>& layers() const { return layers_; }

  int input_size() const { return input_size_; }
  void set_input_size(int n) { input_size_ = n; }
  double sigma_ref() const { return sigma_ref_; }
  void set_sigma_ref(double s) { sigma_ref_ = s; }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& input,
                         ForwardTrace<Scalar>* trace = nullptr) const {
    if (layers_.empty()) throw InvalidInput("network: no layers");
    if (trace) {
      trace->input = input;
      trace->outputs.clear();
      trace->outputs.reserve(layers_.size());
      trace->complete = false;
    }
    // Without a trace, only outputs a later concat reads are retained.
    std::vector<Tensor<Scalar>> kept;
    if (!trace) kept.resize(layers_.size());
    Tensor<Scalar> current = input;
    for (int i = 0; i < layer_count(); ++i) {
      const auto& spec = layers_[static_cast<std::size_t>(i)].spec;
      const Tensor<Scalar>* skip = nullptr;
      if (spec.kind == LayerKind::kConcat) {
        if (spec.skip_from < 0 || spec.skip_from >= i)
          throw InvalidInput("network: concat at layer " + std::to_string(i) +
                             " references layer " + std::to_string(spec.skip_from));
        skip = trace ? &trace->outputs[static_cast<std::size_t>(spec.skip_from)]
                     : &kept[static_cast<std::size_t>(spec.skip_from)];
        if (skip->empty())
          throw InvalidInput("network: concat skip source was not retained");
      }
      Tensor<Scalar> out =
          layer_forward(layers_[static_cast<std::size_t>(i)], current, skip, i);
      if (trace)
        trace->outputs.push_back(out);
      else if (is_skip_source(i))
        kept[static_cast<std::size_t>(i)] = out;
      current = std::move(out);
    }
    if (trace) trace->complete = true;
    return current;
  }

  // Propagates a loss gradient at the network output back to every parameter
  // and to the input, replaying activations from the trace.
  NetworkGradients<Scalar> backward_train(const ForwardTrace<Scalar>& trace,
                                          const Tensor<Scalar>& loss_grad) const {
    return backward_impl(trace, loss_grad, /*guided=*/false);
  }

  // Input-shaped map from the guided rule: identical to backward_train except
  // at ReLU layers, where both the forward input and the incoming backward
  // value must be strictly positive for the signal to pass.
  Tensor<Scalar> backward_guided(const ForwardTrace<Scalar>& trace,
                                 const Tensor<Scalar>& seed_grad) const {
    return backward_impl(trace, seed_grad, /*guided=*/true).input;
  }

 private:
  bool is_skip_source(int i) const {
    for (const auto& l : layers_)
      if (l.spec.kind == LayerKind::kConcat && l.spec.skip_from == i) return true;
    return false;
  }

  void check_trace(const ForwardTrace<Scalar>& trace,
                   const Tensor<Scalar>& out_grad) const {
    if (!trace.complete)
      throw InvalidInput("backward: trace recording is incomplete");
    if (static_cast<int>(trace.outputs.size()) != layer_count())
      throw InvalidInput("backward: trace has " +
                         std::to_string(trace.outputs.size()) +
                         " layer records, network has " +
                         std::to_string(layer_count()));
    for (int i = 0; i < layer_count(); ++i) {
      const auto& spec = layers_[static_cast<std::size_t>(i)].spec;
      const auto& in = trace.layer_input(i);
      if (in.rank() != 3 || in.dim(0) != spec.in_channels)
        throw InvalidInput("backward: trace does not match network at layer " +
                           std::to_string(i) + " (" + spec.describe() + ")");
    }
    if (!out_grad.same_shape(trace.outputs.back()))
      throw InvalidInput("backward: output gradient shape " +
                         out_grad.shape_string() + " does not match trace " +
                         trace.outputs.back().shape_string());
  }

  static void accumulate(Tensor<Scalar>& acc, Tensor<Scalar>&& g) {
    if (acc.empty())
      acc = std::move(g);
    else
      acc.flat() += g.flat();
  }

  NetworkGradients<Scalar> backward_impl(const ForwardTrace<Scalar>& trace,
                                         const Tensor<Scalar>& out_grad,
                                         bool guided) const {
    check_trace(trace, out_grad);
    const int n = layer_count();
    NetworkGradients<Scalar> grads;
    grads.weights.resize(static_cast<std::size_t>(n));
    grads.biases.resize(static_cast<std::size_t>(n));

    // grad_out[i] collects the gradient w.r.t. layer i's output; skip edges
    // from later concat layers accumulate here before layer i is visited.
    std::vector<Tensor<Scalar>> grad_out(static_cast<std::size_t>(n));
    grad_out[static_cast<std::size_t>(n) - 1] = out_grad;

    for (int i = n - 1; i >= 0; --i) {
      const auto& layer = layers_[static_cast<std::size_t>(i)];
      const auto& x = trace.layer_input(i);
      Tensor<Scalar>& g = grad_out[static_cast<std::size_t>(i)];
      if (g.empty()) g = Tensor<Scalar>(trace.outputs[static_cast<std::size_t>(i)].shape());

      Tensor<Scalar> gx;
      switch (layer.spec.kind) {
        case LayerKind::kConv2d:
        case LayerKind::kOutputHead: {
          auto cg = conv2d_backward(layer, x, g, /*want_param_grads=*/!guided);
          if (!guided) {
            grads.weights[static_cast<std::size_t>(i)] = std::move(cg.weights);
            grads.biases[static_cast<std::size_t>(i)] = std::move(cg.bias);
          }
          gx = std::move(cg.input);
          break;
        }
        case LayerKind::kRelu:
          gx = guided ? relu_backward_guided(x, g) : relu_backward(x, g);
          break;
        case LayerKind::kMaxPool2x2:
          gx = maxpool2x2_backward(x, g);
          break;
        case LayerKind::kUpsample2x:
          gx = upsample2x_backward(g);
          break;
        case LayerKind::kConcat: {
          auto [gmain, gskip] = concat_backward(g, x.dim(0));
          accumulate(grad_out[static_cast<std::size_t>(layer.spec.skip_from)],
                     std::move(gskip));
          gx = std::move(gmain);
          break;
        }
      }
      g = Tensor<Scalar>();  // done with this layer's output gradient
      if (i == 0)
        accumulate(grads.input, std::move(gx));
      else
        accumulate(grad_out[static_cast<std::size_t>(i) - 1], std::move(gx));
    }
    return grads;
  }

  std::vector<Layer<Scalar>> layers_;
  int input_size_ = 0;
  double sigma_ref_ = 0.0;
};

using NetworkD = Network<double>;

// Symmetric encoder/decoder with skip concatenation. `depth` encoder levels
// double the channel count per level; nearest-neighbor upsampling plus conv
// on the way back; a linear 1x1 head emits the single-channel map.
template <typename Scalar = double>
Network<Scalar> build_unet(int depth, int base_channels, int input_size,
                           int in_channels = 1) {
  if (depth < 1) throw InvalidInput("unet: depth must be >= 1");
  if (base_channels < 1) throw InvalidInput("unet: base_channels must be >= 1");
  if (input_size < (1 << depth) || input_size % (1 << depth) != 0)
    throw InvalidInput("unet: input size " + std::to_string(input_size) +
                       " must be a positive multiple of 2^depth");
  auto ch = [&](int level) { return base_channels << level; };

  Network<Scalar> net;
  net.set_input_size(input_size);
  std::vector<int> skip_index(static_cast<std::size_t>(depth), -1);

  auto add = [&](LayerSpec spec) {
    Layer<Scalar> l;
    l.spec = spec;
    if (spec.has_parameters()) {
      l.weights = Tensor<Scalar>({spec.out_channels, spec.in_channels,
                                  spec.kernel, spec.kernel});
      l.bias = Tensor<Scalar>({spec.out_channels});
    }
    net.add_layer(std::move(l));
    return net.layer_count() - 1;
  };

  int in_ch = in_channels;
  for (int d = 0; d < depth; ++d) {
    if (d > 0) add(LayerSpec::maxpool(in_ch));
    add(LayerSpec::conv(in_ch, ch(d), 3));
    add(LayerSpec::relu(ch(d)));
    add(LayerSpec::conv(ch(d), ch(d), 3));
    skip_index[static_cast<std::size_t>(d)] = add(LayerSpec::relu(ch(d)));
    in_ch = ch(d);
  }
  for (int d = depth - 2; d >= 0; --d) {
    add(LayerSpec::upsample(in_ch));
    add(LayerSpec::concat(in_ch, ch(d), skip_index[static_cast<std::size_t>(d)]));
    add(LayerSpec::conv(in_ch + ch(d), ch(d), 3));
    add(LayerSpec::relu(ch(d)));
    add(LayerSpec::conv(ch(d), ch(d), 3));
    add(LayerSpec::relu(ch(d)));
    in_ch = ch(d);
  }
  add(LayerSpec::output_head(in_ch, 1));
  return net;
}

// Fan-in-scaled Gaussian weights, zero biases.
template <typename Scalar>
void init_weights(Network<Scalar>& net, Rng& rng) {
  for (int i = 0; i < net.layer_count(); ++i) {
    auto& l = net.layer(i);
    if (!l.spec.has_parameters()) continue;
    const double fan_in =
        static_cast<double>(l.spec.in_channels) * l.spec.kernel * l.spec.kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    for (Eigen::Index j = 0; j < l.weights.size(); ++j)
      l.weights[j] = static_cast<Scalar>(rng.normal(0.0, stddev));
    l.bias.flat().setZero();
  }
}

template <typename Scalar>
std::uint64_t parameter_checksum(const Network<Scalar>& net) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& l : net.layers()) {
    if (!l.spec.has_parameters()) continue;
    h = fnv1a64(l.weights.data(), sizeof(Scalar) * static_cast<std::size_t>(
                                      l.weights.size()), h);
    h = fnv1a64(l.bias.data(),
                sizeof(Scalar) * static_cast<std::size_t>(l.bias.size()), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Flat binary container: fixed header, per-layer spec records, then raw
// little-endian 64-bit parameter arrays in layer order. Round-trips bit-exact.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "network container assumes a little-endian host");

inline constexpr char kNetMagic[8] = {'C', 'S', 'E', 'G', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t kNetVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InvalidInput("network container: truncated while reading " + what);
  return v;
}

}  // namespace detail

inline void save_network(const std::string& path, const Network<double>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot open " + path + " for writing");
  os.write(detail::kNetMagic, sizeof(detail::kNetMagic));
  detail::write_pod(os, detail::kNetVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(net.layer_count()));
  detail::write_pod(os, static_cast<std::int32_t>(net.input_size()));
  detail::write_pod(os, net.sigma_ref());
  for (const auto& l : net.layers()) {
    detail::write_pod(os, static_cast<std::uint32_t>(l.spec.kind));
    detail::write_pod(os, static_cast<std::int32_t>(l.spec.kernel));
    detail::write_pod(os, static_cast<std::int32_t>(l.spec.stride));
    detail::write_pod(os, static_cast<std::int32_t>(l.spec.pad));
    detail::write_pod(os, static_cast<std::int32_t>(l.spec.in_channels));
    detail::write_pod(os, static_cast<std::int32_t>(l.spec.out_channels));
    detail::write_pod(os, static_cast<std::int32_t>(l.spec.skip_from));
    detail::write_pod(os, static_cast<std::uint64_t>(l.weights.size()));
    detail::write_pod(os, static_cast<std::uint64_t>(l.bias.size()));
  }
  for (const auto& l : net.layers()) {
    os.write(reinterpret_cast<const char*>(l.weights.data()),
             static_cast<std::streamsize>(sizeof(double) * l.weights.size()));
    os.write(reinterpret_cast<const char*>(l.bias.data()),
             static_cast<std::streamsize>(sizeof(double) * l.bias.size()));
  }
  if (!os) throw InvalidInput("failed while writing " + path);
}

inline Network<double> load_network(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open model file " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kNetMagic, sizeof(magic)) != 0)
    throw InvalidInput(path + ": not a network container (bad magic)");
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != detail::kNetVersion)
    throw InvalidInput(path + ": unsupported container version " +
                       std::to_string(version));
  const auto layer_count = detail::read_pod<std::uint32_t>(is, "layer count");
  if (layer_count == 0 || layer_count > 4096)
    throw InvalidInput(path + ": implausible layer count " +
                       std::to_string(layer_count));
  Network<double> net;
  net.set_input_size(detail::read_pod<std::int32_t>(is, "input size"));
  net.set_sigma_ref(detail::read_pod<double>(is, "sigma"));
  struct Counts { std::uint64_t w, b; };
  std::vector<Counts> counts;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec spec;
    const auto kind = detail::read_pod<std::uint32_t>(is, "layer kind");
    if (kind > static_cast<std::uint32_t>(LayerKind::kOutputHead))
      throw InvalidInput(path + ": unknown layer kind " + std::to_string(kind));
    spec.kind = static_cast<LayerKind>(kind);
    spec.kernel = detail::read_pod<std::int32_t>(is, "kernel");
    spec.stride = detail::read_pod<std::int32_t>(is, "stride");
    spec.pad = detail::read_pod<std::int32_t>(is, "pad");
    spec.in_channels = detail::read_pod<std::int32_t>(is, "in channels");
    spec.out_channels = detail::read_pod<std::int32_t>(is, "out channels");
    spec.skip_from = detail::read_pod<std::int32_t>(is, "skip index");
    const auto w = detail::read_pod<std::uint64_t>(is, "weight count");
    const auto b = detail::read_pod<std::uint64_t>(is, "bias count");
    const std::uint64_t expect_w =
        spec.has_parameters() ? static_cast<std::uint64_t>(spec.out_channels) *
                                    spec.in_channels * spec.kernel * spec.kernel
                              : 0;
    const std::uint64_t expect_b =
        spec.has_parameters() ? static_cast<std::uint64_t>(spec.out_channels) : 0;
    if (w != expect_w || b != expect_b)
      throw InvalidInput(path + ": parameter counts disagree with layer spec at layer " +
                         std::to_string(i));
    Layer<double> l;
    l.spec = spec;
    net.add_layer(std::move(l));
    counts.push_back({w, b});
  }
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    auto& l = net.layer(static_cast<int>(i));
    if (!l.spec.has_parameters()) continue;
    l.weights = Tensor<double>({l.spec.out_channels, l.spec.in_channels,
                                l.spec.kernel, l.spec.kernel});
    l.bias = Tensor<double>({l.spec.out_channels});
    is.read(reinterpret_cast<char*>(l.weights.data()),
            static_cast<std::streamsize>(sizeof(double) * counts[i].w));
    is.read(reinterpret_cast<char*>(l.bias.data()),
            static_cast<std::streamsize>(sizeof(double) * counts[i].b));
    if (!is)
      throw InvalidInput(path + ": truncated parameter data at layer " +
                         std::to_string(i));
  }
  return net;
}

}  // namespace cellseg
