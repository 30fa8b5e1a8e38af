#pragma once

// Shared test utilities: random network construction and the independent
// oracles (finite differences, exhaustive min-cut) the suites check against.

#include <cmath>
#include <utility>
#include <vector>

#include "cellseg/network.hpp"
#include "cellseg/rng.hpp"
#include "cellseg/tensor.hpp"

namespace testutil {

inline cellseg::Layer<double> make_layer(cellseg::LayerSpec spec) {
  cellseg::Layer<double> l;
  l.spec = spec;
  if (spec.has_parameters()) {
    l.weights = cellseg::TensorD(
        {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
    l.bias = cellseg::TensorD({spec.out_channels});
  }
  return l;
}

inline cellseg::TensorD random_tensor(std::vector<Eigen::Index> shape,
                                      cellseg::Rng& rng, double scale = 1.0) {
  cellseg::TensorD t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

// Small networks covering every layer kind; topology and widths drawn from rng.
inline cellseg::NetworkD build_random_net(cellseg::Rng& rng, Eigen::Index& in_ch,
                                          Eigen::Index& height,
                                          Eigen::Index& width) {
  using namespace cellseg;
  const int topology = rng.uniform_int(0, 3);
  NetworkD net;
  auto add = [&](LayerSpec spec) { net.add_layer(make_layer(spec)); };
  switch (topology) {
    case 0: {  // plain conv stack
      const int c0 = rng.uniform_int(1, 3), c1 = rng.uniform_int(2, 6);
      in_ch = c0;
      height = width = 6;
      add(LayerSpec::conv(c0, c1, 3));
      add(LayerSpec::relu(c1));
      add(LayerSpec::conv(c1, 1, 3));
      break;
    }
    case 1: {  // pool / upsample round trip
      const int c0 = rng.uniform_int(1, 2), c1 = rng.uniform_int(2, 8);
      in_ch = c0;
      height = width = 8;
      add(LayerSpec::conv(c0, c1, 3));
      add(LayerSpec::relu(c1));
      add(LayerSpec::maxpool(c1));
      add(LayerSpec::conv(c1, c1, 3));
      add(LayerSpec::relu(c1));
      add(LayerSpec::upsample(c1));
      add(LayerSpec::output_head(c1, 1));
      break;
    }
    case 2: {  // skip concatenation
      in_ch = 1;
      height = width = 8;
      net = build_unet(2, rng.uniform_int(2, 3), 8);
      break;
    }
    default: {  // 1x1 convs only
      const int c0 = rng.uniform_int(1, 4), c1 = rng.uniform_int(1, 8);
      in_ch = c0;
      height = 4;
      width = 6;
      add(LayerSpec::conv(c0, c1, 1));
      add(LayerSpec::relu(c1));
      add(LayerSpec::conv(c1, 2, 1));
      break;
    }
  }
  init_weights(net, rng);
  return net;
}

inline double mse_loss(const cellseg::TensorD& y, const cellseg::TensorD& target) {
  return (y.flat() - target.flat()).square().mean();
}

inline cellseg::TensorD mse_grad(const cellseg::TensorD& y,
                                 const cellseg::TensorD& target) {
  cellseg::TensorD g(y.shape());
  g.flat() = 2.0 * (y.flat() - target.flat()) / static_cast<double>(y.size());
  return g;
}

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  Eigen::Index checked = 0;
};

// Central-difference check of every parameter gradient of `net` under an MSE
// loss against `target`. Returns the worst relative error observed.
inline FiniteDiffReport finite_difference_check(cellseg::NetworkD& net,
                                                const cellseg::TensorD& input,
                                                const cellseg::TensorD& target,
                                                double step = 1e-5) {
  using namespace cellseg;
  ForwardTrace<double> trace;
  TensorD y = net.forward(input, &trace);
  auto grads = net.backward_train(trace, mse_grad(y, target));

  auto loss_at = [&]() { return mse_loss(net.forward(input), target); };

  FiniteDiffReport report;
  auto check_tensor = [&](TensorD& params, const TensorD& analytic) {
    for (Eigen::Index j = 0; j < params.size(); ++j) {
      const double saved = params[j];
      params[j] = saved + step;
      const double lp = loss_at();
      params[j] = saved - step;
      const double lm = loss_at();
      params[j] = saved;
      const double fd = (lp - lm) / (2.0 * step);
      const double a = analytic[j];
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.checked;
    }
  };
  for (int i = 0; i < net.layer_count(); ++i) {
    if (!net.layer(i).spec.has_parameters()) continue;
    check_tensor(net.layer(i).weights, grads.weights[static_cast<std::size_t>(i)]);
    check_tensor(net.layer(i).bias, grads.biases[static_cast<std::size_t>(i)]);
  }
  return report;
}

}  // namespace testutil
