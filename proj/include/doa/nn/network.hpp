#pragma once

// Network description, parameter storage, and batched forward/backward passes.

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "doa/errors.hpp"
#include "doa/nn/layers.hpp"
#include "doa/random.hpp"
#include "doa/tensor.hpp"

namespace doa::nn {

struct Conv2D {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};
struct BatchNorm {};
struct ReLU {};
struct Flatten {};
struct Dense {
  std::size_t units = 0;
};
struct Dropout {
  double rate = 0.2;
};
struct Sigmoid {};

using LayerSpec = std::variant<Conv2D, BatchNorm, ReLU, Flatten, Dense, Dropout, Sigmoid>;

inline std::string layer_name(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2D>) return "conv2d";
        else if constexpr (std::is_same_v<T, BatchNorm>) return "batchnorm";
        else if constexpr (std::is_same_v<T, ReLU>) return "relu";
        else if constexpr (std::is_same_v<T, Flatten>) return "flatten";
        else if constexpr (std::is_same_v<T, Dense>) return "dense";
        else if constexpr (std::is_same_v<T, Dropout>) return "dropout";
        else return "sigmoid";
      },
      layer);
}

struct NetworkSpec {
  std::size_t input_size = 16;  ///< N, input is N x N x channels
  std::size_t input_channels = 3;
  std::vector<LayerSpec> layers;

  /// Shape entering each layer plus the final output shape (layers.size() + 1
  /// entries). Throws DomainError on any incompatible chain.
  [[nodiscard]] std::vector<Shape> shapes() const {
    std::vector<Shape> out{{input_size, input_size, input_channels}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Shape& in = out.back();
      const std::string where = "layer " + std::to_string(l + 1) + " (" + layer_name(layers[l]) + ")";
      Shape next = std::visit(
          [&](const auto& layer) -> Shape {
            using T = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<T, Conv2D>) {
              if (in.size() != 3) throw DomainError(where + ": convolution needs a 3-D input");
              const std::size_t h = conv_output_dim(in[0], layer.kernel, layer.stride);
              const std::size_t w = conv_output_dim(in[1], layer.kernel, layer.stride);
              if (h == 0 || w == 0 || layer.filters == 0) {
                throw DomainError(where + ": output dimension reaches 0 from input " + shape_string(in));
              }
              return {h, w, layer.filters};
            } else if constexpr (std::is_same_v<T, Flatten>) {
              return {shape_size(in)};
            } else if constexpr (std::is_same_v<T, Dense>) {
              if (in.size() != 1) throw DomainError(where + ": dense layer needs a flattened input");
              if (layer.units == 0) throw DomainError(where + ": zero units");
              return {layer.units};
            } else if constexpr (std::is_same_v<T, Dropout>) {
              if (!(layer.rate >= 0.0 && layer.rate < 1.0)) throw DomainError(where + ": rate must be in [0, 1)");
              return in;
            } else {
              return in;
            }
          },
          layers[l]);
      out.push_back(std::move(next));
    }
    return out;
  }

  [[nodiscard]] Shape output_shape() const { return shapes().back(); }

  void validate() const { static_cast<void>(shapes()); }

  /// Trainable parameters: conv (k k C_in) n_C + n_C, dense M_in M_out + M_out,
  /// batch norm gain + shift per channel.
  [[nodiscard]] std::size_t parameter_count() const {
    const auto s = shapes();
    std::size_t total = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Shape& in = s[l];
      if (const auto* c = std::get_if<Conv2D>(&layers[l])) {
        total += c->kernel * c->kernel * in[2] * c->filters + c->filters;
      } else if (const auto* d = std::get_if<Dense>(&layers[l])) {
        total += in[0] * d->units + d->units;
      } else if (std::holds_alternative<BatchNorm>(layers[l])) {
        total += 2 * in.back();
      }
    }
    return total;
  }
};

/// Four conv blocks (Conv2D, BatchNorm, ReLU), Flatten, three
/// (Dense, ReLU, Dropout) blocks, Dense, Sigmoid: 24 layers.
struct ArchitectureConfig {
  std::size_t n_sensors = 16;
  std::size_t outputs = 121;
  std::size_t filters = 256;
  std::size_t first_kernel = 3;
  std::size_t first_stride = 2;
  std::size_t kernel = 2;
  std::vector<std::size_t> hidden = {4096, 2048, 1024};
  double dropout = 0.2;
};

inline ArchitectureConfig paper_profile() { return {}; }

/// Desk-scale profile. With N = 8 the first convolution uses stride 1: stride 2
/// would give 8 -> 3 -> 2 -> 1 -> 0 and break the chain.
inline ArchitectureConfig small_profile() { return {8, 61, 16, 3, 1, 2, {256, 128, 64}, 0.2}; }

inline NetworkSpec cnn_architecture(const ArchitectureConfig& cfg) {
  NetworkSpec spec{cfg.n_sensors, 3, {}};
  for (int block = 0; block < 4; ++block) {
    spec.layers.emplace_back(block == 0 ? Conv2D{cfg.filters, cfg.first_kernel, cfg.first_stride}
                                        : Conv2D{cfg.filters, cfg.kernel, 1});
    spec.layers.emplace_back(BatchNorm{});
    spec.layers.emplace_back(ReLU{});
  }
  spec.layers.emplace_back(Flatten{});
  for (std::size_t units : cfg.hidden) {
    spec.layers.emplace_back(Dense{units});
    spec.layers.emplace_back(ReLU{});
    spec.layers.emplace_back(Dropout{cfg.dropout});
  }
  spec.layers.emplace_back(Dense{cfg.outputs});
  spec.layers.emplace_back(Sigmoid{});
  spec.validate();
  return spec;
}

// --- JSON form of the spec, used by checkpoints -----------------------------

inline nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : spec.layers) {
    nlohmann::json j{{"type", layer_name(layer)}};
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      j["filters"] = c->filters;
      j["kernel"] = c->kernel;
      j["stride"] = c->stride;
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      j["units"] = d->units;
    } else if (const auto* p = std::get_if<Dropout>(&layer)) {
      j["rate"] = p->rate;
    }
    layers.push_back(std::move(j));
  }
  return {{"input_size", spec.input_size}, {"input_channels", spec.input_channels}, {"layers", layers}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec{j.at("input_size").get<std::size_t>(), j.at("input_channels").get<std::size_t>(), {}};
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "conv2d") {
      spec.layers.emplace_back(Conv2D{l.at("filters").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                                      l.at("stride").get<std::size_t>()});
    } else if (type == "batchnorm") {
      spec.layers.emplace_back(BatchNorm{});
    } else if (type == "relu") {
      spec.layers.emplace_back(ReLU{});
    } else if (type == "flatten") {
      spec.layers.emplace_back(Flatten{});
    } else if (type == "dense") {
      spec.layers.emplace_back(Dense{l.at("units").get<std::size_t>()});
    } else if (type == "dropout") {
      spec.layers.emplace_back(Dropout{l.at("rate").get<double>()});
    } else if (type == "sigmoid") {
      spec.layers.emplace_back(Sigmoid{});
    } else {
      throw FormatError("unknown layer type '" + type + "'");
    }
  }
  spec.validate();
  return spec;
}

// --- parameters --------------------------------------------------------------

enum class BlockKind : std::uint32_t {
  ConvKernel = 1,
  ConvBias = 2,
  BnGain = 3,
  BnShift = 4,
  BnRunningMean = 5,
  BnRunningVar = 6,
  DenseWeight = 7,
  DenseBias = 8,
};

struct ParamBlock {
  BlockKind kind{};
  Tensor tensor;

  [[nodiscard]] bool trainable() const {
    return kind != BlockKind::BnRunningMean && kind != BlockKind::BnRunningVar;
  }
  bool operator==(const ParamBlock&) const = default;
};

/// Parameter blocks per layer; parameterless layers hold an empty list.
/// Conv: {kernel, bias}; BatchNorm: {gain, shift, running mean, running var};
/// Dense: {weight, bias}.
struct ModelParams {
  std::vector<std::vector<ParamBlock>> layers;

  [[nodiscard]] std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) {
      for (const auto& b : layer) {
        if (b.trainable()) n += b.tensor.size();
      }
    }
    return n;
  }
  bool operator==(const ModelParams&) const = default;
};

/// He initialisation (std sqrt(2 / fan_in)) for weights, zero biases, unit
/// gain and zero shift for batch norm, running stats (0, 1).
inline ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  const auto shapes = spec.shapes();
  Rng rng(seed);
  ModelParams p;
  p.layers.resize(spec.layers.size());
  auto gaussian = [&](Shape shape, double fan_in) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : t.values) v = sd * rng.normal();
    return t;
  };
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const Shape& in = shapes[l];
    auto& blocks = p.layers[l];
    if (const auto* c = std::get_if<Conv2D>(&spec.layers[l])) {
      blocks.push_back({BlockKind::ConvKernel,
                        gaussian({c->filters, c->kernel, c->kernel, in[2]}, static_cast<double>(c->kernel * c->kernel * in[2]))});
      blocks.push_back({BlockKind::ConvBias, Tensor({c->filters})});
    } else if (const auto* d = std::get_if<Dense>(&spec.layers[l])) {
      blocks.push_back({BlockKind::DenseWeight, gaussian({d->units, in[0]}, static_cast<double>(in[0]))});
      blocks.push_back({BlockKind::DenseBias, Tensor({d->units})});
    } else if (std::holds_alternative<BatchNorm>(spec.layers[l])) {
      const std::size_t c = in.back();
      blocks.push_back({BlockKind::BnGain, Tensor({c}, std::vector<double>(c, 1.0))});
      blocks.push_back({BlockKind::BnShift, Tensor({c})});
      blocks.push_back({BlockKind::BnRunningMean, Tensor({c})});
      blocks.push_back({BlockKind::BnRunningVar, Tensor({c}, std::vector<double>(c, 1.0))});
    }
  }
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for (auto& layer : z.layers) {
    for (auto& b : layer) std::fill(b.tensor.values.begin(), b.tensor.values.end(), 0.0);
  }
  return z;
}

// --- forward / backward -----------------------------------------------------

/// Everything backward() needs from a train- or eval-mode batch pass.
struct ForwardTrace {
  std::vector<std::vector<Tensor>> inputs;           ///< [layer][example], input to each layer
  std::vector<BatchNormCache> batchnorm;             ///< per layer (empty for non-BN layers)
  std::vector<std::vector<std::vector<double>>> masks;  ///< dropout masks [layer][example]
  std::vector<Tensor> outputs;
  Mode mode = Mode::Eval;
};

/// Seed of the dropout mask for one example in one layer.
inline std::uint64_t dropout_seed(std::uint64_t batch_seed, std::size_t layer, std::size_t example) {
  return mix_seed(batch_seed ^ mix_seed((static_cast<std::uint64_t>(layer) << 32) | example));
}

/// Runs a batch through layers [0, end_layer). Pure: train-mode batch
/// statistics are left in the trace for update_running_stats().
inline std::vector<Tensor> forward_batch(const NetworkSpec& spec, const ModelParams& params,
                                         const std::vector<Tensor>& inputs, Mode mode, std::uint64_t batch_seed,
                                         ForwardTrace* trace, std::size_t end_layer) {
  const Shape expected{spec.input_size, spec.input_size, spec.input_channels};
  for (const auto& x : inputs) {
    if (x.shape != expected) {
      throw DomainError("forward: input " + shape_string(x.shape) + ", network expects " + shape_string(expected));
    }
  }
  if (trace) {
    trace->inputs.assign(end_layer, {});
    trace->batchnorm.assign(end_layer, {});
    trace->masks.assign(end_layer, {});
    trace->mode = mode;
  }
  std::vector<Tensor> act = inputs;
  const std::size_t batch = act.size();
  for (std::size_t l = 0; l < end_layer; ++l) {
    const auto& blocks = params.layers[l];
    if (trace) trace->inputs[l] = act;
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            for (auto& x : act) x = conv2d_forward(x, blocks[0].tensor, blocks[1].tensor.values, layer.stride);
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            if (mode == Mode::Train) {
              act = batchnorm_forward_train(act, blocks[0].tensor.values, blocks[1].tensor.values,
                                            trace ? &trace->batchnorm[l] : nullptr);
            } else {
              for (auto& x : act) {
                x = batchnorm_forward_eval(x, blocks[0].tensor.values, blocks[1].tensor.values,
                                           blocks[2].tensor.values, blocks[3].tensor.values);
              }
            }
          } else if constexpr (std::is_same_v<T, ReLU>) {
            for (auto& x : act) x = relu_forward(x);
          } else if constexpr (std::is_same_v<T, Flatten>) {
            for (auto& x : act) x.shape = {x.size()};
          } else if constexpr (std::is_same_v<T, Dense>) {
            for (auto& x : act) x = dense_forward(x, blocks[0].tensor, blocks[1].tensor.values);
          } else if constexpr (std::is_same_v<T, Dropout>) {
            if (trace) trace->masks[l].resize(batch);
            for (std::size_t b = 0; b < batch; ++b) {
              auto r = dropout_forward(act[b], layer.rate, mode, dropout_seed(batch_seed, l, b));
              act[b] = std::move(r.output);
              if (trace) trace->masks[l][b] = std::move(r.mask);
            }
          } else {
            for (auto& x : act) x = sigmoid_forward(x);
          }
        },
        spec.layers[l]);
  }
  if (trace) trace->outputs = act;
  return act;
}

inline std::vector<Tensor> forward_batch(const NetworkSpec& spec, const ModelParams& params,
                                         const std::vector<Tensor>& inputs, Mode mode, std::uint64_t batch_seed = 0,
                                         ForwardTrace* trace = nullptr) {
  return forward_batch(spec, params, inputs, mode, batch_seed, trace, spec.layers.size());
}

/// Folds the batch statistics of a train-mode trace into the running stats.
inline void update_running_stats(const NetworkSpec& spec, ModelParams& params, const ForwardTrace& trace,
                                 double momentum = kBatchNormMomentum) {
  for (std::size_t l = 0; l < trace.batchnorm.size(); ++l) {
    if (!std::holds_alternative<BatchNorm>(spec.layers[l]) || trace.batchnorm[l].batch_mean.empty()) continue;
    auto& blocks = params.layers[l];
    batchnorm_update_running(blocks[2].tensor.values, blocks[3].tensor.values, trace.batchnorm[l], momentum);
  }
}

struct BackwardResult {
  ModelParams grads;              ///< summed over the batch
  std::vector<Tensor> input_grads;
};

/// Backpropagates `upstream` (gradient w.r.t. the output of the traced range)
/// down to the network input.
inline BackwardResult backward_batch(const NetworkSpec& spec, const ModelParams& params, const ForwardTrace& trace,
                                     std::vector<Tensor> upstream) {
  BackwardResult r{zeros_like(params), {}};
  const std::size_t end_layer = trace.inputs.size();
  const std::size_t batch = upstream.size();
  auto accumulate = [](Tensor& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst.values[i] += src[i];
  };
  for (std::size_t l = end_layer; l-- > 0;) {
    const auto& blocks = params.layers[l];
    auto& gblocks = r.grads.layers[l];
    const auto& inputs = trace.inputs[l];
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            for (std::size_t b = 0; b < batch; ++b) {
              auto g = conv2d_backward(upstream[b], inputs[b], blocks[0].tensor, layer.stride);
              accumulate(gblocks[0].tensor, g.kernels.values);
              accumulate(gblocks[1].tensor, g.bias);
              upstream[b] = std::move(g.input);
            }
          } else if constexpr (std::is_same_v<T, BatchNorm>) {
            if (trace.mode != Mode::Train) throw DomainError("backward: batch norm traced in eval mode");
            auto g = batchnorm_backward(upstream, trace.batchnorm[l], blocks[0].tensor.values);
            accumulate(gblocks[0].tensor, g.gain);
            accumulate(gblocks[1].tensor, g.shift);
            upstream = std::move(g.input);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            for (std::size_t b = 0; b < batch; ++b) upstream[b] = relu_backward(upstream[b], inputs[b]);
          } else if constexpr (std::is_same_v<T, Flatten>) {
            for (std::size_t b = 0; b < batch; ++b) upstream[b].shape = inputs[b].shape;
          } else if constexpr (std::is_same_v<T, Dense>) {
            for (std::size_t b = 0; b < batch; ++b) {
              auto g = dense_backward(upstream[b], inputs[b], blocks[0].tensor);
              accumulate(gblocks[0].tensor, g.weights.values);
              accumulate(gblocks[1].tensor, g.bias);
              upstream[b] = std::move(g.input);
            }
          } else if constexpr (std::is_same_v<T, Dropout>) {
            for (std::size_t b = 0; b < batch; ++b) {
              upstream[b] = dropout_backward(upstream[b], trace.masks[l].empty() ? std::vector<double>{} : trace.masks[l][b]);
            }
          } else {
            // recompute the sigmoid output from the traced input
            for (std::size_t b = 0; b < batch; ++b) upstream[b] = sigmoid_backward(upstream[b], sigmoid_forward(inputs[b]));
          }
        },
        spec.layers[l]);
  }
  r.input_grads = std::move(upstream);
  return r;
}

/// Eval-mode probabilities for one input.
inline std::vector<double> forward(const NetworkSpec& spec, const ModelParams& params, const Tensor& input) {
  return forward_batch(spec, params, {input}, Mode::Eval).front().values;
}

}  // namespace doa::nn
