#pragma once

// Layer kernels for the DoA classifier: convolution, batch normalisation,
// ReLU, dropout, dense, sigmoid, and binary cross-entropy.
//
// Feature maps are H x W x C tensors (channel last). Convolution kernels are
// stored as n_C x k x k x C_in, dense weights as M_out x M_in (row-major).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doa/errors.hpp"
#include "doa/random.hpp"
#include "doa/tensor.hpp"

namespace doa::nn {

enum class Mode { Train, Eval };

inline std::size_t conv_output_dim(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (kernel > in || stride == 0) return 0;
  return (in - kernel) / stride + 1;
}

// --- convolution -----------------------------------------------------------

/// out(m, n, q) = sum_{i,j,k} K(q, i, j, k) X(m*stride + i, n*stride + j, k) + b_q
/// (cross-correlation indexing, no padding).
inline Tensor conv2d_forward(const Tensor& x, const Tensor& kernels, const std::vector<double>& bias,
                             std::size_t stride) {
  if (x.rank() != 3 || kernels.rank() != 4) throw DomainError("conv2d_forward: bad ranks");
  const std::size_t h = x.shape[0], w = x.shape[1], cin = x.shape[2];
  const std::size_t nc = kernels.shape[0], kk = kernels.shape[1];
  if (kernels.shape[2] != kk || kernels.shape[3] != cin || bias.size() != nc) {
    throw DomainError("conv2d_forward: kernel " + shape_string(kernels.shape) + " does not fit input " +
                      shape_string(x.shape));
  }
  if (kk > h || kk > w) throw DomainError("conv2d_forward: kernel larger than input");
  const std::size_t ho = conv_output_dim(h, kk, stride), wo = conv_output_dim(w, kk, stride);
  Tensor out({ho, wo, nc});
  const std::size_t patch = kk * cin;  // contiguous run of one kernel row
  for (std::size_t m = 0; m < ho; ++m) {
    for (std::size_t n = 0; n < wo; ++n) {
      double* o = &out.values[(m * wo + n) * nc];
      for (std::size_t q = 0; q < nc; ++q) {
        double acc = bias[q];
        const double* kq = &kernels.values[q * kk * patch];
        for (std::size_t i = 0; i < kk; ++i) {
          const double* xr = &x.values[((m * stride + i) * w + n * stride) * cin];
          const double* kr = kq + i * patch;
          for (std::size_t t = 0; t < patch; ++t) acc += kr[t] * xr[t];
        }
        o[q] = acc;
      }
    }
  }
  return out;
}

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
  std::vector<double> bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& upstream, const Tensor& x, const Tensor& kernels,
                                   std::size_t stride) {
  const std::size_t h = x.shape[0], w = x.shape[1], cin = x.shape[2];
  const std::size_t nc = kernels.shape[0], kk = kernels.shape[1];
  const std::size_t ho = conv_output_dim(h, kk, stride), wo = conv_output_dim(w, kk, stride);
  if (upstream.shape != Shape{ho, wo, nc}) {
    throw DomainError("conv2d_backward: upstream " + shape_string(upstream.shape) + ", expected " +
                      shape_string({ho, wo, nc}));
  }
  Conv2dGrads g{Tensor(x.shape), Tensor(kernels.shape), std::vector<double>(nc, 0.0)};
  const std::size_t patch = kk * cin;
  for (std::size_t m = 0; m < ho; ++m) {
    for (std::size_t n = 0; n < wo; ++n) {
      const double* up = &upstream.values[(m * wo + n) * nc];
      for (std::size_t q = 0; q < nc; ++q) {
        const double d = up[q];
        if (d == 0.0) continue;
        g.bias[q] += d;
        const double* kq = &kernels.values[q * kk * patch];
        double* gkq = &g.kernels.values[q * kk * patch];
        for (std::size_t i = 0; i < kk; ++i) {
          const std::size_t off = ((m * stride + i) * w + n * stride) * cin;
          const double* xr = &x.values[off];
          double* gxr = &g.input.values[off];
          const double* kr = kq + i * patch;
          double* gkr = gkq + i * patch;
          for (std::size_t t = 0; t < patch; ++t) {
            gkr[t] += d * xr[t];
            gxr[t] += d * kr[t];
          }
        }
      }
    }
  }
  return g;
}

// --- batch normalisation -----------------------------------------------------

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormCache {
  std::vector<Tensor> normalized;  ///< x_hat per example
  std::vector<double> inv_std;     ///< per channel
  std::vector<double> batch_mean;
  std::vector<double> batch_var;   ///< unbiased, for the running estimate
};

/// Train mode: statistics per channel (last dim) over batch and spatial positions.
inline std::vector<Tensor> batchnorm_forward_train(const std::vector<Tensor>& batch, const std::vector<double>& gain,
                                                   const std::vector<double>& shift, BatchNormCache* cache,
                                                   double eps = kBatchNormEpsilon) {
  if (batch.size() < 2) throw DomainError("batchnorm_forward: train mode needs a batch of at least 2");
  const std::size_t c = gain.size();
  const std::size_t per = batch[0].size() / c;
  const double count = static_cast<double>(per * batch.size());
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (const auto& x : batch) {
    if (x.size() != per * c) throw DomainError("batchnorm_forward: inconsistent batch shapes");
    for (std::size_t i = 0; i < x.size(); ++i) mean[i % c] += x[i];
  }
  for (auto& m : mean) m /= count;
  for (const auto& x : batch) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i % c];
      var[i % c] += d * d;
    }
  }
  std::vector<double> inv_std(c), unbiased(c);
  for (std::size_t k = 0; k < c; ++k) {
    inv_std[k] = 1.0 / std::sqrt(var[k] / count + eps);
    unbiased[k] = var[k] / std::max(count - 1.0, 1.0);
  }
  std::vector<Tensor> out;
  out.reserve(batch.size());
  if (cache) cache->normalized.clear();
  for (const auto& x : batch) {
    Tensor xhat(x.shape);
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t k = i % c;
      xhat[i] = (x[i] - mean[k]) * inv_std[k];
      y[i] = gain[k] * xhat[i] + shift[k];
    }
    if (cache) cache->normalized.push_back(std::move(xhat));
    out.push_back(std::move(y));
  }
  if (cache) {
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(unbiased);
  }
  return out;
}

inline Tensor batchnorm_forward_eval(const Tensor& x, const std::vector<double>& gain, const std::vector<double>& shift,
                                     const std::vector<double>& running_mean, const std::vector<double>& running_var,
                                     double eps = kBatchNormEpsilon) {
  const std::size_t c = gain.size();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = i % c;
    y[i] = gain[k] * (x[i] - running_mean[k]) / std::sqrt(running_var[k] + eps) + shift[k];
  }
  return y;
}

/// running <- (1 - momentum) running + momentum batch
inline void batchnorm_update_running(std::vector<double>& running_mean, std::vector<double>& running_var,
                                     const BatchNormCache& cache, double momentum = kBatchNormMomentum) {
  for (std::size_t k = 0; k < running_mean.size(); ++k) {
    running_mean[k] = (1.0 - momentum) * running_mean[k] + momentum * cache.batch_mean[k];
    running_var[k] = (1.0 - momentum) * running_var[k] + momentum * cache.batch_var[k];
  }
}

struct BatchNormGrads {
  std::vector<Tensor> input;
  std::vector<double> gain;
  std::vector<double> shift;
};

inline BatchNormGrads batchnorm_backward(const std::vector<Tensor>& upstream, const BatchNormCache& cache,
                                         const std::vector<double>& gain) {
  const std::size_t c = gain.size();
  const std::size_t per = upstream[0].size() / c;
  const double count = static_cast<double>(per * upstream.size());
  BatchNormGrads g{{}, std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
  for (std::size_t b = 0; b < upstream.size(); ++b) {
    const auto& up = upstream[b];
    const auto& xhat = cache.normalized[b];
    for (std::size_t i = 0; i < up.size(); ++i) {
      const std::size_t k = i % c;
      g.gain[k] += up[i] * xhat[i];
      g.shift[k] += up[i];
      const double dxhat = up[i] * gain[k];
      sum_dxhat[k] += dxhat;
      sum_dxhat_xhat[k] += dxhat * xhat[i];
    }
  }
  g.input.reserve(upstream.size());
  for (std::size_t b = 0; b < upstream.size(); ++b) {
    const auto& up = upstream[b];
    const auto& xhat = cache.normalized[b];
    Tensor dx(up.shape);
    for (std::size_t i = 0; i < up.size(); ++i) {
      const std::size_t k = i % c;
      const double dxhat = up[i] * gain[k];
      dx[i] = cache.inv_std[k] / count * (count * dxhat - sum_dxhat[k] - xhat[i] * sum_dxhat_xhat[k]);
    }
    g.input.push_back(std::move(dx));
  }
  return g;
}

// --- pointwise ---------------------------------------------------------------

inline Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Subgradient 0 at x = 0.
inline Tensor relu_backward(const Tensor& upstream, const Tensor& x) {
  Tensor g(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1 / (1 - rate). The returned mask holds
/// the per-element multiplier used (0 or 1 / (1 - rate)); empty in eval mode.
struct DropoutResult {
  Tensor output;
  std::vector<double> mask;
};

inline DropoutResult dropout_forward(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout: rate must be in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) return {x, {}};
  DropoutResult r{Tensor(x.shape), std::vector<double>(x.size())};
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
    r.output[i] = x[i] * r.mask[i];
  }
  return r;
}

inline DropoutResult dropout_forward(const Tensor& x, double rate, Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  return dropout_forward(x, rate, mode, rng);
}

inline Tensor dropout_backward(const Tensor& upstream, const std::vector<double>& mask) {
  if (mask.empty()) return upstream;
  Tensor g(upstream.shape);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * mask[i];
  return g;
}

// --- dense -------------------------------------------------------------------

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Tensor dense_forward(const Tensor& x, const Tensor& weights, const std::vector<double>& bias) {
  const std::size_t out = weights.shape[0], in = weights.shape[1];
  if (x.size() != in || bias.size() != out) {
    throw DomainError("dense_forward: weights " + shape_string(weights.shape) + " vs input of " +
                      std::to_string(x.size()));
  }
  Tensor y({out});
  Eigen::Map<const RowMajorMatrix> w(weights.values.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  Eigen::Map<const Eigen::VectorXd> xv(x.values.data(), static_cast<Eigen::Index>(in));
  Eigen::Map<const Eigen::VectorXd> bv(bias.data(), static_cast<Eigen::Index>(out));
  Eigen::Map<Eigen::VectorXd>(y.values.data(), static_cast<Eigen::Index>(out)) = w * xv + bv;
  return y;
}

struct DenseGrads {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

inline DenseGrads dense_backward(const Tensor& upstream, const Tensor& x, const Tensor& weights) {
  const std::size_t out = weights.shape[0], in = weights.shape[1];
  if (upstream.size() != out || x.size() != in) throw DomainError("dense_backward: shape mismatch");
  DenseGrads g{Tensor(x.shape), Tensor(weights.shape), upstream.values};
  const auto o = static_cast<Eigen::Index>(out), n = static_cast<Eigen::Index>(in);
  Eigen::Map<const RowMajorMatrix> w(weights.values.data(), o, n);
  Eigen::Map<const Eigen::VectorXd> up(upstream.values.data(), o);
  Eigen::Map<const Eigen::VectorXd> xv(x.values.data(), n);
  Eigen::Map<Eigen::VectorXd>(g.input.values.data(), n) = w.transpose() * up;
  Eigen::Map<RowMajorMatrix>(g.weights.values.data(), o, n) = up * xv.transpose();
  return g;
}

// --- output ------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid_forward(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

inline Tensor sigmoid_backward(const Tensor& upstream, const Tensor& output) {
  Tensor g(output.shape);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * output[i] * (1.0 - output[i]);
  return g;
}

inline constexpr double kProbabilityClamp = 1e-7;

struct BceResult {
  double loss = 0.0;
  std::vector<double> logit_grad;  ///< dL / d(pre-sigmoid logits) = p - z
};

/// L = -sum_n [z_n log p_n + (1 - z_n) log(1 - p_n)], p clamped to [1e-7, 1 - 1e-7].
template <typename Label>
BceResult bce_loss(const std::vector<double>& p, const std::vector<Label>& z) {
  if (p.size() != z.size()) {
    throw DomainError("bce_loss: " + std::to_string(p.size()) + " probabilities vs " + std::to_string(z.size()) + " labels");
  }
  BceResult r{0.0, std::vector<double>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double zi = static_cast<double>(z[i]);
    r.loss -= zi * std::log(pc) + (1.0 - zi) * std::log(1.0 - pc);
    r.logit_grad[i] = p[i] - zi;
  }
  return r;
}

}  // namespace doa::nn
