#pragma once

// Dataset construction from true covariances, the mini-batch training loop,
// and the two decoders (top-K and confidence threshold).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "doa/array_model.hpp"
#include "doa/errors.hpp"
#include "doa/estimators.hpp"
#include "doa/nn/adam.hpp"
#include "doa/nn/network.hpp"
#include "doa/random.hpp"

namespace doa {

// --- combinations ------------------------------------------------------------

inline constexpr std::uint64_t kMaxDatasetSize = 50'000'000;

/// C(n, k), throwing DomainError once the value passes kMaxDatasetSize.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t c = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    // c * (n - k + i) / i stays exact because c = C(n - k + i - 1, i - 1)
    const std::uint64_t num = n - k + i;
    if (c > std::numeric_limits<std::uint64_t>::max() / num) throw DomainError("binomial: overflow");
    c = c * num / i;
    if (c > kMaxDatasetSize) {
      throw DomainError("combination count C(" + std::to_string(n) + ", " + std::to_string(k) + ") is too large");
    }
  }
  return c;
}

inline std::uint64_t fixed_k_count(const GridSpec& grid, std::size_t k, std::size_t n_snr) {
  return binomial(grid.size(), k) * n_snr;
}

inline std::uint64_t mixed_k_count(const GridSpec& grid, std::size_t k_max) {
  std::uint64_t total = 0;
  for (std::size_t k = 1; k <= k_max; ++k) total += binomial(grid.size(), k);
  return total;
}

/// Calls fn(indices) for every k-subset of {0, ..., n-1} in lexicographic order.
inline void for_each_combination(std::size_t n, std::size_t k,
                                 const std::function<void(const std::vector<std::size_t>&)>& fn) {
  if (k > n) return;
  binomial(n, k);
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    fn(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

// --- datasets ----------------------------------------------------------------

struct Example {
  CovarianceInput input;
  LabelVector label;
  double snr_db = 0.0;
};

struct Dataset {
  GridSpec grid;
  UlaGeometry geometry;
  std::vector<double> snr_db;
  std::size_t k_min = 1;
  std::size_t k_max = 1;
  std::vector<Example> examples;

  [[nodiscard]] std::size_t size() const { return examples.size(); }
};

/// Example built from the true covariance of unit-power sources at the given grid indices.
inline Example grid_example(const GridSpec& grid, const UlaGeometry& geom, const std::vector<std::size_t>& indices,
                            double snr_db) {
  std::vector<double> doas;
  doas.reserve(indices.size());
  for (auto i : indices) doas.push_back(grid.angle(i));
  const auto scene = SourceScene::with_snr(doas, snr_db);
  return {build_input_channels(true_covariance(geom, scene)), encode_label(grid, doas), snr_db};
}

inline void check_source_count(const UlaGeometry& geom, std::size_t k) {
  if (k < 1 || k >= geom.n_sensors) {
    throw DomainError("dataset: source count " + std::to_string(k) + " must be in [1, N-1] for N = " +
                      std::to_string(geom.n_sensors));
  }
}

inline Dataset build_fixed_k_dataset(const GridSpec& grid, const UlaGeometry& geom, std::size_t k,
                                     const std::vector<double>& snr_db_list) {
  check_source_count(geom, k);
  Dataset d{grid, geom, snr_db_list, k, k, {}};
  d.examples.reserve(fixed_k_count(grid, k, snr_db_list.size()));
  for (double snr : snr_db_list) {
    for_each_combination(grid.size(), k, [&](const auto& idx) { d.examples.push_back(grid_example(grid, geom, idx, snr)); });
  }
  return d;
}

inline Dataset build_mixed_k_dataset(const GridSpec& grid, const UlaGeometry& geom, std::size_t k_max, double snr_db) {
  check_source_count(geom, k_max);
  Dataset d{grid, geom, {snr_db}, 1, k_max, {}};
  d.examples.reserve(mixed_k_count(grid, k_max));
  for (std::size_t k = 1; k <= k_max; ++k) {
    for_each_combination(grid.size(), k, [&](const auto& idx) { d.examples.push_back(grid_example(grid, geom, idx, snr_db)); });
  }
  return d;
}

// --- training ----------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double initial_lr = 1e-3;
  std::size_t lr_halving_period = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 2) throw DomainError("TrainConfig: batch size must be at least 2");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw DomainError("TrainConfig: validation fraction must be in (0, 1)");
    }
    if (lr_halving_period == 0) throw DomainError("TrainConfig: halving period must be positive");
    if (!(initial_lr > 0.0)) throw DomainError("TrainConfig: learning rate must be positive");
  }
};

inline double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.initial_lr * std::pow(0.5, static_cast<double>(epoch / cfg.lr_halving_period));
}

/// Optimizer steps between learning-rate halvings in the reference schedule:
/// 10 epochs of 32,670 training examples at batch size 32.
inline constexpr std::size_t kStepsPerHalving = 10210;

/// Epoch count between halvings that keeps roughly `steps` optimizer steps
/// per learning-rate stage for the given training-set and batch sizes.
inline std::size_t halving_period_for_steps(std::size_t steps, std::size_t train_examples, std::size_t batch_size) {
  if (batch_size < 2 || train_examples < 2) throw DomainError("halving_period_for_steps: need at least one batch of 2");
  std::size_t per_epoch = train_examples / batch_size + (train_examples % batch_size >= 2 ? 1 : 0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(steps) / static_cast<double>(per_epoch))));
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

inline std::size_t validation_size(std::size_t n, double validation_fraction) {
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * validation_fraction));
  return std::clamp<std::size_t>(n_val, 1, n - 1);
}

/// Shuffles 0..n-1 with the seed and puts the first round(n * fraction) in
/// the validation set (at least one, and at least one left for training).
inline Split split_indices(std::size_t n, double validation_fraction, std::uint64_t seed) {
  if (n < 2) throw DomainError("split: need at least 2 examples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(order, rng);
  const std::size_t n_val = validation_size(n, validation_fraction);
  Split s{{order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end()},
          {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val)}};
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

struct TrainingHistory {
  std::vector<double> train_loss;       ///< mean per-example loss over the epoch's batches (train mode)
  std::vector<double> validation_loss;  ///< mean per-example loss, eval mode
  std::vector<double> learning_rate;
};

struct TrainResult {
  nn::ModelParams params;
  TrainingHistory history;
};

/// Mean per-example BCE in eval mode.
inline double evaluate_loss(const nn::NetworkSpec& spec, const nn::ModelParams& params, const Dataset& data,
                            const std::vector<std::size_t>& indices, std::size_t batch_size = 256) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    std::vector<Tensor> inputs;
    for (std::size_t i = start; i < end; ++i) inputs.push_back(data.examples[indices[i]].input.tensor());
    const auto out = nn::forward_batch(spec, params, inputs, nn::Mode::Eval);
    for (std::size_t i = start; i < end; ++i) {
      total += nn::bce_loss(out[i - start].values, data.examples[indices[i]].label.bits).loss;
    }
  }
  return total / static_cast<double>(indices.size());
}

/// One optimisation step on the given examples; returns the mean batch loss.
inline double train_step(const nn::NetworkSpec& spec, nn::ModelParams& params, nn::Adam& optimizer,
                         const Dataset& data, const std::vector<std::size_t>& batch, std::uint64_t batch_seed) {
  const std::size_t b = batch.size();
  std::vector<Tensor> inputs;
  inputs.reserve(b);
  for (auto i : batch) inputs.push_back(data.examples[i].input.tensor());

  // Stop below the final sigmoid and use the fused logit gradient p - z.
  nn::ForwardTrace trace;
  const std::size_t logit_end = spec.layers.size() - 1;
  auto logits = nn::forward_batch(spec, params, inputs, nn::Mode::Train, batch_seed, &trace, logit_end);
  double loss = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    const auto p = nn::sigmoid_forward(logits[j]);
    auto r = nn::bce_loss(p.values, data.examples[batch[j]].label.bits);
    loss += r.loss;
    for (auto& g : r.logit_grad) g /= static_cast<double>(b);
    logits[j].values = std::move(r.logit_grad);
  }
  loss /= static_cast<double>(b);
  if (!std::isfinite(loss)) throw NumericalError("training diverged: non-finite loss");

  auto back = nn::backward_batch(spec, params, trace, std::move(logits));
  optimizer.step(params, back.grads);
  nn::update_running_stats(spec, params, trace);
  return loss;
}

using EpochCallback = std::function<void(std::size_t epoch, const TrainingHistory&, const nn::ModelParams&)>;

/// Mini-batch Adam on mean BCE. Each epoch is one pass over a fresh shuffle
/// of the training split; a trailing batch of one example is skipped because
/// batch norm needs two. Returns the parameters after the final epoch.
inline TrainResult train(const nn::NetworkSpec& spec, const Dataset& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.examples.empty()) throw DomainError("train: empty dataset");
  const auto out_shape = spec.output_shape();
  if (out_shape.size() != 1 || out_shape[0] != data.grid.size()) {
    throw DomainError("train: network output " + shape_string(out_shape) + " does not match grid of " +
                      std::to_string(data.grid.size()));
  }
  if (!std::holds_alternative<nn::Sigmoid>(spec.layers.back())) throw DomainError("train: network must end in a sigmoid");

  const Split split = split_indices(data.size(), cfg.validation_fraction, cfg.seed);
  TrainResult result{nn::init_params(spec, mix_seed(cfg.seed ^ 0x5157ULL)), {}};
  nn::Adam optimizer(result.params, {cfg.initial_lr});
  Rng order_rng(mix_seed(cfg.seed ^ 0x0d0eULL));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    optimizer.set_learning_rate(lr);
    std::vector<std::size_t> order = split.train;
    shuffle(order, order_rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, batch_index = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const std::uint64_t batch_seed = mix_seed(cfg.seed ^ (static_cast<std::uint64_t>(epoch) << 32) ^ batch_index);
      try {
        loss_sum += train_step(spec, result.params, optimizer, data, batch, batch_seed) * static_cast<double>(batch.size());
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", batch " +
                             std::to_string(batch_index + 1));
      }
      seen += batch.size();
    }
    result.history.train_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : 0.0);
    result.history.validation_loss.push_back(evaluate_loss(spec, result.params, data, split.validation));
    result.history.learning_rate.push_back(lr);
    if (on_epoch) on_epoch(epoch, result.history, result.params);
  }
  return result;
}

// --- decoders ----------------------------------------------------------------

/// Grid angles of the K largest probabilities, ties toward the smaller angle.
inline EstimateSet topk_estimates(const std::vector<double>& p, const GridSpec& grid, std::size_t k) {
  if (k < 1 || k > p.size()) {
    throw DomainError("predict_topk: K = " + std::to_string(k) + " outside [1, " + std::to_string(p.size()) + "]");
  }
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  EstimateSet out;
  for (std::size_t i = 0; i < k; ++i) out.angles_deg.push_back(grid.angle(order[i]));
  std::sort(out.angles_deg.begin(), out.angles_deg.end());
  return out;
}

/// All grid angles with probability >= p_bar; the size is the inferred source count.
inline EstimateSet threshold_estimates(const std::vector<double>& p, const GridSpec& grid, double p_bar) {
  if (!(p_bar > 0.0 && p_bar < 1.0)) throw DomainError("predict_threshold: p_bar must be in (0, 1)");
  EstimateSet out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] >= p_bar) out.angles_deg.push_back(grid.angle(i));
  }
  return out;
}

inline EstimateSet predict_topk(const nn::NetworkSpec& spec, const nn::ModelParams& params,
                                const CovarianceInput& input, const GridSpec& grid, std::size_t k) {
  return topk_estimates(nn::forward(spec, params, input.tensor()), grid, k);
}

inline EstimateSet predict_threshold(const nn::NetworkSpec& spec, const nn::ModelParams& params,
                                     const CovarianceInput& input, const GridSpec& grid, double p_bar) {
  return threshold_estimates(nn::forward(spec, params, input.tensor()), grid, p_bar);
}


// --- test scenes and threshold calibration -----------------------------------

/// K angles drawn uniformly from [-phi_max + margin, phi_max - margin] with
/// pairwise separation at least min_separation_deg, returned ascending.
inline std::vector<double> random_doas(Rng& rng, const GridSpec& grid, std::size_t k, double min_separation_deg,
                                       double margin_deg = 0.5) {
  const double lo = -grid.phi_max_deg() + margin_deg;
  const double hi = grid.phi_max_deg() - margin_deg;
  if (!(hi > lo) || static_cast<double>(k - 1) * min_separation_deg > hi - lo) {
    throw DomainError("random_doas: cannot place " + std::to_string(k) + " sources in the field of view");
  }
  for (int attempt = 0; attempt < 100000; ++attempt) {
    std::vector<double> doas(k);
    for (auto& d : doas) d = lo + (hi - lo) * rng.uniform();
    std::sort(doas.begin(), doas.end());
    bool ok = true;
    for (std::size_t i = 1; i < k; ++i) ok = ok && doas[i] - doas[i - 1] >= min_separation_deg;
    if (ok) return doas;
  }
  throw DomainError("random_doas: separation constraint could not be met");
}

struct ThresholdCalibration {
  double p_bar = 0.5;
  double accuracy = 0.0;  ///< source-count accuracy on the calibration trials
};

/// Chooses the confidence level in {0.05, 0.06, ..., 0.95} that maximises
/// source-count accuracy over the given probability outputs (ties: the
/// value closest to 0.5, then the smaller one).
inline ThresholdCalibration calibrate_threshold(const std::vector<std::vector<double>>& outputs,
                                                const std::vector<std::size_t>& true_counts) {
  if (outputs.size() != true_counts.size() || outputs.empty()) throw DomainError("calibrate_threshold: bad input");
  ThresholdCalibration best{0.5, -1.0};
  for (int step = 5; step <= 95; ++step) {
    const double p_bar = step / 100.0;
    std::size_t hits = 0;
    for (std::size_t t = 0; t < outputs.size(); ++t) {
      const auto k = static_cast<std::size_t>(std::count_if(outputs[t].begin(), outputs[t].end(),
                                                            [&](double p) { return p >= p_bar; }));
      hits += k == true_counts[t];
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(outputs.size());
    if (acc > best.accuracy ||
        (acc == best.accuracy && std::abs(p_bar - 0.5) < std::abs(best.p_bar - 0.5))) {
      best = {p_bar, acc};
    }
  }
  return best;
}

/// Simulates `trials` sample-covariance scenes (K uniform in 1..k_max,
/// separation >= min_separation_deg) and calibrates the threshold on the
/// network outputs.
inline ThresholdCalibration calibrate_threshold(const nn::NetworkSpec& spec, const nn::ModelParams& params,
                                                const GridSpec& grid, const UlaGeometry& geom, std::size_t k_max,
                                                double snr_db, std::size_t snapshots, std::size_t trials,
                                                double min_separation_deg, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> outputs;
  std::vector<std::size_t> counts;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.below(k_max));
    const auto scene = SourceScene::with_snr(random_doas(rng, grid, k, min_separation_deg), snr_db);
    const auto block = simulate_snapshots(geom, scene, snapshots, mix_seed(seed) ^ t);
    outputs.push_back(nn::forward(spec, params, build_input_channels(sample_covariance(block)).tensor()));
    counts.push_back(k);
  }
  return calibrate_threshold(outputs, counts);
}

}  // namespace doa
