#pragma once

// Named Monte-Carlo experiments and their CSV/JSON result files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "doa/array_model.hpp"
#include "doa/crlb.hpp"
#include "doa/errors.hpp"
#include "doa/estimators.hpp"
#include "doa/l21_svd.hpp"
#include "doa/metrics.hpp"
#include "doa/nn/checkpoint.hpp"
#include "doa/training.hpp"

namespace doa {

inline constexpr const char* kVersion = "1.0.0";

enum class Scale { Full, Desk };

inline std::string to_string(Scale s) { return s == Scale::Full ? "full" : "desk"; }

enum class Method { Music, RootMusic, L21Svd, Cnn, CnnThreshold };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Music: return "music";
    case Method::RootMusic: return "root-music";
    case Method::L21Svd: return "l21-svd";
    case Method::Cnn: return "cnn";
    case Method::CnnThreshold: return "cnn-threshold";
  }
  return "?";
}

/// One x-axis value of an experiment. Trial t uses scenes[t % scenes.size()].
struct OperatingPoint {
  double x = 0.0;
  double snr_db = 0.0;  ///< SNR of the point's scenes
  std::size_t snapshots = 0;
  double eta = 0.0;
  std::size_t trials = 0;
  std::vector<SourceScene> scenes;
};

struct Preset {
  std::string name;
  std::string x_axis;
  UlaGeometry geometry;
  GridSpec grid;
  std::vector<OperatingPoint> points;
  std::vector<Method> methods;
  bool unknown_k = false;  ///< evaluates the threshold decoder; needs a mixed-K checkpoint
};

struct PresetOverrides {
  std::vector<double> eta;
  std::optional<std::size_t> snapshots;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{
      "slide-4p7",        "slide-2p11",     "snr-sweep",       "snapshots-sweep", "separation-sweep",
      "snr-mismatch-a",   "snr-mismatch-b", "unknown-k-fixed", "unknown-k-sweep",
  };
  return names;
}

namespace detail {

inline SourceScene scene_with_noise(std::vector<double> doas, std::vector<double> powers, double noise_power) {
  SourceScene s;
  s.doas_deg = std::move(doas);
  s.source_powers = std::move(powers);
  s.noise_power = noise_power;
  return s;
}

/// Two sources sliding across the field of view: theta1 = first, first + 1, ... , last.
inline std::vector<SourceScene> sliding_pair(double first, double last, double separation, double snr_db) {
  std::vector<SourceScene> out;
  const auto count = static_cast<std::size_t>(std::llround(last - first)) + 1;
  for (std::size_t i = 0; i < count; ++i) {
    const double t1 = first + static_cast<double>(i);
    out.push_back(SourceScene::with_snr({t1, t1 + separation}, snr_db));
  }
  return out;
}

/// K sources 10 degrees apart sliding with a 1 degree step.
inline std::vector<SourceScene> sliding_group(std::size_t k, double first, double last, double snr_db) {
  std::vector<SourceScene> out;
  const auto count = static_cast<std::size_t>(std::llround(last - first)) + 1;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> doas;
    for (std::size_t j = 0; j < k; ++j) doas.push_back(first + static_cast<double>(i) + 10.0 * static_cast<double>(j));
    out.push_back(SourceScene::with_snr(doas, snr_db));
  }
  return out;
}

inline void apply_overrides(Preset& p, const PresetOverrides& o) {
  if (!o.eta.empty()) {
    if (o.eta.size() != 1 && o.eta.size() != p.points.size()) {
      throw DomainError("preset " + p.name + ": --eta needs 1 or " + std::to_string(p.points.size()) + " values");
    }
    for (std::size_t i = 0; i < p.points.size(); ++i) p.points[i].eta = o.eta.size() == 1 ? o.eta[0] : o.eta[i];
  }
  if (o.snapshots) {
    if (*o.snapshots < 2) throw DomainError("--snapshots must be at least 2");
    for (auto& pt : p.points) pt.snapshots = *o.snapshots;
  }
}

}  // namespace detail

/// Builds a named preset. Desk scale uses N = 8, G = 30, a tenth of the
/// Monte-Carlo runs, field-of-view-limited scene ranges and eta / sqrt(2).
/// Unknown-K presets take the training SNR and source-count limit of the
/// checkpoint they evaluate.
inline Preset make_preset(const std::string& name, Scale scale, const PresetOverrides& overrides = {},
                          double unknown_k_snr_db = -10.0, std::size_t unknown_k_max = 3) {
  const bool full = scale == Scale::Full;
  Preset p;
  p.name = name;
  p.geometry = full ? UlaGeometry{16, 0.5} : UlaGeometry{8, 0.5};
  p.grid = full ? GridSpec{60, 1.0} : GridSpec{30, 1.0};
  p.methods = {Method::Music, Method::RootMusic, Method::L21Svd};
  const double eta_scale = full ? 1.0 : 1.0 / std::sqrt(2.0);
  auto mc = [&](std::size_t n) { return full ? n : n / 10; };
  auto sliding_point = [&](double snr, std::size_t t, double eta, std::vector<SourceScene> scenes) {
    OperatingPoint pt{0.0, snr, t, eta * eta_scale, scenes.size(), std::move(scenes)};
    return pt;
  };

  if (name == "slide-4p7") {
    p.x_axis = "scene";
    p.points.push_back(sliding_point(-10, 2000, 550,
                                     full ? detail::sliding_pair(-60, 55, 4.7, -10) : detail::sliding_pair(-30, 25, 4.7, -10)));
  } else if (name == "slide-2p11") {
    p.x_axis = "scene";
    p.points.push_back(sliding_point(0, 200, 60,
                                     full ? detail::sliding_pair(-59.5, 57.5, 2.11, 0) : detail::sliding_pair(-29.5, 27.5, 2.11, 0)));
  } else if (name == "snr-sweep") {
    p.x_axis = "snr_db";
    const std::vector<double> etas{1260, 700, 400, 230, 140, 100, 70, 70, 60, 60, 60};
    for (std::size_t i = 0; i < etas.size(); ++i) {
      const double snr = -20.0 + 5.0 * static_cast<double>(i);
      p.points.push_back({snr, snr, 1000, etas[i] * eta_scale, mc(1000), {SourceScene::with_snr({10.11, 13.3}, snr)}});
    }
  } else if (name == "snapshots-sweep") {
    p.x_axis = "snapshots";
    const std::vector<std::size_t> ts{100, 200, 500, 1000, 2000, 5000, 10000};
    const std::vector<double> etas{130, 180, 270, 410, 570, 910, 1280};
    for (std::size_t i = 0; i < ts.size(); ++i) {
      p.points.push_back({static_cast<double>(ts[i]), -10, ts[i], etas[i] * eta_scale, mc(1000),
                          {SourceScene::with_snr({-13.18, -9.58}, -10)}});
    }
  } else if (name == "separation-sweep") {
    p.x_axis = "separation_deg";
    for (double sep : {1.0, 2.0, 3.0, 4.0, 6.0, 10.0, 14.0}) {
      p.points.push_back({sep, -10, 500, 290 * eta_scale, mc(1000), {SourceScene::with_snr({-13.8, -13.8 + sep}, -10)}});
    }
  } else if (name == "snr-mismatch-a") {
    p.x_axis = "scene";
    std::vector<SourceScene> scenes;
    for (const auto& s : full ? detail::sliding_pair(-59.5, 57.5, 2.11, 0) : detail::sliding_pair(-29.5, 27.5, 2.11, 0)) {
      scenes.push_back(detail::scene_with_noise(s.doas_deg, {0.7, 1.25}, 1.0));
    }
    const double actual = snr_db(scenes.front());
    p.points.push_back(sliding_point(actual, 200, 60, std::move(scenes)));
  } else if (name == "snr-mismatch-b") {
    p.x_axis = "scene";
    std::vector<SourceScene> scenes;
    for (const auto& s : full ? detail::sliding_pair(-59.43, 55.57, 4.0, -10) : detail::sliding_pair(-29.43, 25.57, 4.0, -10)) {
      scenes.push_back(detail::scene_with_noise(s.doas_deg, {0.7, 1.25}, 10.0));
    }
    const double actual = snr_db(scenes.front());
    p.points.push_back(sliding_point(actual, 1000, 400, std::move(scenes)));
  } else if (name == "unknown-k-fixed" || name == "unknown-k-sweep") {
    p.x_axis = "k";
    p.unknown_k = true;
    p.methods = {Method::Cnn, Method::CnnThreshold};
    const std::size_t t = unknown_k_snr_db <= -5.0 ? 3000 : 1000;
    const std::vector<double> fixed{7.8, -2.6, 2.6};
    for (std::size_t k = 1; k <= std::min<std::size_t>(unknown_k_max, 3); ++k) {
      OperatingPoint pt{static_cast<double>(k), unknown_k_snr_db, t, 0.0, 0, {}};
      if (name == "unknown-k-fixed") {
        pt.scenes = {SourceScene::with_snr({fixed.begin(), fixed.begin() + static_cast<std::ptrdiff_t>(k)}, unknown_k_snr_db)};
        pt.trials = mc(10000);
      } else {
        const double span = full ? 59.2 : 29.2;
        pt.scenes = detail::sliding_group(k, -span - 0.6, span - 10.0 * static_cast<double>(k - 1), unknown_k_snr_db);
        pt.trials = pt.scenes.size();
      }
      p.points.push_back(std::move(pt));
    }
  } else {
    std::string list;
    for (const auto& n : preset_names()) list += (list.empty() ? "" : ", ") + n;
    throw DomainError("unknown preset '" + name + "'; available: " + list);
  }
  detail::apply_overrides(p, overrides);
  return p;
}

// --- running -----------------------------------------------------------------

struct TrialRecord {
  std::size_t point = 0;
  double x = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::size_t snapshots = 0;
  double snr_db = 0.0;  ///< actual SNR of the scene
  Method method{};
  AngleSet truth;
  AngleSet estimate;
  std::string status = "ok";
};

struct AggregateRow {
  std::size_t point = 0;
  double x = 0.0;
  Method method{};
  std::size_t trials = 0;
  std::size_t failures = 0;
  double rmse = 0.0;
  double mae = 0.0;
  double crlb = std::nan("");
  double mean_hausdorff = std::nan("");
  double max_hausdorff = std::nan("");
  std::size_t undefined_hausdorff = 0;
  double count_accuracy = std::nan("");
};

struct RunResult {
  Preset preset;
  std::uint64_t seed = 0;
  Scale scale = Scale::Desk;
  double p_bar = std::nan("");
  std::vector<TrialRecord> trials;
  std::vector<AggregateRow> aggregates;
  std::optional<ConfusionMatrix> confusion;
};

/// A checkpoint prepared for evaluation, with the grid it was trained on.
struct LoadedModel {
  nn::Checkpoint checkpoint;
  GridSpec grid;
  double p_bar = 0.5;
};

inline LoadedModel load_model(const std::filesystem::path& path) {
  LoadedModel m{nn::load_checkpoint(path), {}, 0.5};
  const auto& meta = m.checkpoint.metadata;
  try {
    m.grid = {meta.at("grid").at("half_points").get<std::size_t>(), meta.at("grid").at("resolution_deg").get<double>()};
    if (meta.contains("confidence_level")) m.p_bar = meta.at("confidence_level").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": checkpoint metadata lacks grid information (" + e.what() + ")");
  }
  return m;
}

inline void check_model_fits(const LoadedModel& model, const Preset& preset) {
  const auto& spec = model.checkpoint.spec;
  if (spec.input_size != preset.geometry.n_sensors || model.grid != preset.grid) {
    throw DomainError("checkpoint was trained for N = " + std::to_string(spec.input_size) + ", G = " +
                      std::to_string(model.grid.half_points) + " but preset " + preset.name + " uses N = " +
                      std::to_string(preset.geometry.n_sensors) + ", G = " + std::to_string(preset.grid.half_points));
  }
}

inline RunResult run_preset(const Preset& preset, std::uint64_t seed, Scale scale,
                            const LoadedModel* model = nullptr) {
  std::vector<Method> methods = preset.methods;
  if (preset.unknown_k && !model) {
    throw DomainError("preset " + preset.name +
                      " evaluates the network; train one first with `doa train --mixed --out model.ckpt` and pass "
                      "--checkpoint model.ckpt");
  }
  if (model) {
    check_model_fits(*model, preset);
    if (!preset.unknown_k) methods.push_back(Method::Cnn);
  }

  RunResult run{preset, seed, scale, model && preset.unknown_k ? model->p_bar : std::nan(""), {}, {}, {}};
  std::uint64_t global_trial = 0;
  std::vector<std::size_t> true_counts, predicted_counts;

  for (std::size_t pi = 0; pi < preset.points.size(); ++pi) {
    const auto& pt = preset.points[pi];
    const BpdnConfig bpdn{pt.eta};
    std::map<Method, std::vector<std::size_t>> by_method;
    for (std::size_t t = 0; t < pt.trials; ++t, ++global_trial) {
      const SourceScene& scene = pt.scenes[t % pt.scenes.size()];
      const std::uint64_t trial_seed = seed ^ global_trial;
      const auto block = simulate_snapshots(preset.geometry, scene, pt.snapshots, trial_seed);
      const ComplexMatrix r = sample_covariance(block);
      const std::size_t k = scene.size();
      std::vector<double> probabilities;
      if (model) probabilities = nn::forward(model->checkpoint.spec, model->checkpoint.params, build_input_channels(r).tensor());

      for (Method m : methods) {
        TrialRecord rec{pi, pt.x, t, trial_seed, pt.snapshots, snr_db(scene), m, scene.doas_deg, {}, "ok"};
        try {
          switch (m) {
            case Method::Music: rec.estimate = music(r, k, preset.grid, preset.geometry).angles_deg; break;
            case Method::RootMusic: rec.estimate = root_music(r, k, preset.geometry).angles_deg; break;
            case Method::L21Svd: {
              const auto res = l21_svd(block, preset.grid, preset.geometry, bpdn, k);
              rec.estimate = res.estimates.angles_deg;
              if (res.degenerate) rec.status = "degenerate";
              break;
            }
            case Method::Cnn: rec.estimate = topk_estimates(probabilities, model->grid, k).angles_deg; break;
            case Method::CnnThreshold:
              rec.estimate = threshold_estimates(probabilities, model->grid, model->p_bar).angles_deg;
              true_counts.push_back(k);
              predicted_counts.push_back(rec.estimate.size());
              break;
          }
        } catch (const EstimatorFailure&) {
          rec.status = "failed";
        }
        by_method[m].push_back(run.trials.size());
        run.trials.push_back(std::move(rec));
      }
    }

    double crlb_value = std::nan("");
    if (!preset.unknown_k) {
      try {
        double s = 0.0;
        for (const auto& sc : pt.scenes) {
          const double c = crlb_rms(preset.geometry, sc, pt.snapshots);
          s += c * c;
        }
        crlb_value = std::sqrt(s / static_cast<double>(pt.scenes.size()));
      } catch (const NumericalError&) {
      }
    }

    for (Method m : methods) {
      AggregateRow row{pi, pt.x, m};
      std::vector<AngleSet> truths, estimates;
      std::vector<double> distances;
      double abs_sum = 0.0;
      std::size_t abs_n = 0, count_hits = 0;
      for (std::size_t idx : by_method[m]) {
        const auto& rec = run.trials[idx];
        ++row.trials;
        if (m == Method::CnnThreshold) {
          distances.push_back(hausdorff(rec.truth, rec.estimate));
          count_hits += rec.estimate.size() == rec.truth.size();
          continue;
        }
        if (rec.status == "failed") {
          ++row.failures;
          continue;
        }
        truths.push_back(rec.truth);
        estimates.push_back(rec.estimate);
        auto a = rec.truth, b = rec.estimate;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        for (std::size_t i = 0; i < a.size(); ++i, ++abs_n) abs_sum += std::abs(a[i] - b[i]);
      }
      if (m == Method::CnnThreshold) {
        const auto s = summarize_hausdorff(distances);
        row.mean_hausdorff = s.mean;
        row.max_hausdorff = s.max;
        row.undefined_hausdorff = s.undefined;
        row.failures = s.undefined;
        row.count_accuracy = row.trials ? static_cast<double>(count_hits) / static_cast<double>(row.trials) : 0.0;
        row.rmse = std::nan("");
        row.mae = std::nan("");
      } else {
        row.rmse = truths.empty() ? std::nan("") : rmse(truths, estimates);
        row.mae = abs_n ? abs_sum / static_cast<double>(abs_n) : std::nan("");
        row.crlb = crlb_value;
      }
      run.aggregates.push_back(row);
    }
  }
  if (preset.unknown_k) run.confusion = confusion(true_counts, predicted_counts, preset.points.size());
  return run;
}

// --- output ------------------------------------------------------------------

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.6f}", v);
}

inline std::string format_angles(const AngleSet& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ";" : "") + format_number(a[i]);
  return s;
}

inline AngleSet parse_angles(const std::string& s) {
  AngleSet out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find_first_of(";,", start);
    const auto token = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!token.empty()) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw DomainError("cannot parse angle '" + token + "'");
      }
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

struct OutputFiles {
  std::filesystem::path trials, aggregate, figure, confusion, manifest;
};

inline OutputFiles output_paths(const std::filesystem::path& dir, const std::string& preset) {
  return {dir / (preset + "_trials.csv"), dir / (preset + "_aggregate.csv"), dir / (preset + "_figure.csv"),
          dir / (preset + "_confusion.csv"), dir / (preset + "_manifest.json")};
}

inline const char* kTrialColumns = "point,x,trial,seed,snapshots,snr_db,method,truth,estimate,status";
inline const char* kAggregateColumns =
    "point,x,method,trials,failures,rmse_deg,mae_deg,crlb_deg,mean_hausdorff_deg,max_hausdorff_deg,"
    "undefined_hausdorff,count_accuracy";

/// Writes the CSV files and the manifest. CSV content depends only on the
/// run itself; timing goes to the manifest.
inline OutputFiles write_results(const RunResult& run, const std::filesystem::path& dir, double elapsed_seconds) {
  std::filesystem::create_directories(dir);
  const auto files = output_paths(dir, run.preset.name);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + p.string());
    return f;
  };
  const std::string banner = fmt::format("# preset={} seed={} scale={}\n", run.preset.name, run.seed, to_string(run.scale));

  {
    auto f = open(files.trials);
    f << banner
      << "# columns: point index, x-axis value, trial index, trial seed, snapshots T, actual SNR (dB), method, "
         "true DoAs (deg, ';'-separated), estimated DoAs, status\n"
      << kTrialColumns << '\n';
    for (const auto& r : run.trials) {
      f << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.point, format_number(r.x), r.trial, r.seed, r.snapshots,
                       format_number(r.snr_db), to_string(r.method), format_angles(r.truth), format_angles(r.estimate),
                       r.status);
    }
  }
  {
    auto f = open(files.aggregate);
    f << banner
      << "# columns: point index, x-axis value, method, trials, failed or undefined trials, RMSE, mean absolute "
         "error, CRLB (RMS over sources), mean and max Hausdorff distance, undefined Hausdorff count, "
         "source-count accuracy\n"
      << kAggregateColumns << '\n';
    for (const auto& a : run.aggregates) {
      f << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", a.point, format_number(a.x), to_string(a.method),
                       a.trials, a.failures, format_number(a.rmse), format_number(a.mae), format_number(a.crlb),
                       format_number(a.mean_hausdorff), format_number(a.max_hausdorff), a.undefined_hausdorff,
                       format_number(a.count_accuracy));
    }
  }
  {
    // wide table: one row per operating point, one column per method
    std::vector<Method> methods;
    for (const auto& a : run.aggregates) {
      if (std::find(methods.begin(), methods.end(), a.method) == methods.end()) methods.push_back(a.method);
    }
    const bool unknown = run.preset.unknown_k;
    auto f = open(files.figure);
    f << banner << "# columns: " << run.preset.x_axis
      << (unknown ? ", then per method RMSE (K known) or mean Hausdorff distance (threshold decoder)\n"
                  : ", then RMSE per method and the CRLB (degrees)\n");
    f << run.preset.x_axis;
    for (Method m : methods) f << ',' << to_string(m);
    if (!unknown) f << ",crlb";
    f << '\n';
    for (std::size_t pi = 0; pi < run.preset.points.size(); ++pi) {
      f << format_number(run.preset.points[pi].x);
      double crlb = std::nan("");
      for (Method m : methods) {
        for (const auto& a : run.aggregates) {
          if (a.point == pi && a.method == m) {
            f << ',' << format_number(m == Method::CnnThreshold ? a.mean_hausdorff : a.rmse);
            crlb = a.crlb;
          }
        }
      }
      if (!unknown) f << ',' << format_number(crlb);
      f << '\n';
    }
  }
  if (run.confusion) {
    auto f = open(files.confusion);
    const auto& c = *run.confusion;
    f << banner << "# columns: true source count, then trial counts per predicted count; the last column and row ("
      << c.k_display + 1 << "+) collect larger counts\n";
    f << "true_k";
    for (std::size_t j = 0; j < c.dimension(); ++j) f << ",pred_" << j << (j == c.k_display + 1 ? "+" : "");
    f << '\n';
    for (std::size_t i = 0; i < c.dimension(); ++i) {
      f << i << (i == c.k_display + 1 ? "+" : "");
      for (std::size_t j = 0; j < c.dimension(); ++j) f << ',' << c.counts[i][j];
      f << '\n';
    }
  }

  nlohmann::json manifest{
      {"preset", run.preset.name},
      {"seed", run.seed},
      {"scale", to_string(run.scale)},
      {"version", kVersion},
      {"geometry", {{"n_sensors", run.preset.geometry.n_sensors}, {"spacing_ratio", run.preset.geometry.spacing_ratio}}},
      {"grid", {{"half_points", run.preset.grid.half_points}, {"resolution_deg", run.preset.grid.resolution_deg}}},
      {"elapsed_seconds", elapsed_seconds},
      {"files", {files.trials.filename().string(), files.aggregate.filename().string(), files.figure.filename().string()}},
  };
  nlohmann::json points = nlohmann::json::array();
  for (const auto& pt : run.preset.points) {
    points.push_back({{"x", pt.x}, {"snr_db", pt.snr_db}, {"snapshots", pt.snapshots}, {"eta", pt.eta}, {"trials", pt.trials}});
  }
  manifest["points"] = points;
  if (!std::isnan(run.p_bar)) manifest["confidence_level"] = run.p_bar;
  if (run.confusion) manifest["files"].push_back(files.confusion.filename().string());
  auto f = open(files.manifest);
  f << manifest.dump(2) << '\n';
  return files;
}

}  // namespace doa
