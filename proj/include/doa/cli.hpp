#pragma once

// Command-line front end: simulate, train, eval, metrics, crlb, spec-check.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "doa/binary_io.hpp"
#include "doa/crlb.hpp"
#include "doa/dataset_io.hpp"
#include "doa/metrics.hpp"
#include "doa/nn/checkpoint.hpp"
#include "doa/presets.hpp"
#include "doa/training.hpp"

namespace doa::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

struct Streams {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline Scale parse_scale(const std::string& s) { return s == "full" ? Scale::Full : Scale::Desk; }

inline nn::ArchitectureConfig profile_config(const std::string& profile) {
  return profile == "paper" ? nn::paper_profile() : nn::small_profile();
}

inline GridSpec profile_grid(const std::string& profile) {
  return profile == "paper" ? GridSpec{60, 1.0} : GridSpec{30, 1.0};
}

inline std::string thousands(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

struct EvalOptions {
  std::string preset;
  std::uint64_t seed = 1;
  std::string scale = "desk";
  std::string out = "results";
  std::string checkpoint;
  std::vector<double> eta;
  std::optional<std::size_t> snapshots;
};

inline int run_eval(const EvalOptions& o, Streams io) {
  std::optional<LoadedModel> model;
  double snr = -10.0;
  std::size_t k_max = 3;
  if (!o.checkpoint.empty()) {
    model = load_model(o.checkpoint);
    const auto& meta = model->checkpoint.metadata;
    if (meta.contains("snr_db") && meta["snr_db"].size() == 1) snr = meta["snr_db"][0].get<double>();
    if (meta.contains("k_max")) k_max = meta["k_max"].get<std::size_t>();
  }
  PresetOverrides ov{o.eta, o.snapshots};
  const auto preset = make_preset(o.preset, parse_scale(o.scale), ov, snr, k_max);
  const auto start = std::chrono::steady_clock::now();
  const auto run = run_preset(preset, o.seed, parse_scale(o.scale), model ? &*model : nullptr);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto files = write_results(run, o.out, elapsed);

  io.out << fmt::format("{} ({} scale, seed {}): {} trials in {:.1f} s\n", preset.name, o.scale, o.seed,
                        run.trials.size(), elapsed);
  for (const auto& a : run.aggregates) {
    if (a.method == Method::CnnThreshold) {
      io.out << fmt::format("  {}={:<8} {:<14} mean dH {}  max dH {}  count accuracy {}\n", preset.x_axis,
                            format_number(a.x), to_string(a.method), format_number(a.mean_hausdorff),
                            format_number(a.max_hausdorff), format_number(a.count_accuracy));
    } else {
      io.out << fmt::format("  {}={:<8} {:<14} RMSE {}  CRLB {}  failures {}\n", preset.x_axis, format_number(a.x),
                            to_string(a.method), format_number(a.rmse), format_number(a.crlb), a.failures);
    }
  }
  io.out << "  wrote " << files.trials.string() << ", " << files.aggregate.string() << ", " << files.figure.string()
         << "\n";
  return kOk;
}

struct TrainOptions {
  std::string profile = "small";
  std::string out = "model.ckpt";
  std::uint64_t seed = 1;
  bool mixed = false;
  std::size_t k = 2;
  std::size_t k_max = 2;
  std::vector<double> snr;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> halving_period;
  std::string dataset_cache;
  std::size_t calibration_trials = 500;
  std::size_t calibration_snapshots = 1000;
};

inline int run_train(const TrainOptions& o, Streams io) {
  const auto arch = profile_config(o.profile);
  const auto spec = nn::cnn_architecture(arch);
  const GridSpec grid = profile_grid(o.profile);
  const UlaGeometry geom{arch.n_sensors, 0.5};

  std::vector<double> snrs = o.snr;
  if (snrs.empty()) {
    if (o.mixed) snrs = {0.0};
    else if (o.profile == "paper") snrs = {-20, -15, -10, -5, 0};
    else snrs = {-15, -10, -5};
  }
  if (o.mixed && snrs.size() != 1) throw DomainError("mixed-K training uses a single SNR");

  Dataset data;
  if (!o.dataset_cache.empty() && std::filesystem::exists(o.dataset_cache)) {
    data = io::read_dataset(o.dataset_cache);
    io.out << "loaded " << data.size() << " examples from " << o.dataset_cache << "\n";
  } else {
    data = o.mixed ? build_mixed_k_dataset(grid, geom, o.k_max, snrs[0]) : build_fixed_k_dataset(grid, geom, o.k, snrs);
    if (!o.dataset_cache.empty()) io::write_dataset(o.dataset_cache, data);
  }

  TrainConfig cfg;
  cfg.seed = o.seed;
  const bool paper = o.profile == "paper";
  cfg.epochs = o.epochs.value_or(paper ? 200 : 100);
  cfg.lr_halving_period = o.halving_period.value_or(
      halving_period_for_steps(kStepsPerHalving, data.size() - validation_size(data.size(), cfg.validation_fraction),
                               cfg.batch_size));
  io.out << fmt::format("training {} profile: {} parameters, {} examples, {} epochs\n", o.profile,
                        thousands(spec.parameter_count()), data.size(), cfg.epochs);
  const auto result = train(spec, data, cfg, [&](std::size_t epoch, const TrainingHistory& h, const nn::ModelParams&) {
    io.out << fmt::format("  epoch {:>3}  lr {:.2e}  train {:.5f}  validation {:.5f}\n", epoch + 1,
                          h.learning_rate.back(), h.train_loss.back(), h.validation_loss.back());
    io.out.flush();
  });

  nlohmann::json meta{
      {"grid", {{"half_points", grid.half_points}, {"resolution_deg", grid.resolution_deg}}},
      {"geometry", {{"n_sensors", geom.n_sensors}, {"spacing_ratio", geom.spacing_ratio}}},
      {"snr_db", snrs},
      {"k_min", data.k_min},
      {"k_max", data.k_max},
      {"epoch", cfg.epochs},
      {"lr_halving_period", cfg.lr_halving_period},
      {"seed", o.seed},
      {"profile", o.profile},
      {"final_train_loss", result.history.train_loss.back()},
      {"final_validation_loss", result.history.validation_loss.back()},
  };
  if (o.mixed) {
    const auto cal = calibrate_threshold(spec, result.params, grid, geom, o.k_max, snrs[0], o.calibration_snapshots,
                                         o.calibration_trials, 10.0, mix_seed(o.seed ^ 0xca1bULL));
    meta["confidence_level"] = cal.p_bar;
    meta["calibration_accuracy"] = cal.accuracy;
    io.out << fmt::format("calibrated confidence level {:.2f} (count accuracy {:.3f} on {} trials)\n", cal.p_bar,
                          cal.accuracy, o.calibration_trials);
  }
  nn::save_checkpoint(o.out, spec, result.params, meta);
  io.out << "saved " << o.out << "\n";
  return kOk;
}

inline int run_spec_check(const std::string& profile, Streams io) {
  const auto arch = profile_config(profile);
  const auto spec = nn::cnn_architecture(arch);
  const auto shapes = spec.shapes();
  const GridSpec grid = profile_grid(profile);
  io.out << "profile " << profile << ": " << spec.layers.size() << " layers\n";
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    io.out << fmt::format("  {:>2} {:<10} {} -> {}\n", l + 1, nn::layer_name(spec.layers[l]), shape_string(shapes[l]),
                          shape_string(shapes[l + 1]));
  }
  io.out << "trainable parameters: " << thousands(spec.parameter_count()) << "\n";
  const std::vector<double> snrs = profile == "paper" ? std::vector<double>{-20, -15, -10, -5, 0}
                                                      : std::vector<double>{-15, -10, -5};
  io.out << "fixed-K dataset (K=2): " << thousands(fixed_k_count(grid, 2, 1)) << " per SNR, "
         << thousands(fixed_k_count(grid, 2, snrs.size())) << " over " << snrs.size() << " SNRs\n";
  io.out << "mixed-K dataset (K_max=3): " << thousands(mixed_k_count(grid, 3)) << "\n";
  return kOk;
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

/// Recomputes per-(point, method) metrics from a trials CSV.
inline int run_metrics_file(const std::string& path, Streams io) {
  const auto rows = read_csv_rows(path);
  if (rows.empty() || rows[0].size() != 10 || rows[0][0] != "point") throw FormatError(path + ": not a trials file");
  struct Acc {
    std::vector<AngleSet> truths, estimates;
    std::vector<double> distances;
    std::vector<std::size_t> k_true, k_pred;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 10) throw FormatError(path + ": malformed row " + std::to_string(i));
    auto& g = groups[{r[0], r[6]}];
    const auto truth = parse_angles(r[7]);
    const auto est = parse_angles(r[8]);
    g.distances.push_back(hausdorff(truth, est));
    g.k_true.push_back(truth.size());
    g.k_pred.push_back(est.size());
    if (r[9] != "failed" && truth.size() == est.size()) {
      g.truths.push_back(truth);
      g.estimates.push_back(est);
    }
  }
  for (const auto& [key, g] : groups) {
    const auto h = summarize_hausdorff(g.distances);
    const auto c = confusion(g.k_true, g.k_pred, 3);
    io.out << fmt::format("point {} {:<14} RMSE {}  mean dH {}  max dH {}  count accuracy {}\n", key.first, key.second,
                          g.truths.empty() ? "nan" : format_number(rmse(g.truths, g.estimates)),
                          format_number(h.mean), format_number(h.max), format_number(c.accuracy()));
  }
  return kOk;
}

}  // namespace detail

/// Runs the command line; never throws.
inline int run(int argc, const char* const* argv, Streams io = {}) {
  CLI::App app{"Direction-of-arrival estimation workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate one snapshot block and write it to a file");
  std::vector<double> sim_doas, sim_powers;
  double sim_snr = 0.0;
  std::size_t sim_t = 1000, sim_n = 16;
  std::uint64_t sim_seed = 1;
  std::string sim_out;
  sim->add_option("--doas", sim_doas, "Source directions in degrees")->required()->delimiter(',');
  sim->add_option("--snr", sim_snr, "SNR in dB (unit source powers)");
  sim->add_option("--powers", sim_powers, "Source powers; overrides the unit default")->delimiter(',');
  sim->add_option("--snapshots", sim_t, "Number of snapshots T")->check(CLI::PositiveNumber);
  sim->add_option("--sensors", sim_n, "Number of sensors N")->check(CLI::Range(2, 4096));
  sim->add_option("--seed", sim_seed, "Random seed");
  sim->add_option("--out", sim_out, "Output file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Build a training set, train the network and save a checkpoint");
  detail::TrainOptions topt;
  std::size_t epochs = 0;
  tr->add_option("--profile", topt.profile, "Architecture profile")->check(CLI::IsMember({"paper", "small"}));
  tr->add_option("--out", topt.out, "Checkpoint file")->required();
  tr->add_option("--seed", topt.seed, "Random seed");
  tr->add_flag("--mixed", topt.mixed, "Train on 1..k-max sources (unknown source count)");
  tr->add_option("--k", topt.k, "Source count for fixed-K training")->check(CLI::PositiveNumber);
  tr->add_option("--k-max", topt.k_max, "Largest source count for mixed-K training")->check(CLI::PositiveNumber);
  tr->add_option("--snr", topt.snr, "Training SNRs in dB")->delimiter(',');
  tr->add_option("--epochs", epochs, "Number of epochs")->check(CLI::PositiveNumber);
  std::size_t halving = 0;
  tr->add_option("--halving-period", halving, "Epochs between learning-rate halvings")->check(CLI::PositiveNumber);
  tr->add_option("--dataset-cache", topt.dataset_cache, "Dataset file to reuse or create");

  // eval
  auto* ev = app.add_subcommand("eval", "Run an experiment preset");
  detail::EvalOptions eopt;
  std::size_t eval_t = 0;
  ev->add_option("--preset", eopt.preset, "Preset name")->required();
  ev->add_option("--seed", eopt.seed, "Random seed");
  ev->add_option("--scale", eopt.scale, "full or desk")->check(CLI::IsMember({"full", "desk"}));
  ev->add_option("--out", eopt.out, "Output directory");
  ev->add_option("--checkpoint", eopt.checkpoint, "Trained network")->check(CLI::ExistingFile);
  ev->add_option("--eta", eopt.eta, "Noise bound(s) for l2,1-SVD")->delimiter(',');
  ev->add_option("--snapshots", eval_t, "Override the number of snapshots")->check(CLI::PositiveNumber);

  // metrics
  auto* me = app.add_subcommand("metrics", "RMSE, Hausdorff distance and source counts");
  std::string m_truth, m_est, m_trials;
  bool m_hausdorff = false, m_rmse = false;
  me->add_option("--truth", m_truth, "True angles, e.g. -30,20,23");
  me->add_option("--estimate", m_est, "Estimated angles");
  me->add_flag("--hausdorff", m_hausdorff, "Print the Hausdorff distance");
  me->add_flag("--rmse", m_rmse, "Print the RMSE");
  me->add_option("--trials", m_trials, "Trials CSV written by eval")->check(CLI::ExistingFile);

  // crlb
  auto* cr = app.add_subcommand("crlb", "Stochastic Cramer-Rao bound");
  std::vector<double> c_doas, c_powers;
  std::vector<double> c_snr{0.0};
  std::vector<std::size_t> c_t{1000};
  std::size_t c_n = 16;
  cr->add_option("--doas", c_doas, "Source directions in degrees")->required()->delimiter(',');
  cr->add_option("--snr", c_snr, "SNR value(s) in dB")->delimiter(',');
  cr->add_option("--snapshots", c_t, "Snapshot count(s)")->delimiter(',');
  cr->add_option("--sensors", c_n, "Number of sensors N")->check(CLI::Range(2, 4096));
  cr->add_option("--powers", c_powers, "Source powers")->delimiter(',');

  // spec-check
  auto* sc = app.add_subcommand("spec-check", "Validate an architecture and print parameter and dataset counts");
  std::string sc_profile = "paper";
  sc->add_option("--profile", sc_profile, "Architecture profile")->check(CLI::IsMember({"paper", "small"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    io.out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    io.err << sub->help();
    return kUsage;
  }

  try {
    if (sim->parsed()) {
      SourceScene scene = SourceScene::with_snr(sim_doas, sim_snr);
      if (!sim_powers.empty()) {
        scene.source_powers = sim_powers;
        scene.noise_power = *std::min_element(sim_powers.begin(), sim_powers.end()) * std::pow(10.0, -sim_snr / 10.0);
      }
      const UlaGeometry geom{sim_n, 0.5};
      const auto block = simulate_snapshots(geom, scene, sim_t, sim_seed);
      io::write_snapshots(sim_out, block);
      io.out << fmt::format("wrote {} ({} sensors x {} snapshots, SNR {} dB)\n", sim_out, sim_n, sim_t,
                            format_number(snr_db(scene)));
    } else if (tr->parsed()) {
      if (epochs) topt.epochs = epochs;
      if (halving) topt.halving_period = halving;
      return detail::run_train(topt, io);
    } else if (ev->parsed()) {
      if (eval_t) eopt.snapshots = eval_t;
      return detail::run_eval(eopt, io);
    } else if (me->parsed()) {
      if (!m_trials.empty()) return detail::run_metrics_file(m_trials, io);
      if (m_truth.empty() || m_est.empty()) {
        io.err << "error: metrics needs --truth and --estimate, or --trials\n\n" << me->help();
        return kUsage;
      }
      const auto a = parse_angles(m_truth);
      const auto b = parse_angles(m_est);
      const bool all = !m_hausdorff && !m_rmse;
      if (m_hausdorff || all) io.out << "hausdorff " << format_number(hausdorff(a, b)) << "\n";
      if (m_rmse || all) {
        if (a.size() == b.size()) io.out << "rmse " << format_number(rmse(a, b)) << "\n";
        else if (m_rmse) throw DomainError("rmse needs sets of equal size");
      }
    } else if (cr->parsed()) {
      const UlaGeometry geom{c_n, 0.5};
      io.out << "snr_db,snapshots";
      for (std::size_t i = 0; i < c_doas.size(); ++i) io.out << ",crlb_deg_" << i + 1;
      io.out << "\n";
      for (double s : c_snr) {
        for (std::size_t t : c_t) {
          SourceScene scene = SourceScene::with_snr(c_doas, s);
          if (!c_powers.empty()) {
            scene.source_powers = c_powers;
            scene.noise_power = *std::min_element(c_powers.begin(), c_powers.end()) * std::pow(10.0, -s / 10.0);
          }
          io.out << format_number(s) << ',' << t;
          for (double b : crlb_unconditional(geom, scene, t)) io.out << ',' << format_number(b);
          io.out << "\n";
        }
      }
    } else if (sc->parsed()) {
      return detail::run_spec_check(sc_profile, io);
    }
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace doa::cli
