#include "dodti/cli.hpp"

#include "dodti/checkpoint.hpp"
#include "dodti/error.hpp"
#include "dodti/experiment.hpp"
#include "dodti/io.hpp"
#include "dodti/metrics.hpp"
#include "dodti/parallel.hpp"
#include "dodti/simulation.hpp"
#include "dodti/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace dodti {

namespace fs = std::filesystem;

namespace {

Volume scalar_volume(Dims dims, const std::vector<double>& values) {
  Volume v(dims, 1);
  for (std::size_t i = 0; i < values.size(); ++i) v.data(0, Eigen::Index(i)) = values[i];
  return v;
}

void write_scalar_maps(const ScalarMaps& maps, const fs::path& dir, const VolumeMeta* meta) {
  write_volume(scalar_volume(maps.dims, maps.fa), dir / "fa.nii.gz", meta);
  write_volume(scalar_volume(maps.dims, maps.md), dir / "md.nii.gz", meta);
  write_volume(scalar_volume(maps.dims, maps.ad), dir / "ad.nii.gz", meta);
  write_volume(scalar_volume(maps.dims, maps.rd), dir / "rd.nii.gz", meta);
}

struct SchemeOpts {
  std::string kind = "dsm6";
  int ndw = 6;
  double b = 1000;
  double rotate = 0;
  int nb0 = 1;

  void add(CLI::App* app) {
    app->add_option("--scheme", kind, "dsm6, jones6 or jones (with --ndw)")->capture_default_str();
    app->add_option("--ndw", ndw, "number of DW directions for --scheme jones")->capture_default_str();
    app->add_option("--b", b, "b-value in s/mm^2")->capture_default_str();
    app->add_option("--rotate", rotate, "rotation about z in degrees")->capture_default_str();
    app->add_option("--nb0", nb0, "number of b=0 volumes")->capture_default_str();
  }
  SchemeRequest request() const {
    SchemeRequest r;
    r.kind = parse_scheme_kind(kind);
    r.n_dw = ndw;
    r.b = b;
    r.rotation_deg_z = rotate;
    r.n_b0 = nb0;
    return r;
  }
};

}  // namespace

void write_dataset(const std::vector<TrainSample>& samples, const fs::path& dir) {
  if (samples.empty()) throw UsageError("empty dataset");
  fs::create_directories(dir);
  write_gradients(samples.front().noisy_stack.scheme, dir / "bvals", dir / "bvecs");
  nlohmann::json index = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04zu", i);
    const auto& s = samples[i];
    write_volume(s.noisy_stack.signals, dir / (std::string(stem) + "_dwi.nii.gz"));
    write_param_field(s.gt, dir / (std::string(stem) + "_gt.nii.gz"));
    write_mask(s.gt.mask.empty() ? Mask(s.gt.voxels(), 1) : s.gt.mask, s.gt.dims, dir / (std::string(stem) + "_mask.nii.gz"));
    index.push_back({{"dwi", std::string(stem) + "_dwi.nii.gz"},
                     {"gt", std::string(stem) + "_gt.nii.gz"},
                     {"mask", std::string(stem) + "_mask.nii.gz"},
                     {"noise_level", s.noise_level}});
  }
  std::ofstream(dir / "dataset.json") << nlohmann::json{{"bvals", "bvals"}, {"bvecs", "bvecs"}, {"samples", index}}.dump(2)
                                      << "\n";
}

std::vector<TrainSample> read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw DataError("no dataset.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + "/dataset.json: " + e.what());
  }
  const GradientScheme scheme = read_gradients(dir / j.value("bvals", "bvals"), dir / j.value("bvecs", "bvecs"));
  std::vector<TrainSample> out;
  for (const auto& e : j.at("samples")) {
    TrainSample s;
    s.noisy_stack.scheme = scheme;
    s.noisy_stack.signals = read_volume(dir / e.at("dwi").get<std::string>()).volume;
    const Mask mask = read_mask(dir / e.at("mask").get<std::string>(), s.noisy_stack.dims());
    s.gt = read_param_field(dir / e.at("gt").get<std::string>(), mask);
    if (!(s.gt.dims == s.noisy_stack.dims())) throw DataError("dataset sample dims disagree");
    if (!s.gt.values.allFinite()) throw DataError("dataset ground truth contains non-finite values");
    s.noise_level = e.value("noise_level", 0.0);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError(dir.string() + ": dataset has no samples");
  return out;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Diffusion tensor estimation with an unrolled ADMM network", "dodti"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  int threads = 0;
  bool deterministic = false;
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (0 = all cores)")->capture_default_str();
  app.add_flag("--deterministic", deterministic, "fixed-order reductions; output is bitwise reproducible");

  // scheme
  auto* scheme_cmd = app.add_subcommand("scheme", "emit or rotate a gradient table");
  SchemeOpts scheme_opts;
  scheme_opts.add(scheme_cmd);
  std::string in_bvals, in_bvecs, out_bvals = "bvals", out_bvecs = "bvecs";
  scheme_cmd->add_option("--in-bvals", in_bvals, "rotate this table instead of a bundled one");
  scheme_cmd->add_option("--in-bvecs", in_bvecs);
  scheme_cmd->add_option("--out-bvals", out_bvals)->capture_default_str();
  scheme_cmd->add_option("--out-bvecs", out_bvecs)->capture_default_str();

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "phantom to noisy DWI stack on disk");
  SchemeOpts sim_scheme;
  sim_scheme.add(sim_cmd);
  std::vector<int> sim_dims{48, 48, 48};
  double sim_sigma = 0.03;
  std::vector<double> sim_radial;
  std::string sim_out;
  int sim_blocks = 0, sim_block_size = 32;
  sim_cmd->add_option("--dims", sim_dims, "phantom size")->expected(3)->capture_default_str();
  sim_cmd->add_option("--sigma", sim_sigma, "Rician noise level on the normalised scale")->capture_default_str();
  sim_cmd->add_option("--radial", sim_radial, "spatially varying noise: outer inner")->expected(2);
  sim_cmd->add_option("--blocks", sim_blocks, "write a training set of this many blocks instead of one stack");
  sim_cmd->add_option("--block-size", sim_block_size)->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "output directory")->required();

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "DWI stack to tensor field and scalar maps");
  std::string fit_dwi, fit_bvals, fit_bvecs, fit_mask, fit_out, fit_method = "wlls", fit_denoiser = "identity", fit_weights;
  int fit_iters = kDefaultWllsIterations, fit_ns = 8, fit_nt = 1;
  double fit_rho = -1, fit_lambda = -1, fit_smooth = GaussianDefaults::sigma_voxels;
  fit_cmd->add_option("--dwi", fit_dwi)->required();
  fit_cmd->add_option("--bvals", fit_bvals)->required();
  fit_cmd->add_option("--bvecs", fit_bvecs)->required();
  fit_cmd->add_option("--mask", fit_mask, "fit mask (default: mean b=0 > 0.05)");
  fit_cmd->add_option("--method", fit_method, "lls, wlls or dodti")->capture_default_str();
  fit_cmd->add_option("--denoiser", fit_denoiser, "identity, gaussian or cnn (dodti only)")->capture_default_str();
  fit_cmd->add_option("--weights", fit_weights, "checkpoint for the cnn denoiser");
  fit_cmd->add_option("--iters", fit_iters, "WLLS reweighting rounds")->capture_default_str();
  fit_cmd->add_option("--ns", fit_ns, "unrolled stages")->capture_default_str();
  fit_cmd->add_option("--nt", fit_nt, "inner fixed-point iterations")->capture_default_str();
  fit_cmd->add_option("--rho", fit_rho, "penalty (default: 0.001, tuned Gaussian value, or checkpoint)");
  fit_cmd->add_option("--lambda", fit_lambda, "regularisation weight (same defaults as --rho)");
  fit_cmd->add_option("--smooth", fit_smooth, "Gaussian denoiser sigma in voxels")->capture_default_str();
  fit_cmd->add_option("--out", fit_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "end-to-end training of the CNN denoiser");
  std::string train_dataset, train_validation, train_out, train_init;
  int train_synthetic = 0, train_val_count = 4, train_phantoms = 8, train_width = kDefaultDenoiserWidth, train_ns = 8, train_nt = 1;
  TrainConfig tcfg;
  double train_rho0 = 1e-3, train_lambda0 = 0.1;
  bool train_fixed_scalars = false, train_f64 = false;
  train_cmd->add_option("--dataset", train_dataset, "dataset directory written by `simulate --blocks`");
  train_cmd->add_option("--validation", train_validation, "validation dataset directory");
  train_cmd->add_option("--synthetic", train_synthetic, "generate this many training blocks instead of --dataset");
  train_cmd->add_option("--phantoms", train_phantoms, "distinct phantom geometries behind --synthetic blocks")
      ->capture_default_str();
  train_cmd->add_option("--val-count", train_val_count, "validation blocks generated with --synthetic")->capture_default_str();
  train_cmd->add_option("--epochs", tcfg.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tcfg.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", tcfg.lr)->capture_default_str();
  train_cmd->add_option("--lr-halving", tcfg.lr_halving_period)->capture_default_str();
  train_cmd->add_option("--scalar-lr", tcfg.scalar_lr, "learning rate of log rho and log lambda (0 = --lr)");
  train_cmd->add_option("--block-size", tcfg.block_size)->capture_default_str();
  train_cmd->add_option("--max-seconds", tcfg.max_seconds, "wall-clock budget (0 = none)");
  train_cmd->add_option("--checkpoint-every", tcfg.checkpoint_every);
  train_cmd->add_option("--width", train_width, "CNN feature channels")->capture_default_str();
  train_cmd->add_option("--ns", train_ns)->capture_default_str();
  train_cmd->add_option("--nt", train_nt)->capture_default_str();
  train_cmd->add_option("--rho0", train_rho0)->capture_default_str();
  train_cmd->add_option("--lambda0", train_lambda0)->capture_default_str();
  train_cmd->add_flag("--fixed-scalars", train_fixed_scalars, "keep rho and lambda fixed");
  train_cmd->add_flag("--f64", train_f64, "double-precision convolutions (default: float32 products)");
  train_cmd->add_option("--init", train_init, "start from this checkpoint");
  WarmStartConfig warm;
  train_cmd->add_option("--warm-steps", warm.max_steps, "supervised denoiser warm-start steps before end-to-end training");
  train_cmd->add_option("--warm-seconds", warm.max_seconds, "wall-clock bound of the warm start");
  train_cmd->add_option("--warm-lr", warm.lr)->capture_default_str();
  train_cmd->add_flag("--warm-normalise", warm.normalise, "weight warm-start blocks by their WLLS error");
  train_cmd->add_option("--out", train_out, "run directory")->required();

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "compare two parameter maps");
  std::string met_est, met_ref, met_mask, met_format = "json", met_out;
  bool met_r2 = false;
  metrics_cmd->add_option("--est", met_est, "estimated 7-volume parameter map")->required();
  metrics_cmd->add_option("--ref", met_ref, "reference 7-volume parameter map")->required();
  metrics_cmd->add_option("--mask", met_mask, "evaluation mask")->required();
  metrics_cmd->add_option("--format", met_format, "json or csv")->capture_default_str();
  metrics_cmd->add_flag("--r2", met_r2, "also report R^2");
  metrics_cmd->add_option("--out", met_out, "write here instead of stdout");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "run a simulated experiment axis from a JSON config");
  std::string exp_config, exp_out;
  exp_cmd->add_option("config", exp_config)->required();
  exp_cmd->add_option("--out", exp_out, "output directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return 0;
    }
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (threads < 0) throw UsageError("--threads must be >= 0");
    if (threads > 0) set_thread_count(threads);
    (void)deterministic;  // every reduction already runs in a fixed order

    if (*scheme_cmd) {
      GradientScheme s;
      if (!in_bvals.empty() || !in_bvecs.empty()) {
        if (in_bvals.empty() || in_bvecs.empty()) throw UsageError("--in-bvals and --in-bvecs go together");
        s = read_gradients(in_bvals, in_bvecs);
        const Eigen::Matrix3d R = rotation_z(scheme_opts.rotate);
        for (auto& e : s.entries) e.g = R * e.g;
      } else {
        s = make_scheme(scheme_opts.request());
      }
      write_gradients(s, out_bvals, out_bvecs);
      return 0;
    }

    if (*sim_cmd) {
      const fs::path out = sim_out;
      fs::create_directories(out);
      const Dims dims{sim_dims[0], sim_dims[1], sim_dims[2]};
      if (sim_blocks > 0) {
        DatasetSpec spec;
        spec.count = sim_blocks;
        spec.phantom_dims = dims;
        spec.block_size = sim_block_size;
        spec.seed = seed;
        spec.scheme = sim_scheme.request();
        write_dataset(make_training_blocks(spec), out);
        return 0;
      }
      const Phantom ph = make_phantom(dims, seed);
      const GradientScheme scheme = make_scheme(sim_scheme.request());
      NoiseSpec noise;
      noise.seed = seed;
      if (!sim_radial.empty()) {
        noise.kind = NoiseKind::radial_linear;
        noise.sigma_outer = sim_radial[0];
        noise.sigma_inner = sim_radial[1];
      } else {
        noise.sigma = sim_sigma;
      }
      const SimulatedData sim = simulate(ph, scheme, noise);
      write_volume(sim.noisy.signals, out / "dwi.nii.gz");
      write_gradients(scheme, out / "bvals", out / "bvecs");
      write_mask(ph.gt.mask, dims, out / "mask.nii.gz");
      write_param_field(sim.gt, out / "gt.nii.gz");
      write_scalar_maps(scalar_maps(sim.gt), out / "", nullptr);
      std::ofstream(out / "simulation.json") << nlohmann::json{{"seed", seed},
                                                               {"dims", sim_dims},
                                                               {"scale", sim.scale},
                                                               {"sigma", sim_radial.empty() ? nlohmann::json(sim_sigma) : nlohmann::json(sim_radial)},
                                                               {"scheme", sim_scheme.kind},
                                                               {"b", sim_scheme.b},
                                                               {"rotate", sim_scheme.rotate}}
                                                    .dump(2)
                                             << "\n";
      return 0;
    }

    if (*fit_cmd) {
      const VolumeFile dwi = read_volume(fit_dwi);
      DwiStack stack{dwi.volume, read_gradients(fit_bvals, fit_bvecs)};
      if (std::size_t(stack.signals.channels()) != stack.scheme.size())
        throw DataError("the DWI file and the gradient files disagree on the number of volumes");
      const Mask mask = fit_mask.empty() ? Mask{} : read_mask(fit_mask, stack.dims());
      MethodConfig m = parse_method(fit_method);
      m.wlls_iters = fit_iters;
      if (m.kind == MethodKind::dodti) {
        m.denoiser = parse_denoiser(fit_denoiser);
        if (m.denoiser == DenoiserKind::gaussian) {
          m = gaussian_method(fit_ns);
          m.gaussian_sigma = fit_smooth;
        } else if (m.denoiser == DenoiserKind::cnn) {
          if (fit_weights.empty()) throw UsageError("--denoiser cnn needs --weights");
          m = cnn_method(std::make_shared<TrainedModel>(load_checkpoint(fit_weights)), fit_ns);
        }
        m.unroll.ns = fit_ns;
        m.unroll.nt = fit_nt;
        if (fit_rho > 0 || fit_lambda >= 0) {
          if (m.denoiser == DenoiserKind::cnn) {
            auto model = std::make_shared<TrainedModel>(*m.model);
            if (fit_rho > 0) model->rho = fit_rho;
            if (fit_lambda >= 0) model->lambda = fit_lambda;
            m.model = model;
          } else {
            if (fit_rho > 0) m.unroll.rho = fit_rho;
            if (fit_lambda >= 0) m.unroll.lambda = fit_lambda;
          }
        }
      } else if (!fit_weights.empty()) {
        throw UsageError("--weights only applies to --method dodti");
      }
      const ParamField field = estimate(m, stack, mask);
      const fs::path out = fit_out;
      fs::create_directories(out);
      write_param_field(field, out / "params.nii.gz", &dwi.meta);
      write_mask(field.mask, field.dims, out / "mask.nii.gz", &dwi.meta);
      write_scalar_maps(scalar_maps(field), out, &dwi.meta);
      return 0;
    }

    if (*train_cmd) {
      std::vector<TrainSample> data, val;
      if (!train_dataset.empty()) {
        data = read_dataset(train_dataset);
        if (!train_validation.empty()) val = read_dataset(train_validation);
      } else if (train_synthetic > 0) {
        DatasetSpec spec;
        spec.count = train_synthetic;
        spec.block_size = tcfg.block_size;
        spec.phantom_dims = {std::max(48, tcfg.block_size), std::max(48, tcfg.block_size), std::max(48, tcfg.block_size)};
        spec.phantoms = train_phantoms;
        spec.seed = seed;
        data = make_training_blocks(spec);
        if (train_val_count > 0) {
          DatasetSpec vspec = spec;
          vspec.count = train_val_count;
          vspec.seed = seed + 0x9E3779B9ULL;
          vspec.noise_levels = validation_noise_levels();
          val = make_training_blocks(vspec);
        }
      } else {
        throw UsageError("train needs --dataset or --synthetic");
      }
      tcfg.seed = seed;
      tcfg.run_dir = train_out;
      UnrollConfig ucfg;
      ucfg.ns = train_ns;
      ucfg.nt = train_nt;
      ucfg.train_rho_lambda = !train_fixed_scalars;
      if (train_f64) tcfg.conv_precision = ConvPrecision::f64;
      TrainedModel init;
      if (!train_init.empty()) {
        init = load_checkpoint(train_init);
      } else {
        init.weights = DenoiserWeights::he_init(train_width, seed);
        init.rho = train_rho0;
        init.lambda = train_lambda0;
      }
      if (warm.max_steps > 0 || warm.max_seconds > 0) {
        warm.seed = seed;
        if (train_f64) warm.conv_precision = ConvPrecision::f64;
        std::filesystem::create_directories(train_out);
        std::ofstream warm_csv(std::filesystem::path(train_out) / "warm_start.csv");
        warm_csv << "step,train_mse,val_mse,seconds\n";
        warm_csv.precision(17);
        const WarmStartResult w =
            pretrain_denoiser(data, val, std::move(init.weights), warm, ucfg.tensor_unit, [&](const WarmStartRecord& r) {
              warm_csv << r.step << "," << r.train_loss << "," << r.val_mse << "," << r.seconds << "\n" << std::flush;
              std::cerr << "warm step " << r.step << " val mse " << r.val_mse << "\n";
            });
        init.weights = w.weights;
        init.info["warm_start_steps"] = w.steps;
        init.info["warm_start_best_step"] = w.best_step;
        init.info["warm_start_seconds"] = w.history.back().seconds;
        std::cerr << "warm start: " << w.steps << " steps, keeping step " << w.best_step << "; validation MSE "
                  << w.history.front().val_mse << " at step 0 (WLLS input " << w.input_val_mse << ")\n";
      }
      const TrainResult r = train(data, val, tcfg, ucfg, std::move(init), [](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch + 1 << " train " << e.train_loss << " val " << e.val_loss << " rho " << e.rho
                  << " lambda " << e.lambda << "\n";
      });
      std::cerr << "initial validation loss " << r.initial_val_loss << ", final "
                << (r.history.empty() ? r.initial_val_loss : r.history.back().val_loss) << "\n";
      return 0;
    }

    if (*metrics_cmd) {
      const Mask mask = read_mask(met_mask);
      const ParamField est = read_param_field(met_est, mask);
      const ParamField ref = read_param_field(met_ref, mask);
      if (!(est.dims == ref.dims) || mask.size() != est.voxels()) throw DataError("metric inputs differ in shape");
      const MetricReport rep = evaluate_maps(scalar_maps(est), scalar_maps(ref), mask, met_r2);
      std::ostringstream text;
      text.precision(10);
      const char* names[] = {"FA", "MD", "AD", "RD"};
      if (met_format == "json") {
        nlohmann::json j;
        j["mask_voxels"] = rep.mask_voxels;
        for (const char* n : names) {
          j[n] = {{"nrmse", rep[n].nrmse}, {"ssim", rep[n].ssim}};
          if (rep[n].r2) j[n]["r2"] = *rep[n].r2;
        }
        text << j.dump(2) << "\n";
      } else if (met_format == "csv") {
        text << "map,nrmse,ssim" << (met_r2 ? ",r2" : "") << "\n";
        for (const char* n : names) {
          text << n << "," << rep[n].nrmse << "," << rep[n].ssim;
          if (met_r2) text << "," << *rep[n].r2;
          text << "\n";
        }
      } else {
        throw UsageError("--format must be json or csv");
      }
      if (met_out.empty()) {
        std::cout << text.str();
      } else {
        std::ofstream out(met_out);
        if (!(out << text.str())) throw DataError("cannot write " + met_out);
      }
      return 0;
    }

    if (*exp_cmd) {
      std::ifstream in(exp_config);
      if (!in) throw DataError("cannot open " + exp_config);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw UsageError(exp_config + ": " + e.what());
      }
      ExperimentConfig cfg = parse_experiment_config(j, fs::path(exp_config).parent_path());
      if (!exp_out.empty()) cfg.out_dir = exp_out;
      if (cfg.out_dir.empty()) cfg.out_dir = "experiment_out";
      const ExperimentResult r = run_experiment(cfg);
      for (const auto& row : r.rows)
        if (!row.error.empty()) std::cerr << row.label << " " << row.method << ": " << row.error << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dodti
