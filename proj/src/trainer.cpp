#include "dodti/trainer.hpp"

#include "dodti/error.hpp"
#include "dodti/parallel.hpp"

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace dodti {

namespace {

using Mat7 = Eigen::Matrix<double, kParamChannels, kParamChannels>;

void zero_outside(Eigen::MatrixXd& m, const Mask& mask) {
  for (std::size_t v = 0; v < mask.size(); ++v)
    if (!mask[v]) m.col(Eigen::Index(v)).setZero();
}

double mae(const Eigen::MatrixXd& a, const Eigen::MatrixXd& gt, const Mask& mask) {
  CompensatedSum sum;
  std::size_t count = 0;
  for (Eigen::Index v = 0; v < a.cols(); ++v) {
    if (!in_mask(mask, std::size_t(v))) continue;
    sum.add((a.col(v) - gt.col(v)).cwiseAbs().sum());
    ++count;
  }
  if (count == 0) throw DataError("loss mask is empty");
  return sum.value() / double(count * kParamChannels);
}

Eigen::MatrixXd mae_grad(const Eigen::MatrixXd& a, const Eigen::MatrixXd& gt, const Mask& mask, double weight) {
  const double count = double(mask_count(mask, std::size_t(a.cols())) * kParamChannels);
  Eigen::MatrixXd g = (a - gt).array().sign().matrix() * (weight / count);
  zero_outside(g, mask);
  return g;
}

struct StageTape {
  Eigen::MatrixXd W, Z_prev, beta_prev, X, Z;
  std::vector<Eigen::MatrixXd> z_in;  // Z^{n,t-1}
  std::vector<Eigen::MatrixXd> z_out; // Z^{n,t}
  std::vector<Eigen::MatrixXd> denoised;
  std::vector<CnnTape> cnn;
};

struct Forward {
  double loss = 0.0;
  std::vector<StageTape> stages;
};

Forward forward_with_tape(const UnrollProblem& problem, const Eigen::MatrixXd& gt, const TrainedModel& model, int ns,
                          int nt, const std::vector<Eigen::MatrixXd>* frozen, bool keep_tape) {
  const double rho = model.rho, lambda = model.lambda;
  UnrollState state = init_state(problem);
  Forward fwd;
  std::vector<StageTrace> trace;
  for (int n = 1; n <= ns; ++n) {
    StageTape st;
    if (frozen) state.W = (*frozen)[std::size_t(n - 1)];
    st.W = state.W;
    st.Z_prev = state.Z;
    st.beta_prev = state.beta;
    state.X = fitting_block(state, problem, rho);
    state.W = refresh_weights(state.X, problem);

    const Eigen::MatrixXd anchor = state.X + state.beta;
    Eigen::MatrixXd Z = state.Z;
    Eigen::MatrixXd first_denoised;
    for (int t = 1; t <= nt; ++t) {
      CnnTape tape;
      Eigen::MatrixXd D = denoiser_forward(model.weights, problem.dims, Z, keep_tape ? &tape : nullptr);
      zero_outside(D, problem.mask);
      if (keep_tape) st.z_in.push_back(Z);
      Z = (rho * anchor + lambda * D) / (rho + lambda);
      zero_outside(Z, problem.mask);
      if (keep_tape) {
        st.z_out.push_back(Z);
        st.denoised.push_back(D);
        st.cnn.push_back(std::move(tape));
      }
      if (t == 1) first_denoised = std::move(D);
    }
    state.Z = Z;
    state.beta = multiplier_block(state);
    if (!state.X.allFinite() || !state.Z.allFinite())
      throw NumericalError("stage " + std::to_string(n) + " produced non-finite values");
    trace.push_back({state.X, first_denoised, state.Z});
    st.X = state.X;
    st.Z = state.Z;
    if (keep_tape) fwd.stages.push_back(std::move(st));
    else fwd.stages.push_back(StageTape{st.W, {}, {}, {}, {}, {}, {}, {}, {}});
  }
  fwd.loss = loss_eq12(trace, gt, problem.mask);
  return fwd;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || !(lr > 0) || lr_halving_period < 1 || block_size < 1)
    throw UsageError("train config: epochs, batch_size, lr, lr_halving_period and block_size must be positive");
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(0.5, double(epoch / cfg.lr_halving_period));
}

double loss_eq12(const std::vector<StageTrace>& trace, const Eigen::MatrixXd& gt, const Mask& mask) {
  if (trace.empty()) throw DataError("loss needs at least one stage");
  const double ns = double(trace.size());
  CompensatedSum total;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& s = trace[i];
    if (s.X.rows() != gt.rows() || s.X.cols() != gt.cols() || s.Z.cols() != gt.cols() ||
        s.denoised_prev.cols() != gt.cols())
      throw DataError("loss: trace and ground truth differ in shape");
    const double w = double(i + 1) / ns;
    total.add(w * (mae(s.X, gt, mask) + mae(s.denoised_prev, gt, mask) + mae(s.Z, gt, mask)));
  }
  return total.value();
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const Eigen::VectorXd& lr,
               const AdamOptions& o) {
  if (grads.size() != params.size() || lr.size() != params.size()) throw DataError("adam_step: size mismatch");
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = o.beta1 * state.m + (1 - o.beta1) * grads;
  state.v = o.beta2 * state.v + (1 - o.beta2) * grads.cwiseAbs2();
  const double c1 = 1 - std::pow(o.beta1, double(state.step));
  const double c2 = 1 - std::pow(o.beta2, double(state.step));
  params.array() -= lr.array() * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + o.eps);
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               const AdamOptions& options) {
  adam_step(params, grads, state, Eigen::VectorXd::Constant(params.size(), lr), options);
}

double unroll_loss(const UnrollProblem& problem, const Eigen::MatrixXd& gt_solver, const TrainedModel& model, int ns,
                   int nt, const std::vector<Eigen::MatrixXd>* frozen_weights) {
  return forward_with_tape(problem, gt_solver, model, ns, nt, frozen_weights, false).loss;
}

LossGradient unroll_loss_gradient(const UnrollProblem& problem, const Eigen::MatrixXd& gt_solver,
                                  const TrainedModel& model, int ns, int nt,
                                  const std::vector<Eigen::MatrixXd>* frozen_weights) {
  if (ns < 1 || nt < 1) throw UsageError("ns and nt must be >= 1");
  const Forward fwd = forward_with_tape(problem, gt_solver, model, ns, nt, frozen_weights, true);
  const double rho = model.rho, lambda = model.lambda;
  const double c_anchor = rho / (rho + lambda), c_denoised = lambda / (rho + lambda);
  const Eigen::Index n_vox = problem.Y.cols();
  const Mask& mask = problem.mask;

  LossGradient out;
  out.loss = fwd.loss;
  out.grad_weights = DenoiserWeights::zeros(model.weights.width);
  CompensatedSum g_rho, g_lambda;

  Eigen::MatrixXd gZ_next = Eigen::MatrixXd::Zero(kParamChannels, n_vox);
  Eigen::MatrixXd gB_next = Eigen::MatrixXd::Zero(kParamChannels, n_vox);
  std::vector<double> rho_terms(std::size_t(n_vox), 0.0);

  for (int n = ns; n >= 1; --n) {
    const StageTape& st = fwd.stages[std::size_t(n - 1)];
    const double w = double(n) / double(ns);
    Eigen::MatrixXd gX = mae_grad(st.X, gt_solver, mask, w);
    Eigen::MatrixXd gZ = gZ_next + mae_grad(st.Z, gt_solver, mask, w);
    const Eigen::MatrixXd gD1 = mae_grad(st.denoised[0], gt_solver, mask, w);

    // beta^n = beta^{n-1} + X^n - Z^n
    Eigen::MatrixXd gB_prev = gB_next;
    gX += gB_next;
    gZ -= gB_next;

    // Z^{n,t} = c_anchor (X + beta^{n-1}) + c_denoised D(Z^{n,t-1})
    const Eigen::MatrixXd anchor = st.X + st.beta_prev;
    for (int t = nt; t >= 1; --t) {
      const auto ti = std::size_t(t - 1);
      gX += c_anchor * gZ;
      gB_prev += c_anchor * gZ;
      g_rho.add((gZ.array() * (anchor - st.z_out[ti]).array()).sum() / (rho + lambda));
      g_lambda.add((gZ.array() * (st.denoised[ti] - st.z_out[ti]).array()).sum() / (rho + lambda));
      Eigen::MatrixXd gD = c_denoised * gZ;
      if (t == 1) gD += gD1;
      zero_outside(gD, mask);
      gZ = denoiser_backward(model.weights, problem.dims, st.cnn[ti], gD, out.grad_weights);
      zero_outside(gZ, mask);
    }
    Eigen::MatrixXd gZ_prev = gZ;

    // X^n = H^{-1} [A'W^2 Y + rho (Z^{n-1} - beta^{n-1})], H = A'W^2A + rho I
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(kParamChannels, n_vox);
    parallel_for(std::size_t(n_vox), [&](std::size_t v) {
      rho_terms[v] = 0.0;
      if (!mask[v]) return;
      const auto j = Eigen::Index(v);
      const Eigen::VectorXd w2 = st.W.col(j).cwiseAbs2();
      Mat7 H = problem.A.transpose() * w2.asDiagonal() * problem.A;
      H.diagonal().array() += rho;
      const ParamVector uj = Eigen::LLT<Mat7>(H).solve(ParamVector(gX.col(j)));
      u.col(j) = uj;
      rho_terms[v] = uj.dot(st.Z_prev.col(j) - st.beta_prev.col(j) - st.X.col(j));
    });
    for (double r : rho_terms) g_rho.add(r);
    gZ_prev += rho * u;
    gB_prev -= rho * u;

    gZ_next = std::move(gZ_prev);
    gB_next = std::move(gB_prev);
  }
  // Stage 1 inputs Z^0 = X^0 (LLS) and beta^0 = 0 carry no parameters.
  out.grad_log_rho = g_rho.value() * rho;
  out.grad_log_lambda = g_lambda.value() * lambda;
  for (const auto& st : fwd.stages) out.weights_used.push_back(st.W);
  return out;
}

namespace {

struct Prepared {
  UnrollProblem problem;
  Eigen::MatrixXd gt;
};

std::vector<Prepared> prepare(const std::vector<TrainSample>& samples, double tensor_unit) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Mask mask = s.gt.mask.empty() ? Mask(s.gt.voxels(), 1) : s.gt.mask;
    Prepared p{make_problem(s.noisy_stack, std::move(mask), tensor_unit), to_solver_units(s.gt.values, tensor_unit)};
    out.push_back(std::move(p));
  }
  return out;
}

double mean_loss(const std::vector<Prepared>& set, const TrainedModel& model, int ns, int nt) {
  CompensatedSum sum;
  for (const auto& p : set) sum.add(unroll_loss(p.problem, p.gt, model, ns, nt));
  return sum.value() / double(set.size());
}

Eigen::VectorXd pack(const TrainedModel& m) {
  const Eigen::VectorXd w = m.weights.flatten();
  Eigen::VectorXd p(w.size() + 2);
  p << w, std::log(m.rho), std::log(m.lambda);
  return p;
}

void unpack(const Eigen::VectorXd& p, TrainedModel& m) {
  const Eigen::Index nw = p.size() - 2;
  m.weights.unflatten(p.head(nw));
  m.rho = std::exp(p[nw]);
  m.lambda = std::exp(p[nw + 1]);
}

// Fisher-Yates on top of mt19937_64 (std::shuffle is not portable bit-for-bit).
void shuffle(std::vector<std::size_t>& idx, std::mt19937_64& engine) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = std::size_t(engine() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

TrainResult train(const std::vector<TrainSample>& dataset, const std::vector<TrainSample>& validation,
                  const TrainConfig& cfg, const UnrollConfig& ucfg, TrainedModel initial, const EpochCallback& on_epoch) {
  cfg.validate();
  ucfg.validate();
  if (dataset.empty()) throw UsageError("training set is empty");
  if (!(initial.rho > 0) || !(initial.lambda > 0)) throw UsageError("training needs rho > 0 and lambda > 0");
  const ScopedConvPrecision precision(cfg.conv_precision);

  const auto train_set = prepare(dataset, ucfg.tensor_unit);
  const auto val_set = prepare(validation, ucfg.tensor_unit);

  TrainResult result;
  result.model = std::move(initial);
  Eigen::VectorXd params = pack(result.model);
  const Eigen::Index nw = params.size() - 2;
  AdamState adam;
  std::mt19937_64 engine(cfg.seed);

  std::ofstream loss_csv;
  if (!cfg.run_dir.empty()) {
    std::filesystem::create_directories(cfg.run_dir);
    nlohmann::json snap = {{"epochs", cfg.epochs},         {"batch_size", cfg.batch_size},
                           {"lr", cfg.lr},                 {"lr_halving_period", cfg.lr_halving_period},
                           {"seed", cfg.seed},             {"block_size", cfg.block_size},
                           {"scalar_lr", cfg.scalar_lr},   {"max_seconds", cfg.max_seconds},
                           {"conv_f32", cfg.conv_precision == ConvPrecision::f32},
                           {"ns", ucfg.ns},                {"nt", ucfg.nt},
                           {"tensor_unit", ucfg.tensor_unit}, {"train_rho_lambda", ucfg.train_rho_lambda},
                           {"rho0", result.model.rho},     {"lambda0", result.model.lambda},
                           {"width", result.model.weights.width}, {"train_samples", dataset.size()},
                           {"validation_samples", validation.size()}};
    std::ofstream(cfg.run_dir / "config.json") << snap.dump(2) << "\n";
    loss_csv.open(cfg.run_dir / "loss.csv");
    loss_csv << "epoch,lr,train_loss,val_loss,rho,lambda,seconds\n";
    loss_csv.precision(17);
  }

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  result.initial_val_loss = val_set.empty() ? mean_loss(train_set, result.model, ucfg.ns, ucfg.nt)
                                            : mean_loss(val_set, result.model, ucfg.ns, ucfg.nt);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    const double scalar_lr = (cfg.scalar_lr > 0 ? cfg.scalar_lr : cfg.lr) * (lr / cfg.lr);
    Eigen::VectorXd lr_vec = Eigen::VectorXd::Constant(params.size(), lr);
    lr_vec.tail(2).setConstant(ucfg.train_rho_lambda ? scalar_lr : 0.0);

    shuffle(order, engine);
    CompensatedSum epoch_loss;
    for (std::size_t b0 = 0, batch = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size), ++batch) {
      const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
      double batch_loss = 0;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& p = train_set[order[k]];
        const LossGradient lg = unroll_loss_gradient(p.problem, p.gt, result.model, ucfg.ns, ucfg.nt);
        if (!std::isfinite(lg.loss))
          throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                               " (sample " + std::to_string(order[k]) + ")");
        grad.head(nw) += lg.grad_weights.flatten();
        grad[nw] += lg.grad_log_rho;
        grad[nw + 1] += lg.grad_log_lambda;
        batch_loss += lg.loss;
        epoch_loss.add(lg.loss);
      }
      grad /= double(b1 - b0);
      if (!grad.allFinite())
        throw NumericalError("non-finite gradient in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      adam_step(params, grad, adam, lr_vec);
      unpack(params, result.model);
      (void)batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_loss.value() / double(order.size());
    rec.val_loss = val_set.empty() ? rec.train_loss : mean_loss(val_set, result.model, ucfg.ns, ucfg.nt);
    rec.rho = result.model.rho;
    rec.lambda = result.model.lambda;
    rec.seconds = elapsed();
    if (!std::isfinite(rec.val_loss)) throw NumericalError("non-finite validation loss in epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (loss_csv.is_open())
      loss_csv << rec.epoch << "," << rec.lr << "," << rec.train_loss << "," << rec.val_loss << "," << rec.rho << ","
               << rec.lambda << "," << rec.seconds << "\n" << std::flush;
    if (on_epoch) on_epoch(rec);
    if (!cfg.run_dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.run_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt"), result.model);
    if (cfg.max_seconds > 0 && rec.seconds > cfg.max_seconds) break;
  }
  result.model.info["epochs_run"] = result.history.size();
  result.model.info["train_seconds"] = elapsed();
  result.model.info["initial_val_loss"] = result.initial_val_loss;
  if (!result.history.empty()) result.model.info["final_val_loss"] = result.history.back().val_loss;
  if (!cfg.run_dir.empty()) save_checkpoint(cfg.run_dir / "final.ckpt", result.model);
  return result;
}

namespace {

struct WarmBlock {
  Dims dims;
  Mask mask;
  Eigen::MatrixXd input, gt;
  double input_mse = 0.0;
};

double masked_mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& gt, const Mask& mask) {
  CompensatedSum sum;
  std::size_t count = 0;
  for (Eigen::Index v = 0; v < a.cols(); ++v) {
    if (!in_mask(mask, std::size_t(v))) continue;
    sum.add((a.col(v) - gt.col(v)).squaredNorm());
    ++count;
  }
  if (count == 0) throw DataError("loss mask is empty");
  return sum.value() / double(count * kParamChannels);
}

std::vector<WarmBlock> warm_blocks(const std::vector<TrainSample>& samples, double tensor_unit, int iterations) {
  std::vector<WarmBlock> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    WarmBlock b;
    b.dims = s.gt.dims;
    b.mask = s.gt.mask.empty() ? Mask(s.gt.voxels(), 1) : s.gt.mask;
    b.input = to_solver_units(fit_field(s.noisy_stack, FitMethod::wlls, iterations, b.mask).field.values, tensor_unit);
    b.gt = to_solver_units(s.gt.values, tensor_unit);
    b.input_mse = masked_mse(b.input, b.gt, b.mask);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

WarmStartResult pretrain_denoiser(const std::vector<TrainSample>& dataset, const std::vector<TrainSample>& validation,
                                  DenoiserWeights initial, const WarmStartConfig& cfg, double tensor_unit,
                                  const std::function<void(const WarmStartRecord&)>& on_record) {
  if (dataset.empty()) throw UsageError("warm start needs training blocks");
  if (cfg.max_steps < 0 || cfg.max_seconds < 0 || !(cfg.lr > 0) || cfg.log_every < 1)
    throw UsageError("invalid warm start settings");
  if (cfg.max_steps == 0 && cfg.max_seconds == 0) throw UsageError("warm start needs a step or time bound");

  const auto train_set = warm_blocks(dataset, tensor_unit, cfg.wlls_iterations);
  const auto val_set = warm_blocks(validation, tensor_unit, cfg.wlls_iterations);

  WarmStartResult result;
  result.weights = std::move(initial);
  const int width = result.weights.width;
  for (const auto& b : val_set) result.input_val_mse += b.input_mse / double(val_set.size());

  const auto val_mse = [&] {
    CompensatedSum sum;
    for (const auto& b : val_set) sum.add(masked_mse(denoiser_forward(result.weights, b.dims, b.input), b.gt, b.mask));
    return val_set.empty() ? 0.0 : sum.value() / double(val_set.size());
  };

  Eigen::VectorXd params = result.weights.flatten();
  AdamState adam;
  std::mt19937_64 engine(cfg.seed);
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  CompensatedSum running;
  int since = 0;
  DenoiserWeights best = result.weights;
  double best_val = std::numeric_limits<double>::infinity();
  const auto record = [&](int step) {
    WarmStartRecord rec{step, since ? running.value() / since : 0.0, val_mse(), elapsed()};
    if (!val_set.empty() && rec.val_mse < best_val) {
      best_val = rec.val_mse;
      best = result.weights;
      result.best_step = step;
    }
    result.history.push_back(rec);
    if (on_record) on_record(rec);
    running = CompensatedSum();
    since = 0;
  };

  record(0);
  int step = 0;
  while ((cfg.max_steps == 0 || step < cfg.max_steps) && (cfg.max_seconds == 0 || elapsed() < cfg.max_seconds)) {
    const WarmBlock& b = train_set[std::size_t(engine() % train_set.size())];
    CnnTape tape;
    const Eigen::MatrixXd out = denoiser_forward(result.weights, b.dims, b.input, &tape);
    const double scale = cfg.normalise ? 1.0 / std::max(b.input_mse, 1e-12) : 1.0;
    const double count = double(mask_count(b.mask, b.mask.size()) * kParamChannels);
    Eigen::MatrixXd g = (out - b.gt) * (2.0 * scale / count);
    zero_outside(g, b.mask);
    running.add(masked_mse(out, b.gt, b.mask));
    ++since;

    DenoiserWeights grad = DenoiserWeights::zeros(width);
    denoiser_backward(result.weights, b.dims, tape, g, grad);
    const Eigen::VectorXd flat = grad.flatten();
    if (!flat.allFinite()) throw NumericalError("non-finite warm start gradient at step " + std::to_string(step));
    adam_step(params, flat, adam, cfg.lr);
    result.weights.unflatten(params);
    ++step;
    if (step % cfg.log_every == 0) record(step);
  }
  if (result.history.back().step != step) record(step);
  result.steps = step;
  if (!val_set.empty()) result.weights = std::move(best);
  return result;
}

std::vector<TrainSample> make_training_blocks(const DatasetSpec& spec) {
  if (spec.count < 1 || spec.phantoms < 1 || spec.block_size < 1) throw UsageError("dataset spec: counts must be positive");
  const Dims pd = spec.phantom_dims;
  if (spec.block_size > pd.nx || spec.block_size > pd.ny || spec.block_size > pd.nz)
    throw UsageError("block size exceeds the phantom dims");
  const auto levels = spec.noise_levels.empty() ? training_noise_levels() : spec.noise_levels;
  const GradientScheme scheme = make_scheme(spec.scheme);
  std::mt19937_64 engine(spec.seed ^ 0x5DEECE66DULL);

  std::vector<Phantom> phantoms;
  for (int i = 0; i < spec.phantoms; ++i) phantoms.push_back(make_phantom(pd, spec.seed * 7919 + std::uint64_t(i) + 1));

  const int bs = spec.block_size;
  const Dims bd{bs, bs, bs};
  std::vector<TrainSample> out;
  for (int i = 0; i < spec.count; ++i) {
    const Phantom& ph = phantoms[std::size_t(i % spec.phantoms)];
    const double sigma = levels[std::size_t(i) % levels.size()];
    NoiseSpec noise;
    noise.sigma = sigma;
    noise.seed = spec.seed * 1000003 + std::uint64_t(i);
    const SimulatedData sim = simulate(ph, scheme, noise);

    int cx = 0, cy = 0, cz = 0;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      cx = int(engine() % std::uint64_t(pd.nx - bs + 1));
      cy = int(engine() % std::uint64_t(pd.ny - bs + 1));
      cz = int(engine() % std::uint64_t(pd.nz - bs + 1));
      if (ph.gt.mask[pd.index(cx + bs / 2, cy + bs / 2, cz + bs / 2)]) break;
    }
    TrainSample s;
    s.noise_level = sigma;
    s.noisy_stack.scheme = scheme;
    s.noisy_stack.signals = Volume(bd, int(scheme.size()));
    s.gt = ParamField(bd, Mask(bd.voxels(), 0));
    for (int z = 0; z < bs; ++z)
      for (int y = 0; y < bs; ++y)
        for (int x = 0; x < bs; ++x) {
          const auto src = Eigen::Index(pd.index(cx + x, cy + y, cz + z));
          const auto dst = Eigen::Index(bd.index(x, y, z));
          s.noisy_stack.signals.data.col(dst) = sim.noisy.signals.data.col(src);
          s.gt.values.col(dst) = sim.gt.values.col(src);
          s.gt.mask[std::size_t(dst)] = ph.gt.mask[std::size_t(src)];
        }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dodti
