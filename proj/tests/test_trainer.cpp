#include "dodti/trainer.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace dodti;
using namespace testing;

namespace {

Eigen::MatrixXd constant_like(const Eigen::MatrixXd& gt, double c) {
  return gt + Eigen::MatrixXd::Constant(gt.rows(), gt.cols(), c);
}

struct ToyProblem {
  UnrollProblem problem;
  Eigen::MatrixXd gt;
};

ToyProblem toy(std::uint64_t seed) {
  const Dims d{4, 4, 4};
  const ParamField gt = random_field(d, seed);
  const DwiStack stack = noisy_stack(gt, dsm6(), 0.03, seed + 1);
  ToyProblem t{make_problem(stack, Mask(d.voxels(), 1)), to_solver_units(gt.values, 1e-3)};
  return t;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("loss is zero when every trace entry equals the ground truth") {
    const Eigen::MatrixXd gt = Eigen::MatrixXd::Random(7, 10);
    for (int ns : {1, 2, 4, 8}) {
      std::vector<StageTrace> trace(std::size_t(ns), StageTrace{gt, gt, gt});
      CHECK(loss_eq12(trace, gt, {}) == 0.0);
    }
  }

  TEST_CASE("single stage with every entry off by one gives 3") {
    const Eigen::MatrixXd gt = Eigen::MatrixXd::Random(7, 10);
    const Eigen::MatrixXd off = constant_like(gt, 1.0);
    CHECK(loss_eq12({{off, off, off}}, gt, {}) == doctest::Approx(3.0).epsilon(1e-14));
  }

  TEST_CASE("two stages, first off by one, second exact gives 1.5") {
    const Eigen::MatrixXd gt = Eigen::MatrixXd::Random(7, 10);
    const Eigen::MatrixXd off = constant_like(gt, -1.0);
    CHECK(loss_eq12({{off, off, off}, {gt, gt, gt}}, gt, {}) == doctest::Approx(1.5).epsilon(1e-14));
  }

  TEST_CASE("final stage always carries weight one") {
    const Eigen::MatrixXd gt = Eigen::MatrixXd::Random(7, 6);
    const Eigen::MatrixXd off = constant_like(gt, 0.5);
    for (int ns : {1, 3, 7}) {
      std::vector<StageTrace> trace(std::size_t(ns), StageTrace{gt, gt, gt});
      trace.back() = {off, off, off};
      CHECK(loss_eq12(trace, gt, {}) == doctest::Approx(1.5).epsilon(1e-14));
    }
  }

  TEST_CASE("loss averages only over masked voxels") {
    const Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(7, 4);
    Eigen::MatrixXd est = gt;
    est.col(3).setConstant(100.0);
    const Mask mask{1, 1, 1, 0};
    CHECK(loss_eq12({{est, est, est}}, gt, mask) == 0.0);
  }

  TEST_CASE("loss rejects shape mismatch") {
    const Eigen::MatrixXd gt = Eigen::MatrixXd::Zero(7, 4);
    const Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(7, 5);
    CHECK_THROWS_AS(loss_eq12({{bad, bad, bad}}, gt, {}), DataError);
  }

  TEST_CASE("Adam: zero gradient leaves parameters and decays moments") {
    Eigen::VectorXd p(3);
    p << 1, 2, 3;
    AdamState st;
    st.m = Eigen::VectorXd::Constant(3, 0.5);
    st.v = Eigen::VectorXd::Constant(3, 0.25);
    st.step = 5;
    const Eigen::VectorXd before = p;
    // Non-zero moments still move parameters; with fresh state nothing moves.
    AdamState fresh;
    adam_step(p, Eigen::VectorXd::Zero(3), fresh, 0.1);
    CHECK(p == before);
    adam_step(p, Eigen::VectorXd::Zero(3), st, 0.1);
    CHECK(st.m[0] == doctest::Approx(0.45));
    CHECK(st.v[0] == doctest::Approx(0.25 * 0.999));
  }

  TEST_CASE("Adam: first step with unit gradient moves by about lr") {
    Eigen::VectorXd p(1);
    p << 0.7;
    AdamState st;
    adam_step(p, Eigen::VectorXd::Constant(1, 1.0), st, 0.1);
    // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
    CHECK(p[0] == doctest::Approx(0.7 - 0.1 / (1 + 1e-8)).epsilon(1e-14));
  }

  TEST_CASE("Adam trajectories are bitwise reproducible") {
    auto run = [] {
      std::mt19937_64 rng(4);
      std::normal_distribution<double> n(0, 1);
      Eigen::VectorXd p = Eigen::VectorXd::Zero(5);
      AdamState st;
      for (int k = 0; k < 50; ++k) {
        Eigen::VectorXd g(5);
        for (auto& x : g) x = n(rng);
        adam_step(p, g, st, 1e-2);
      }
      return p;
    };
    CHECK(run() == run());
  }

  TEST_CASE("learning-rate schedule halves every period") {
    TrainConfig cfg;
    CHECK(learning_rate_at(cfg, 0) == 1e-4);
    CHECK(learning_rate_at(cfg, 99) == 1e-4);
    CHECK(learning_rate_at(cfg, 100) == 5e-5);
    CHECK(learning_rate_at(cfg, 200) == 2.5e-5);
    CHECK(learning_rate_at(cfg, 249) == 2.5e-5);
  }

  TEST_CASE("train config defaults") {
    TrainConfig cfg;
    CHECK(cfg.epochs == 250);
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.lr_halving_period == 100);
    CHECK(cfg.block_size == 32);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
  }

  TEST_CASE("loss_gradient forward matches run_unroll with the same weights") {
    const ToyProblem t = toy(11);
    TrainedModel m{random_weights(6, 3), 0.05, 0.2, {}};
    UnrollConfig cfg;
    cfg.ns = 3;
    cfg.rho = m.rho;
    cfg.lambda = m.lambda;
    cfg.denoiser = std::make_shared<CnnDenoiser>(m.weights);
    const UnrollResult r = run_unroll(t.problem, cfg);
    const LossGradient lg = unroll_loss_gradient(t.problem, t.gt, m, 3, 1);
    CHECK(lg.loss == doctest::Approx(loss_eq12(r.trace, t.gt, t.problem.mask)).epsilon(1e-12));
    REQUIRE(lg.weights_used.size() == 3);
    for (int n = 0; n < 3; ++n) CHECK(lg.weights_used[std::size_t(n)] == r.weights_used[std::size_t(n)]);
  }

  TEST_CASE("end-to-end gradient matches central differences (frozen W)") {
    // Directional derivatives along random directions supported on a random
    // subset of theta, plus single-coordinate checks of log rho and log lambda.
    int trials = 0;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      const ToyProblem t = toy(100 + seed);
      TrainedModel m{random_weights(4, seed), std::exp(-2.0 + 0.2 * double(seed % 5)), std::exp(-1.5 + 0.1 * double(seed % 7)), {}};
      const int ns = 2, nt = 1 + int(seed % 2);
      const LossGradient lg = unroll_loss_gradient(t.problem, t.gt, m, ns, nt);
      const auto* frozen = &lg.weights_used;
      const Eigen::VectorXd theta = m.weights.flatten();
      const Eigen::VectorXd g_theta = lg.grad_weights.flatten();
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> n(0, 1);
      std::bernoulli_distribution pick(0.3);

      auto loss_at = [&](const Eigen::VectorXd& th, double log_rho, double log_lambda) {
        TrainedModel q = m;
        q.weights.unflatten(th);
        q.rho = std::exp(log_rho);
        q.lambda = std::exp(log_lambda);
        return unroll_loss(t.problem, t.gt, q, ns, nt, frozen);
      };
      const double lr0 = std::log(m.rho), ll0 = std::log(m.lambda);

      for (int k = 0; k < 8; ++k) {
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(theta.size());
        for (Eigen::Index i = 0; i < dir.size(); ++i)
          if (pick(rng)) dir[i] = n(rng);
        dir /= dir.norm();
        const double h = 1e-5;
        const double fd = (loss_at(theta + h * dir, lr0, ll0) - loss_at(theta - h * dir, lr0, ll0)) / (2 * h);
        const double an = g_theta.dot(dir);
        const double e = rel_err(fd, an);
        worst = std::max(worst, e);
        CHECK_MESSAGE(e <= 1e-3, "seed ", seed, " dir ", k, ": fd ", fd, " analytic ", an);
        ++trials;
      }
      const double h = 1e-5;
      const double fd_rho = (loss_at(theta, lr0 + h, ll0) - loss_at(theta, lr0 - h, ll0)) / (2 * h);
      const double fd_lambda = (loss_at(theta, lr0, ll0 + h) - loss_at(theta, lr0, ll0 - h)) / (2 * h);
      CHECK_MESSAGE(rel_err(fd_rho, lg.grad_log_rho) <= 1e-3, "rho fd ", fd_rho, " analytic ", lg.grad_log_rho);
      CHECK_MESSAGE(rel_err(fd_lambda, lg.grad_log_lambda) <= 1e-3, "lambda fd ", fd_lambda, " analytic ", lg.grad_log_lambda);
      worst = std::max({worst, rel_err(fd_rho, lg.grad_log_rho), rel_err(fd_lambda, lg.grad_log_lambda)});
      trials += 2;
    }
    CHECK(trials >= 100);
    MESSAGE("end-to-end worst relative error ", worst, " over ", trials, " checks");
  }

  TEST_CASE("weights carry no gradient: the gradient API has no W slot") {
    // W enters only as data: LossGradient exposes the weights it used but
    // no derivative with respect to them, and feeding those weights back as
    // a frozen sequence reproduces the loss exactly.
    const ToyProblem t = toy(5);
    TrainedModel m{random_weights(4, 9), 0.1, 0.1, {}};
    const LossGradient lg = unroll_loss_gradient(t.problem, t.gt, m, 2, 1);
    CHECK(unroll_loss(t.problem, t.gt, m, 2, 1, &lg.weights_used) == lg.loss);
    const LossGradient lg2 = unroll_loss_gradient(t.problem, t.gt, m, 2, 1, &lg.weights_used);
    CHECK(lg2.grad_weights.flatten() == lg.grad_weights.flatten());
    CHECK(lg2.grad_log_rho == lg.grad_log_rho);
  }

  TEST_CASE("training blocks are aligned and inside the mask") {
    DatasetSpec spec;
    spec.count = 3;
    spec.phantom_dims = {24, 24, 24};
    spec.block_size = 12;
    spec.phantoms = 2;
    spec.seed = 2;
    const auto blocks = make_training_blocks(spec);
    REQUIRE(blocks.size() == 3);
    for (const auto& b : blocks) {
      CHECK(b.gt.dims == Dims{12, 12, 12});
      CHECK(b.noisy_stack.dims() == b.gt.dims);
      CHECK(b.gt.values.allFinite());
      CHECK(b.gt.mask[b.gt.dims.index(6, 6, 6)] == 1);
    }
    CHECK(blocks[0].noise_level == training_noise_levels()[0]);
    CHECK(blocks[1].noise_level == training_noise_levels()[1]);
  }

  TEST_CASE("short training run reduces validation loss and is reproducible") {
    DatasetSpec spec;
    spec.count = 4;
    spec.phantom_dims = {24, 24, 24};
    spec.block_size = 12;
    spec.phantoms = 2;
    spec.seed = 8;
    const auto data = make_training_blocks(spec);
    spec.seed = 9;
    spec.count = 2;
    spec.noise_levels = validation_noise_levels();
    const auto val = make_training_blocks(spec);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.lr = 1e-3;
    cfg.seed = 1;
    UnrollConfig ucfg;
    ucfg.ns = 3;
    auto run = [&] {
      TrainedModel init{DenoiserWeights::he_init(6, 1), 0.1, 0.1, {}};
      return train(data, val, cfg, ucfg, init);
    };
    const TrainResult a = run();
    const TrainResult b = run();
    REQUIRE(a.history.size() == 4);
    CHECK(a.history.back().val_loss < a.initial_val_loss);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_loss == b.history[i].val_loss);
    }
    CHECK(a.model.weights.flatten() == b.model.weights.flatten());
  }

  TEST_CASE("warm start lowers validation MSE and is reproducible for a step budget") {
    DatasetSpec spec;
    spec.count = 6;
    spec.phantom_dims = {24, 24, 24};
    spec.block_size = 12;
    spec.phantoms = 2;
    spec.seed = 8;
    spec.noise_levels = {0.04};
    const auto data = make_training_blocks(spec);
    // Scored on the training blocks: this checks the optimiser, not generalisation.
    const auto& val = data;
    WarmStartConfig cfg;
    cfg.max_steps = 60;
    cfg.lr = 1e-3;
    cfg.seed = 3;
    cfg.log_every = 20;
    const auto a = pretrain_denoiser(data, val, DenoiserWeights::he_init(6, 2), cfg, 1e-3);
    const auto b = pretrain_denoiser(data, val, DenoiserWeights::he_init(6, 2), cfg, 1e-3);
    CHECK(a.steps == 60);
    REQUIRE(a.history.size() == 4);
    // The residual branch starts at zero, so step 0 scores the WLLS input itself.
    CHECK(a.history.front().val_mse == doctest::Approx(a.input_val_mse).epsilon(1e-12));
    CHECK(a.history.back().val_mse < a.history.front().val_mse);
    // The returned weights are the best recorded ones.
    double best = 1e300;
    for (const auto& r : a.history) best = std::min(best, r.val_mse);
    double kept = 0;
    for (const auto& blk : val) {
      const Mask m = blk.gt.mask.empty() ? Mask(blk.gt.voxels(), 1) : blk.gt.mask;
      const auto in = to_solver_units(fit_field(blk.noisy_stack, FitMethod::wlls, 2, m).field.values, 1e-3);
      const auto out = denoiser_forward(a.weights, blk.gt.dims, in);
      const auto gt = to_solver_units(blk.gt.values, 1e-3);
      double sq = 0;
      std::size_t n = 0;
      for (std::size_t v = 0; v < m.size(); ++v)
        if (m[v]) {
          sq += (out.col(Eigen::Index(v)) - gt.col(Eigen::Index(v))).squaredNorm();
          n += 7;
        }
      kept += sq / double(n) / double(val.size());
    }
    CHECK(kept == doctest::Approx(best).epsilon(1e-5));
    CHECK(a.weights.flatten() == b.weights.flatten());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].val_mse == b.history[i].val_mse);

    cfg.seed = 4;
    const auto c = pretrain_denoiser(data, val, DenoiserWeights::he_init(6, 2), cfg, 1e-3);
    CHECK(c.weights.flatten() != a.weights.flatten());
  }

  TEST_CASE("warm start needs a bound and data") {
    WarmStartConfig cfg;
    DatasetSpec spec;
    spec.count = 1;
    spec.phantom_dims = {16, 16, 16};
    spec.block_size = 8;
    const auto data = make_training_blocks(spec);
    CHECK_THROWS_AS(pretrain_denoiser(data, {}, DenoiserWeights::he_init(4, 1), cfg, 1e-3), UsageError);
    cfg.max_steps = 1;
    CHECK_THROWS_AS(pretrain_denoiser({}, {}, DenoiserWeights::he_init(4, 1), cfg, 1e-3), UsageError);
    cfg.lr = 0;
    CHECK_THROWS_AS(pretrain_denoiser(data, {}, DenoiserWeights::he_init(4, 1), cfg, 1e-3), UsageError);
  }

  TEST_CASE("train rejects an empty dataset") {
    TrainedModel init{DenoiserWeights::zeros(4), 0.1, 0.1, {}};
    CHECK_THROWS_AS(train({}, {}, TrainConfig{}, UnrollConfig{}, init), UsageError);
  }
}
