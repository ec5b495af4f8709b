#include <doctest.h>

#include <cmath>

#include "vitac/policy_diffusion.hpp"
#include "vitac/rng.hpp"

using namespace vitac;

namespace {

void zero_param(Param& p) { std::fill(p.value.begin(), p.value.end(), 0.0); }

void zero_all(ParamStore& s) {
  for (auto& [_, p] : s) zero_param(*p);
}

// expert demonstration through the real environment, recorded as a Trajectory
Trajectory collect_demo(const EnvConfig& env_cfg,
                        const std::vector<CameraConfig>& cams,
                        const TactileConfig& tac_cfg, uint64_t seed,
                        double noise_std) {
  Trajectory tr;
  tr.seed = seed;
  WorldState s = reset(env_cfg, seed);
  ContactState contact;
  Rng rng(seed * 31 + 7);
  while (!is_terminal(s, env_cfg)) {
    ObsFrame o;
    o.views = render_views(s, cams, env_cfg);
    o.strain = simulate_sensor(contact, tac_cfg).strain;
    o.pos = s.robot;
    Action a = scripted_expert(s, noise_std, rng, env_cfg);
    tr.steps.push_back({o, a});
    auto res = step(s, a, env_cfg);
    s = res.state;
    contact = res.contact;
  }
  tr.succeeded = success(s);
  return tr;
}

}  // namespace

TEST_CASE("make_schedule") {
  SUBCASE("K below 1 is rejected") {
    CHECK_THROWS_AS(make_schedule(0), std::runtime_error);
    CHECK_THROWS_AS(make_schedule(-3), std::runtime_error);
  }

  SUBCASE("single-step schedule is the low end of the beta ramp") {
    NoiseSchedule s = make_schedule(1);
    REQUIRE(s.K == 1);
    CHECK(s.beta[0] == doctest::Approx(1e-4));
    CHECK(s.sigma[0] == 0.0);
    CHECK(s.train_index[0] == 0);
  }

  SUBCASE("beta ramps linearly and alpha_bar decreases strictly") {
    NoiseSchedule s = make_schedule(100);
    CHECK(s.beta.front() == doctest::Approx(1e-4));
    CHECK(s.beta.back() == doctest::Approx(0.02));
    CHECK(s.beta[50] - s.beta[49] ==
          doctest::Approx(s.beta[1] - s.beta[0]).epsilon(1e-9));
    for (int k = 1; k < s.K; ++k) {
      CHECK(s.alpha_bar[k] < s.alpha_bar[k - 1]);
      CHECK(s.alpha_bar[k] > 0.0);
    }
    CHECK(s.sigma[0] == 0.0);
    for (int k = 1; k < s.K; ++k) CHECK(s.sigma[k] > 0.0);
  }

  SUBCASE("final denoising coefficients cancel the first noising step") {
    // gamma_0 = sqrt(beta_0) and alpha_0 = 1/sqrt(1 - beta_0), so
    // alpha_0 (noised - gamma_0 eps) reproduces the clean chunk exactly.
    NoiseSchedule s = make_schedule(50);
    CHECK(s.gamma[0] == doctest::Approx(std::sqrt(s.beta[0])).epsilon(1e-12));
    Rng rng(11);
    std::vector<double> chunk(40), eps(40);
    for (auto& v : chunk) v = rng.uniform(-2, 2);
    for (auto& v : eps) v = rng.normal();
    auto noised = add_noise_with(chunk, 0, s, eps);
    for (size_t i = 0; i < chunk.size(); ++i) {
      const double rec = s.alpha[0] * (noised[i] - s.gamma[0] * eps[i]);
      CHECK(std::abs(rec - chunk[i]) < 1e-8);
    }
  }
}

TEST_CASE("subsample_schedule") {
  NoiseSchedule train = make_schedule(100);

  SUBCASE("out-of-range sizes are rejected") {
    CHECK_THROWS_AS(subsample_schedule(train, 0), std::runtime_error);
    CHECK_THROWS_AS(subsample_schedule(train, 101), std::runtime_error);
  }

  SUBCASE("endpoints coincide with the training schedule") {
    NoiseSchedule s = subsample_schedule(train, 10);
    REQUIRE(s.K == 10);
    CHECK(s.train_index.front() == 0);
    CHECK(s.train_index.back() == 99);
    CHECK(s.alpha_bar.front() == doctest::Approx(train.alpha_bar.front()));
    CHECK(s.alpha_bar.back() == doctest::Approx(train.alpha_bar.back()));
    CHECK(s.sigma[0] == 0.0);
    for (int j = 1; j < s.K; ++j) {
      CHECK(s.train_index[j] > s.train_index[j - 1]);
      CHECK(s.alpha_bar[j] < s.alpha_bar[j - 1]);
    }
  }

  SUBCASE("full-size subsample reproduces the training schedule") {
    NoiseSchedule s = subsample_schedule(train, 100);
    for (int k = 0; k < 100; ++k) {
      CHECK(s.train_index[k] == k);
      CHECK(s.beta[k] == doctest::Approx(train.beta[k]).epsilon(1e-9));
      CHECK(s.sigma[k] == doctest::Approx(train.sigma[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("add_noise") {
  NoiseSchedule sched = make_schedule(100);
  Rng rng(21);
  std::vector<double> chunk(80);
  for (auto& v : chunk) v = rng.uniform(-1, 1);

  SUBCASE("step index outside the schedule is rejected") {
    std::vector<double> eps(chunk.size(), 0.0);
    CHECK_THROWS_AS(add_noise_with(chunk, -1, sched, eps),
                    std::runtime_error);
    CHECK_THROWS_AS(add_noise_with(chunk, 100, sched, eps),
                    std::runtime_error);
    CHECK_THROWS_AS(
        add_noise_with(chunk, 0, sched, std::vector<double>(3, 0.0)),
        std::runtime_error);
  }

  SUBCASE("zero noise scales the chunk by sqrt(alpha_bar)") {
    std::vector<double> eps(chunk.size(), 0.0);
    for (int k : {0, 37, 99}) {
      auto out = add_noise_with(chunk, k, sched, eps);
      const double a = std::sqrt(sched.alpha_bar[k]);
      for (size_t i = 0; i < chunk.size(); ++i)
        CHECK(out[i] == doctest::Approx(a * chunk[i]).epsilon(1e-12));
    }
  }

  SUBCASE("early steps barely perturb a unit-scale chunk") {
    auto [out, eps] = add_noise(chunk, 0, sched, rng);
    double dev = 0.0;
    for (size_t i = 0; i < chunk.size(); ++i)
      dev = std::max(dev, std::abs(out[i] - chunk[i]));
    CHECK(dev < 0.05);
  }

  SUBCASE("noise variance matches 1 - alpha_bar") {
    for (int k : {10, 60, 99}) {
      const double a = std::sqrt(sched.alpha_bar[k]);
      double sq = 0.0;
      int n = 0;
      for (int trial = 0; trial < 125; ++trial) {
        auto [out, eps] = add_noise(chunk, k, sched, rng);
        for (size_t i = 0; i < chunk.size(); ++i) {
          const double d = out[i] - a * chunk[i];
          sq += d * d;
          n += 1;
        }
      }
      CHECK(sq / n ==
            doctest::Approx(1.0 - sched.alpha_bar[k]).epsilon(0.05));
    }
  }
}

TEST_CASE("noise prediction net") {
  DiffusionConfig cfg;
  cfg.pred_horizon = 4;
  cfg.exec_horizon = 2;
  cfg.channels = 8;
  cfg.k_embed_dim = 4;
  const int obs_dim = 6;
  Rng rng(31);
  NoisePredictionNet net(cfg, obs_dim, rng);

  std::vector<double> obs(obs_dim);
  for (auto& v : obs) v = rng.uniform(-1, 1);
  std::vector<double> noised(cfg.pred_horizon * 4);
  for (auto& v : noised) v = rng.normal();

  SUBCASE("shape contract") {
    auto out = net.forward_value(obs, noised, 3);
    CHECK(static_cast<int>(out.size()) == cfg.pred_horizon * 4);
    Tape t;
    Tensor o = t.constant({obs_dim}, obs);
    Tensor bad = t.constant({2, 4}, std::vector<double>(8, 0.0));
    CHECK_THROWS_AS(net.forward(t, o, bad, 0), std::runtime_error);
    Tensor n = t.constant({cfg.pred_horizon, 4}, noised);
    Tensor obad = t.constant({3}, std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(net.forward(t, obad, n, 0), std::runtime_error);
  }

  SUBCASE("zeroed parameters predict exactly zero noise") {
    NoisePredictionNet z(cfg, obs_dim, rng);
    zero_all(z.params());
    for (double v : z.forward_value(obs, noised, 5)) CHECK(v == 0.0);
  }

  SUBCASE("zeroed FiLM layers make the output conditioning-free") {
    NoisePredictionNet n2(cfg, obs_dim, rng);
    for (const char* name :
         {"dp.film1.w", "dp.film1.b", "dp.film2.w", "dp.film2.b"})
      zero_param(n2.params().at(name));
    auto base = n2.forward_value(obs, noised, 2);
    std::vector<double> obs2(obs_dim, 0.7);
    auto alt = n2.forward_value(obs2, noised, 2);
    auto alt_k = n2.forward_value(obs, noised, 9);
    for (size_t i = 0; i < base.size(); ++i) {
      CHECK(alt[i] == doctest::Approx(base[i]).epsilon(1e-12));
      CHECK(alt_k[i] == doctest::Approx(base[i]).epsilon(1e-12));
    }
  }

  SUBCASE("intact FiLM layers respond to the observation") {
    std::vector<double> obs2 = obs;
    obs2[0] += 0.5;
    auto a = net.forward_value(obs, noised, 2);
    auto b = net.forward_value(obs2, noised, 2);
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
      diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-8);
  }

  SUBCASE("gradients through FiLM conditioning pass a finite-difference check") {
    auto f = [&](Tape& t, std::vector<Tensor>& xs) {
      Tensor pred = net.forward(t, xs[0],
                                reshape(xs[1], {cfg.pred_horizon, 4}), 2);
      Tensor target = t.constant({cfg.pred_horizon, 4},
                                 std::vector<double>(noised.size(), 0.25));
      return mse(pred, target);
    };
    const double err = grad_check(
        f, {{obs_dim}, {cfg.pred_horizon * 4}}, {obs, noised});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("diffusion_loss") {
  DiffusionConfig cfg;
  cfg.pred_horizon = 5;
  cfg.exec_horizon = 2;
  cfg.channels = 8;
  cfg.k_embed_dim = 4;
  const int obs_dim = 6;
  Rng rng(41);
  NoiseSchedule sched = make_schedule(30);
  std::vector<double> obs(obs_dim, 0.2);
  std::vector<double> chunk(cfg.pred_horizon * 4);
  for (auto& v : chunk) v = rng.uniform(-1, 1);

  SUBCASE("wrong chunk length is rejected") {
    NoisePredictionNet net(cfg, obs_dim, rng);
    Tape t;
    Tensor o = t.constant({obs_dim}, obs);
    CHECK_THROWS_AS(
        diffusion_loss(net, t, o, std::vector<double>(7, 0.0), sched, rng),
        std::runtime_error);
  }

  SUBCASE("zeroed net gives exactly mean(eps^2)") {
    NoisePredictionNet net(cfg, obs_dim, rng);
    zero_all(net.params());
    for (int trial = 0; trial < 10; ++trial) {
      Tape t;
      Tensor o = t.constant({obs_dim}, obs);
      auto info = diffusion_loss(net, t, o, chunk, sched, rng);
      CHECK(info.k >= 0);
      CHECK(info.k < sched.K);
      double want = 0.0;
      for (double e : info.eps) want += e * e;
      want /= info.eps.size();
      CHECK(info.loss.data()[0] == doctest::Approx(want).epsilon(1e-12));
    }
  }

  SUBCASE("sampled k covers the whole schedule") {
    NoisePredictionNet net(cfg, obs_dim, rng);
    std::vector<bool> seen(sched.K, false);
    for (int trial = 0; trial < 600; ++trial) {
      Tape t;
      Tensor o = t.constant({obs_dim}, obs);
      seen[diffusion_loss(net, t, o, chunk, sched, rng).k] = true;
    }
    for (int k = 0; k < sched.K; ++k) CHECK(seen[k]);
  }
}

TEST_CASE("sample_actions") {
  DiffusionConfig cfg;
  cfg.pred_horizon = 4;
  cfg.exec_horizon = 2;
  cfg.channels = 8;
  cfg.k_embed_dim = 4;
  const int obs_dim = 6;
  Rng rng(51);
  NoisePredictionNet net(cfg, obs_dim, rng);
  NoiseSchedule sched = make_schedule(20);
  std::vector<double> obs(obs_dim, -0.4);

  SUBCASE("deterministic under a fixed rng seed") {
    Rng a(7), b(7);
    CHECK(sample_actions(net, obs, sched, a) ==
          sample_actions(net, obs, sched, b));
  }

  SUBCASE("finite across seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng r(seed);
      for (double v : sample_actions(net, obs, sched, r))
        CHECK(std::isfinite(v));
    }
  }

  SUBCASE("zeroed net with silenced noise contracts the initial draw") {
    NoisePredictionNet z(cfg, obs_dim, rng);
    zero_all(z.params());
    NoiseSchedule quiet = sched;
    std::fill(quiet.sigma.begin(), quiet.sigma.end(), 0.0);
    Rng r1(99), r2(99);
    auto out = sample_actions(z, obs, quiet, r1);
    std::vector<double> init(cfg.pred_horizon * 4);
    for (auto& v : init) v = r2.normal();
    double prod = 1.0;
    for (double a : quiet.alpha) prod *= a;
    for (size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(prod * init[i]).epsilon(1e-9));
  }
}

TEST_CASE("diffusion learns a bimodal action distribution") {
  // one-step chunks at +1 or -1 on the first axis; a CVAE-style regressor
  // would average them to zero, the sampler must keep both modes
  DiffusionConfig cfg;
  cfg.pred_horizon = 1;
  cfg.exec_horizon = 1;
  cfg.channels = 16;
  cfg.k_embed_dim = 8;
  const int obs_dim = 2;
  Rng rng(61);
  NoisePredictionNet net(cfg, obs_dim, rng);
  NoiseSchedule sched = make_schedule(20);
  const std::vector<double> obs = {0.3, -0.2};

  Adam opt(AdamConfig{.lr = 2e-3});
  for (int it = 0; it < 1500; ++it) {
    net.params().zero_grad();
    Tape tape;
    Tensor batch_loss;
    for (int b = 0; b < 8; ++b) {
      std::vector<double> chunk = {rng.uniform_int(2) ? 1.0 : -1.0, 0.0, 0.0,
                                   0.0};
      Tensor o = tape.constant({obs_dim}, obs);
      auto info = diffusion_loss(net, tape, o, chunk, sched, rng);
      Tensor part = scale(info.loss, 1.0 / 8.0);
      batch_loss = batch_loss.node() ? add(batch_loss, part) : part;
    }
    tape.backward(batch_loss);
    opt.step(net.params());
  }

  int pos = 0, neg = 0, near_mode = 0;
  const int draws = 200;
  for (int i = 0; i < draws; ++i) {
    auto a = sample_actions(net, obs, sched, rng);
    if (a[0] > 0.0) pos += 1;
    else neg += 1;
    if (std::abs(std::abs(a[0]) - 1.0) < 0.5) near_mode += 1;
  }
  CHECK(pos >= draws / 5);
  CHECK(neg >= draws / 5);
  CHECK(near_mode >= (3 * draws) / 5);
}

TEST_CASE("diffusion_chunk_target") {
  EnvConfig env_cfg;
  TactileConfig tac_cfg;
  std::vector<CameraConfig> cams = {
      CameraConfig{CameraConfig::wrist, 32, 32, 32.0}};
  Trajectory tr = collect_demo(env_cfg, cams, tac_cfg, 5, 0.0);
  REQUIRE(tr.succeeded);
  DiffusionConfig cfg;

  SUBCASE("rows are goal deltas normalized by pos_scale") {
    auto target = detail::diffusion_chunk_target(tr, 0, cfg);
    REQUIRE(static_cast<int>(target.size()) == cfg.pred_horizon * 4);
    const RobotState& p0 = tr.steps[0].obs.pos;
    for (int j = 0; j < cfg.pred_horizon; ++j) {
      const RobotState& pj = tr.steps[j].obs.pos;
      const Action& a = tr.steps[j].action;
      CHECK(target[4 * j + 0] ==
            doctest::Approx((pj.x + a.dx - p0.x) / cfg.pos_scale));
      CHECK(target[4 * j + 2] ==
            doctest::Approx((pj.z + a.dz - p0.z) / cfg.pos_scale));
      CHECK(target[4 * j + 3] ==
            doctest::Approx(a.width_cmd / cfg.width_scale));
    }
  }

  SUBCASE("tail past the end repeats the final goal") {
    const int t = tr.length() - 2;
    auto target = detail::diffusion_chunk_target(tr, t, cfg);
    for (int j = 2; j < cfg.pred_horizon; ++j)
      for (int d = 0; d < 4; ++d)
        CHECK(target[4 * j + d] == doctest::Approx(target[4 + d]));
  }
}

TEST_CASE("train_diffusion") {
  EnvConfig env_cfg;
  TactileConfig tac_cfg;
  std::vector<CameraConfig> cams = {
      CameraConfig{CameraConfig::wrist, 32, 32, 32.0}};
  EncoderConfig ecfg;
  DiffusionConfig cfg;
  cfg.channels = 8;
  cfg.k_embed_dim = 4;
  const int obs_dim = ecfg.embed_dim + ecfg.embed_dim + 4;  // 1 cam + tactile
  NoiseSchedule sched = make_schedule(20);

  SUBCASE("0 epochs leaves the net unchanged") {
    Rng r1(71), r2(72), r3(73), r4(74);
    std::vector<VisionEncoder> evs;
    evs.emplace_back(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    cfg.epochs = 0;
    NoisePredictionNet net(cfg, obs_dim, r3);
    std::vector<std::vector<double>> before;
    for (const auto& [_, p] : net.params()) before.push_back(p->value);
    std::vector<Trajectory> data = {
        collect_demo(env_cfg, cams, tac_cfg, 0, 0.0)};
    train_diffusion(data, net, evs, et, cfg, sched, r4);
    std::vector<std::vector<double>> after;
    for (const auto& [_, p] : net.params()) after.push_back(p->value);
    CHECK(before == after);
  }

  SUBCASE("camera count mismatch and empty datasets are rejected") {
    Rng r1(75), r2(76), r3(77), r4(78);
    std::vector<VisionEncoder> evs;
    evs.emplace_back(ecfg, r1);
    evs.emplace_back(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    cfg.epochs = 1;
    NoisePredictionNet net(cfg, 2 * ecfg.embed_dim + ecfg.embed_dim + 4, r3);
    std::vector<Trajectory> data = {
        collect_demo(env_cfg, cams, tac_cfg, 1, 0.0)};  // one camera only
    CHECK_THROWS_AS(train_diffusion(data, net, evs, et, cfg, sched, r4),
                    std::runtime_error);
    std::vector<Trajectory> empty;
    CHECK_THROWS_AS(train_diffusion(empty, net, evs, et, cfg, sched, r4),
                    std::runtime_error);
  }

  SUBCASE("vision_only keeps the tactile encoder out of the graph") {
    Rng r1(79), r2(80), r3(81), r4(82);
    std::vector<VisionEncoder> evs;
    evs.emplace_back(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    cfg.vision_only = true;
    cfg.epochs = 1;
    cfg.batch = 2;
    NoisePredictionNet net(cfg, ecfg.embed_dim + 4, r3);
    std::vector<Trajectory> data = {
        collect_demo(env_cfg, cams, tac_cfg, 2, 0.0)};
    data[0].steps.resize(8);  // keep it quick
    auto report = train_diffusion(data, net, evs, et, cfg, sched, r4);
    CHECK(!report.curve.empty());
    for (double v : {report.curve.front().loss, report.curve.back().loss})
      CHECK(std::isfinite(v));
    for (const auto& [name, p] : et.params())
      for (double g : p->grad) CHECK(g == 0.0);
    bool ev_touched = false;
    for (const auto& [name, p] : evs[0].params())
      for (double g : p->grad) ev_touched = ev_touched || g != 0.0;
    CHECK(ev_touched);
  }
}

TEST_CASE("run_diffusion_policy") {
  EnvConfig env_cfg;
  TactileConfig tac_cfg;
  std::vector<CameraConfig> cams = {
      CameraConfig{CameraConfig::wrist, 32, 32, 32.0}};
  EncoderConfig ecfg;
  DiffusionConfig cfg;
  cfg.channels = 8;
  cfg.k_embed_dim = 4;
  Rng r1(91), r2(92), r3(93), r4(94);
  std::vector<VisionEncoder> evs;
  evs.emplace_back(ecfg, r1);
  TactileEncoder et(ecfg, r2);
  NoisePredictionNet net(cfg, ecfg.embed_dim + ecfg.embed_dim + 4, r3);
  NoiseSchedule sched = subsample_schedule(make_schedule(100), 2);

  EpisodeRecord rec =
      run_diffusion_policy(env_cfg, cams, tac_cfg, net, evs, et, sched, 9,
                           0.0, r4);
  CHECK(rec.length() <= env_cfg.step_cap);
  CHECK(rec.length() >= 1);
  CHECK(rec.replans ==
        (rec.length() + cfg.exec_horizon - 1) / cfg.exec_horizon);
  for (int i = 0; i < rec.length(); ++i) {
    const auto& st = rec.steps[i];
    CHECK(st.t == i);
    CHECK(st.tangential_strain >= 0.0);
    for (double g : st.goal) CHECK(std::isfinite(g));
  }
}
