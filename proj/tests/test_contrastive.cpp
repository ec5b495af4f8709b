#include <doctest.h>

#include <cmath>

#include "vitac/contrastive.hpp"
#include "vitac/rng.hpp"

using namespace vitac;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

std::vector<double> random_unit(int d, Rng& rng) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return unit(std::move(v));
}

// shared-latent synthetic trajectory: images, strain, and position are all
// deterministic functions of the normalized time s
Trajectory synth_traj(uint64_t seed, int len, int cams) {
  Trajectory tr;
  tr.seed = seed;
  tr.succeeded = true;
  TactileConfig tcfg;
  for (int t = 0; t < len; ++t) {
    const double s = (t + 0.5) / len;
    ObsFrame o;
    for (int c = 0; c < cams; ++c) {
      Image im = Image::filled(32, 32, s, 1.0 - s, 0.2 + 0.2 * c);
      const int col = static_cast<int>(s * 31);
      for (int y = 0; y < 32; ++y) im.set(y, col, 1, 1, 1);
      o.views.push_back(im);
    }
    ContactState cs{.grip_pressure = s,
                    .lateral_force = {2.0 * s - 1.0,
                                      0.4 * std::sin(6.28 * s)},
                    .in_contact = true};
    o.strain = simulate_sensor(cs, tcfg).strain;
    o.pos = {s * 200.0, 100.0, 50.0, 10.0};
    tr.steps.push_back({o, Action{}});
  }
  return tr;
}

}  // namespace

TEST_CASE("sample_timesteps") {
  Rng rng(1);

  SUBCASE("feasibility boundary admits exactly one set") {
    for (int rep = 0; rep < 5; ++rep) {
      auto ts = sample_timesteps(61, 7, 10, rng);
      CHECK(ts == std::vector<int>{0, 10, 20, 30, 40, 50, 60});
    }
  }

  SUBCASE("typical trajectory length keeps pairwise gaps >= dt_min") {
    for (int rep = 0; rep < 200; ++rep) {
      auto ts = sample_timesteps(208, 7, 10, rng);
      REQUIRE(ts.size() == 7);
      CHECK(ts.front() >= 0);
      CHECK(ts.back() < 208);
      for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] - ts[i - 1] >= 10);
    }
  }

  SUBCASE("every valid index is reachable") {
    bool hit_low = false, hit_high = false;
    for (int rep = 0; rep < 500; ++rep) {
      auto ts = sample_timesteps(208, 7, 10, rng);
      hit_low = hit_low || ts.front() == 0;
      hit_high = hit_high || ts.back() == 207;
    }
    CHECK(hit_low);
    CHECK(hit_high);
  }

  SUBCASE("infeasible length is rejected with the bound stated") {
    try {
      sample_timesteps(60, 7, 10, rng);
      FAIL("expected rejection");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("61") != std::string::npos);
    }
  }
}

TEST_CASE("similarity_matrix") {
  SUBCASE("orthonormal identical sets give the identity") {
    Tape t;
    std::vector<Tensor> es;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> v(3, 0.0);
      v[i] = 1.0;
      es.push_back(t.constant({3}, v));
    }
    Tensor s = similarity_matrix(es, es);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(s.data()[i * 3 + j] == doctest::Approx(i == j ? 1.0 : 0.0));
  }

  SUBCASE("identical embeddings give the all-ones matrix") {
    Tape t;
    Rng rng(2);
    auto v = random_unit(8, rng);
    std::vector<Tensor> es(4, t.constant({8}, v));
    Tensor s = similarity_matrix(es, es);
    for (double x : s.data()) CHECK(x == doctest::Approx(1.0));
  }

  SUBCASE("matches brute-force dot products to 1e-12") {
    Tape t;
    Rng rng(3);
    std::vector<Tensor> tac, vis;
    std::vector<std::vector<double>> traw, vraw;
    for (int i = 0; i < 5; ++i) {
      traw.push_back(random_unit(16, rng));
      vraw.push_back(random_unit(16, rng));
      tac.push_back(t.constant({16}, traw.back()));
      vis.push_back(t.constant({16}, vraw.back()));
    }
    Tensor s = similarity_matrix(tac, vis);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double d = 0.0;
        for (int k = 0; k < 16; ++k) d += traw[i][k] * vraw[j][k];
        CHECK(std::abs(s.data()[i * 5 + j] - d) < 1e-12);
        CHECK(s.data()[i * 5 + j] >= -1.0 - 1e-12);
        CHECK(s.data()[i * 5 + j] <= 1.0 + 1e-12);
      }
  }

  SUBCASE("unnormalized input is rejected") {
    Tape t;
    std::vector<Tensor> es = {t.constant({3}, {1.0, 1.0, 0.0}),
                              t.constant({3}, {0.0, 1.0, 0.0})};
    CHECK_THROWS_AS(similarity_matrix(es, es), std::runtime_error);
  }
}

TEST_CASE("clip_loss") {
  SUBCASE("constant matrix, 1 camera, n=7 gives ln 7") {
    Tape t;
    Tensor s = t.constant({7, 7}, std::vector<double>(49, 0.37));
    CHECK(clip_loss({s}, 0.07).data()[0] ==
          doctest::Approx(1.945910).epsilon(1e-5));
  }

  SUBCASE("3 cameras of constant matrices give 3 ln 7") {
    Tape t;
    Tensor s = t.constant({7, 7}, std::vector<double>(49, -0.2));
    CHECK(clip_loss({s, s, s}, 0.07).data()[0] ==
          doctest::Approx(3.0 * std::log(7.0)).epsilon(1e-9));
  }

  SUBCASE("diagonal-dominant matrix with tau -> 0 drives the loss to 0") {
    Tape t;
    std::vector<double> m(49, 0.0);
    for (int i = 0; i < 7; ++i) m[i * 7 + i] = 1.0;
    Tensor s = t.constant({7, 7}, m);
    const double l = clip_loss({s}, 1e-3).data()[0];
    CHECK(l >= 0.0);
    CHECK(l < 1e-8);
  }

  SUBCASE("invariant under simultaneous permutation of both orderings") {
    Rng rng(4);
    Tape t;
    std::vector<Tensor> tac, vis;
    for (int i = 0; i < 5; ++i) {
      tac.push_back(t.constant({8}, random_unit(8, rng)));
      vis.push_back(t.constant({8}, random_unit(8, rng)));
    }
    const double base =
        clip_loss({similarity_matrix(tac, vis)}, 0.07).data()[0];
    const std::vector<int> perm = {3, 0, 4, 2, 1};
    std::vector<Tensor> tp, vp;
    for (int i : perm) {
      tp.push_back(tac[i]);
      vp.push_back(vis[i]);
    }
    const double permuted =
        clip_loss({similarity_matrix(tp, vp)}, 0.07).data()[0];
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
  }

  SUBCASE("raising a diagonal entry strictly lowers the loss") {
    Rng rng(5);
    std::vector<double> m(16);
    for (double& v : m) v = rng.uniform(-0.5, 0.5);
    Tape t1;
    const double before =
        clip_loss({t1.constant({4, 4}, m)}, 0.07).data()[0];
    m[2 * 4 + 2] += 0.1;
    Tape t2;
    const double after = clip_loss({t2.constant({4, 4}, m)}, 0.07).data()[0];
    CHECK(after < before);
    CHECK(before > 0.0);
  }

  SUBCASE("n < 2 and non-square matrices are rejected") {
    Tape t;
    CHECK_THROWS_AS(clip_loss({t.constant({1, 1}, {0.5})}, 0.07),
                    std::runtime_error);
    CHECK_THROWS_AS(
        clip_loss({t.constant({2, 3}, std::vector<double>(6, 0.1))}, 0.07),
        std::runtime_error);
    CHECK_THROWS_AS(
        clip_loss({t.constant({3, 3}, std::vector<double>(9, 0.1))}, 0.0),
        std::runtime_error);
  }

  SUBCASE("gradient through normalization and loss passes grad_check") {
    Rng rng(6);
    std::vector<Shape> shapes(6, Shape{8});
    std::vector<std::vector<double>> points;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> v(8);
      for (double& x : v) x = rng.normal();
      points.push_back(v);
    }
    auto f = [](Tape& t, std::vector<Tensor>& xs) {
      std::vector<Tensor> tac, vis;
      for (int i = 0; i < 3; ++i) tac.push_back(l2_normalize(xs[i]));
      for (int i = 3; i < 6; ++i) vis.push_back(l2_normalize(xs[i]));
      return clip_loss({similarity_matrix(tac, vis)}, 0.07);
    };
    CHECK(grad_check(f, shapes, points) < 1e-4);
  }
}

TEST_CASE("pretrain") {
  EncoderConfig ecfg;

  SUBCASE("0 epochs leaves the encoders bit-identical") {
    Rng r1(7), r2(8), r3(9);
    VisionEncoder ev(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    std::vector<std::vector<double>> before;
    for (const auto& [_, p] : ev.params()) before.push_back(p->value);
    for (const auto& [_, p] : et.params()) before.push_back(p->value);
    PretrainConfig cfg;
    cfg.epochs = 0;
    std::vector<Trajectory> data = {synth_traj(0, 80, 1)};
    pretrain(data, ev, et, cfg, r3);
    std::vector<std::vector<double>> after;
    for (const auto& [_, p] : ev.params()) after.push_back(p->value);
    for (const auto& [_, p] : et.params()) after.push_back(p->value);
    CHECK(before == after);
  }

  SUBCASE("first-step loss on fresh encoders is near C ln n") {
    Rng r1(10), r2(11), r3(12);
    VisionEncoder ev(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    PretrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_traj = 2;
    std::vector<Trajectory> data = {synth_traj(1, 80, 3), synth_traj(2, 80, 3)};
    auto report = pretrain(data, ev, et, cfg, r3);
    REQUIRE(!report.curve.empty());
    const double expected = 3.0 * std::log(7.0);
    CHECK(report.curve[0].loss > 0.8 * expected);
    CHECK(report.curve[0].loss < 1.2 * expected);
  }

  SUBCASE("infeasible trajectories are skipped and counted") {
    Rng r1(13), r2(14), r3(15);
    VisionEncoder ev(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    PretrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_traj = 1;
    std::vector<Trajectory> data = {synth_traj(3, 30, 1),
                                    synth_traj(4, 80, 1)};
    auto report = pretrain(data, ev, et, cfg, r3);
    CHECK(report.skipped_trajectories == 1);
    CHECK(report.warnings.size() == 1);

    std::vector<Trajectory> all_bad = {synth_traj(5, 30, 1)};
    CHECK_THROWS_AS(pretrain(all_bad, ev, et, cfg, r3), std::runtime_error);
  }

  SUBCASE("shared-latent dataset reaches 90% in-batch retrieval") {
    Rng r1(16), r2(17), r3(18);
    VisionEncoder ev(ecfg, r1);
    TactileEncoder et(ecfg, r2);
    std::vector<Trajectory> data;
    for (uint64_t s = 0; s < 8; ++s) data.push_back(synth_traj(s, 80, 1));
    PretrainConfig cfg;
    cfg.epochs = 100;  // 2 steps per epoch at batch 4 over 8 trajectories
    cfg.batch_traj = 4;
    auto report = pretrain(data, ev, et, cfg, r3);
    REQUIRE(static_cast<int>(report.curve.size()) == 200);

    // retrieval oracle on 20 fresh batches from the trained encoders
    double acc = 0.0;
    for (int b = 0; b < 20; ++b) {
      const Trajectory& tr = data[r3.uniform_int(8)];
      auto ts = sample_timesteps(tr.length(), cfg.n, cfg.dt_min, r3);
      Tape tape;
      std::vector<Tensor> tac, vis;
      for (int t : ts) {
        tac.push_back(et.encode(tape, tr.steps[t].obs.strain,
                                tr.steps[t].obs.pos));
        vis.push_back(ev.encode(tape, tr.steps[t].obs.views[0]));
      }
      Tensor sims = similarity_matrix(tac, vis);
      const int n = sims.shape()[0];
      int hits = 0;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < n; ++j)
          if (sims.data()[i * n + j] > sims.data()[i * n + best]) best = j;
        hits += best == i;
      }
      acc += static_cast<double>(hits) / n;
    }
    acc /= 20.0;
    CHECK(acc >= 0.90);

    // the loss curve should have come down from the uniform baseline
    CHECK(report.curve.back().loss < report.curve.front().loss);
  }
}
