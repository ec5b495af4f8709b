#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "vitac/adam.hpp"
#include "vitac/encoders.hpp"
#include "vitac/rng.hpp"
#include "vitac/tensor.hpp"
#include "vitac/trajectory.hpp"

namespace vitac {

struct PretrainConfig {
  int n = 7;         // observations sampled per trajectory
  int dt_min = 10;   // minimum timestep separation (1 second at 10 Hz)
  double tau = 0.07; // softmax temperature
  int epochs = 1;
  int batch_traj = 4;  // trajectories averaged per optimizer step
  double lr = 1e-3;
};

inline void validate(const PretrainConfig& cfg) {
  require(cfg.n >= 2, "pretrain config: n must be >= 2");
  require(cfg.dt_min >= 1, "pretrain config: dt_min must be >= 1");
  require(cfg.tau > 0.0, "pretrain config: tau must be positive");
}

inline int min_pretrain_length(int n, int dt_min) {
  return (n - 1) * dt_min + 1;
}

// n distinct timesteps in [0, traj_len) with pairwise separation >= dt_min,
// uniform over valid sets: a strictly increasing set with gaps >= dt_min maps
// bijectively to an n-subset of {0..traj_len-1-(n-1)(dt_min-1)} by
// subtracting i*(dt_min-1) from the i-th order statistic.
inline std::vector<int> sample_timesteps(int traj_len, int n, int dt_min,
                                         Rng& rng) {
  require(n >= 2 && dt_min >= 1, "sample_timesteps: need n >= 2, dt_min >= 1");
  const int bound = min_pretrain_length(n, dt_min);
  require(traj_len >= bound,
          "sample_timesteps: trajectory length " + std::to_string(traj_len) +
              " below feasibility bound " + std::to_string(bound) + " (n=" +
              std::to_string(n) + ", dt_min=" + std::to_string(dt_min) + ")");
  const int k = traj_len - (n - 1) * (dt_min - 1);  // subset universe size
  // Floyd's algorithm: uniform n-subset of {0..k-1}
  std::set<int> chosen;
  for (int j = k - n; j < k; ++j) {
    const int v = rng.uniform_int(j + 1);
    chosen.insert(chosen.count(v) ? j : v);
  }
  std::vector<int> out(chosen.begin(), chosen.end());
  for (int i = 0; i < n; ++i) out[i] += i * (dt_min - 1);
  return out;
}

namespace detail {

inline void require_normalized(const Tensor& e, const char* who) {
  double s2 = 0.0;
  for (double v : e.data()) s2 += v * v;
  require(std::abs(std::sqrt(s2) - 1.0) < 1e-9,
          std::string(who) + ": embedding is not L2-normalized");
}

}  // namespace detail

// sims[i][j] = tactile_i . vision_j for one camera; inputs must be normalized
inline Tensor similarity_matrix(const std::vector<Tensor>& tactile,
                                const std::vector<Tensor>& vision) {
  require(!tactile.empty() && tactile.size() == vision.size(),
          "similarity_matrix: need equal non-empty embedding sets");
  const auto d = tactile[0].shape();
  for (const auto& e : tactile) {
    require(e.shape() == d, "similarity_matrix: mixed embedding dimensions");
    detail::require_normalized(e, "similarity_matrix");
  }
  for (const auto& e : vision) {
    require(e.shape() == d, "similarity_matrix: mixed embedding dimensions");
    detail::require_normalized(e, "similarity_matrix");
  }
  return matmul(stack_rows(tactile), transpose(stack_rows(vision)));
}

// symmetric contrastive loss, summed over cameras: per camera
// -(1/2n) sum_i [log softmax_row(sim/tau)[i,i] + log softmax_col(sim/tau)[i,i]]
inline Tensor clip_loss(const std::vector<Tensor>& sims, double tau) {
  require(!sims.empty(), "clip_loss: need at least one camera");
  require(tau > 0.0, "clip_loss: tau must be positive");
  Tensor total;
  for (const auto& s : sims) {
    require(s.shape().size() == 2 && s.shape()[0] == s.shape()[1],
            "clip_loss: similarity matrix must be square, got " +
                shape_str(s.shape()));
    require(s.shape()[0] >= 2, "clip_loss: degenerate with n < 2");
    Tensor logits = scale(s, 1.0 / tau);
    Tensor cam = scale(add(diag_cross_entropy_rows(logits),
                           diag_cross_entropy_rows(transpose(logits))),
                       0.5);
    total = total.node() ? add(total, cam) : cam;
  }
  return total;
}

struct PretrainLogRow {
  int step = 0;
  double loss = 0.0;
  double retrieval_top1 = 0.0;
};

struct PretrainReport {
  std::vector<PretrainLogRow> curve;
  int skipped_trajectories = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline double retrieval_top1(const Tensor& sims) {
  const int n = sims.shape()[0];
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (sims.data()[static_cast<size_t>(i) * n + j] >
          sims.data()[static_cast<size_t>(i) * n + best])
        best = j;
    hits += best == i;
  }
  return static_cast<double>(hits) / n;
}

}  // namespace detail

// Algorithm: per optimizer step, sample batch_traj trajectories; within each,
// sample n temporally separated frames, embed tactile and per-camera vision,
// and average the per-trajectory symmetric contrastive losses.
inline PretrainReport pretrain(const std::vector<Trajectory>& dataset,
                               VisionEncoder& ev, TactileEncoder& et,
                               const PretrainConfig& cfg, Rng& rng) {
  validate(cfg);
  require(!dataset.empty(), "pretrain: empty dataset");
  PretrainReport report;

  const int bound = min_pretrain_length(cfg.n, cfg.dt_min);
  std::vector<const Trajectory*> usable;
  for (const auto& tr : dataset) {
    if (tr.length() >= bound) {
      usable.push_back(&tr);
    } else {
      report.skipped_trajectories += 1;
      report.warnings.push_back(
          "skipping trajectory of length " + std::to_string(tr.length()) +
          " below feasibility bound " + std::to_string(bound));
    }
  }
  require(!usable.empty(), "pretrain: no trajectory meets the feasibility "
                           "bound " + std::to_string(bound));

  Adam opt(AdamConfig{.lr = cfg.lr});
  const int steps_per_epoch = std::max<int>(
      1, static_cast<int>(usable.size() + cfg.batch_traj - 1) / cfg.batch_traj);
  int step_id = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int bs = 0; bs < steps_per_epoch; ++bs) {
      ev.params().zero_grad();
      et.params().zero_grad();
      Tape tape;
      Tensor batch_loss;
      double top1 = 0.0;
      int top1_count = 0;
      for (int b = 0; b < cfg.batch_traj; ++b) {
        const Trajectory& tr =
            *usable[rng.uniform_int(static_cast<int>(usable.size()))];
        const auto ts = sample_timesteps(tr.length(), cfg.n, cfg.dt_min, rng);
        std::vector<Tensor> tac;
        tac.reserve(ts.size());
        for (int t : ts) {
          const auto& o = tr.steps[t].obs;
          tac.push_back(et.encode(tape, o.strain, o.pos));
        }
        const int cams = static_cast<int>(tr.steps[ts[0]].obs.views.size());
        std::vector<Tensor> sims;
        for (int c = 0; c < cams; ++c) {
          std::vector<Tensor> vis;
          vis.reserve(ts.size());
          for (int t : ts)
            vis.push_back(ev.encode(tape, tr.steps[t].obs.views[c]));
          sims.push_back(similarity_matrix(tac, vis));
          top1 += detail::retrieval_top1(sims.back());
          top1_count += 1;
        }
        Tensor traj_loss = scale(clip_loss(sims, cfg.tau), 1.0 / cfg.batch_traj);
        batch_loss =
            batch_loss.node() ? add(batch_loss, traj_loss) : traj_loss;
      }
      tape.backward(batch_loss);
      opt.step({&ev.params(), &et.params()});
      report.curve.push_back({step_id, batch_loss.data()[0],
                              top1_count ? top1 / top1_count : 0.0});
      step_id += 1;
    }
  }
  return report;
}

}  // namespace vitac
