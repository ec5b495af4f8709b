#pragma once

#include <vector>

#include "vitac/image.hpp"
#include "vitac/sim_env.hpp"
#include "vitac/tactile.hpp"

namespace vitac {

// One synchronized observation: C camera views, a tactile strain map, and
// the 4-dim proprioceptive state.
struct ObsFrame {
  std::vector<Image> views;
  StrainMap strain;
  RobotState pos;
};

struct StepRecord {
  ObsFrame obs;
  Action action;  // executed at this observation
};

struct Trajectory {
  std::vector<StepRecord> steps;
  bool succeeded = false;
  uint64_t seed = 0;

  int length() const { return static_cast<int>(steps.size()); }
};

// optimizer-step log shared by both policy heads
struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double recon_mse = 0.0;
};

struct TrainReport {
  std::vector<TrainLogRow> curve;
};

// per-step rollout log shared by both policy heads
struct EpisodeStep {
  int t = 0;
  std::array<double, 4> goal = {0, 0, 0, 0};  // global-frame commanded goal
  Action executed;
  double tangential_strain = 0.0;
};

struct EpisodeRecord {
  std::vector<EpisodeStep> steps;
  bool success = false;
  int replans = 0;  // planning calls (diffusion head replans every exec_horizon)

  int length() const { return static_cast<int>(steps.size()); }
  double mean_strain() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& st : steps) s += st.tangential_strain;
    return s / steps.size();
  }
};

}  // namespace vitac
