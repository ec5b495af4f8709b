#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vitac/image.hpp"
#include "vitac/rng.hpp"
#include "vitac/tactile.hpp"
#include "vitac/tensor.hpp"

namespace vitac {

using Vec3 = std::array<double, 3>;

struct RobotState {
  double x = 0.0, y = 0.0, z = 0.0;  // millimeters
  double width = 0.0;                // gripper opening, millimeters
};

enum class CablePhase { in_holder, grasped, inserted, dropped };

inline std::string phase_name(CablePhase p) {
  switch (p) {
    case CablePhase::in_holder: return "in_holder";
    case CablePhase::grasped: return "grasped";
    case CablePhase::inserted: return "inserted";
    case CablePhase::dropped: return "dropped";
  }
  return "?";
}

struct WorldState {
  RobotState robot;
  CablePhase cable_phase = CablePhase::in_holder;
  Vec3 cable_tip = {0, 0, 0};
  Vec3 holder_pose = {0, 0, 0};
  Vec3 port_pose = {0, 0, 0};
  int step_count = 0;
  // rigid gripper->tip offset in the xy plane, defined once grasped
  std::array<double, 2> grasp_offset = {0, 0};
  // per-episode static desk clutter: x, y, z, radius, r, g, b
  std::vector<std::array<double, 7>> clutter;
  // per-episode wrist-lens smudges in gripper-frame mm: du, dv, radius, r, g, b
  std::vector<std::array<double, 6>> smudges;
};

struct Action {
  double dx = 0.0, dy = 0.0, dz = 0.0;  // millimeters per control step
  double width_cmd = 0.0;               // millimeters
};

struct EnvConfig {
  Vec3 workspace = {200, 200, 100};  // extents from the origin, mm
  Vec3 home = {100, 100, 60};
  double width_max = 30.0;
  double cable_diameter = 4.0;
  double cable_length = 15.0;  // gripper to tip, hanging straight down
  Vec3 holder_pose = {50, 100, 25};  // cable grasp point held by the fixture
  Vec3 port_pose = {150, 100, 8};    // seat point inside the port bore
  double funnel_radius = 5.0;
  double seat_tol = 1.5;
  double funnel_depth = 6.0;   // deck height above the seat
  double fixture_half = 15.0;  // port fixture half-extent in x and y
  double grasp_tol = 5.0;
  double tip_jitter_mm = 12.0;  // per-episode cable-tip scatter inside the holder
  double max_step_mm = 4.0;
  int step_cap = 300;
  double shear_readout_gain = 0.5;
  // random background blobs per episode; they never affect the dynamics,
  // only the rendered views (visual nuisance the policy must see through)
  int clutter_count = 8;
  // random gripper-frame blobs per episode, static in the wrist view
  int smudge_count = 6;
};

struct StepResult {
  WorldState state;
  ContactState contact;
  bool terminal = false;
};

namespace detail {

inline double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

inline bool in_workspace(const Vec3& p, const Vec3& ext) {
  return p[0] >= 0 && p[0] <= ext[0] && p[1] >= 0 && p[1] <= ext[1] &&
         p[2] >= 0 && p[2] <= ext[2];
}

}  // namespace detail

inline double deck_z(const EnvConfig& cfg) {
  return cfg.port_pose[2] + cfg.funnel_depth;
}

inline bool is_terminal(const WorldState& s, const EnvConfig& cfg) {
  return s.cable_phase == CablePhase::inserted ||
         s.cable_phase == CablePhase::dropped || s.step_count >= cfg.step_cap;
}

inline bool success(const WorldState& s) {
  return s.cable_phase == CablePhase::inserted;
}

inline WorldState reset(const EnvConfig& cfg, uint64_t seed) {
  require(detail::in_workspace(cfg.holder_pose, cfg.workspace),
          "reset: holder pose outside workspace");
  require(detail::in_workspace(cfg.port_pose, cfg.workspace),
          "reset: port pose outside workspace");
  require(detail::in_workspace(cfg.home, cfg.workspace),
          "reset: home pose outside workspace");
  WorldState s;
  s.robot = {cfg.home[0], cfg.home[1], cfg.home[2], cfg.width_max};
  s.cable_phase = CablePhase::in_holder;
  s.holder_pose = cfg.holder_pose;
  s.port_pose = cfg.port_pose;
  // the holder grips the cable at a fixed point; the free tip hangs with a
  // per-episode scatter the robot cannot read from proprioception
  Rng rng(seed);
  const double r = cfg.tip_jitter_mm * std::sqrt(rng.uniform());
  const double th = 2.0 * M_PI * rng.uniform();
  s.cable_tip = {cfg.holder_pose[0] + r * std::cos(th),
                 cfg.holder_pose[1] + r * std::sin(th),
                 cfg.holder_pose[2] - cfg.cable_length};
  for (int i = 0; i < cfg.clutter_count; ++i)
    s.clutter.push_back({rng.uniform(0.0, cfg.workspace[0]),
                         rng.uniform(0.0, cfg.workspace[1]),
                         rng.uniform(0.0, cfg.workspace[2]),
                         rng.uniform(3.0, 12.0), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)});
  for (int i = 0; i < cfg.smudge_count; ++i)
    s.smudges.push_back({rng.uniform(-16.0, 16.0), rng.uniform(-16.0, 16.0),
                         rng.uniform(2.0, 6.0), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)});
  s.step_count = 0;
  return s;
}

inline StepResult step(const WorldState& state, const Action& action,
                       const EnvConfig& cfg) {
  require(!is_terminal(state, cfg), "step: state is terminal");
  WorldState s = state;
  ContactState contact;
  const double m = cfg.max_step_mm;

  const double new_width =
      detail::clampd(action.width_cmd, 0.0, cfg.width_max);

  // releasing a grasped cable mid-air is unrecoverable
  if (s.cable_phase == CablePhase::grasped &&
      new_width >= cfg.cable_diameter) {
    s.robot.width = new_width;
    s.cable_phase = CablePhase::dropped;
    s.step_count += 1;
    return {s, contact, true};
  }

  RobotState r = s.robot;
  r.x = detail::clampd(r.x + detail::clampd(action.dx, -m, m), 0.0, cfg.workspace[0]);
  r.y = detail::clampd(r.y + detail::clampd(action.dy, -m, m), 0.0, cfg.workspace[1]);
  r.z = detail::clampd(r.z + detail::clampd(action.dz, -m, m), 0.0, cfg.workspace[2]);
  r.width = new_width;

  std::array<double, 2> wall_force = {0.0, 0.0};
  bool wall_contact = false;

  if (s.cable_phase == CablePhase::grasped) {
    // the tip is rigidly offset from the gripper and cannot pass the table
    r.z = std::max(r.z, cfg.cable_length);
    Vec3 tip = {r.x + s.grasp_offset[0], r.y + s.grasp_offset[1],
                r.z - cfg.cable_length};
    const double relx = tip[0] - s.port_pose[0];
    const double rely = tip[1] - s.port_pose[1];
    const double hdist = std::hypot(relx, rely);
    const bool over_fixture = std::abs(relx) <= cfg.fixture_half &&
                              std::abs(rely) <= cfg.fixture_half;
    const double dz = deck_z(cfg);

    if (over_fixture && tip[2] < dz) {
      if (hdist <= cfg.funnel_radius) {
        // inside the funnel: the cone wall guides the tip toward the seat;
        // the allowed radius shrinks linearly from funnel_radius at the deck
        // to seat_tol at the seat plane
        const double depth_frac = detail::clampd(
            (dz - tip[2]) / cfg.funnel_depth, 0.0, 1.0);
        const double allowed =
            cfg.funnel_radius +
            (cfg.seat_tol - cfg.funnel_radius) * depth_frac;
        if (hdist > allowed && hdist > 1e-12) {
          const double sc = allowed / hdist;
          const double cx = s.port_pose[0] + relx * sc;
          const double cy = s.port_pose[1] + rely * sc;
          r.x += cx - tip[0];
          r.y += cy - tip[1];
          tip[0] = cx;
          tip[1] = cy;
          // the wall pushes the cable toward the port axis
          wall_force = {-0.8 * relx / hdist, -0.8 * rely / hdist};
          wall_contact = true;
        }
        if (tip[2] <= s.port_pose[2]) {
          tip[2] = s.port_pose[2];
          r.z = tip[2] + cfg.cable_length;
          s.cable_phase = CablePhase::inserted;
        }
      } else {
        // resting on the fixture deck
        tip[2] = dz;
        r.z = tip[2] + cfg.cable_length;
        wall_contact = true;
      }
    }
    s.cable_tip = tip;
  } else if (s.cable_phase == CablePhase::in_holder) {
    const double d3 = std::sqrt(
        (r.x - s.holder_pose[0]) * (r.x - s.holder_pose[0]) +
        (r.y - s.holder_pose[1]) * (r.y - s.holder_pose[1]) +
        (r.z - s.holder_pose[2]) * (r.z - s.holder_pose[2]));
    if (d3 <= cfg.grasp_tol && new_width < cfg.cable_diameter) {
      s.cable_phase = CablePhase::grasped;
      s.grasp_offset = {s.cable_tip[0] - r.x, s.cable_tip[1] - r.y};
      s.cable_tip = {r.x + s.grasp_offset[0], r.y + s.grasp_offset[1],
                     r.z - cfg.cable_length};
    }
  }

  s.robot = r;
  s.step_count += 1;

  const bool holding = (s.cable_phase == CablePhase::grasped ||
                        s.cable_phase == CablePhase::inserted) &&
                       r.width < cfg.cable_diameter;
  if (holding)
    contact.grip_pressure = detail::clampd(
        (cfg.cable_diameter - r.width) / cfg.cable_diameter, 0.0, 1.0);
  // the dangling tip shears the gel toward the grasp offset; wall reaction
  // adds on contact
  double fx = wall_force[0];
  double fy = wall_force[1];
  if (holding) {
    fx += cfg.shear_readout_gain * s.grasp_offset[0] / cfg.tip_jitter_mm;
    fy += cfg.shear_readout_gain * s.grasp_offset[1] / cfg.tip_jitter_mm;
  }
  const double fmag = std::hypot(fx, fy);
  if (fmag > 1.0) {
    fx /= fmag;
    fy /= fmag;
  }
  contact.lateral_force = {fx, fy};
  contact.in_contact = holding || wall_contact;

  return {s, contact, is_terminal(s, cfg)};
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct CameraConfig {
  enum Kind { overhead, side, wrist } kind = overhead;
  int height = 32;
  int width = 32;
  double viewport_mm = 200.0;  // world extent covered (wrist: square window)
};

namespace detail {

struct Rgb {
  double r, g, b;
};

inline bool in_disk(double u, double v, double cu, double cv, double rad) {
  return (u - cu) * (u - cu) + (v - cv) * (v - cv) <= rad * rad;
}

inline bool in_box(double u, double v, double cu, double cv, double hu,
                   double hv) {
  return std::abs(u - cu) <= hu && std::abs(v - cv) <= hv;
}

// top-down shading shared by the overhead and wrist cameras; the wrist
// close-up focuses above the desk plane, so it skips the desk clutter
inline Rgb shade_topdown(double u, double v, const WorldState& s,
                         const EnvConfig& cfg, bool desk_clutter) {
  const double half_w = s.robot.width / 2.0 + 1.0;
  if (in_box(u, v, s.robot.x - half_w, s.robot.y, 1.0, 4.0) ||
      in_box(u, v, s.robot.x + half_w, s.robot.y, 1.0, 4.0))
    return {0.92, 0.92, 0.92};
  if (s.cable_phase != CablePhase::dropped &&
      in_disk(u, v, s.cable_tip[0], s.cable_tip[1], cfg.cable_diameter / 2.0))
    return {0.85, 0.15, 0.10};
  if (in_disk(u, v, s.port_pose[0], s.port_pose[1], cfg.funnel_radius))
    return {0.05, 0.05, 0.05};
  if (in_box(u, v, s.port_pose[0], s.port_pose[1], cfg.fixture_half,
             cfg.fixture_half))
    return {0.10, 0.60, 0.20};
  if (in_box(u, v, s.holder_pose[0], s.holder_pose[1], 6.0, 6.0))
    return {0.15, 0.25, 0.70};
  if (desk_clutter)
    for (const auto& b : s.clutter)
      if (in_disk(u, v, b[0], b[1], b[3])) return {b[4], b[5], b[6]};
  return {0.12, 0.12, 0.12};
}

inline Rgb shade_side(double u, double v, const WorldState& s,
                      const EnvConfig& cfg) {
  // u is world x, v is world z; orthographic through y
  const double half_w = s.robot.width / 2.0 + 1.0;
  if (in_box(u, v, s.robot.x - half_w, s.robot.z - 3.0, 1.0, 3.0) ||
      in_box(u, v, s.robot.x + half_w, s.robot.z - 3.0, 1.0, 3.0) ||
      in_box(u, v, s.robot.x, s.robot.z + 1.0, half_w + 1.0, 1.0))
    return {0.92, 0.92, 0.92};
  if (s.cable_phase != CablePhase::dropped &&
      in_disk(u, v, s.cable_tip[0], s.cable_tip[2], cfg.cable_diameter / 2.0))
    return {0.85, 0.15, 0.10};
  if (in_box(u, v, s.port_pose[0], deck_z(cfg) / 2.0, cfg.fixture_half,
             deck_z(cfg) / 2.0))
    return {0.10, 0.60, 0.20};
  if (in_box(u, v, s.holder_pose[0], s.holder_pose[2] / 2.0, 6.0,
             s.holder_pose[2] / 2.0))
    return {0.15, 0.25, 0.70};
  for (const auto& b : s.clutter)
    if (in_disk(u, v, b[0], b[2], b[3])) return {b[4], b[5], b[6]};
  return {0.12, 0.12, 0.12};
}

}  // namespace detail

inline Image render_view(const WorldState& s, const CameraConfig& cam,
                         const EnvConfig& cfg) {
  require(cam.height > 0 && cam.width > 0 && cam.viewport_mm > 0,
          "render_view: zero-area viewport");
  Image im = Image::filled(cam.height, cam.width, 0, 0, 0);
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      double u, v;
      detail::Rgb c{};
      switch (cam.kind) {
        case CameraConfig::overhead:
          u = (px + 0.5) / cam.width * cfg.workspace[0];
          v = (py + 0.5) / cam.height * cfg.workspace[1];
          c = detail::shade_topdown(u, v, s, cfg, true);
          break;
        case CameraConfig::side:
          u = (px + 0.5) / cam.width * cfg.workspace[0];
          v = (1.0 - (py + 0.5) / cam.height) * cfg.workspace[2];
          c = detail::shade_side(u, v, s, cfg);
          break;
        case CameraConfig::wrist:
          u = s.robot.x + ((px + 0.5) / cam.width - 0.5) * cam.viewport_mm;
          v = s.robot.y + ((py + 0.5) / cam.height - 0.5) * cam.viewport_mm;
          c = detail::shade_topdown(u, v, s, cfg, false);
          // gripper-frame smudges sit behind the scene: only over background
          if (c.r == 0.12 && c.g == 0.12 && c.b == 0.12)
            for (const auto& m : s.smudges)
              if (detail::in_disk(u - s.robot.x, v - s.robot.y, m[0], m[1],
                                  m[2]))
                c = {m[3], m[4], m[5]};
          break;
      }
      im.set(py, px, c.r, c.g, c.b);
    }
  return im;
}

inline std::vector<Image> render_views(const WorldState& s,
                                       const std::vector<CameraConfig>& cams,
                                       const EnvConfig& cfg) {
  require(!cams.empty(), "render_views: need at least one camera");
  std::vector<Image> out;
  out.reserve(cams.size());
  for (const auto& cam : cams) out.push_back(render_view(s, cam, cfg));
  return out;
}

inline std::vector<CameraConfig> default_cameras() {
  return {CameraConfig{CameraConfig::overhead, 32, 32, 200.0},
          CameraConfig{CameraConfig::side, 32, 32, 200.0},
          CameraConfig{CameraConfig::wrist, 32, 32, 32.0}};
}

// ---------------------------------------------------------------------------
// Scripted expert
// ---------------------------------------------------------------------------

inline Action scripted_expert(const WorldState& s, double noise_std_mm,
                              Rng& rng, const EnvConfig& cfg) {
  if (is_terminal(s, cfg)) return Action{};
  const double m = cfg.max_step_mm;
  double tx = s.robot.x, ty = s.robot.y, tz = s.robot.z;
  double width = cfg.width_max;
  const double grip_width = cfg.cable_diameter / 2.0;

  if (s.cable_phase == CablePhase::in_holder) {
    tx = s.holder_pose[0];
    ty = s.holder_pose[1];
    tz = s.holder_pose[2];
    const double d3 = std::sqrt((tx - s.robot.x) * (tx - s.robot.x) +
                                (ty - s.robot.y) * (ty - s.robot.y) +
                                (tz - s.robot.z) * (tz - s.robot.z));
    width = d3 <= cfg.grasp_tol * 0.6 ? grip_width : cfg.width_max;
  } else {  // grasped
    width = grip_width;
    const double ax = s.port_pose[0] - s.cable_tip[0];
    const double ay = s.port_pose[1] - s.cable_tip[1];
    const bool aligned = std::hypot(ax, ay) <= cfg.seat_tol * 0.5;
    const bool in_cone = s.cable_tip[2] < deck_z(cfg);
    const double lift_z = deck_z(cfg) + cfg.cable_length + 4.0;
    if (aligned || in_cone) {
      // commit: descend to the seat while correcting laterally
      tx = s.robot.x + ax;
      ty = s.robot.y + ay;
      tz = s.port_pose[2] + cfg.cable_length - 0.5;
    } else if (s.robot.z < lift_z - 0.5) {
      tz = lift_z;  // clear the fixtures before traversing
    } else {
      tx = s.robot.x + ax;
      ty = s.robot.y + ay;
      tz = lift_z;
    }
  }

  Action a;
  a.dx = detail::clampd(tx - s.robot.x, -m, m);
  a.dy = detail::clampd(ty - s.robot.y, -m, m);
  a.dz = detail::clampd(tz - s.robot.z, -m, m);
  a.width_cmd = width;
  if (noise_std_mm > 0.0) {
    a.dx += rng.normal(0.0, noise_std_mm);
    a.dy += rng.normal(0.0, noise_std_mm);
    a.dz += rng.normal(0.0, noise_std_mm);
  }
  return a;
}

}  // namespace vitac
