#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vitac/rng.hpp"
#include "vitac/sim_env.hpp"
#include "vitac/tactile.hpp"
#include "vitac/trajectory.hpp"

namespace vitac {

// decorrelates derived seed streams (episode seeds, rng streams per stage)
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

struct CollectConfig {
  int count = 60;
  double expert_noise_std = 1.0;
  uint64_t seed = 1000;
};

namespace detail {

// sensor buffers are persisted in float32; quantizing at collection time makes
// a saved dataset reload to exactly the in-memory records
inline void quantize_f32(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace detail

// One seeded expert episode recorded as a Trajectory (empty camera list skips
// rendering, for callers that only need states).
inline Trajectory record_expert_episode(const EnvConfig& env_cfg,
                                        const std::vector<CameraConfig>& cams,
                                        const TactileConfig& tac_cfg,
                                        uint64_t seed, double noise_std) {
  Trajectory tr;
  tr.seed = seed;
  WorldState s = reset(env_cfg, seed);
  ContactState contact;
  Rng rng(mix_seed(seed, 0x45585045u));  // expert noise stream
  while (!is_terminal(s, env_cfg)) {
    ObsFrame o;
    if (!cams.empty()) {
      o.views = render_views(s, cams, env_cfg);
      for (auto& im : o.views) detail::quantize_f32(im.px);
    }
    o.strain = simulate_sensor(contact, tac_cfg).strain;
    detail::quantize_f32(o.strain.s);
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

// `count` successful expert demonstrations; failed rollouts are discarded and
// resampled. Aborts once failures alone imply a success rate below 50%.
inline std::vector<Trajectory> collect_demos(
    const CollectConfig& cfg, const EnvConfig& env_cfg,
    const std::vector<CameraConfig>& cams, const TactileConfig& tac_cfg) {
  require(cfg.count >= 1, "collect_demos: count must be >= 1");
  require(cfg.expert_noise_std >= 0.0,
          "collect_demos: noise std must be >= 0");
  std::vector<Trajectory> out;
  out.reserve(cfg.count);
  int failures = 0;
  for (uint64_t attempt = 0; static_cast<int>(out.size()) < cfg.count;
       ++attempt) {
    Trajectory tr = record_expert_episode(
        env_cfg, cams, tac_cfg, mix_seed(cfg.seed, attempt),
        cfg.expert_noise_std);
    if (tr.succeeded) {
      out.push_back(std::move(tr));
    } else {
      failures += 1;
      require(failures <= cfg.count,
              "collect_demos: expert success rate below 50% (" +
                  std::to_string(failures) +
                  " failures); environment misconfigured");
    }
  }
  return out;
}

// seed-deterministic shuffle split; both sides non-empty
inline std::pair<std::vector<Trajectory>, std::vector<Trajectory>> split(
    const std::vector<Trajectory>& dataset, double train_frac, uint64_t seed) {
  require(train_frac > 0.0 && train_frac < 1.0,
          "split: train fraction must be in (0, 1)");
  const int n = static_cast<int>(dataset.size());
  const int k = static_cast<int>(std::lround(train_frac * n));
  require(k >= 1 && k <= n - 1,
          "split: fraction " + std::to_string(train_frac) + " degenerates " +
              std::to_string(n) + " records");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x53504c49u));
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
  std::pair<std::vector<Trajectory>, std::vector<Trajectory>> out;
  for (int i = 0; i < n; ++i)
    (i < k ? out.first : out.second).push_back(dataset[idx[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: one subdirectory per trajectory holding a JSON manifest plus
// flat little-endian arrays (images, strain: float32; states, goals: float64)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_array_f32(const std::string& path,
                            const std::vector<double>& v) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path + "' for writing");
  for (double x : v) {
    const float f = static_cast<float>(x);
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
  require(out.good(), "write failed for '" + path + "'");
}

inline void write_array_f64(const std::string& path,
                            const std::vector<double>& v) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  require(out.good(), "write failed for '" + path + "'");
}

inline std::vector<double> read_array(const std::string& path, size_t count,
                                      bool f32, const std::string& what) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(in.good(), what + ": cannot open '" + path + "'");
  const size_t bytes = static_cast<size_t>(in.tellg());
  const size_t want = count * (f32 ? sizeof(float) : sizeof(double));
  require(bytes == want, what + ": expected " + std::to_string(want) +
                             " bytes, file has " + std::to_string(bytes));
  in.seekg(0);
  std::vector<double> v(count);
  if (f32) {
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(want));
    for (size_t i = 0; i < count; ++i) v[i] = buf[i];
  } else {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(want));
  }
  require(in.good(), what + ": read failed");
  return v;
}

inline size_t shape_count(const nlohmann::json& shape) {
  size_t n = 1;
  for (const auto& d : shape) n *= d.get<size_t>();
  return n;
}

}  // namespace detail

inline void save_trajectory(const std::string& dir, const Trajectory& tr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int T = tr.length();
  require(T >= 1, "save_trajectory: empty trajectory");
  const int C = static_cast<int>(tr.steps[0].obs.views.size());
  const int H = C > 0 ? tr.steps[0].obs.views[0].height : 0;
  const int W = C > 0 ? tr.steps[0].obs.views[0].width : 0;
  const StrainMap& s0 = tr.steps[0].obs.strain;

  std::vector<double> images, strain, states, goals;
  images.reserve(static_cast<size_t>(T) * C * 3 * H * W);
  strain.reserve(static_cast<size_t>(T) * s0.s.size());
  for (const auto& st : tr.steps) {
    require(static_cast<int>(st.obs.views.size()) == C,
            "save_trajectory: camera count varies within trajectory");
    for (const auto& im : st.obs.views) {
      require(im.height == H && im.width == W,
              "save_trajectory: image size varies within trajectory");
      images.insert(images.end(), im.px.begin(), im.px.end());
    }
    require(st.obs.strain.height == s0.height &&
                st.obs.strain.width == s0.width,
            "save_trajectory: strain size varies within trajectory");
    strain.insert(strain.end(), st.obs.strain.s.begin(),
                  st.obs.strain.s.end());
    const RobotState& p = st.obs.pos;
    states.insert(states.end(), {p.x, p.y, p.z, p.width});
    goals.insert(goals.end(), {p.x + st.action.dx, p.y + st.action.dy,
                               p.z + st.action.dz, st.action.width_cmd});
  }

  nlohmann::json m;
  m["format"] = "vitac-trajectory";
  m["version"] = 1;
  m["seed"] = tr.seed;
  m["length"] = T;
  m["succeeded"] = tr.succeeded;
  m["strain_cover_attenuation"] = s0.cover_attenuation;
  m["arrays"] = {
      {"images",
       {{"dtype", "f32"}, {"shape", {T, C, 3, H, W}}}},
      {"strain",
       {{"dtype", "f32"}, {"shape", {T, 3, s0.height, s0.width}}}},
      {"states", {{"dtype", "f64"}, {"shape", {T, 4}}}},
      {"goals", {{"dtype", "f64"}, {"shape", {T, 4}}}},
  };
  std::ofstream js(dir + "/manifest.json");
  require(js.good(), "cannot open '" + dir + "/manifest.json' for writing");
  js << m.dump(2) << "\n";

  detail::write_array_f32(dir + "/images.bin", images);
  detail::write_array_f32(dir + "/strain.bin", strain);
  detail::write_array_f64(dir + "/states.bin", states);
  detail::write_array_f64(dir + "/goals.bin", goals);
}

inline Trajectory load_trajectory(const std::string& dir) {
  const std::string what = "trajectory '" + dir + "'";
  std::ifstream js(dir + "/manifest.json");
  require(js.good(), what + ": missing manifest");
  nlohmann::json m = nlohmann::json::parse(js);
  require(m.value("format", "") == "vitac-trajectory",
          what + ": not a trajectory manifest");
  require(m.value("version", 0) == 1,
          what + ": unknown version " + std::to_string(m.value("version", 0)));

  const auto& arrays = m.at("arrays");
  const auto ishape = arrays.at("images").at("shape");
  const auto sshape = arrays.at("strain").at("shape");
  const int T = m.at("length").get<int>();
  require(ishape[0].get<int>() == T && sshape[0].get<int>() == T &&
              arrays.at("states").at("shape")[0].get<int>() == T &&
              arrays.at("goals").at("shape")[0].get<int>() == T,
          what + ": per-timestep arrays disagree on length");

  const auto images = detail::read_array(
      dir + "/images.bin", detail::shape_count(ishape), true, what + " images");
  const auto strain = detail::read_array(
      dir + "/strain.bin", detail::shape_count(sshape), true, what + " strain");
  const auto states = detail::read_array(dir + "/states.bin",
                                         static_cast<size_t>(T) * 4, false,
                                         what + " states");
  const auto goals = detail::read_array(dir + "/goals.bin",
                                        static_cast<size_t>(T) * 4, false,
                                        what + " goals");

  const int C = ishape[1].get<int>();
  const int H = ishape[3].get<int>();
  const int W = ishape[4].get<int>();
  const int sh = sshape[2].get<int>();
  const int sw = sshape[3].get<int>();

  Trajectory tr;
  tr.seed = m.at("seed").get<uint64_t>();
  tr.succeeded = m.at("succeeded").get<bool>();
  const size_t im_px = static_cast<size_t>(3) * H * W;
  for (int t = 0; t < T; ++t) {
    StepRecord st;
    for (int c = 0; c < C; ++c) {
      Image im;
      im.height = H;
      im.width = W;
      const size_t off = (static_cast<size_t>(t) * C + c) * im_px;
      im.px.assign(images.begin() + off, images.begin() + off + im_px);
      st.obs.views.push_back(std::move(im));
    }
    st.obs.strain.height = sh;
    st.obs.strain.width = sw;
    st.obs.strain.cover_attenuation =
        m.value("strain_cover_attenuation", 1.0);
    const size_t soff = static_cast<size_t>(t) * 3 * sh * sw;
    st.obs.strain.s.assign(strain.begin() + soff,
                           strain.begin() + soff + 3 * sh * sw);
    st.obs.pos = {states[4 * t], states[4 * t + 1], states[4 * t + 2],
                  states[4 * t + 3]};
    st.action.dx = goals[4 * t] - st.obs.pos.x;
    st.action.dy = goals[4 * t + 1] - st.obs.pos.y;
    st.action.dz = goals[4 * t + 2] - st.obs.pos.z;
    st.action.width_cmd = goals[4 * t + 3];
    tr.steps.push_back(std::move(st));
  }
  return tr;
}

struct DatasetMeta {
  int count = 0;
  double expert_noise_std = 0.0;
  uint64_t seed = 0;
};

inline std::string trajectory_dir(const std::string& root, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "traj_%04d", i);
  return root + "/" + buf;
}

inline void save_dataset(const std::string& root,
                         const std::vector<Trajectory>& trs,
                         const DatasetMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  nlohmann::json m;
  m["format"] = "vitac-dataset";
  m["version"] = 1;
  m["count"] = trs.size();
  m["expert_noise_std"] = meta.expert_noise_std;
  m["seed"] = meta.seed;
  std::ofstream js(root + "/manifest.json");
  require(js.good(), "cannot open '" + root + "/manifest.json' for writing");
  js << m.dump(2) << "\n";
  for (size_t i = 0; i < trs.size(); ++i)
    save_trajectory(trajectory_dir(root, static_cast<int>(i)), trs[i]);
}

inline std::pair<std::vector<Trajectory>, DatasetMeta> load_dataset(
    const std::string& root) {
  std::ifstream js(root + "/manifest.json");
  require(js.good(), "dataset '" + root + "': missing manifest");
  nlohmann::json m = nlohmann::json::parse(js);
  require(m.value("format", "") == "vitac-dataset",
          "dataset '" + root + "': not a dataset manifest");
  require(m.value("version", 0) == 1,
          "dataset '" + root + "': unknown version " +
              std::to_string(m.value("version", 0)));
  DatasetMeta meta;
  meta.count = m.at("count").get<int>();
  meta.expert_noise_std = m.at("expert_noise_std").get<double>();
  meta.seed = m.at("seed").get<uint64_t>();
  std::vector<Trajectory> trs;
  trs.reserve(meta.count);
  for (int i = 0; i < meta.count; ++i)
    trs.push_back(load_trajectory(trajectory_dir(root, i)));
  return {std::move(trs), meta};
}

}  // namespace vitac
