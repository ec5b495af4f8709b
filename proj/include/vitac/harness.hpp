#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vitac/checkpoint.hpp"
#include "vitac/contrastive.hpp"
#include "vitac/dataset.hpp"
#include "vitac/policy_act.hpp"
#include "vitac/policy_diffusion.hpp"

namespace vitac {

// ---------------------------------------------------------------------------
// Layered configuration: code defaults <- config file <- flag overrides.
// Every run writes its resolved config beside its outputs.
// ---------------------------------------------------------------------------

class Config {
 public:
  static nlohmann::json defaults() {
    return nlohmann::json{
        {"dataset",
         {{"count", 60},
          {"expert_noise_std", 1.0},
          {"seed", 1000},
          {"dir", ""}}},
        {"split", {{"train_frac", 0.8}, {"seed", 2000}}},
        {"encoders", {{"seed", 3000}}},
        {"pretrain",
         {{"n", 7},
          {"dt_min", 5},  // desk-scale demos are ~60 steps, not 208
          {"tau", 0.07},
          {"epochs", 100},
          {"batch_traj", 4},
          {"lr", 1e-3},
          {"seed", 4000}}},
        {"act",
         {{"chunk_h", 20},
          {"kl_weight", 10.0},
          {"ensemble_k", 0.25},
          {"latent_dim", 8},
          {"hidden", 128},
          {"epochs", 45},
          {"batch", 8},
          {"lr", 1e-3},
          {"encoder_lr_scale", 0.1},
          {"seed", 5000}}},
        {"diffusion",
         {{"K_train", 100},
          {"K_infer", 10},
          {"pred_horizon", 20},
          {"exec_horizon", 8},
          {"channels", 32},
          {"k_embed_dim", 16},
          {"epochs", 12},
          {"batch", 8},
          {"lr", 1e-3},
          {"encoder_lr_scale", 0.1},
          {"seed", 6000}}},
        {"eval", {{"episodes", 40}, {"noise_std", 2.5}, {"seed", 7000}}},
        {"matrix",
         {{"policies", {"act", "diffusion"}},
          {"modalities", {"vision", "vision_tactile"}},
          {"pretraining", {true, false}}}},
    };
  }

  Config() : root_(defaults()) {}

  void load_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open '" + path + "'");
    nlohmann::json overlay = nlohmann::json::parse(in, nullptr, false);
    require(!overlay.is_discarded(), "config: '" + path + "' is not valid JSON");
    merge(root_, overlay);
  }

  // "section.key=value"; the value is parsed as JSON, falling back to string
  void set_flag(const std::string& kv) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos && eq > 0,
            "config: override '" + kv + "' is not key=value");
    nlohmann::json value =
        nlohmann::json::parse(kv.substr(eq + 1), nullptr, false);
    if (value.is_discarded()) value = kv.substr(eq + 1);
    nlohmann::json* node = &root_;
    std::string path = kv.substr(0, eq);
    size_t pos = 0;
    while (true) {
      const auto dot = path.find('.', pos);
      const std::string key =
          path.substr(pos, dot == std::string::npos ? dot : dot - pos);
      require(!key.empty(), "config: override '" + kv + "' has an empty key");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      pos = dot + 1;
    }
  }

  template <typename T>
  T get(const std::string& dotted) const {
    const nlohmann::json* node = &root_;
    size_t pos = 0;
    while (true) {
      const auto dot = dotted.find('.', pos);
      const std::string key =
          dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
      auto it = node->find(key);
      require(it != node->end(), "config: unknown key '" + dotted + "'");
      node = &*it;
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    return node->get<T>();
  }

  const nlohmann::json& json() const { return root_; }

  void write_resolved(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), "config: cannot write '" + path + "'");
    out << root_.dump(2) << "\n";
  }

 private:
  static void merge(nlohmann::json& dst, const nlohmann::json& src) {
    if (!dst.is_object() || !src.is_object()) {
      dst = src;
      return;
    }
    for (auto it = src.begin(); it != src.end(); ++it) merge(dst[it.key()], *it);
  }

  nlohmann::json root_;
};

// ---------------------------------------------------------------------------
// Evaluation protocol
// ---------------------------------------------------------------------------

enum class Modality { vision, tactile, vision_tactile };

inline Modality parse_modality(const std::string& s) {
  if (s == "vision") return Modality::vision;
  if (s == "tactile") return Modality::tactile;
  if (s == "vision_tactile" || s == "vision+tactile")
    return Modality::vision_tactile;
  fail("unknown modality '" + s + "' (vision, tactile, vision_tactile)");
}

inline std::string modality_name(Modality m) {
  switch (m) {
    case Modality::vision: return "vision";
    case Modality::tactile: return "tactile";
    default: return "vision_tactile";
  }
}

struct ExperimentConfig {
  Modality modality = Modality::vision_tactile;
  bool pretrained = true;
  std::string policy = "act";  // "act" or "diffusion"
  int demo_count = 60;
  double train_frac = 0.8;
  int eval_episodes = 40;
  double eval_noise_std_mm = 2.5;
};

inline void validate(const ExperimentConfig& cfg) {
  require(cfg.policy == "act" || cfg.policy == "diffusion",
          "experiment: policy must be 'act' or 'diffusion'");
  require(cfg.demo_count >= 1, "experiment: demo_count must be >= 1");
  require(cfg.train_frac > 0.0 && cfg.train_frac < 1.0,
          "experiment: train/val fractions must each be positive and sum to 1");
  require(cfg.eval_episodes >= 1, "experiment: eval_episodes must be >= 1");
  require(cfg.eval_noise_std_mm >= 0.0,
          "experiment: eval_noise_std_mm must be >= 0");
}

struct MetricsReport {
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;  // successes / episodes exactly
  std::vector<int> lengths;
  double median_strain = 0.0;  // median over episodes of per-episode mean
  std::vector<uint64_t> episode_seeds;
  nlohmann::json config_echo;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  return nlohmann::json{{"episodes", r.episodes},
                        {"successes", r.successes},
                        {"success_rate", r.success_rate},
                        {"lengths", r.lengths},
                        {"median_strain", r.median_strain},
                        {"episode_seeds", r.episode_seeds},
                        {"config", r.config_echo}};
}

// One seeded rollout; noise_std applies to executed positional actions only.
using EpisodeFn =
    std::function<EpisodeRecord(uint64_t episode_seed, double noise_std, Rng&)>;

inline MetricsReport evaluate(const EpisodeFn& run, int episodes,
                              double noise_std_mm, uint64_t seed) {
  require(episodes >= 1, "evaluate: episodes must be >= 1");
  require(noise_std_mm >= 0.0, "evaluate: noise std must be >= 0");
  MetricsReport r;
  r.episodes = episodes;
  std::vector<double> strains;
  for (int i = 0; i < episodes; ++i) {
    const uint64_t ep_seed = mix_seed(seed, i);
    Rng rng(mix_seed(ep_seed, 0x4556414cu));  // per-episode noise stream
    EpisodeRecord rec = run(ep_seed, noise_std_mm, rng);
    r.episode_seeds.push_back(ep_seed);
    r.lengths.push_back(rec.length());
    strains.push_back(rec.mean_strain());
    if (rec.success) r.successes += 1;
  }
  r.success_rate = static_cast<double>(r.successes) / episodes;
  std::sort(strains.begin(), strains.end());
  const size_t n = strains.size();
  r.median_strain = n % 2 ? strains[n / 2]
                          : 0.5 * (strains[n / 2 - 1] + strains[n / 2]);
  return r;
}

// The scripted expert wrapped as a policy (oracle bound for evaluate tests).
inline EpisodeFn expert_episode_fn(const EnvConfig& env_cfg) {
  return [env_cfg](uint64_t seed, double noise_std, Rng& rng) {
    EpisodeRecord rec;
    WorldState s = reset(env_cfg, seed);
    ContactState contact;
    Rng expert_rng(mix_seed(seed, 0x45585045u));
    int t = 0;
    while (!is_terminal(s, env_cfg)) {
      Action a = scripted_expert(s, 0.0, expert_rng, env_cfg);
      const std::array<double, 4> goal = {s.robot.x + a.dx, s.robot.y + a.dy,
                                          s.robot.z + a.dz, a.width_cmd};
      if (noise_std > 0.0) {
        a.dx += rng.normal(0.0, noise_std);
        a.dy += rng.normal(0.0, noise_std);
        a.dz += rng.normal(0.0, noise_std);
      }
      auto res = step(s, a, env_cfg);
      rec.steps.push_back({t, goal, a,
                           mean_abs_tangential_strain(
                               simulate_sensor(contact, TactileConfig{}))});
      s = res.state;
      contact = res.contact;
      t += 1;
    }
    rec.success = success(s);
    return rec;
  };
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

struct CellResult {
  std::string name;
  std::string policy;
  Modality modality = Modality::vision;
  bool pretrained = false;
  bool ok = false;
  std::string error;
  MetricsReport report;
  double train_seconds = 0.0;
};

struct MatrixResult {
  std::vector<CellResult> cells;
  std::string csv;      // combined, one row per cell
  std::string summary;  // textual cell comparison
  bool all_ok = false;
};

namespace detail {

struct EncoderSnapshot {
  std::vector<std::vector<double>> vision;
  std::vector<std::vector<double>> tactile;
};

inline std::vector<std::vector<double>> snapshot(const ParamStore& s) {
  std::vector<std::vector<double>> out;
  for (const auto& [_, p] : s) out.push_back(p->value);
  return out;
}

inline void restore(ParamStore& s, const std::vector<std::vector<double>>& v) {
  require(s.size() == v.size(), "restore: snapshot size mismatch");
  size_t i = 0;
  for (auto& [_, p] : s) p->value = v[i++];
}

// strips camera views for tactile-only cells
inline std::vector<Trajectory> strip_views(const std::vector<Trajectory>& in) {
  std::vector<Trajectory> out;
  out.reserve(in.size());
  for (const auto& tr : in) {
    Trajectory t;
    t.seed = tr.seed;
    t.succeeded = tr.succeeded;
    t.steps.reserve(tr.steps.size());
    for (const auto& st : tr.steps) {
      StepRecord r;
      r.obs.strain = st.obs.strain;
      r.obs.pos = st.obs.pos;
      r.action = st.action;
      t.steps.push_back(std::move(r));
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline ActConfig act_config_from(const Config& c, bool vision_only) {
  ActConfig a;
  a.chunk_h = c.get<int>("act.chunk_h");
  a.kl_weight = c.get<double>("act.kl_weight");
  a.ensemble_k = c.get<double>("act.ensemble_k");
  a.latent_dim = c.get<int>("act.latent_dim");
  a.hidden = c.get<int>("act.hidden");
  a.epochs = c.get<int>("act.epochs");
  a.batch = c.get<int>("act.batch");
  a.lr = c.get<double>("act.lr");
  a.encoder_lr_scale = c.get<double>("act.encoder_lr_scale");
  a.vision_only = vision_only;
  return a;
}

inline DiffusionConfig diffusion_config_from(const Config& c,
                                             bool vision_only) {
  DiffusionConfig d;
  d.K_train = c.get<int>("diffusion.K_train");
  d.K_infer = c.get<int>("diffusion.K_infer");
  d.pred_horizon = c.get<int>("diffusion.pred_horizon");
  d.exec_horizon = c.get<int>("diffusion.exec_horizon");
  d.channels = c.get<int>("diffusion.channels");
  d.k_embed_dim = c.get<int>("diffusion.k_embed_dim");
  d.epochs = c.get<int>("diffusion.epochs");
  d.batch = c.get<int>("diffusion.batch");
  d.lr = c.get<double>("diffusion.lr");
  d.encoder_lr_scale = c.get<double>("diffusion.encoder_lr_scale");
  d.vision_only = vision_only;
  return d;
}

}  // namespace detail

// A trained policy head with its encoders, ready to roll out or persist.
struct TrainedPolicy {
  std::string policy;  // "act" or "diffusion"
  Modality modality = Modality::vision_tactile;
  std::vector<CameraConfig> cams;
  std::unique_ptr<ChunkPredictor> act;
  std::unique_ptr<VisionEncoder> ev;  // shared across cameras (act)
  std::unique_ptr<NoisePredictionNet> net;
  std::vector<VisionEncoder> evs;  // per-camera fine-tuned (diffusion)
  std::unique_ptr<TactileEncoder> et;
  NoiseSchedule infer;
  TrainReport train_report;

  EpisodeFn episode_fn(const EnvConfig& env_cfg,
                       const TactileConfig& tac_cfg) {
    if (policy == "act")
      return [this, env_cfg, tac_cfg](uint64_t seed, double noise, Rng& rng) {
        return run_act_policy(env_cfg, cams, tac_cfg, *act, *ev, *et, seed,
                              noise, rng);
      };
    return [this, env_cfg, tac_cfg](uint64_t seed, double noise, Rng& rng) {
      return run_diffusion_policy(env_cfg, cams, tac_cfg, *net, evs, *et,
                                  infer, seed, noise, rng);
    };
  }
};

// Trains one matrix cell from a ready dataset and encoder snapshots; seeds
// derive from (policy, modality) so pretrained and non-pretrained runs of one
// cell are paired.
inline TrainedPolicy train_cell(const Config& c, const std::string& policy,
                                Modality modality,
                                const std::vector<Trajectory>& train_set,
                                const detail::EncoderSnapshot& enc,
                                const std::vector<CameraConfig>& all_cams) {
  require(policy == "act" || policy == "diffusion",
          "train_cell: policy must be 'act' or 'diffusion', got '" + policy +
              "'");
  const EncoderConfig ecfg;
  const bool vision_only = modality == Modality::vision;
  const uint64_t stream =
      (policy == "act" ? 0 : 100) + static_cast<uint64_t>(modality);

  TrainedPolicy out;
  out.policy = policy;
  out.modality = modality;
  out.cams = modality == Modality::tactile ? std::vector<CameraConfig>{}
                                           : all_cams;
  const int C = static_cast<int>(out.cams.size());

  const std::vector<Trajectory> stripped =
      modality == Modality::tactile ? detail::strip_views(train_set)
                                    : std::vector<Trajectory>{};
  const std::vector<Trajectory>& data =
      modality == Modality::tactile ? stripped : train_set;

  Rng enc_rng(mix_seed(c.get<uint64_t>("encoders.seed"), stream));
  out.ev = std::make_unique<VisionEncoder>(ecfg, enc_rng);
  out.et = std::make_unique<TactileEncoder>(ecfg, enc_rng);
  detail::restore(out.ev->params(), enc.vision);
  detail::restore(out.et->params(), enc.tactile);

  if (policy == "act") {
    ActConfig acfg = detail::act_config_from(c, vision_only);
    Rng model_rng(mix_seed(c.get<uint64_t>("act.seed"), stream));
    out.act = std::make_unique<ChunkPredictor>(
        acfg, detail::policy_obs_dim(C, ecfg.embed_dim, vision_only),
        model_rng);
    Rng train_rng(mix_seed(c.get<uint64_t>("act.seed"), stream + 1000));
    out.train_report =
        train_act(data, *out.act, *out.ev, *out.et, acfg, train_rng);
  } else {
    DiffusionConfig dcfg = detail::diffusion_config_from(c, vision_only);
    NoiseSchedule sched = make_schedule(dcfg.K_train);
    Rng model_rng(mix_seed(c.get<uint64_t>("diffusion.seed"), stream));
    const int obs_dim =
        C * ecfg.embed_dim + (vision_only ? 0 : ecfg.embed_dim) + 4;
    out.net = std::make_unique<NoisePredictionNet>(dcfg, obs_dim, model_rng);
    for (int i = 0; i < C; ++i) {
      out.evs.emplace_back(ecfg, model_rng);
      copy_params(out.ev->params(), out.evs.back().params());
    }
    Rng train_rng(mix_seed(c.get<uint64_t>("diffusion.seed"), stream + 1000));
    out.train_report = train_diffusion(data, *out.net, out.evs, *out.et, dcfg,
                                       sched, train_rng);
    out.infer = subsample_schedule(sched, dcfg.K_infer);
  }
  return out;
}

inline MetricsReport evaluate_policy(const Config& c, TrainedPolicy& tp,
                                     bool pretrained, const EnvConfig& env_cfg,
                                     const TactileConfig& tac_cfg) {
  MetricsReport report = evaluate(
      tp.episode_fn(env_cfg, tac_cfg), c.get<int>("eval.episodes"),
      c.get<double>("eval.noise_std"), c.get<uint64_t>("eval.seed"));
  report.config_echo = {{"policy", tp.policy},
                        {"modality", modality_name(tp.modality)},
                        {"pretrained", pretrained},
                        {"eval_noise_std", c.get<double>("eval.noise_std")},
                        {"eval_seed", c.get<uint64_t>("eval.seed")}};
  return report;
}

inline MetricsReport run_cell(const Config& c, const std::string& policy,
                              Modality modality, bool pretrained,
                              const std::vector<Trajectory>& train_set,
                              const detail::EncoderSnapshot& enc,
                              const EnvConfig& env_cfg,
                              const std::vector<CameraConfig>& all_cams,
                              const TactileConfig& tac_cfg,
                              TrainReport* train_report = nullptr) {
  TrainedPolicy tp = train_cell(c, policy, modality, train_set, enc, all_cams);
  if (train_report) *train_report = tp.train_report;
  return evaluate_policy(c, tp, pretrained, env_cfg, tac_cfg);
}

// ---------------------------------------------------------------------------
// Policy persistence (a descriptor JSON plus one checkpoint per store)
// ---------------------------------------------------------------------------

inline void save_policy(const TrainedPolicy& tp, const Config& c,
                        const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json d = {{"format", "vitac-policy"},
                      {"version", 1},
                      {"policy", tp.policy},
                      {"modality", modality_name(tp.modality)},
                      {"cameras", tp.cams.size()}};
  std::ofstream js(dir + "/policy.json");
  require(js.good(), "cannot write '" + dir + "/policy.json'");
  js << d.dump(2) << "\n";
  c.write_resolved(dir + "/config.json");
  save_checkpoint(tp.et->params(), dir + "/tactile_encoder");
  if (tp.policy == "act") {
    save_checkpoint(tp.act->params(), dir + "/model");
    save_checkpoint(tp.ev->params(), dir + "/vision_encoder");
  } else {
    save_checkpoint(tp.net->params(), dir + "/model");
    for (size_t i = 0; i < tp.evs.size(); ++i)
      save_checkpoint(tp.evs[i].params(),
                      dir + "/vision_encoder_" + std::to_string(i));
  }
}

inline TrainedPolicy load_policy(const std::string& dir) {
  std::ifstream js(dir + "/policy.json");
  require(js.good(), "policy '" + dir + "': missing descriptor");
  nlohmann::json d = nlohmann::json::parse(js);
  require(d.value("format", "") == "vitac-policy",
          "policy '" + dir + "': not a policy descriptor");
  require(d.value("version", 0) == 1,
          "policy '" + dir + "': unknown version");
  Config c;
  c.load_file(dir + "/config.json");

  TrainedPolicy tp;
  tp.policy = d.at("policy").get<std::string>();
  tp.modality = parse_modality(d.at("modality").get<std::string>());
  const int C = d.at("cameras").get<int>();
  const std::vector<CameraConfig> all = default_cameras();
  require(C <= static_cast<int>(all.size()),
          "policy '" + dir + "': unexpected camera count");
  tp.cams.assign(all.begin(), all.begin() + C);

  const EncoderConfig ecfg;
  const bool vision_only = tp.modality == Modality::vision;
  Rng rng(0);  // shapes only; values come from the checkpoints
  tp.ev = std::make_unique<VisionEncoder>(ecfg, rng);
  tp.et = std::make_unique<TactileEncoder>(ecfg, rng);
  load_checkpoint(tp.et->params(), dir + "/tactile_encoder");
  if (tp.policy == "act") {
    ActConfig acfg = detail::act_config_from(c, vision_only);
    tp.act = std::make_unique<ChunkPredictor>(
        acfg, detail::policy_obs_dim(C, ecfg.embed_dim, vision_only), rng);
    load_checkpoint(tp.act->params(), dir + "/model");
    load_checkpoint(tp.ev->params(), dir + "/vision_encoder");
  } else {
    DiffusionConfig dcfg = detail::diffusion_config_from(c, vision_only);
    const int obs_dim =
        C * ecfg.embed_dim + (vision_only ? 0 : ecfg.embed_dim) + 4;
    tp.net = std::make_unique<NoisePredictionNet>(dcfg, obs_dim, rng);
    load_checkpoint(tp.net->params(), dir + "/model");
    for (int i = 0; i < C; ++i) {
      tp.evs.emplace_back(ecfg, rng);
      load_checkpoint(tp.evs[i].params(),
                      dir + "/vision_encoder_" + std::to_string(i));
    }
    tp.infer = subsample_schedule(make_schedule(dcfg.K_train), dcfg.K_infer);
  }
  return tp;
}

namespace detail {

inline std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace detail

inline MatrixResult run_matrix(const Config& c, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  c.write_resolved(out_dir + "/config.json");

  const EnvConfig env_cfg;
  const TactileConfig tac_cfg;
  const EncoderConfig ecfg;
  const std::vector<CameraConfig> cams = default_cameras();

  // dataset: reuse an on-disk collection when configured, else collect
  std::vector<Trajectory> dataset;
  const std::string data_dir = c.get<std::string>("dataset.dir");
  if (!data_dir.empty() && fs::exists(data_dir + "/manifest.json")) {
    dataset = load_dataset(data_dir).first;
  } else {
    CollectConfig cc;
    cc.count = c.get<int>("dataset.count");
    cc.expert_noise_std = c.get<double>("dataset.expert_noise_std");
    cc.seed = c.get<uint64_t>("dataset.seed");
    dataset = collect_demos(cc, env_cfg, cams, tac_cfg);
  }
  auto [train_set, val_set] = split(dataset, c.get<double>("split.train_frac"),
                                    c.get<uint64_t>("split.seed"));

  // shared encoder initializations: one fresh snapshot, one pretrained
  Rng enc_rng(mix_seed(c.get<uint64_t>("encoders.seed"), 0));
  VisionEncoder ev(ecfg, enc_rng);
  TactileEncoder et(ecfg, enc_rng);
  detail::EncoderSnapshot fresh{detail::snapshot(ev.params()),
                                detail::snapshot(et.params())};
  PretrainConfig pcfg;
  pcfg.n = c.get<int>("pretrain.n");
  pcfg.dt_min = c.get<int>("pretrain.dt_min");
  pcfg.tau = c.get<double>("pretrain.tau");
  pcfg.epochs = c.get<int>("pretrain.epochs");
  pcfg.batch_traj = c.get<int>("pretrain.batch_traj");
  pcfg.lr = c.get<double>("pretrain.lr");
  Rng pre_rng(mix_seed(c.get<uint64_t>("pretrain.seed"), 0));
  PretrainReport pre_report = pretrain(train_set, ev, et, pcfg, pre_rng);
  detail::EncoderSnapshot pretrained_snap{detail::snapshot(ev.params()),
                                          detail::snapshot(et.params())};
  {
    std::ofstream out(out_dir + "/pretrain_curve.csv");
    out << "step,loss,retrieval_top1\n";
    for (const auto& row : pre_report.curve)
      out << row.step << "," << detail::fmt(row.loss, 6) << ","
          << detail::fmt(row.retrieval_top1, 4) << "\n";
  }

  MatrixResult result;
  const auto policies = c.get<std::vector<std::string>>("matrix.policies");
  const auto modalities = c.get<std::vector<std::string>>("matrix.modalities");
  const auto pretraining = c.get<std::vector<bool>>("matrix.pretraining");
  for (const auto& policy : policies)
    for (const auto& mod_str : modalities)
      for (bool pre : pretraining) {
        CellResult cell;
        cell.policy = policy;
        cell.modality = parse_modality(mod_str);
        cell.pretrained = pre;
        cell.name = policy + "_" + modality_name(cell.modality) +
                    (pre ? "_pretrained" : "_scratch");
        const auto t0 = std::chrono::steady_clock::now();
        try {
          cell.report = run_cell(c, policy, cell.modality, pre, train_set,
                                 pre ? pretrained_snap : fresh, env_cfg, cams,
                                 tac_cfg);
          cell.ok = true;
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        cell.train_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();
        nlohmann::json j = {{"cell", cell.name},
                            {"ok", cell.ok},
                            {"error", cell.error},
                            {"seconds", cell.train_seconds}};
        if (cell.ok) j["metrics"] = to_json(cell.report);
        std::ofstream out(out_dir + "/" + cell.name + ".json");
        out << j.dump(2) << "\n";
        result.cells.push_back(std::move(cell));
      }

  // combined CSV
  {
    std::ostringstream csv;
    csv << "cell,success_rate,median_strain,episodes,seed\n";
    for (const auto& cell : result.cells) {
      if (cell.ok)
        csv << cell.name << "," << detail::fmt(cell.report.success_rate, 4)
            << "," << detail::fmt(cell.report.median_strain, 6) << ","
            << cell.report.episodes << "," << c.get<uint64_t>("eval.seed")
            << "\n";
      else
        csv << cell.name << ",failed,,,\n";
    }
    result.csv = csv.str();
    std::ofstream out(out_dir + "/combined.csv");
    out << result.csv;
  }

  // textual summary
  {
    std::ostringstream s;
    auto find = [&](const std::string& name) -> const CellResult* {
      for (const auto& cell : result.cells)
        if (cell.name == name && cell.ok) return &cell;
      return nullptr;
    };
    s << "cell results (success rate | median tangential strain):\n";
    for (const auto& cell : result.cells) {
      if (cell.ok)
        s << "  " << cell.name << ": "
          << detail::fmt(100.0 * cell.report.success_rate, 1) << "% | "
          << detail::fmt(cell.report.median_strain, 6) << "\n";
      else
        s << "  " << cell.name << ": FAILED (" << cell.error << ")\n";
    }
    for (const auto& policy : policies) {
      const auto* pv = find(policy + "_vision_pretrained");
      const auto* sv = find(policy + "_vision_scratch");
      if (pv && sv)
        s << policy << ": delta success, pretrained vs non-pretrained "
          << "vision-only: "
          << detail::fmt(
                 100.0 * (pv->report.success_rate - sv->report.success_rate),
                 1)
          << " points\n";
      const auto* pvt = find(policy + "_vision_tactile_pretrained");
      const auto* svt = find(policy + "_vision_tactile_scratch");
      if (pvt && svt)
        s << policy << ": delta success, pretrained vs non-pretrained "
          << "visuo-tactile: "
          << detail::fmt(
                 100.0 * (pvt->report.success_rate - svt->report.success_rate),
                 1)
          << " points\n";
      if (pv && pvt && sv) {
        s << policy << ": strain medians (pretrained/scratch) vision "
          << detail::fmt(pv->report.median_strain, 6) << "/"
          << detail::fmt(sv->report.median_strain, 6);
        if (svt)
          s << ", visuo-tactile " << detail::fmt(pvt->report.median_strain, 6)
            << "/" << detail::fmt(svt->report.median_strain, 6);
        s << "\n";
      }
    }
    s << "note: synthetic-sensor strain supports directional comparison "
         "only, not the real-sensor reduction percentages\n";
    result.summary = s.str();
    std::ofstream out(out_dir + "/summary.txt");
    out << result.summary;
  }

  result.all_ok = true;
  for (const auto& cell : result.cells) result.all_ok &= cell.ok;
  return result;
}

}  // namespace vitac
