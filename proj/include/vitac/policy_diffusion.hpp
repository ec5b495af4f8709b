#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vitac/adam.hpp"
#include "vitac/encoders.hpp"
#include "vitac/rng.hpp"
#include "vitac/tensor.hpp"
#include "vitac/trajectory.hpp"

namespace vitac {

struct DiffusionConfig {
  int K_train = 100;
  int K_infer = 10;
  int pred_horizon = 20;
  int exec_horizon = 8;
  int obs_horizon = 1;
  int channels = 32;
  int k_embed_dim = 16;
  bool vision_only = false;
  int epochs = 40;
  int batch = 8;
  double lr = 1e-3;
  double encoder_lr_scale = 1.0;
  double pos_scale = 50.0;    // same delta normalization as the ACT head
  double width_scale = 30.0;
};

inline void validate(const DiffusionConfig& cfg) {
  require(cfg.K_train >= 1 && cfg.K_infer >= 1, "diffusion config: K >= 1");
  require(cfg.K_infer <= cfg.K_train,
          "diffusion config: K_infer must not exceed K_train");
  require(cfg.exec_horizon >= 1 && cfg.exec_horizon <= cfg.pred_horizon,
          "diffusion config: exec_horizon must be in [1, pred_horizon]");
  require(cfg.obs_horizon == 1, "diffusion config: only obs_horizon 1");
}

// The update A^{k-1} = alpha * (A^k - gamma * eps + N(0, sigma^2 I)) with the
// coefficients below equals the standard DDPM posterior step for a linear
// beta schedule: alpha = 1/sqrt(1-beta), gamma = beta/sqrt(1-alpha_bar),
// and alpha * sigma = posterior standard deviation.
struct NoiseSchedule {
  int K = 0;
  std::vector<double> beta, alpha, gamma, sigma, alpha_bar;
  std::vector<int> train_index;  // step-index fed to the network
};

inline NoiseSchedule make_schedule(int K) {
  require(K >= 1, "make_schedule: K must be >= 1");
  NoiseSchedule s;
  s.K = K;
  s.beta.resize(K);
  for (int k = 0; k < K; ++k)
    s.beta[k] = K == 1 ? 1e-4
                       : 1e-4 + (0.02 - 1e-4) * k / static_cast<double>(K - 1);
  s.alpha.resize(K);
  s.gamma.resize(K);
  s.sigma.resize(K);
  s.alpha_bar.resize(K);
  s.train_index.resize(K);
  double prod = 1.0;
  for (int k = 0; k < K; ++k) {
    prod *= 1.0 - s.beta[k];
    s.alpha_bar[k] = prod;
    s.train_index[k] = k;
  }
  for (int k = 0; k < K; ++k) {
    s.alpha[k] = 1.0 / std::sqrt(1.0 - s.beta[k]);
    s.gamma[k] = s.beta[k] / std::sqrt(1.0 - s.alpha_bar[k]);
    if (k == 0) {
      s.sigma[k] = 0.0;  // final denoising step is noiseless
    } else {
      const double post_var =
          s.beta[k] * (1.0 - s.alpha_bar[k - 1]) / (1.0 - s.alpha_bar[k]);
      s.sigma[k] = std::sqrt(post_var) / s.alpha[k];
    }
  }
  return s;
}

// evenly spaced subsample of the training schedule; endpoints coincide
inline NoiseSchedule subsample_schedule(const NoiseSchedule& train,
                                        int K_infer) {
  require(K_infer >= 1 && K_infer <= train.K,
          "subsample_schedule: need 1 <= K_infer <= K_train");
  NoiseSchedule s;
  s.K = K_infer;
  for (int j = 0; j < K_infer; ++j) {
    const int idx =
        K_infer == 1
            ? 0
            : static_cast<int>(std::lround(
                  static_cast<double>(j) * (train.K - 1) / (K_infer - 1)));
    s.train_index.push_back(train.train_index[idx]);
    s.alpha_bar.push_back(train.alpha_bar[idx]);
  }
  for (int j = 0; j < K_infer; ++j) {
    const double prev = j == 0 ? 1.0 : s.alpha_bar[j - 1];
    const double beta = 1.0 - s.alpha_bar[j] / prev;
    s.beta.push_back(beta);
    s.alpha.push_back(1.0 / std::sqrt(1.0 - beta));
    s.gamma.push_back(beta / std::sqrt(1.0 - s.alpha_bar[j]));
    if (j == 0) {
      s.sigma.push_back(0.0);
    } else {
      const double post_var =
          beta * (1.0 - s.alpha_bar[j - 1]) / (1.0 - s.alpha_bar[j]);
      s.sigma.push_back(std::sqrt(post_var) / s.alpha[j]);
    }
  }
  return s;
}

// noised = sqrt(alpha_bar[k]) * chunk + sqrt(1 - alpha_bar[k]) * eps
inline std::vector<double> add_noise_with(const std::vector<double>& chunk,
                                          int k, const NoiseSchedule& sched,
                                          const std::vector<double>& eps) {
  require(k >= 0 && k < sched.K,
          "add_noise: step " + std::to_string(k) + " outside [0, " +
              std::to_string(sched.K) + ")");
  require(eps.size() == chunk.size(), "add_noise: eps/chunk size mismatch");
  const double a = std::sqrt(sched.alpha_bar[k]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[k]);
  std::vector<double> out(chunk.size());
  for (size_t i = 0; i < chunk.size(); ++i) out[i] = a * chunk[i] + b * eps[i];
  return out;
}

inline std::pair<std::vector<double>, std::vector<double>> add_noise(
    const std::vector<double>& chunk, int k, const NoiseSchedule& sched,
    Rng& rng) {
  std::vector<double> eps(chunk.size());
  for (auto& e : eps) e = rng.normal();
  return {add_noise_with(chunk, k, sched, eps), eps};
}

inline std::vector<double> sinusoidal_embedding(int k, int dim) {
  std::vector<double> e(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e[2 * i] = std::sin(k * freq);
    e[2 * i + 1] = std::cos(k * freq);
  }
  return e;
}

// 1D temporal CNN over the [pred_horizon x 4] action sequence; the
// observation embedding and the sinusoidally embedded step index enter
// exclusively through per-layer FiLM: h <- (1 + s) * h + b
class NoisePredictionNet {
 public:
  NoisePredictionNet(const DiffusionConfig& cfg, int obs_dim, Rng& rng,
                     std::string prefix = "dp")
      : cfg_(cfg), obs_dim_(obs_dim), prefix_(std::move(prefix)) {
    validate(cfg_);
    const int ch = cfg_.channels;
    const int cond = obs_dim + cfg_.k_embed_dim;
    store_.create_random(prefix_ + ".conv1.w", {ch, 4, 3}, 12, rng);
    store_.create_zeros(prefix_ + ".conv1.b", {ch});
    store_.create_random(prefix_ + ".film1.w", {2 * ch, cond}, cond, rng, 0.1);
    store_.create_zeros(prefix_ + ".film1.b", {2 * ch});
    store_.create_random(prefix_ + ".conv2.w", {ch, ch, 3}, 3 * ch, rng);
    store_.create_zeros(prefix_ + ".conv2.b", {ch});
    store_.create_random(prefix_ + ".film2.w", {2 * ch, cond}, cond, rng, 0.1);
    store_.create_zeros(prefix_ + ".film2.b", {2 * ch});
    store_.create_random(prefix_ + ".conv3.w", {4, ch, 3}, 3 * ch, rng, 0.1);
    store_.create_zeros(prefix_ + ".conv3.b", {4});
  }

  // noised: [pred_horizon, 4] -> predicted eps, same shape
  Tensor forward(Tape& t, const Tensor& obs_emb, const Tensor& noised,
                 int k) {
    require(noised.shape() == Shape{cfg_.pred_horizon, 4},
            "noise net: chunk must be " + std::to_string(cfg_.pred_horizon) +
                "x4, got " + shape_str(noised.shape()));
    require(obs_emb.shape() == Shape{obs_dim_},
            "noise net: obs embedding must be length " +
                std::to_string(obs_dim_) + ", got " +
                shape_str(obs_emb.shape()));
    Tensor kk =
        t.constant({cfg_.k_embed_dim}, sinusoidal_embedding(k, cfg_.k_embed_dim));
    Tensor cond = concat({obs_emb, kk});
    Tensor x = transpose(noised);  // [4, H]
    x = conv1d(x, t.use(store_.at(prefix_ + ".conv1.w")),
               t.use(store_.at(prefix_ + ".conv1.b")), 1, 1);
    x = relu(film(t, x, cond, "film1"));
    x = conv1d(x, t.use(store_.at(prefix_ + ".conv2.w")),
               t.use(store_.at(prefix_ + ".conv2.b")), 1, 1);
    x = relu(film(t, x, cond, "film2"));
    x = conv1d(x, t.use(store_.at(prefix_ + ".conv3.w")),
               t.use(store_.at(prefix_ + ".conv3.b")), 1, 1);
    return transpose(x);
  }

  std::vector<double> forward_value(const std::vector<double>& obs_emb,
                                    const std::vector<double>& noised, int k) {
    Tape t;
    Tensor o = t.constant({obs_dim_}, obs_emb);
    Tensor n = t.constant({cfg_.pred_horizon, 4}, noised);
    return forward(t, o, n, k).data();
  }

  ParamStore& params() { return store_; }
  const DiffusionConfig& config() const { return cfg_; }
  int obs_dim() const { return obs_dim_; }

 private:
  Tensor film(Tape& t, const Tensor& x, const Tensor& cond,
              const std::string& name) {
    Tensor sb = linear(cond, t.use(store_.at(prefix_ + "." + name + ".w")),
                       t.use(store_.at(prefix_ + "." + name + ".b")));
    const int ch = x.shape()[0];
    Tensor s = slice(sb, 0, ch);
    Tensor b = slice(sb, ch, ch);
    return scale_shift(x, affine(s, 1.0, 1.0), b);
  }

  DiffusionConfig cfg_;
  int obs_dim_;
  std::string prefix_;
  ParamStore store_;
};

struct DiffusionLossInfo {
  Tensor loss;
  int k = 0;
  std::vector<double> eps;
};

// MSE(eps, eps_theta(obs, add_noise(chunk, k), k)) at a uniformly sampled k
inline DiffusionLossInfo diffusion_loss(NoisePredictionNet& net, Tape& tape,
                                        const Tensor& obs_emb,
                                        const std::vector<double>& chunk,
                                        const NoiseSchedule& sched, Rng& rng) {
  require(static_cast<int>(chunk.size()) == net.config().pred_horizon * 4,
          "diffusion_loss: chunk must be pred_horizon x 4");
  DiffusionLossInfo info;
  info.k = rng.uniform_int(sched.K);
  auto [noised, eps] = add_noise(chunk, info.k, sched, rng);
  info.eps = eps;
  Tensor n = tape.constant({net.config().pred_horizon, 4}, noised);
  Tensor target = tape.constant({net.config().pred_horizon, 4}, eps);
  Tensor pred = net.forward(tape, obs_emb, n, sched.train_index[info.k]);
  info.loss = mse(pred, target);
  return info;
}

// A^{k-1} = alpha_k (A^k - gamma_k eps_theta + N(0, sigma_k^2 I)),
// initialized from a standard Gaussian; returns normalized relative actions
inline std::vector<double> sample_actions(NoisePredictionNet& net,
                                          const std::vector<double>& obs_emb,
                                          const NoiseSchedule& sched,
                                          Rng& rng) {
  const int n = net.config().pred_horizon * 4;
  std::vector<double> a(n);
  for (auto& v : a) v = rng.normal();
  for (int k = sched.K - 1; k >= 0; --k) {
    const auto eps =
        net.forward_value(obs_emb, a, sched.train_index[k]);
    for (int i = 0; i < n; ++i) {
      double v = a[i] - sched.gamma[k] * eps[i];
      if (sched.sigma[k] > 0.0) v += sched.sigma[k] * rng.normal();
      a[i] = sched.alpha[k] * v;
    }
  }
  for (double v : a)
    require(std::isfinite(v), "sample_actions: non-finite sample");
  return a;
}

// ---------------------------------------------------------------------------
// Training (per-camera fine-tuned vision encoder copies)
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor obs_embedding_percam(Tape& t, const ObsFrame& o,
                                   std::vector<VisionEncoder>& evs,
                                   TactileEncoder& et, bool vision_only) {
  require(o.views.size() == evs.size(),
          "diffusion: camera count mismatch between frame and encoders");
  std::vector<Tensor> parts;
  for (size_t c = 0; c < evs.size(); ++c)
    parts.push_back(evs[c].encode(t, o.views[c]));
  if (!vision_only) parts.push_back(et.encode(t, o.strain, o.pos));
  parts.push_back(
      t.constant({4}, normalize_pos4(o.pos, et.config().pos_extent)));
  return concat(parts);
}

// target chunk in normalized delta space, same convention as the ACT head
inline std::vector<double> diffusion_chunk_target(const Trajectory& tr, int t,
                                                  const DiffusionConfig& cfg) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(cfg.pred_horizon) * 4);
  const int last = tr.length() - 1;
  const RobotState& p0 = tr.steps[t].obs.pos;
  for (int j = 0; j < cfg.pred_horizon; ++j) {
    const int tj = std::min(t + j, last);
    const RobotState& pj = tr.steps[tj].obs.pos;
    const Action& a = tr.steps[tj].action;
    out.push_back((pj.x + a.dx - p0.x) / cfg.pos_scale);
    out.push_back((pj.y + a.dy - p0.y) / cfg.pos_scale);
    out.push_back((pj.z + a.dz - p0.z) / cfg.pos_scale);
    out.push_back(a.width_cmd / cfg.width_scale);
  }
  return out;
}

}  // namespace detail

inline TrainReport train_diffusion(const std::vector<Trajectory>& dataset,
                                   NoisePredictionNet& net,
                                   std::vector<VisionEncoder>& evs,
                                   TactileEncoder& et,
                                   const DiffusionConfig& cfg,
                                   const NoiseSchedule& sched, Rng& rng) {
  validate(cfg);
  require(!dataset.empty(), "train_diffusion: empty dataset");
  for (const auto& tr : dataset)
    require(tr.length() >= 1, "train_diffusion: trajectory shorter than 1 step");

  TrainReport report;
  Adam opt(AdamConfig{.lr = cfg.lr});
  int samples_per_epoch = 0;
  for (const auto& tr : dataset) samples_per_epoch += tr.length();
  const int steps_per_epoch =
      std::max(1, samples_per_epoch / std::max(1, cfg.batch));

  int step_id = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int bs = 0; bs < steps_per_epoch; ++bs) {
      net.params().zero_grad();
      for (auto& ev : evs) ev.params().zero_grad();
      et.params().zero_grad();
      Tape tape;
      Tensor batch_loss;
      for (int b = 0; b < cfg.batch; ++b) {
        const Trajectory& tr =
            dataset[rng.uniform_int(static_cast<int>(dataset.size()))];
        const int t = rng.uniform_int(tr.length());
        Tensor obs = detail::obs_embedding_percam(tape, tr.steps[t].obs, evs,
                                                  et, cfg.vision_only);
        auto info = diffusion_loss(
            net, tape, obs, detail::diffusion_chunk_target(tr, t, cfg), sched,
            rng);
        Tensor loss = scale(info.loss, 1.0 / cfg.batch);
        batch_loss = batch_loss.node() ? add(batch_loss, loss) : loss;
      }
      tape.backward(batch_loss);
      if (cfg.encoder_lr_scale > 0.0) {
        std::vector<std::pair<ParamStore*, double>> groups = {
            {&net.params(), cfg.lr}};
        for (auto& ev : evs)
          groups.push_back({&ev.params(), cfg.lr * cfg.encoder_lr_scale});
        if (!cfg.vision_only)
          groups.push_back({&et.params(), cfg.lr * cfg.encoder_lr_scale});
        opt.step_with_lr(groups);
      } else {
        opt.step(net.params());
      }
      report.curve.push_back({step_id, batch_loss.data()[0], 0.0});
      step_id += 1;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Rollout: sample a pred_horizon chunk, execute exec_horizon of it open-loop
// ---------------------------------------------------------------------------

inline EpisodeRecord run_diffusion_policy(
    const EnvConfig& env_cfg, const std::vector<CameraConfig>& cameras,
    const TactileConfig& tac_cfg, NoisePredictionNet& net,
    std::vector<VisionEncoder>& evs, TactileEncoder& et,
    const NoiseSchedule& sched_infer, uint64_t seed, double exec_noise_std,
    Rng& rng) {
  const DiffusionConfig& cfg = net.config();
  EpisodeRecord rec;
  WorldState s = reset(env_cfg, seed);
  ContactState contact;
  int t = 0;
  while (!is_terminal(s, env_cfg)) {
    ObsFrame o;
    if (!cameras.empty()) o.views = render_views(s, cameras, env_cfg);
    TactileFrame frame = simulate_sensor(contact, tac_cfg);
    o.strain = frame.strain;
    o.pos = s.robot;

    Tape tape;
    Tensor emb = detail::obs_embedding_percam(tape, o, evs, et,
                                              cfg.vision_only);
    const auto chunk = sample_actions(net, emb.data(), sched_infer, rng);
    rec.replans += 1;

    const RobotState plan_pos = o.pos;
    for (int j = 0; j < cfg.exec_horizon && !is_terminal(s, env_cfg); ++j) {
      const double* row = chunk.data() + static_cast<size_t>(j) * 4;
      const std::array<double, 4> goal = {
          plan_pos.x + cfg.pos_scale * row[0],
          plan_pos.y + cfg.pos_scale * row[1],
          plan_pos.z + cfg.pos_scale * row[2], cfg.width_scale * row[3]};
      Action a;
      a.dx = goal[0] - s.robot.x;
      a.dy = goal[1] - s.robot.y;
      a.dz = goal[2] - s.robot.z;
      a.width_cmd = goal[3];
      if (exec_noise_std > 0.0) {
        a.dx += rng.normal(0.0, exec_noise_std);
        a.dy += rng.normal(0.0, exec_noise_std);
        a.dz += rng.normal(0.0, exec_noise_std);
      }
      TactileFrame step_frame =
          j == 0 ? frame : simulate_sensor(contact, tac_cfg);
      auto res = step(s, a, env_cfg);
      rec.steps.push_back(
          {t, goal, a, mean_abs_tangential_strain(step_frame)});
      s = res.state;
      contact = res.contact;
      t += 1;
    }
  }
  rec.success = success(s);
  return rec;
}

}  // namespace vitac
