#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "vitac/adam.hpp"
#include "vitac/contrastive.hpp"
#include "vitac/encoders.hpp"
#include "vitac/rng.hpp"
#include "vitac/tensor.hpp"
#include "vitac/trajectory.hpp"

namespace vitac {

struct ActConfig {
  int chunk_h = 20;        // prediction horizon
  double kl_weight = 10.0; // beta, strong KL pull toward the prior
  double ensemble_k = 0.25;
  int latent_dim = 8;
  int hidden = 128;
  bool vision_only = false;
  int epochs = 40;
  int batch = 8;
  double lr = 1e-3;
  double encoder_lr_scale = 1.0;  // 0 freezes the encoders during BC
  // normalization of the predicted action space
  double pos_scale = 50.0;    // mm per unit of positional delta
  double width_scale = 30.0;  // mm per unit of width
};

inline void validate(const ActConfig& cfg) {
  require(cfg.chunk_h >= 1, "act config: chunk_h must be >= 1");
  require(cfg.ensemble_k >= 0.0, "act config: ensemble_k must be >= 0");
  require(cfg.kl_weight >= 0.0, "act config: kl_weight must be >= 0");
  require(cfg.latent_dim >= 1, "act config: latent_dim must be >= 1");
}

// chunk of global-frame goal states (x, y, z, width), one row per step
struct ActionChunk {
  int t0 = 0;
  std::vector<std::array<double, 4>> rows;
};

// reconstruction MSE over the chunk plus beta * KL(q(z) || N(0, I)),
// KL summed over latent dimensions
inline Tensor act_loss(const Tensor& pred_chunk, const Tensor& true_chunk,
                       const Tensor& z_mean, const Tensor& z_logvar,
                       double beta) {
  require(pred_chunk.shape() == true_chunk.shape(),
          "act_loss: chunk shape mismatch " + shape_str(pred_chunk.shape()) +
              " vs " + shape_str(true_chunk.shape()));
  require(z_mean.shape() == z_logvar.shape(),
          "act_loss: latent shape mismatch " + shape_str(z_mean.shape()) +
              " vs " + shape_str(z_logvar.shape()));
  Tensor rec = mse(pred_chunk, true_chunk);
  // KL = 0.5 * sum(exp(logvar) + mean^2 - 1 - logvar)
  Tensor kl = scale(
      sum(sub(add(exp(z_logvar), mul(z_mean, z_mean)),
              affine(z_logvar, 1.0, 1.0))),
      0.5);
  return add(rec, scale(kl, beta));
}

// MLP CVAE over observation embeddings: style encoder -> (mean, logvar),
// decoder(z, obs) -> chunk_h x 4 relative actions
class ChunkPredictor {
 public:
  ChunkPredictor(const ActConfig& cfg, int obs_dim, Rng& rng,
                 std::string prefix = "act")
      : cfg_(cfg), obs_dim_(obs_dim), prefix_(std::move(prefix)) {
    validate(cfg_);
    const int out = cfg_.chunk_h * 4;
    const int se_in = obs_dim + out;
    store_.create_random(prefix_ + ".se1.w", {cfg_.hidden, se_in}, se_in, rng);
    store_.create_zeros(prefix_ + ".se1.b", {cfg_.hidden});
    store_.create_random(prefix_ + ".se_mean.w", {cfg_.latent_dim, cfg_.hidden},
                         cfg_.hidden, rng);
    store_.create_zeros(prefix_ + ".se_mean.b", {cfg_.latent_dim});
    store_.create_random(prefix_ + ".se_logvar.w",
                         {cfg_.latent_dim, cfg_.hidden}, cfg_.hidden, rng);
    store_.create_zeros(prefix_ + ".se_logvar.b", {cfg_.latent_dim});
    const int de_in = obs_dim + cfg_.latent_dim;
    store_.create_random(prefix_ + ".de1.w", {cfg_.hidden, de_in}, de_in, rng);
    store_.create_zeros(prefix_ + ".de1.b", {cfg_.hidden});
    store_.create_random(prefix_ + ".de2.w", {cfg_.hidden, cfg_.hidden},
                         cfg_.hidden, rng);
    store_.create_zeros(prefix_ + ".de2.b", {cfg_.hidden});
    store_.create_random(prefix_ + ".de_out.w", {out, cfg_.hidden}, cfg_.hidden,
                         rng, 0.1);
    store_.create_zeros(prefix_ + ".de_out.b", {out});
  }

  std::pair<Tensor, Tensor> encode_style(Tape& t, const Tensor& obs_emb,
                                         const Tensor& true_chunk) {
    require(true_chunk.shape() == Shape{cfg_.chunk_h, 4},
            "encode_style: chunk must be " + std::to_string(cfg_.chunk_h) +
                "x4, got " + shape_str(true_chunk.shape()));
    Tensor h = relu(linear(concat({obs_emb, flatten(true_chunk)}),
                           t.use(store_.at(prefix_ + ".se1.w")),
                           t.use(store_.at(prefix_ + ".se1.b"))));
    Tensor mean = linear(h, t.use(store_.at(prefix_ + ".se_mean.w")),
                         t.use(store_.at(prefix_ + ".se_mean.b")));
    Tensor logvar = linear(h, t.use(store_.at(prefix_ + ".se_logvar.w")),
                           t.use(store_.at(prefix_ + ".se_logvar.b")));
    return {mean, logvar};
  }

  // decoder output: chunk_h x 4 relative actions
  Tensor decode(Tape& t, const Tensor& obs_emb, const Tensor& z) {
    require(z.shape() == Shape{cfg_.latent_dim},
            "decode: z must be length " + std::to_string(cfg_.latent_dim));
    require(obs_emb.shape() == Shape{obs_dim_},
            "decode: obs embedding must be length " + std::to_string(obs_dim_) +
                ", got " + shape_str(obs_emb.shape()));
    Tensor h = relu(linear(concat({obs_emb, z}),
                           t.use(store_.at(prefix_ + ".de1.w")),
                           t.use(store_.at(prefix_ + ".de1.b"))));
    h = relu(linear(h, t.use(store_.at(prefix_ + ".de2.w")),
                    t.use(store_.at(prefix_ + ".de2.b"))));
    Tensor out = linear(h, t.use(store_.at(prefix_ + ".de_out.w")),
                        t.use(store_.at(prefix_ + ".de_out.b")));
    return reshape(out, {cfg_.chunk_h, 4});
  }

  ParamStore& params() { return store_; }
  const ActConfig& config() const { return cfg_; }
  int obs_dim() const { return obs_dim_; }

 private:
  ActConfig cfg_;
  int obs_dim_;
  std::string prefix_;
  ParamStore store_;
};

// z = 0 inference; positional deltas are added to current_pos, width is
// passed through absolute
inline ActionChunk predict_chunk(ChunkPredictor& model,
                                 const std::vector<double>& obs_emb,
                                 const RobotState& pos, int t0 = 0) {
  Tape t;
  Tensor e = t.constant({model.obs_dim()}, obs_emb);
  Tensor z = t.constant({model.config().latent_dim},
                        std::vector<double>(model.config().latent_dim, 0.0));
  Tensor d = model.decode(t, e, z);
  ActionChunk chunk;
  chunk.t0 = t0;
  chunk.rows.resize(model.config().chunk_h);
  const double ps = model.config().pos_scale;
  const double ws = model.config().width_scale;
  for (int i = 0; i < model.config().chunk_h; ++i) {
    const double* row = d.data().data() + static_cast<size_t>(i) * 4;
    chunk.rows[i] = {pos.x + ps * row[0], pos.y + ps * row[1],
                     pos.z + ps * row[2], ws * row[3]};
  }
  return chunk;
}

// ring of recent chunks already holding global-frame goals
class EnsembleBuffer {
 public:
  explicit EnsembleBuffer(int capacity) : capacity_(capacity) {
    require(capacity >= 1, "ensemble buffer: capacity must be >= 1");
  }

  void push(ActionChunk chunk) {
    chunks_.push_back(std::move(chunk));
    while (static_cast<int>(chunks_.size()) > capacity_) chunks_.pop_front();
  }

  // w_i = e^{-k * age_i}, normalized over the chunks covering t
  std::array<double, 4> ensemble(int t, double k) const {
    std::array<double, 4> acc = {0, 0, 0, 0};
    double wsum = 0.0;
    for (const auto& c : chunks_) {
      const int i = t - c.t0;
      if (i < 0 || i >= static_cast<int>(c.rows.size())) continue;
      const double w = std::exp(-k * i);
      for (int d = 0; d < 4; ++d) acc[d] += w * c.rows[i][d];
      wsum += w;
    }
    require(wsum > 0.0, "ensemble_action: no chunk covers timestep " +
                            std::to_string(t));
    for (int d = 0; d < 4; ++d) acc[d] /= wsum;
    return acc;
  }

  size_t size() const { return chunks_.size(); }

 private:
  int capacity_;
  std::deque<ActionChunk> chunks_;
};

inline std::array<double, 4> ensemble_action(const EnsembleBuffer& buffer,
                                             int t, double k) {
  return buffer.ensemble(t, k);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

// true chunk target: goal_{t+j} - pos_t for positions (normalized by
// pos_scale), absolute width (normalized by width_scale); tails padded by
// repeating the final goal
inline std::vector<double> chunk_target(const Trajectory& tr, int t, int h,
                                        double pos_scale,
                                        double width_scale) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(h) * 4);
  const int last = tr.length() - 1;
  const RobotState& p0 = tr.steps[t].obs.pos;
  for (int j = 0; j < h; ++j) {
    const int tj = std::min(t + j, last);
    const RobotState& pj = tr.steps[tj].obs.pos;
    const Action& a = tr.steps[tj].action;
    out.push_back((pj.x + a.dx - p0.x) / pos_scale);
    out.push_back((pj.y + a.dy - p0.y) / pos_scale);
    out.push_back((pj.z + a.dz - p0.z) / pos_scale);
    out.push_back(a.width_cmd / width_scale);
  }
  return out;
}

// policy observation embedding: per-camera vision embeddings,
// optionally the tactile embedding, plus the normalized position
inline Tensor obs_embedding(Tape& t, const ObsFrame& o, VisionEncoder& ev,
                            TactileEncoder& et, bool vision_only) {
  std::vector<Tensor> parts;
  for (const auto& view : o.views) parts.push_back(ev.encode(t, view));
  if (!vision_only) parts.push_back(et.encode(t, o.strain, o.pos));
  parts.push_back(
      t.constant({4}, normalize_pos4(o.pos, et.config().pos_extent)));
  return concat(parts);
}

inline int policy_obs_dim(int cameras, int embed_dim, bool vision_only) {
  return cameras * embed_dim + (vision_only ? 0 : embed_dim) + 4;
}

}  // namespace detail

inline TrainReport train_act(const std::vector<Trajectory>& dataset,
                             ChunkPredictor& model, VisionEncoder& ev,
                             TactileEncoder& et, const ActConfig& cfg,
                             Rng& rng) {
  validate(cfg);
  require(!dataset.empty(), "train_act: empty dataset");
  for (const auto& tr : dataset)
    require(tr.length() >= 1, "train_act: trajectory shorter than 1 step");

  TrainReport report;
  Adam opt(AdamConfig{.lr = cfg.lr});
  const int h = cfg.chunk_h;
  int samples_per_epoch = 0;
  for (const auto& tr : dataset) samples_per_epoch += tr.length();
  const int steps_per_epoch =
      std::max(1, samples_per_epoch / std::max(1, cfg.batch));

  int step_id = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int bs = 0; bs < steps_per_epoch; ++bs) {
      model.params().zero_grad();
      ev.params().zero_grad();
      et.params().zero_grad();
      Tape tape;
      Tensor batch_loss;
      double recon = 0.0;
      for (int b = 0; b < cfg.batch; ++b) {
        const Trajectory& tr =
            dataset[rng.uniform_int(static_cast<int>(dataset.size()))];
        const int t = rng.uniform_int(tr.length());
        Tensor obs = detail::obs_embedding(tape, tr.steps[t].obs, ev, et,
                                           cfg.vision_only);
        Tensor target = tape.constant(
            {h, 4},
            detail::chunk_target(tr, t, h, cfg.pos_scale, cfg.width_scale));
        auto [mean, logvar] = model.encode_style(tape, obs, target);
        std::vector<double> eps(cfg.latent_dim);
        for (auto& e : eps) e = rng.normal();
        Tensor z = add(mean, mul(exp(scale(logvar, 0.5)),
                                 tape.constant({cfg.latent_dim}, eps)));
        Tensor pred = model.decode(tape, obs, z);
        Tensor loss = act_loss(pred, target, mean, logvar, cfg.kl_weight);
        recon += mse(pred, target).data()[0] / cfg.batch;
        loss = scale(loss, 1.0 / cfg.batch);
        batch_loss = batch_loss.node() ? add(batch_loss, loss) : loss;
      }
      tape.backward(batch_loss);
      if (cfg.encoder_lr_scale > 0.0) {
        std::vector<std::pair<ParamStore*, double>> groups = {
            {&model.params(), cfg.lr},
            {&ev.params(), cfg.lr * cfg.encoder_lr_scale}};
        if (!cfg.vision_only)
          groups.push_back({&et.params(), cfg.lr * cfg.encoder_lr_scale});
        opt.step_with_lr(groups);
      } else {
        opt.step(model.params());
      }
      report.curve.push_back({step_id, batch_loss.data()[0], recon});
      step_id += 1;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

// closed-loop episode: predict a chunk each step, temporally ensemble, move
// toward the ensembled goal; exec_noise_std perturbs executed positional
// actions only
inline EpisodeRecord run_act_policy(const EnvConfig& env_cfg,
                                    const std::vector<CameraConfig>& cameras,
                                    const TactileConfig& tac_cfg,
                                    ChunkPredictor& model, VisionEncoder& ev,
                                    TactileEncoder& et, uint64_t seed,
                                    double exec_noise_std, Rng& noise_rng) {
  const ActConfig& cfg = model.config();
  EpisodeRecord rec;
  WorldState s = reset(env_cfg, seed);
  ContactState contact;  // no contact before the first step
  EnsembleBuffer buffer(cfg.chunk_h);
  int t = 0;
  while (!is_terminal(s, env_cfg)) {
    ObsFrame o;
    if (!cameras.empty()) o.views = render_views(s, cameras, env_cfg);
    TactileFrame frame = simulate_sensor(contact, tac_cfg);
    o.strain = frame.strain;
    o.pos = s.robot;

    Tape tape;
    Tensor emb =
        detail::obs_embedding(tape, o, ev, et, cfg.vision_only);
    buffer.push(predict_chunk(model, emb.data(), o.pos, t));
    const auto goal = buffer.ensemble(t, cfg.ensemble_k);

    Action a;
    a.dx = goal[0] - s.robot.x;
    a.dy = goal[1] - s.robot.y;
    a.dz = goal[2] - s.robot.z;
    a.width_cmd = goal[3];
    if (exec_noise_std > 0.0) {
      a.dx += noise_rng.normal(0.0, exec_noise_std);
      a.dy += noise_rng.normal(0.0, exec_noise_std);
      a.dz += noise_rng.normal(0.0, exec_noise_std);
    }
    auto res = step(s, a, env_cfg);
    rec.steps.push_back(
        {t, goal, a, mean_abs_tangential_strain(frame)});
    s = res.state;
    contact = res.contact;
    t += 1;
  }
  rec.success = success(s);
  return rec;
}

}  // namespace vitac
