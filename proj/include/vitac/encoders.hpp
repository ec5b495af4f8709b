#pragma once

#include <array>
#include <cmath>
#include <string>

#include "vitac/adam.hpp"
#include "vitac/image.hpp"
#include "vitac/rng.hpp"
#include "vitac/sim_env.hpp"
#include "vitac/tactile.hpp"
#include "vitac/tensor.hpp"

namespace vitac {

struct EncoderConfig {
  int image_size = 32;  // vision input is 3 x image_size x image_size
  int strain_h = 24;
  int strain_w = 32;
  int embed_dim = 32;  // D, shared latent dimension
  int hidden = 64;
  // small projection init clusters fresh embeddings around one direction so
  // the first contrastive loss sits at the uniform-softmax baseline
  double proj_scale = 0.05;
  double proj_bias = 0.1;
  // min-max extents for (x, y, z, width) -> [-1, 1]
  std::array<double, 4> pos_extent = {200.0, 200.0, 100.0, 30.0};
};

// min-max map of (x, y, z, width) to [-1, 1] by the given extents
inline std::vector<double> normalize_pos4(const RobotState& pos,
                                          const std::array<double, 4>& ext) {
  std::vector<double> p = {2.0 * pos.x / ext[0] - 1.0,
                           2.0 * pos.y / ext[1] - 1.0,
                           2.0 * pos.z / ext[2] - 1.0,
                           2.0 * pos.width / ext[3] - 1.0};
  for (double v : p)
    require(std::isfinite(v), "normalize_pos4: non-finite position");
  return p;
}

namespace detail {

inline int conv_out(int n) { return (n + 2 - 3) / 2 + 1; }  // k3 s2 p1

inline void init_trunk(ParamStore& s, const std::string& pre, int in_ch,
                       int feat, int hidden, int d, const EncoderConfig& cfg,
                       Rng& rng) {
  s.create_random(pre + ".conv1.w", {8, in_ch, 3, 3}, in_ch * 9, rng);
  s.create_zeros(pre + ".conv1.b", {8});
  s.create_random(pre + ".conv2.w", {16, 8, 3, 3}, 72, rng);
  s.create_zeros(pre + ".conv2.b", {16});
  s.create_random(pre + ".fc1.w", {hidden, feat}, feat, rng);
  s.create_zeros(pre + ".fc1.b", {hidden});
  s.create_random(pre + ".proj.w", {d, hidden}, hidden, rng, cfg.proj_scale);
  s.create(pre + ".proj.b", {d}, std::vector<double>(d, cfg.proj_bias));
}

inline Tensor trunk_forward(Tape& t, ParamStore& s, const std::string& pre,
                            const Tensor& x) {
  Tensor h = relu(conv2d(x, t.use(s.at(pre + ".conv1.w")),
                         t.use(s.at(pre + ".conv1.b")), 2, 1));
  h = relu(conv2d(h, t.use(s.at(pre + ".conv2.w")),
                  t.use(s.at(pre + ".conv2.b")), 2, 1));
  return flatten(h);
}

inline Tensor head_forward(Tape& t, ParamStore& s, const std::string& pre,
                           const Tensor& feat) {
  Tensor h = relu(linear(feat, t.use(s.at(pre + ".fc1.w")),
                         t.use(s.at(pre + ".fc1.b"))));
  Tensor e = linear(h, t.use(s.at(pre + ".proj.w")),
                    t.use(s.at(pre + ".proj.b")));
  return l2_normalize(e);
}

}  // namespace detail

// One parameter set shared across all cameras.
class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& cfg, Rng& rng,
                std::string prefix = "ev")
      : cfg_(cfg), prefix_(std::move(prefix)) {
    const int side = detail::conv_out(detail::conv_out(cfg.image_size));
    detail::init_trunk(store_, prefix_, 3, 16 * side * side, cfg.hidden,
                       cfg.embed_dim, cfg, rng);
  }

  // normalized D-vector on the tape (differentiable)
  Tensor encode(Tape& t, const Image& img) {
    require(img.height == cfg_.image_size && img.width == cfg_.image_size &&
                img.px.size() == static_cast<size_t>(3) * cfg_.image_size *
                                     cfg_.image_size,
            "encode_vision: expected 3x" + std::to_string(cfg_.image_size) +
                "x" + std::to_string(cfg_.image_size) + " image, got 3x" +
                std::to_string(img.height) + "x" + std::to_string(img.width));
    Tensor x = t.constant({3, cfg_.image_size, cfg_.image_size}, img.px);
    return detail::head_forward(t, store_, prefix_,
                                detail::trunk_forward(t, store_, prefix_, x));
  }

  std::vector<double> encode_value(const Image& img) {
    Tape t;
    return encode(t, img).data();
  }

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  EncoderConfig cfg_;
  std::string prefix_;
  ParamStore store_;
};

class TactileEncoder {
 public:
  TactileEncoder(const EncoderConfig& cfg, Rng& rng,
                 std::string prefix = "et")
      : cfg_(cfg), prefix_(std::move(prefix)) {
    const int fh = detail::conv_out(detail::conv_out(cfg.strain_h));
    const int fw = detail::conv_out(detail::conv_out(cfg.strain_w));
    const int feat = 16 * fh * fw + 4;  // trunk features + proprioception
    store_.create_random(prefix_ + ".conv1.w", {8, 3, 3, 3}, 27, rng);
    store_.create_zeros(prefix_ + ".conv1.b", {8});
    store_.create_random(prefix_ + ".conv2.w", {16, 8, 3, 3}, 72, rng);
    store_.create_zeros(prefix_ + ".conv2.b", {16});
    store_.create_random(prefix_ + ".fc1.w", {cfg.hidden, feat}, feat, rng);
    store_.create_zeros(prefix_ + ".fc1.b", {cfg.hidden});
    store_.create_random(prefix_ + ".proj.w", {cfg.embed_dim, cfg.hidden},
                         cfg.hidden, rng, cfg.proj_scale);
    store_.create(prefix_ + ".proj.b", {cfg.embed_dim},
                  std::vector<double>(cfg.embed_dim, cfg.proj_bias));
  }

  std::vector<double> normalize_pos(const RobotState& pos) const {
    return normalize_pos4(pos, cfg_.pos_extent);
  }

  Tensor encode(Tape& t, const StrainMap& strain, const RobotState& pos) {
    require(strain.height == cfg_.strain_h && strain.width == cfg_.strain_w &&
                strain.s.size() == static_cast<size_t>(3) * cfg_.strain_h *
                                       cfg_.strain_w,
            "encode_tactile: expected 3x" + std::to_string(cfg_.strain_h) +
                "x" + std::to_string(cfg_.strain_w) + " strain map, got 3x" +
                std::to_string(strain.height) + "x" +
                std::to_string(strain.width));
    Tensor x = t.constant({3, cfg_.strain_h, cfg_.strain_w}, strain.s);
    Tensor feat = detail::trunk_forward(t, store_, prefix_, x);
    Tensor p = t.constant({4}, normalize_pos(pos));
    return detail::head_forward(t, store_, prefix_, concat({feat, p}));
  }

  std::vector<double> encode_value(const StrainMap& strain,
                                   const RobotState& pos) {
    Tape t;
    return encode(t, strain, pos).data();
  }

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  EncoderConfig cfg_;
  std::string prefix_;
  ParamStore store_;
};

// Copies values between stores with identical layouts (e.g. per-camera
// fine-tuning copies of a shared encoder).
inline void copy_params(const ParamStore& src, ParamStore& dst) {
  require(src.size() == dst.size(), "copy_params: store size mismatch");
  auto it = dst.begin();
  for (const auto& [name, p] : src) {
    Param& q = *it->second;
    require(q.shape == p->shape, "copy_params: shape mismatch at '" + name +
                                     "' vs '" + q.name + "'");
    q.value = p->value;
    ++it;
  }
}

}  // namespace vitac
