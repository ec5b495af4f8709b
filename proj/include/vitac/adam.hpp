#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vitac/rng.hpp"
#include "vitac/tensor.hpp"

namespace vitac {

// Named parameter collection. std::map keeps iteration order deterministic,
// which the end-to-end reproducibility contract depends on.
class ParamStore {
public:
  Param& create(const std::string& name, Shape shape,
                std::vector<double> value) {
    require(!params_.count(name), "param '" + name + "' already exists");
    require(numel(shape) == static_cast<int64_t>(value.size()),
            "param '" + name + "': shape/data mismatch");
    auto p = std::make_shared<Param>();
    p->name = name;
    p->shape = std::move(shape);
    p->value = std::move(value);
    params_[name] = p;
    return *p;
  }

  // He-style fan-in scaled Gaussian init.
  Param& create_random(const std::string& name, Shape shape, int fan_in,
                       Rng& rng, double gain = 1.0) {
    std::vector<double> v(numel(shape));
    const double std = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& x : v) x = rng.normal(0.0, std);
    return create(name, std::move(shape), std::move(v));
  }

  Param& create_zeros(const std::string& name, Shape shape) {
    std::vector<double> v(numel(shape), 0.0);
    return create(name, std::move(shape), std::move(v));
  }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown param '" + name + "'");
    return *it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown param '" + name + "'");
    return *it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [_, p] : params_) p->zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  int64_t num_scalars() const {
    int64_t n = 0;
    for (const auto& [_, p] : params_) n += p->size();
    return n;
  }

private:
  std::map<std::string, std::shared_ptr<Param>> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment arrays are keyed by parameter name, so
// one optimizer instance can drive several stores as long as names are
// globally unique (modules prefix their names).
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<ParamStore*>& stores) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (ParamStore* store : stores) {
      for (auto& [name, p] : *store) {
        require(!p->grad.empty(),
                "adam_step: param '" + name + "' has no populated gradient");
        auto& [m, v] = moments_[name];
        if (m.empty()) {
          m.assign(p->value.size(), 0.0);
          v.assign(p->value.size(), 0.0);
        }
        for (size_t i = 0; i < p->value.size(); ++i) {
          const double g = p->grad[i];
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    }
  }

  void step(ParamStore& store) { step(std::vector<ParamStore*>{&store}); }

  // Per-group learning rates: each store steps with its own lr while the
  // shared step counter keeps bias correction consistent.
  void step_with_lr(const std::vector<std::pair<ParamStore*, double>>& groups) {
    const double base = cfg_.lr;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [store, lr] : groups) {
      for (auto& [name, p] : *store) {
        require(!p->grad.empty(),
                "adam_step: param '" + name + "' has no populated gradient");
        auto& [m, v] = moments_[name];
        if (m.empty()) {
          m.assign(p->value.size(), 0.0);
          v.assign(p->value.size(), 0.0);
        }
        for (size_t i = 0; i < p->value.size(); ++i) {
          const double g = p->grad[i];
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          p->value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    }
    (void)base;
  }

  int64_t steps_taken() const { return t_; }

private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      moments_;
};

}  // namespace vitac
