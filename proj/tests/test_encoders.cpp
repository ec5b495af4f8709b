#include <doctest.h>

#include <cmath>

#include "vitac/encoders.hpp"
#include "vitac/rng.hpp"

using namespace vitac;

namespace {

Image random_image(Rng& rng, int size = 32) {
  Image im = Image::filled(size, size, 0, 0, 0);
  for (auto& v : im.px) v = rng.uniform();
  return im;
}

StrainMap random_strain(Rng& rng) {
  StrainMap s;
  s.height = 24;
  s.width = 32;
  s.s.resize(3u * 24 * 32);
  for (auto& v : s.s) v = rng.uniform(-0.5, 0.5);
  return s;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// finite-difference check of d(sum of embedding)/d(param) on sampled entries
template <typename Forward>
double max_rel_grad_err(ParamStore& store, Forward forward) {
  store.zero_grad();
  Tape t;
  Tensor loss = sum(forward(t));
  t.backward(loss);
  const double eps = 1e-5;
  double worst = 0.0;
  Rng pick(99);
  for (auto& [name, p] : store) {
    for (int k = 0; k < 3; ++k) {
      const size_t i = pick.uniform_int(static_cast<int>(p->value.size()));
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      Tape tp;
      const double up = sum(forward(tp)).data()[0];
      p->value[i] = saved - eps;
      Tape tm;
      const double dn = sum(forward(tm)).data()[0];
      p->value[i] = saved;
      const double num = (up - dn) / (2.0 * eps);
      const double ana = p->grad[i];
      const double rel =
          std::abs(ana - num) / (std::abs(ana) + std::abs(num) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("encode_vision") {
  EncoderConfig cfg;
  Rng rng(1);
  VisionEncoder ev(cfg, rng);
  Rng data_rng(2);
  Image img = random_image(data_rng);

  SUBCASE("deterministic, D=32, unit norm") {
    auto a = ev.encode_value(img);
    auto b = ev.encode_value(img);
    CHECK(a == b);
    CHECK(a.size() == 32);
    CHECK(std::abs(std::sqrt(dot(a, a)) - 1.0) < 1e-9);
  }

  SUBCASE("wrong image shape is rejected") {
    Image bad = Image::filled(16, 32, 0, 0, 0);
    Tape t;
    CHECK_THROWS_AS(ev.encode(t, bad), std::runtime_error);
  }

  SUBCASE("gradient w.r.t. all parameters passes finite differences") {
    const double err =
        max_rel_grad_err(ev.params(), [&](Tape& t) { return ev.encode(t, img); });
    CHECK(err < 1e-4);
  }

  SUBCASE("fresh embeddings have non-zero variance across a batch") {
    std::vector<std::vector<double>> es;
    for (int i = 0; i < 8; ++i) es.push_back(ev.encode_value(random_image(data_rng)));
    double var = 0.0;
    for (size_t d = 0; d < es[0].size(); ++d) {
      double m = 0.0;
      for (const auto& e : es) m += e[d];
      m /= es.size();
      for (const auto& e : es) var += (e[d] - m) * (e[d] - m);
    }
    CHECK(var > 0.0);
  }

  SUBCASE("fresh embeddings cluster around a shared direction") {
    auto a = ev.encode_value(random_image(data_rng));
    auto b = ev.encode_value(random_image(data_rng));
    CHECK(dot(a, b) > 0.8);
  }
}

TEST_CASE("encode_tactile") {
  EncoderConfig cfg;
  Rng rng(3);
  TactileEncoder et(cfg, rng);
  Rng data_rng(4);
  StrainMap strain = random_strain(data_rng);
  RobotState pos{100, 100, 50, 10};

  SUBCASE("deterministic and D matches the vision encoder") {
    auto a = et.encode_value(strain, pos);
    auto b = et.encode_value(strain, pos);
    CHECK(a == b);
    Rng r2(5);
    VisionEncoder ev(cfg, r2);
    CHECK(a.size() == ev.encode_value(random_image(data_rng)).size());
    CHECK(std::abs(std::sqrt(dot(a, a)) - 1.0) < 1e-9);
  }

  SUBCASE("position genuinely enters the head") {
    RobotState moved = pos;
    moved.x += 10.0;
    CHECK(et.encode_value(strain, pos) != et.encode_value(strain, moved));
  }

  SUBCASE("wrong strain shape is rejected") {
    StrainMap bad = strain;
    bad.height = 12;
    bad.s.resize(3u * 12 * 32);
    Tape t;
    CHECK_THROWS_AS(et.encode(t, bad, pos), std::runtime_error);
  }

  SUBCASE("non-finite position is rejected") {
    RobotState bad = pos;
    bad.z = std::nan("");
    Tape t;
    CHECK_THROWS_AS(et.encode(t, strain, bad), std::runtime_error);
  }

  SUBCASE("gradient w.r.t. all parameters passes finite differences") {
    const double err = max_rel_grad_err(
        et.params(), [&](Tape& t) { return et.encode(t, strain, pos); });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("copy_params") {
  EncoderConfig cfg;
  Rng r1(6), r2(7);
  VisionEncoder a(cfg, r1, "cam0");
  VisionEncoder b(cfg, r2, "cam1");
  Rng data_rng(8);
  Image img = random_image(data_rng);
  CHECK(a.encode_value(img) != b.encode_value(img));
  copy_params(a.params(), b.params());
  CHECK(a.encode_value(img) == b.encode_value(img));
}
