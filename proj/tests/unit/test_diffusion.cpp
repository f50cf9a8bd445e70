#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "repaintlab/diffusion/ddpm.hpp"
#include "repaintlab/error.hpp"

using namespace repaintlab;
using namespace repaintlab::diffusion;
using testing::micro_config;

namespace {

nd::NdArray<double> uniform_image(nd::Shape shape, Rng& rng) {
  nd::NdArray<double> a(std::move(shape));
  for (auto& v : a.span()) v = rng.uniform(-1.0, 1.0);
  return a;
}

template <typename T>
nd::NdArray<T> normal_array(nd::Shape shape, Rng& rng) {
  nd::NdArray<T> a(std::move(shape));
  rng.fill_normal(a.span());
  return a;
}

nd::NdArray<float> texture_batch(const denoiser::DenoiserConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  nd::NdArray<float> x({n, c.in_channels, c.input_size, c.input_size});
  for (std::size_t b = 0; b < n; ++b) {
    const double phase = rng.uniform(0, 6.28);
    for (std::size_t i = 0; i < c.input_size * c.input_size; ++i)
      x[b * c.input_size * c.input_size + i] = static_cast<float>(0.8 * std::sin(0.9 * static_cast<double>(i) + phase));
  }
  return x;
}

}  // namespace

TEST_CASE("four-step cosine betas match a high-precision evaluation") {
  // 40-digit evaluation of min(1 - f(t)/f(t-1), 0.999)
  const double expected[] = {0.15298783867309526554, 0.41695808751199435053, 0.70785871239716355952, 0.999};
  const auto s = cosine_schedule(4);
  REQUIRE(s.beta.size() == 5);
  CHECK(s.beta[0] == 0.0);
  for (int t = 1; t <= 4; ++t) CHECK(std::abs(s.beta[t] - expected[t - 1]) < 1e-12);
}

TEST_CASE("schedule invariants hold for several lengths") {
  for (int T : {1, 4, 64, 256}) {
    const auto s = cosine_schedule(T);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.posterior_variance[1] == 0.0);
    bool ok = true;
    for (int t = 1; t <= T; ++t) {
      ok = ok && s.beta[t] > 0 && s.beta[t] <= kMaxBeta;
      ok = ok && s.alpha_bar[t] < s.alpha_bar[t - 1];
      ok = ok && s.posterior_variance[t] >= 0 && s.posterior_variance[t] <= s.beta[t];
      ok = ok && std::abs(s.alpha[t] - (1 - s.beta[t])) < 1e-15;
    }
    CHECK(ok);
  }
  CHECK(cosine_schedule(256).alpha_bar[256] < 1e-3);
  CHECK_THROWS_AS(cosine_schedule(0), ConfigError);
}

TEST_CASE("iterated forward kernel matches the closed form in mean and variance") {
  const int T = 64;
  const auto s = cosine_schedule(T);
  const std::size_t n = 10000;
  const double x0_value = 0.6;
  for (int t : {1, T / 2, T}) {
    Rng rng(100 + t);
    nd::NdArray<double> x({n}, x0_value);
    for (int k = 1; k <= t; ++k) x = forward_step(s, x, k, normal_array<double>({n}, rng));
    double mean = 0, var = 0;
    for (const auto v : x.span()) mean += v;
    mean /= n;
    for (const auto v : x.span()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    const double want_mean = std::sqrt(s.alpha_bar[t]) * x0_value;
    const double want_var = 1 - s.alpha_bar[t];
    INFO("t = " << t);
    CHECK(std::abs(mean - want_mean) < 3 * std::sqrt(want_var / n));
    CHECK(std::abs(var - want_var) < 3 * want_var * std::sqrt(2.0 / (n - 1)));

    // the closed form itself, drawn once
    const auto direct = q_sample(s, nd::NdArray<double>({n}, x0_value), t, normal_array<double>({n}, rng));
    double dmean = 0;
    for (const auto v : direct.span()) dmean += v;
    dmean /= n;
    CHECK(std::abs(dmean - want_mean) < 3 * std::sqrt(want_var / n));
  }
}

TEST_CASE("q_sample rejects timesteps outside the schedule and mismatched noise") {
  const auto s = cosine_schedule(8);
  const nd::NdArray<float> x({1, 1, 2, 2}), noise({1, 1, 2, 2});
  CHECK_THROWS_AS(q_sample(s, x, 0, noise), Error);
  CHECK_THROWS_AS(q_sample(s, x, 9, noise), Error);
  CHECK_THROWS_AS(q_sample(s, x, 1, nd::NdArray<float>({1, 1, 2, 3})), ShapeError);
  const std::vector<int> two{1, 2};
  CHECK_THROWS_AS(q_sample(s, x, std::span<const int>(two), noise), ShapeError);
}

TEST_CASE("per-sample q_sample agrees with the single-timestep form") {
  const auto s = cosine_schedule(16);
  Rng rng(3);
  const auto x0 = uniform_image({3, 1, 4, 4}, rng);
  const auto noise = normal_array<double>({3, 1, 4, 4}, rng);
  const std::vector<int> t{1, 9, 16};
  const auto batched = q_sample(s, x0, std::span<const int>(t), noise);
  for (std::size_t n = 0; n < 3; ++n) {
    nd::NdArray<double> a({1, 1, 4, 4}), e({1, 1, 4, 4});
    std::copy_n(x0.data() + n * 16, 16, a.data());
    std::copy_n(noise.data() + n * 16, 16, e.data());
    const auto single = q_sample(s, a, t[n], e);
    CHECK(std::equal(single.span().begin(), single.span().end(), batched.data() + n * 16));
  }
}

TEST_CASE("variance interpolation endpoints are exact") {
  const auto s = cosine_schedule(64);
  for (int t = 2; t <= 64; ++t) {
    CHECK(interpolated_variance(s, t, 0.0) == s.posterior_variance[t]);
    CHECK(interpolated_variance(s, t, 1.0) == s.beta[t]);
    const double mid = interpolated_variance(s, t, 0.5);
    CHECK(mid == doctest::Approx(std::sqrt(s.beta[t] * s.posterior_variance[t])).epsilon(1e-12));
  }
  // t = 1 borrows the t = 2 posterior variance at v = 0
  CHECK(interpolated_variance(s, 1, 0.0) == doctest::Approx(s.posterior_variance[2]).epsilon(1e-14));
}

TEST_CASE("oracle noise recovers the analytic posterior mean") {
  const int T = 64;
  const auto s = cosine_schedule(T);
  Rng rng(13);
  const nd::Shape shape{4, 1, 8, 8};
  const auto x0 = uniform_image(shape, rng);
  double worst = 0;
  for (int t = 1; t <= T; ++t) {
    const auto noise = normal_array<double>(shape, rng);
    const auto x_t = q_sample(s, x0, t, noise);
    const auto m = reverse_moments(s, x_t, t, noise, nd::NdArray<double>(shape));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double analytic = s.posterior_coef_x0[t] * x0[i] + s.posterior_coef_xt[t] * x_t[i];
      worst = std::max(worst, std::abs(m.mean[i] - analytic));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("oracle noise with posterior variance gives zero KL") {
  const auto s = cosine_schedule(64);
  Rng rng(17);
  const nd::Shape shape{2, 1, 8, 8};
  const auto x0 = uniform_image(shape, rng);
  for (int t : {1, 2, 30, 64}) {
    const auto noise = normal_array<double>(shape, rng);
    const auto x_t = q_sample(s, x0, t, noise);
    const auto m = reverse_moments(s, x_t, t, noise, nd::NdArray<double>(shape));
    const auto kl = gaussian_kl_bits(s, x0, x_t, t, m.mean, m.log_variance);
    double worst = 0;
    for (const auto v : kl.span()) worst = std::max(worst, std::abs(v));
    INFO("t = " << t);
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("clipped reconstruction stays in the unit interval") {
  const auto s = cosine_schedule(16);
  nd::NdArray<double> x_t({1, 1, 1, 3});
  x_t[0] = 5;
  x_t[1] = -5;
  x_t[2] = 0.1;
  const auto m = reverse_moments(s, x_t, 16, nd::NdArray<double>({1, 1, 1, 3}), nd::NdArray<double>({1, 1, 1, 3}));
  CHECK(m.x0_hat[0] == 1.0);
  CHECK(m.x0_hat[1] == -1.0);
  CHECK(std::abs(m.x0_hat[2]) <= 1.0);
}

TEST_CASE("zero-initialized network has unit simple loss") {
  const auto c = micro_config();
  const auto s = cosine_schedule(static_cast<int>(c.timesteps));
  const auto params = denoiser::build<float>(c, 1);
  const auto x0 = texture_batch(c, 16, 5);
  double total_simple = 0;
  const int repeats = 20;
  for (int r = 0; r < repeats; ++r) {
    Rng rng(200 + r);
    nd::Tape<float> tape(false);
    total_simple += loss(tape, s, c, params, x0, 0.001, rng).simple;
  }
  const double n = static_cast<double>(repeats * x0.size());
  CHECK(std::abs(total_simple / repeats - 1.0) < 3 * std::sqrt(2.0 / n));
}

TEST_CASE("hybrid loss is non-negative across seeds") {
  const auto c = micro_config();
  const auto s = cosine_schedule(static_cast<int>(c.timesteps));
  auto params = denoiser::build<float>(c, 2);
  testing::scramble(params, 3, 0.2);
  const auto x0 = texture_batch(c, 4, 6);
  bool ok = true;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    nd::Tape<float> tape(false);
    const auto l = loss(tape, s, c, params, x0, 0.001, rng);
    ok = ok && l.simple >= 0 && l.vlb >= 0 && l.total.value()[0] >= 0;
  }
  CHECK(ok);
}

TEST_CASE("variance term does not train the mean") {
  // out.conv.b[0] feeds only eps, out.conv.b[1] only the variance head. With
  // the mean held constant inside the KL, the eps bias must see the simple loss
  // alone while the variance bias sees the full objective.
  const auto c = micro_config();
  const auto s = cosine_schedule(static_cast<int>(c.timesteps));
  auto params = denoiser::build<float>(c, 4);
  testing::scramble(params, 8, 0.2);
  const auto x0 = texture_batch(c, 4, 9);
  const double lambda = 1.0;
  const auto eval = [&](const denoiser::DenoiserParams<float>& p) {
    Rng rng(77);
    nd::Tape<float> tape(false);
    const auto l = loss(tape, s, c, p, x0, lambda, rng);
    return std::pair{l.simple, static_cast<double>(l.total.value()[0])};
  };
  Rng rng(77);
  nd::Tape<float> tape;
  const auto l = loss(tape, s, c, params, x0, lambda, rng);
  const auto grads = nd::backprop(l.total, {"out.conv.b"});
  const auto& g = grads.at("out.conv.b");
  const float h = 1e-2f;
  for (std::size_t k = 0; k < 2; ++k) {
    auto plus = params, minus = params;
    plus.at("out.conv.b")[k] += h;
    minus.at("out.conv.b")[k] -= h;
    const auto [sp, tp] = eval(plus);
    const auto [sm, tm] = eval(minus);
    const double fd = k == 0 ? (sp - sm) / (2 * h) : (tp - tm) / (2 * h);
    INFO("bias " << k << " analytic " << g[k] << " numeric " << fd);
    CHECK(std::abs(g[k] - fd) <= 2e-2 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("zero training steps return the initialization") {
  const auto c = micro_config();
  TrainConfig tc;
  tc.steps = 0;
  tc.seed = 4;
  const auto result = train(tc, c, texture_batch(c, 3, 1));
  CHECK(result.ema == result.params);
  CHECK(result.ema == denoiser::build<float>(c, Rng(4).fork("denoiser/init").seed()));
  CHECK(result.loss_simple.empty());
}

TEST_CASE("training is deterministic and reports through hooks") {
  const auto c = micro_config();
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 3;
  tc.log_every = 2;
  tc.checkpoint_every = 3;
  tc.seed = 11;
  const auto data = texture_batch(c, 5, 2);
  std::vector<TrainRecord> logs;
  std::vector<std::size_t> checkpoints;
  TrainHooks hooks;
  hooks.on_log = [&](const TrainRecord& r) { logs.push_back(r); };
  hooks.on_checkpoint = [&](std::size_t step, const denoiser::DenoiserParams<float>&) { checkpoints.push_back(step); };
  const auto a = train(tc, c, data, hooks);
  const auto b = train(tc, c, data);
  CHECK(a.params == b.params);
  CHECK(a.ema == b.ema);
  CHECK(a.loss_simple == b.loss_simple);
  REQUIRE(logs.size() == 3);
  CHECK(logs[2].step == 6);
  CHECK(logs[0].loss_simple == doctest::Approx((a.loss_simple[0] + a.loss_simple[1]) / 2));
  CHECK(logs[0].learning_rate == tc.learning_rate);
  CHECK(checkpoints == std::vector<std::size_t>{3, 6});
  CHECK_FALSE(a.params == a.ema);
  tc.seed = 12;
  CHECK_FALSE(train(tc, c, data).params == a.params);
}

TEST_CASE("non-finite training data aborts") {
  const auto c = micro_config();
  auto data = texture_batch(c, 2, 1);
  for (auto& v : data.span()) v = NAN;
  TrainConfig tc;
  tc.steps = 2;
  CHECK_THROWS_AS(train(tc, c, data), NonFiniteError);
  CHECK_THROWS_AS(train(tc, c, nd::NdArray<float>({2, 1, 4, 4})), ShapeError);
}

TEST_CASE("non-finite network output names the timestep") {
  const auto c = micro_config();
  const auto s = cosine_schedule(static_cast<int>(c.timesteps));
  denoiser::Checkpoint model{c, denoiser::build<float>(c, 1)};
  model.params.at("out.conv.b")[0] = NAN;
  std::vector<Rng> rngs{Rng(1)};
  try {
    reverse_step(s, model, texture_batch(c, 1, 1), 3, rngs);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("t=3") != std::string::npos);
  }
}

TEST_CASE("generated samples are bounded, seed dependent and batch invariant") {
  const auto c = micro_config();
  const auto s = cosine_schedule(static_cast<int>(c.timesteps));
  denoiser::Checkpoint model{c, denoiser::build<float>(c, 3)};
  testing::scramble(model.params, 4, 0.1);
  const auto a = generate(s, model, 3, Rng(5), 3);
  CHECK(a.shape() == nd::Shape{3, 1, c.input_size, c.input_size});
  bool bounded = true;
  for (const auto v : a.span()) bounded = bounded && v >= -1.0f && v <= 1.0f;
  CHECK(bounded);
  const auto split = generate(s, model, 3, Rng(5), 1);
  CHECK(a == split);
  const auto other = generate(s, model, 3, Rng(6), 3);
  double dist = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dist += (a[i] - other[i]) * (a[i] - other[i]);
  CHECK(dist > 0);
}

TEST_CASE("train config json") {
  TrainConfig tc;
  tc.steps = 12;
  tc.seed = 99;
  const auto back = TrainConfig::from_json(tc.to_json());
  CHECK(back.steps == 12);
  CHECK(back.seed == 99);
  CHECK(back.to_json() == tc.to_json());
  auto j = tc.to_json();
  j["learning_rat"] = 1;
  try {
    TrainConfig::from_json(j, "/train");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.pointer() == "/train/learning_rat");
  }
  j = tc.to_json();
  j["vlb_weight"] = 2.0;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
}

TEST_CASE("median of odd and even sequences") {
  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK_THROWS_AS(median({}), Error);
}
