#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "../support/fixtures.hpp"
#include "../support/gradcheck.hpp"
#include "repaintlab/denoiser/unet.hpp"
#include "repaintlab/error.hpp"

using namespace repaintlab;
using namespace repaintlab::denoiser;
using testing::micro_config;

namespace {

std::size_t count_blocks(const DenoiserParams<float>& params, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& [name, _] : params)
    if (name.rfind(prefix, 0) == 0 && name.find(".res.conv1.w") != std::string::npos) ++n;
  return n;
}

std::size_t enumerate(const DenoiserParams<float>& params) {
  std::size_t total = 0;
  for (const auto& [_, a] : params) total += a.size();
  return total;
}

nd::NdArray<float> ramp_input(const DenoiserConfig& c, std::size_t n) {
  nd::NdArray<float> x({n, c.in_channels, c.input_size, c.input_size});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(std::sin(0.37 * static_cast<double>(i)));
  return x;
}

}  // namespace

TEST_CASE("default config has seven encoder and seven decoder residual blocks") {
  const DenoiserConfig c;
  CHECK(c.encoder_blocks() == 7);
  CHECK(c.decoder_blocks() == 7);
  const auto params = build<float>(c, 1);
  CHECK(count_blocks(params, "enc.") == 7);
  CHECK(count_blocks(params, "dec.") == 7);
  // attention appears at 32, 16 and 8 only
  CHECK(params.count("enc.0.0.attn.qkv.w") == 0);
  CHECK(params.count("enc.1.0.attn.qkv.w") == 1);
  CHECK(params.count("enc.3.0.attn.qkv.w") == 1);
  CHECK(params.count("dec.2.1.attn.qkv.w") == 1);
}

TEST_CASE("parameter count formula agrees with enumerated layer shapes") {
  std::vector<DenoiserConfig> configs{DenoiserConfig{}, micro_config()};
  DenoiserConfig wide;
  wide.base_channels = 8;
  wide.channel_mult = {1, 3, 4};
  wide.res_blocks_encoder = {1, 3, 2};
  wide.attention_resolutions = {16};
  wide.input_size = 32;
  configs.push_back(wide);
  for (const auto& c : configs) CHECK(parameter_count(c) == enumerate(build<float>(c, 3)));
}

TEST_CASE("build is deterministic in the seed") {
  const auto c = micro_config();
  CHECK(build<float>(c, 9) == build<float>(c, 9));
  CHECK_FALSE(build<float>(c, 9) == build<float>(c, 10));
}

TEST_CASE("fresh model predicts zero noise and half variance") {
  for (const auto& c : {micro_config(), DenoiserConfig{}}) {
    const auto params = build<float>(c, 4);
    const std::vector<int> t{1, static_cast<int>(c.timesteps)};
    const auto out = predict(c, params, ramp_input(c, 2), t);
    CHECK(out.eps.shape() == nd::Shape{2, 1, c.input_size, c.input_size});
    bool exact = true;
    for (std::size_t i = 0; i < out.eps.size(); ++i) exact = exact && out.eps[i] == 0.0f && out.variance[i] == 0.5f;
    CHECK(exact);
  }
}

TEST_CASE("identical batch elements give identical outputs") {
  const auto c = micro_config();
  auto params = build<float>(c, 2);
  testing::scramble(params, 21);
  auto x = ramp_input(c, 1);
  nd::NdArray<float> batch({2, 1, c.input_size, c.input_size});
  for (std::size_t i = 0; i < x.size(); ++i) batch[i] = batch[x.size() + i] = x[i];
  const std::vector<int> t{5, 5};
  const auto out = predict(c, params, batch, t);
  bool same = true;
  for (std::size_t i = 0; i < x.size(); ++i)
    same = same && out.eps[i] == out.eps[x.size() + i] && out.variance[i] == out.variance[x.size() + i];
  CHECK(same);
  const std::vector<int> t1{5};
  const auto single = predict(c, params, x, t1);
  CHECK(std::equal(single.eps.span().begin(), single.eps.span().end(), out.eps.span().begin()));
}

TEST_CASE("variance head stays inside the unit interval") {
  const auto c = micro_config();
  auto params = build<float>(c, 2);
  testing::scramble(params, 5, 1.0);
  const std::vector<int> t{3};
  const auto out = predict(c, params, ramp_input(c, 1), t);
  for (const auto v : out.variance.span()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("timestep outside the schedule is rejected") {
  const auto c = micro_config();
  const auto params = build<float>(c, 1);
  const std::vector<int> zero{0}, over{static_cast<int>(c.timesteps) + 1};
  CHECK_THROWS_AS(predict(c, params, ramp_input(c, 1), zero), Error);
  CHECK_THROWS_AS(predict(c, params, ramp_input(c, 1), over), Error);
}

TEST_CASE("unreachable attention resolution is a config error") {
  auto c = micro_config();
  c.attention_resolutions = {3};
  CHECK_THROWS_AS(build<float>(c, 1), ConfigError);
  c.attention_resolutions = {2};  // only 8 and 4 exist
  CHECK_THROWS_AS(build<float>(c, 1), ConfigError);
  auto d = micro_config();
  d.input_size = 12;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d.input_size = 2;  // needs at least 2^levels = 4
  CHECK_THROWS_AS(d.validate(), ConfigError);
  auto e = micro_config();
  e.res_blocks_encoder = {1};
  try {
    e.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& err) {
    CHECK(err.pointer() == "/res_blocks_encoder");
  }
}

TEST_CASE("timestep embedding values") {
  const auto zero = timestep_embedding(0, 16, 64);
  for (std::size_t i = 0; i < 16; i += 2) {
    CHECK(zero[i] == 0.0);
    CHECK(zero[i + 1] == 1.0);
  }
  const auto one = timestep_embedding(1, 2, 64);
  CHECK(one[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(one[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  // slowest frequency is 1/10000
  const auto e = timestep_embedding(3, 8, 64);
  CHECK(e[6] == doctest::Approx(std::sin(3e-4)).epsilon(1e-12));
  CHECK_THROWS_AS(timestep_embedding(1, 3, 64), Error);
}

TEST_CASE("timestep embeddings are pairwise distinct over the schedule") {
  const int steps = 64;
  std::vector<std::vector<double>> all;
  for (int t = 1; t <= steps; ++t) all.push_back(timestep_embedding(t, 128, steps));
  double closest = INFINITY;
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      double d = 0;
      for (std::size_t i = 0; i < 128; ++i) d += (all[a][i] - all[b][i]) * (all[a][i] - all[b][i]);
      closest = std::min(closest, d);
    }
  CHECK(closest > 1e-3);
}

TEST_CASE("output spatial size equals input size across configs") {
  std::vector<DenoiserConfig> configs{micro_config()};
  DenoiserConfig three = micro_config();
  three.channel_mult = {1, 1, 2};
  three.res_blocks_encoder = {2, 1, 1};
  three.attention_resolutions = {2, 8};
  configs.push_back(three);
  DenoiserConfig big = micro_config();
  big.input_size = 16;
  big.attention_resolutions = {};
  configs.push_back(big);
  DenoiserConfig single = micro_config();
  single.channel_mult = {2};
  single.res_blocks_encoder = {1};
  single.attention_resolutions = {8};
  configs.push_back(single);
  for (const auto& c : configs) {
    auto params = build<float>(c, 6);
    testing::scramble(params, 7);
    const std::vector<int> t{1, 2, 3};
    const auto out = predict(c, params, ramp_input(c, 3), t);
    CHECK(out.eps.shape() == nd::Shape{3, 1, c.input_size, c.input_size});
    CHECK(out.variance.shape() == out.eps.shape());
  }
}

TEST_CASE("micro config forward and backward pass a finite-difference check") {
  const auto c = micro_config();
  auto params = build<double>(c, 8);
  testing::scramble(params, 31, 0.4);
  Rng rng(41);
  auto x = testing::random_array({2, 1, c.input_size, c.input_size}, rng);
  auto target = testing::random_array({2, 1, c.input_size, c.input_size}, rng);
  const std::vector<int> t{2, 11};
  const testing::LossBuilder loss = [&](nd::Tape<double>& tape, const nd::ParamMap<double>& p) {
    const auto pred = forward(tape, c, p, tape.constant(x), t);
    return nd::ops::add(nd::ops::mse(pred.eps, target), nd::ops::mean(nd::ops::mul(pred.variance, pred.variance)));
  };
  const auto result = testing::gradient_check(loss, params);
  INFO("worst parameter: " << result.worst_parameter);
  CHECK(result.worst_relative_error < 1e-3);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "repaintlab_ckpt_roundtrip";
  std::filesystem::remove_all(dir);
  Checkpoint ck{micro_config(), build<float>(micro_config(), 12)};
  testing::scramble(ck.params, 13);
  save_checkpoint(dir, ck);
  const auto back = load_checkpoint(dir);
  CHECK(back.config == ck.config);
  CHECK(back.params == ck.params);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint with a wrong shape is rejected") {
  const auto dir = std::filesystem::temp_directory_path() / "repaintlab_ckpt_badshape";
  std::filesystem::remove_all(dir);
  Checkpoint ck{micro_config(), build<float>(micro_config(), 12)};
  ck.params.at("in.w") = nd::NdArray<float>({1, 1, 3, 3});
  save_checkpoint(dir, ck);
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config json rejects unknown keys") {
  auto j = micro_config().to_json();
  CHECK(DenoiserConfig::from_json(j) == micro_config());
  j["chanels"] = 3;
  try {
    DenoiserConfig::from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.pointer() == "/chanels");
  }
}

TEST_CASE("golden output of the frozen micro checkpoint") {
  const auto dir = testing::fixture_dir() / "denoiser_micro";
  const auto golden = dir / "output.fnv1a";
  if (testing::regenerating_fixtures()) {
    Checkpoint ck{micro_config(), build<float>(micro_config(), 2024)};
    testing::scramble(ck.params, 2025, 0.2);
    save_checkpoint(dir, ck);
  }
  const auto ck = load_checkpoint(dir);
  const std::vector<int> t{1, 7, 16};
  const auto out = predict(ck.config, ck.params, ramp_input(ck.config, 3), t);
  auto h = testing::fnv1a(out.eps.data(), out.eps.size() * sizeof(float));
  h = testing::fnv1a(out.variance.data(), out.variance.size() * sizeof(float), h);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  if (testing::regenerating_fixtures()) std::ofstream(golden) << hex << "\n";
  std::string frozen;
  std::ifstream(golden) >> frozen;
  CHECK(frozen == std::string(hex));
}
