#include "repaintlab/denoiser/unet.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "repaintlab/error.hpp"
#include "repaintlab/ndcore/ndt.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::denoiser {

namespace {

constexpr double kNormEps = 1e-5;

std::size_t groups_for(const DenoiserConfig& config, std::size_t channels) {
  return std::gcd(config.norm_groups, channels);
}

enum class Init { uniform, zero, one };

struct ParamSpec {
  std::string name;
  nd::Shape shape;
  Init init;
};

// Walks the architecture once and lists every parameter in construction order.
class Layout {
 public:
  explicit Layout(const DenoiserConfig& c) : c_(c) {
    const std::size_t temb = c.time_embed_dim;
    add("time.fc1.w", {temb, c.base_channels}, Init::uniform);
    add("time.fc1.b", {temb}, Init::zero);
    add("time.fc2.w", {temb, temb}, Init::uniform);
    add("time.fc2.b", {temb}, Init::zero);
    add("in.w", {c.channels(0), c.in_channels, 3, 3}, Init::uniform);
    add("in.b", {c.channels(0)}, Init::zero);

    std::vector<std::size_t> skips;
    std::size_t ch = c.channels(0);
    for (std::size_t l = 0; l < c.levels(); ++l) {
      for (std::size_t i = 0; i < c.res_blocks_encoder[l]; ++i) {
        const std::string p = "enc." + std::to_string(l) + "." + std::to_string(i);
        res_block(p + ".res", ch, c.channels(l));
        ch = c.channels(l);
        if (c.attention_resolutions.count(c.resolution(l))) attention(p + ".attn", ch);
        skips.push_back(ch);
      }
      if (l + 1 < c.levels()) {
        add("down." + std::to_string(l) + ".w", {ch, ch, 3, 3}, Init::uniform);
        add("down." + std::to_string(l) + ".b", {ch}, Init::zero);
      }
    }
    for (std::size_t l = c.levels(); l-- > 0;) {
      for (std::size_t i = 0; i < c.res_blocks_encoder[l]; ++i) {
        const std::string p = "dec." + std::to_string(l) + "." + std::to_string(i);
        const std::size_t skip = skips.back();
        skips.pop_back();
        res_block(p + ".res", ch + skip, c.channels(l));
        ch = c.channels(l);
        if (c.attention_resolutions.count(c.resolution(l))) attention(p + ".attn", ch);
      }
      if (l > 0) {
        add("up." + std::to_string(l) + ".w", {ch, ch, 3, 3}, Init::uniform);
        add("up." + std::to_string(l) + ".b", {ch}, Init::zero);
      }
    }
    add("out.norm.gain", {ch}, Init::one);
    add("out.norm.bias", {ch}, Init::zero);
    add("out.conv.w", {c.out_channels(), ch, 3, 3}, Init::zero);
    add("out.conv.b", {c.out_channels()}, Init::zero);
  }

  const std::vector<ParamSpec>& specs() const noexcept { return specs_; }

 private:
  void add(std::string name, nd::Shape shape, Init init) { specs_.push_back({std::move(name), std::move(shape), init}); }

  void res_block(const std::string& p, std::size_t cin, std::size_t cout) {
    add(p + ".norm1.gain", {cin}, Init::one);
    add(p + ".norm1.bias", {cin}, Init::zero);
    add(p + ".conv1.w", {cout, cin, 3, 3}, Init::uniform);
    add(p + ".conv1.b", {cout}, Init::zero);
    add(p + ".temb.w", {cout, c_.time_embed_dim}, Init::uniform);
    add(p + ".temb.b", {cout}, Init::zero);
    add(p + ".norm2.gain", {cout}, Init::one);
    add(p + ".norm2.bias", {cout}, Init::zero);
    add(p + ".conv2.w", {cout, cout, 3, 3}, Init::zero);
    add(p + ".conv2.b", {cout}, Init::zero);
    if (cin != cout) {
      add(p + ".skip.w", {cout, cin, 1, 1}, Init::uniform);
      add(p + ".skip.b", {cout}, Init::zero);
    }
  }

  void attention(const std::string& p, std::size_t ch) {
    add(p + ".norm.gain", {ch}, Init::one);
    add(p + ".norm.bias", {ch}, Init::zero);
    add(p + ".qkv.w", {3 * ch, ch}, Init::uniform);
    add(p + ".qkv.b", {3 * ch}, Init::zero);
    add(p + ".out.w", {ch, ch}, Init::zero);
    add(p + ".out.b", {ch}, Init::zero);
  }

  const DenoiserConfig& c_;
  std::vector<ParamSpec> specs_;
};

template <typename T>
class Net {
 public:
  Net(nd::Tape<T>& tape, const DenoiserConfig& c, const DenoiserParams<T>& params)
      : tape_(tape), c_(c), params_(params) {}

  nd::Var<T> p(const std::string& name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw DataError("denoiser parameter '" + name + "' is missing");
    return tape_.parameter(name, it->second);
  }

  nd::Var<T> conv(const std::string& prefix, nd::Var<T> x, std::size_t stride = 1) {
    const auto b = p(prefix + ".b");
    const auto w = p(prefix + ".w");
    const std::size_t pad = w.shape()[2] / 2;
    return nd::ops::conv2d(x, w, &b, stride, pad);
  }

  nd::Var<T> norm(const std::string& prefix, nd::Var<T> x) {
    return nd::ops::group_norm(x, groups_for(c_, x.shape()[1]), p(prefix + ".gain"), p(prefix + ".bias"),
                               static_cast<T>(kNormEps));
  }

  nd::Var<T> res_block(const std::string& prefix, nd::Var<T> x, nd::Var<T> temb_act) {
    using namespace nd::ops;
    auto h = conv(prefix + ".conv1", silu(norm(prefix + ".norm1", x)));
    const auto tb = p(prefix + ".temb.b");
    h = add_channel(h, linear(temb_act, p(prefix + ".temb.w"), &tb));
    h = conv(prefix + ".conv2", silu(norm(prefix + ".norm2", h)));
    const auto skip = params_.count(prefix + ".skip.w") ? conv(prefix + ".skip", x) : x;
    return add(skip, h);
  }

  nd::Var<T> attention(const std::string& prefix, nd::Var<T> x) {
    const auto h = norm(prefix + ".norm", x);
    const auto out = nd::ops::self_attention(h, p(prefix + ".qkv.w"), p(prefix + ".qkv.b"), p(prefix + ".out.w"),
                                             p(prefix + ".out.b"), c_.attention_heads);
    return nd::ops::add(x, out);
  }

  nd::Var<T> run(nd::Var<T> x, const nd::NdArray<T>& sinusoid) {
    using namespace nd::ops;
    const auto b1 = p("time.fc1.b");
    const auto b2 = p("time.fc2.b");
    auto temb = linear(tape_.constant(sinusoid), p("time.fc1.w"), &b1);
    temb = linear(silu(temb), p("time.fc2.w"), &b2);
    const auto temb_act = silu(temb);

    auto h = conv("in", x);
    std::vector<nd::Var<T>> skips;
    for (std::size_t l = 0; l < c_.levels(); ++l) {
      for (std::size_t i = 0; i < c_.res_blocks_encoder[l]; ++i) {
        const std::string pre = "enc." + std::to_string(l) + "." + std::to_string(i);
        h = res_block(pre + ".res", h, temb_act);
        if (c_.attention_resolutions.count(c_.resolution(l))) h = attention(pre + ".attn", h);
        skips.push_back(h);
      }
      if (l + 1 < c_.levels()) h = conv("down." + std::to_string(l), h, 2);
    }
    for (std::size_t l = c_.levels(); l-- > 0;) {
      for (std::size_t i = 0; i < c_.res_blocks_encoder[l]; ++i) {
        const std::string pre = "dec." + std::to_string(l) + "." + std::to_string(i);
        h = concat_channels(h, skips.back());
        skips.pop_back();
        h = res_block(pre + ".res", h, temb_act);
        if (c_.attention_resolutions.count(c_.resolution(l))) h = attention(pre + ".attn", h);
      }
      if (l > 0) h = conv("up." + std::to_string(l), upsample_nearest2x(h));
    }
    return conv("out.conv", silu(norm("out.norm", h)));
  }

 private:
  nd::Tape<T>& tape_;
  const DenoiserConfig& c_;
  const DenoiserParams<T>& params_;
};

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

std::size_t DenoiserConfig::encoder_blocks() const {
  return std::accumulate(res_blocks_encoder.begin(), res_blocks_encoder.end(), std::size_t{0});
}

std::size_t DenoiserConfig::decoder_blocks() const { return encoder_blocks(); }

void DenoiserConfig::validate() const {
  if (channel_mult.empty()) throw ConfigError("/channel_mult", "at least one level is required");
  if (res_blocks_encoder.size() != channel_mult.size())
    throw ConfigError("/res_blocks_encoder", "needs one entry per level (" + std::to_string(levels()) + ")");
  for (std::size_t l = 0; l < levels(); ++l) {
    if (channel_mult[l] == 0) throw ConfigError("/channel_mult/" + std::to_string(l), "must be positive");
    if (res_blocks_encoder[l] == 0) throw ConfigError("/res_blocks_encoder/" + std::to_string(l), "must be positive");
  }
  if (in_channels == 0) throw ConfigError("/in_channels", "must be positive");
  if (base_channels == 0 || base_channels % 2 != 0)
    throw ConfigError("/base_channels", "must be a positive even number");
  if (time_embed_dim == 0) throw ConfigError("/time_embed_dim", "must be positive");
  if (norm_groups == 0) throw ConfigError("/norm_groups", "must be positive");
  if (attention_heads == 0) throw ConfigError("/attention_heads", "must be positive");
  if (timesteps == 0) throw ConfigError("/timesteps", "must be positive");
  if (!is_power_of_two(input_size) || input_size < (std::size_t{1} << levels()))
    throw ConfigError("/input_size", "must be a power of two and at least 2^levels = " +
                                         std::to_string(std::size_t{1} << levels()));
  for (const auto r : attention_resolutions) {
    bool found = false;
    for (std::size_t l = 0; l < levels(); ++l) {
      if (resolution(l) != r) continue;
      found = true;
      if (channels(l) % attention_heads != 0)
        throw ConfigError("/attention_heads", "does not divide the " + std::to_string(channels(l)) +
                                                  " channels at resolution " + std::to_string(r));
    }
    if (!found)
      throw ConfigError("/attention_resolutions",
                        "resolution " + std::to_string(r) + " is not produced by the level structure");
  }
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"input_size", input_size},
          {"in_channels", in_channels},
          {"base_channels", base_channels},
          {"channel_mult", channel_mult},
          {"res_blocks_encoder", res_blocks_encoder},
          {"attention_resolutions", attention_resolutions},
          {"time_embed_dim", time_embed_dim},
          {"norm_groups", norm_groups},
          {"attention_heads", attention_heads},
          {"timesteps", timesteps},
          {"out_channels", out_channels()}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("", "denoiser config must be a JSON object");
  DenoiserConfig c;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = "/" + key;
    try {
      if (key == "input_size") c.input_size = value.get<std::size_t>();
      else if (key == "in_channels") c.in_channels = value.get<std::size_t>();
      else if (key == "base_channels") c.base_channels = value.get<std::size_t>();
      else if (key == "channel_mult") c.channel_mult = value.get<std::vector<std::size_t>>();
      else if (key == "res_blocks_encoder") c.res_blocks_encoder = value.get<std::vector<std::size_t>>();
      else if (key == "attention_resolutions") c.attention_resolutions = value.get<std::set<std::size_t>>();
      else if (key == "time_embed_dim") c.time_embed_dim = value.get<std::size_t>();
      else if (key == "norm_groups") c.norm_groups = value.get<std::size_t>();
      else if (key == "attention_heads") c.attention_heads = value.get<std::size_t>();
      else if (key == "timesteps") c.timesteps = value.get<std::size_t>();
      else if (key == "out_channels") continue;  // derived, checked below
      else throw ConfigError(ptr, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ptr, e.what());
    }
  }
  if (j.contains("out_channels") && j["out_channels"] != c.out_channels())
    throw ConfigError("/out_channels", "must equal 2 * in_channels");
  c.validate();
  return c;
}

template <typename T>
DenoiserParams<T> build(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  DenoiserParams<T> params;
  const Layout layout(config);
  for (const auto& spec : layout.specs()) {
    nd::NdArray<T> a(spec.shape);
    if (spec.init == Init::one) {
      a.fill(T(1));
    } else if (spec.init == Init::uniform) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < spec.shape.size(); ++d) fan_in *= spec.shape[d];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Rng rng = root.fork(spec.name);
      for (auto& v : a.span()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params.emplace(spec.name, std::move(a));
  }
  return params;
}

std::size_t parameter_count(const DenoiserConfig& c) {
  c.validate();
  const std::size_t e = c.time_embed_dim;
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; };
  auto res = [&](std::size_t cin, std::size_t cout) {
    return 2 * cin + conv(cin, cout, 3) + (cout * e + cout) + 2 * cout + conv(cout, cout, 3) +
           (cin != cout ? conv(cin, cout, 1) : 0);
  };
  auto attn = [](std::size_t ch) { return 2 * ch + 4 * ch * ch + 4 * ch; };

  std::size_t total = (e * c.base_channels + e) + (e * e + e) + conv(c.in_channels, c.channels(0), 3);
  std::vector<std::size_t> skips;
  std::size_t ch = c.channels(0);
  for (std::size_t l = 0; l < c.levels(); ++l) {
    const bool has_attn = c.attention_resolutions.count(c.resolution(l)) != 0;
    for (std::size_t i = 0; i < c.res_blocks_encoder[l]; ++i) {
      total += res(ch, c.channels(l)) + (has_attn ? attn(c.channels(l)) : 0);
      ch = c.channels(l);
      skips.push_back(ch);
    }
    if (l + 1 < c.levels()) total += conv(ch, ch, 3);
  }
  for (std::size_t l = c.levels(); l-- > 0;) {
    const bool has_attn = c.attention_resolutions.count(c.resolution(l)) != 0;
    for (std::size_t i = 0; i < c.res_blocks_encoder[l]; ++i) {
      total += res(ch + skips.back(), c.channels(l)) + (has_attn ? attn(c.channels(l)) : 0);
      skips.pop_back();
      ch = c.channels(l);
    }
    if (l > 0) total += conv(ch, ch, 3);
  }
  return total + 2 * ch + conv(ch, c.out_channels(), 3);
}

std::vector<double> timestep_embedding(int t, std::size_t dim, int /*steps*/) {
  if (dim == 0 || dim % 2 != 0) throw Error("timestep_embedding: dim must be a positive even number");
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = half == 1 ? 1.0 : std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half - 1));
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  return out;
}

template <typename T>
Prediction<T> forward(nd::Tape<T>& tape, const DenoiserConfig& config, const DenoiserParams<T>& params,
                      nd::Var<T> x_t, std::span<const int> timesteps) {
  const auto& xs = x_t.shape();
  if (xs.size() != 4) throw ShapeError("denoiser.forward", "rank", "expected [N,C,H,W], got " + nd::shape_str(xs));
  if (xs[1] != config.in_channels)
    throw ShapeError("denoiser.forward", "C", "expected " + std::to_string(config.in_channels) + " channels");
  if (xs[2] != config.input_size) throw ShapeError("denoiser.forward", "H", "expected " + std::to_string(config.input_size));
  if (xs[3] != config.input_size) throw ShapeError("denoiser.forward", "W", "expected " + std::to_string(config.input_size));
  if (timesteps.size() != xs[0])
    throw ShapeError("denoiser.forward", "N", "got " + std::to_string(timesteps.size()) + " timesteps for " +
                                                  std::to_string(xs[0]) + " samples");
  nd::require_finite(x_t.value(), "denoiser.forward input");

  nd::NdArray<T> sinusoid({xs[0], config.base_channels});
  for (std::size_t n = 0; n < xs[0]; ++n) {
    const int t = timesteps[n];
    if (t < 1 || static_cast<std::size_t>(t) > config.timesteps)
      throw Error("denoiser.forward: timestep " + std::to_string(t) + " outside [1, " +
                  std::to_string(config.timesteps) + "]");
    const auto e = timestep_embedding(t, config.base_channels, static_cast<int>(config.timesteps));
    for (std::size_t i = 0; i < e.size(); ++i) sinusoid[n * config.base_channels + i] = static_cast<T>(e[i]);
  }

  const auto out = Net<T>(tape, config, params).run(x_t, sinusoid);
  const std::size_t c = config.in_channels;
  return {nd::ops::channel_slice(out, 0, c), nd::ops::sigmoid(nd::ops::channel_slice(out, c, c))};
}

template <typename T>
PredictionValues<T> predict(const DenoiserConfig& config, const DenoiserParams<T>& params, const nd::NdArray<T>& x_t,
                            std::span<const int> timesteps) {
  nd::Tape<T> tape(false);
  const auto pred = forward(tape, config, params, tape.constant(x_t), timesteps);
  PredictionValues<T> out{pred.eps.value(), pred.variance.value()};
  if (!out.eps.all_finite() || !out.variance.all_finite())
    throw NonFiniteError("denoiser produced non-finite output");
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "config.json");
    if (!os) throw DataError("cannot write " + (dir / "config.json").string());
    os << checkpoint.config.to_json().dump(2) << "\n";
  }
  nd::save_param_bundle(dir / "params.ndt", checkpoint.params);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "config.json");
  if (!is) throw DataError("checkpoint " + dir.string() + " has no config.json");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint config.json is not valid JSON: " + std::string(e.what()));
  }
  Checkpoint ck{DenoiserConfig::from_json(j), nd::load_param_bundle<float>(dir / "params.ndt")};
  const Layout layout(ck.config);
  for (const auto& spec : layout.specs()) {
    const auto it = ck.params.find(spec.name);
    if (it == ck.params.end()) throw DataError("checkpoint is missing parameter '" + spec.name + "'");
    if (it->second.shape() != spec.shape)
      throw DataError("checkpoint parameter '" + spec.name + "' has shape " + nd::shape_str(it->second.shape()) +
                      ", expected " + nd::shape_str(spec.shape));
  }
  if (ck.params.size() != layout.specs().size())
    throw DataError("checkpoint has parameters that the config does not use");
  return ck;
}

#define REPAINTLAB_INSTANTIATE(T)                                                                              \
  template DenoiserParams<T> build<T>(const DenoiserConfig&, std::uint64_t);                                   \
  template Prediction<T> forward<T>(nd::Tape<T>&, const DenoiserConfig&, const DenoiserParams<T>&, nd::Var<T>, \
                                    std::span<const int>);                                                     \
  template PredictionValues<T> predict<T>(const DenoiserConfig&, const DenoiserParams<T>&, const nd::NdArray<T>&, \
                                          std::span<const int>);

REPAINTLAB_INSTANTIATE(float)
REPAINTLAB_INSTANTIATE(double)
#undef REPAINTLAB_INSTANTIATE

}  // namespace repaintlab::denoiser
