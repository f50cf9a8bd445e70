#include "repaintlab/cli/app.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "repaintlab/cli/run_config.hpp"
#include "repaintlab/error.hpp"
#include "repaintlab/io/io.hpp"
#include "repaintlab/metrics/perturb.hpp"
#include "repaintlab/repaint/repaint.hpp"
#include "repaintlab/synthlab/synth.hpp"

namespace repaintlab::cli {

namespace {

namespace fs = std::filesystem;

void write_provenance(const fs::path& path, const Provenance& p) { io::write_json(path, p.to_json()); }

/// Sidecar for a single-file artifact.
fs::path sidecar(const fs::path& file) { return fs::path(file.string() + ".prov.json"); }

/// Plot-ready table next to a JSON result: same path with a .csv extension.
void write_csv(const fs::path& json_path, const std::string& header, const std::vector<std::string>& rows) {
  auto path = json_path;
  path.replace_extension(".csv");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << header << "\n";
  for (const auto& r : rows) os << r << "\n";
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("/levels", "cannot parse level '" + item + "'");
    }
  }
  return out;
}

/// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "RunConfig JSON file");
  sub->add_option("--seed", c.seed, "Seed; overrides the config section's seed");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<std::size_t> classes, per_class, size;
  std::string out;
};

void cmd_synth(const SynthArgs& a) {
  auto cfg = RunConfig::load(a.common.config_path);
  if (a.classes) cfg.corpus.classes = *a.classes;
  if (a.per_class) cfg.corpus.per_class = *a.per_class;
  if (a.size) cfg.corpus.size = *a.size;
  if (a.common.seed) cfg.corpus.seed = *a.common.seed;
  cfg.corpus.validate();
  spdlog::info("synth: {} classes x {} patches of {}px", cfg.corpus.classes, cfg.corpus.per_class, cfg.corpus.size);
  const auto corpus = synth::make_corpus(cfg.corpus.classes, cfg.corpus.per_class, cfg.corpus.size, cfg.corpus.seed);
  synth::save_corpus(a.out, corpus);
  write_provenance(fs::path(a.out) / "provenance.json", {"synth", cfg.to_json(), cfg.corpus.seed, {}});
}

struct TrainArgs {
  Common common;
  std::string data, out;
  std::optional<std::size_t> steps;
};

void cmd_train(const TrainArgs& a) {
  auto cfg = RunConfig::load(a.common.config_path);
  if (a.common.seed) cfg.train.seed = *a.common.seed;
  if (a.steps) cfg.train.steps = *a.steps;
  cfg.train.validate();
  const auto corpus = synth::load_corpus(a.data);
  if (corpus.size != cfg.denoiser.input_size)
    throw ConfigError("/denoiser/input_size", "corpus patches are " + std::to_string(corpus.size) + "px");
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream log(out / "metrics.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write " + (out / "metrics.jsonl").string());
  diffusion::TrainHooks hooks;
  hooks.on_log = [&](const diffusion::TrainRecord& r) {
    log << nlohmann::json{{"step", r.step}, {"loss_simple", r.loss_simple}, {"loss_vlb", r.loss_vlb},
                          {"lr", r.learning_rate}}.dump()
        << "\n";
    log.flush();
    spdlog::info("train: step {} L_simple {:.5f} L_vlb {:.5f}", r.step, r.loss_simple, r.loss_vlb);
  };
  hooks.on_checkpoint = [&](std::size_t step, const denoiser::DenoiserParams<float>& ema) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06zu", step);
    denoiser::save_checkpoint(out / "checkpoints" / name, {cfg.denoiser, ema});
  };
  Provenance prov{"train", cfg.to_json(), cfg.train.seed,
                  {{"data", io::sha256_tree(a.data)}}};
  const auto result = diffusion::train(cfg.train, cfg.denoiser, corpus.images(corpus.train), hooks);
  denoiser::save_checkpoint(out, {cfg.denoiser, result.ema});
  std::vector<double> tail(result.loss_simple.end() - static_cast<std::ptrdiff_t>(std::min<std::size_t>(500, result.loss_simple.size())),
                           result.loss_simple.end());
  if (!tail.empty()) prov.extra["median_loss_simple_final_500"] = diffusion::median(tail);
  write_provenance(out / "provenance.json", prov);
}

struct SampleArgs {
  Common common;
  std::string ckpt, out;
  std::size_t n = 16;
  std::size_t batch = 16;
};

void cmd_sample(const SampleArgs& a) {
  auto cfg = RunConfig::load(a.common.config_path);
  const std::uint64_t seed = a.common.seed.value_or(cfg.repaint.seed);
  const auto model = denoiser::load_checkpoint(a.ckpt);
  const auto sched = diffusion::cosine_schedule(static_cast<int>(model.config.timesteps));
  const auto images = diffusion::generate(sched, model, a.n, Rng(seed).fork("sample"), a.batch);
  io::save_png_dir(a.out, images);
  write_provenance(fs::path(a.out) / "provenance.json",
                   {"sample", {{"n", a.n}, {"run", cfg.to_json()}}, seed, {{"checkpoint", io::sha256_tree(a.ckpt)}}});
}

struct RepaintArgs {
  Common common;
  std::string ckpt, image, mask, out;
  std::optional<int> jump;
  bool invert_mask = false;
};

void cmd_repaint(const RepaintArgs& a) {
  auto cfg = RunConfig::load(a.common.config_path);
  if (a.jump) cfg.repaint.jump = *a.jump;
  if (a.common.seed) cfg.repaint.seed = *a.common.seed;
  cfg.repaint.validate();
  const auto model = denoiser::load_checkpoint(a.ckpt);
  const auto img = io::load_png(a.image);
  auto mask = io::load_mask_png(a.mask);
  if (a.invert_mask)
    for (auto& v : mask.span()) v = 1.0f - v;
  const auto known = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
  const auto sched = diffusion::cosine_schedule(static_cast<int>(model.config.timesteps));
  const auto out = repaint::repaint(sched, model, known, mask, cfg.repaint.jump, Rng(cfg.repaint.seed).fork("repaint"),
                                    cfg.repaint.batch);
  io::save_png(a.out, out.reshaped({1, img.dim(1), img.dim(2)}));
  Provenance p{"repaint",
               {{"run", cfg.to_json()}, {"invert_mask", a.invert_mask}},
               cfg.repaint.seed,
               {{"checkpoint", io::sha256_tree(a.ckpt)}, {"image", io::sha256_file(a.image)}, {"mask", io::sha256_file(a.mask)}}};
  p.extra = {{"checkpoint_sha256", io::sha256_tree(a.ckpt)},
             {"mask_coverage", repaint::coverage(mask)},
             {"j", cfg.repaint.jump},
             {"T", model.config.timesteps},
             {"seed", cfg.repaint.seed}};
  write_provenance(sidecar(a.out), p);
}

struct FcdArgs {
  std::string ckpt, set_a, set_b, out;
};

void cmd_fcd(const FcdArgs& a) {
  const auto model = metrics::load_embedder(a.ckpt);
  const auto xa = io::load_png_dir(a.set_a), xb = io::load_png_dir(a.set_b);
  const double d = metrics::frechet_distance(metrics::embed_stats(model, xa), metrics::embed_stats(model, xb));
  const nlohmann::json j = {{"fcd", d}, {"n_a", xa.dim(0)}, {"n_b", xb.dim(0)}, {"dim", model.config.feature_dim()}};
  std::cout << j.dump() << "\n";
  if (!a.out.empty()) {
    io::write_json(a.out, j);
    write_provenance(sidecar(a.out), {"fcd", nlohmann::json::object(), 0,
                                      {{"embedder", io::sha256_tree(a.ckpt)}, {"set_a", io::sha256_tree(a.set_a)},
                                       {"set_b", io::sha256_tree(a.set_b)}}});
  }
}

struct BatteryArgs {
  Common common;
  std::string ckpt, set, corpus, kind = "all", levels, mix_dir, out;
};

void cmd_battery(const BatteryArgs& a) {
  if (a.set.empty() == a.corpus.empty()) throw ConfigError("/set", "give exactly one of --set or --corpus");
  if (!a.levels.empty() && a.kind == "all") throw ConfigError("/levels", "--levels needs a single --kind");
  const auto model = metrics::load_embedder(a.ckpt);
  nd::NdArray<float> real;
  std::map<std::string, std::string> inputs{{"embedder", io::sha256_tree(a.ckpt)}};
  if (!a.set.empty()) {
    real = io::load_png_dir(a.set);
    inputs["set"] = io::sha256_tree(a.set);
  } else {
    const auto corpus = synth::load_corpus(a.corpus);
    real = corpus.images(corpus.eval);
    inputs["corpus"] = io::sha256_tree(a.corpus);
  }
  std::optional<nd::NdArray<float>> aliens;
  if (!a.mix_dir.empty()) {
    aliens = io::load_png_dir(a.mix_dir);
    inputs["mix_dir"] = io::sha256_tree(a.mix_dir);
  }
  const std::uint64_t seed = a.common.seed.value_or(0);
  std::vector<metrics::Perturbation> kinds;
  if (a.kind == "all") kinds = metrics::all_perturbations();
  else kinds = {metrics::parse_perturbation(a.kind)};
  nlohmann::json curves = nlohmann::json::array();
  for (const auto k : kinds) {
    auto spec = metrics::default_spec(k);
    if (!a.levels.empty()) spec.levels = parse_levels(a.levels);
    spdlog::info("fcd-battery: {}", metrics::to_string(k));
    curves.push_back(metrics::to_json(k, metrics::perturbation_battery(model, real, spec, seed, aliens ? &*aliens : nullptr)));
  }
  const nlohmann::json j = {{"n", real.dim(0)}, {"curves", curves}};
  std::cout << j.dump() << "\n";
  if (!a.out.empty()) {
    io::write_json(a.out, j);
    std::vector<std::string> rows;
    for (const auto& c : curves)
      for (const auto& pt : c["curve"])
        rows.push_back(c["kind"].get<std::string>() + "," + csv_number(pt["level"].get<double>()) + "," +
                       csv_number(pt["fcd"].get<double>()));
    write_csv(a.out, "kind,level,fcd", rows);
    write_provenance(sidecar(a.out), {"fcd-battery", {{"kind", a.kind}, {"levels", a.levels}}, seed, inputs});
  }
}

struct EvaluateArgs {
  Common common;
  std::string ckpt, embedder, corpus, out;
  std::optional<std::size_t> n, batch;
  std::optional<int> jump;
};

void cmd_evaluate(const EvaluateArgs& a) {
  auto cfg = RunConfig::load(a.common.config_path);
  if (a.n) cfg.evaluate.n = *a.n;
  if (a.jump) cfg.evaluate.jump = *a.jump;
  if (a.batch) cfg.evaluate.batch = *a.batch;
  if (a.common.seed) cfg.evaluate.seed = *a.common.seed;
  cfg.evaluate.validate();
  const auto model = denoiser::load_checkpoint(a.ckpt);
  const auto emb = metrics::load_embedder(a.embedder);
  const auto corpus = synth::load_corpus(a.corpus);
  const auto labels = corpus.labels(corpus.eval);
  const auto report = eval::run_evaluation(model, emb, corpus.images(corpus.eval), labels, cfg.evaluate,
                                           [](std::size_t done, std::size_t total) {
                                             spdlog::info("evaluate: repainted {}/{}", done, total);
                                           });
  io::write_json(a.out, report.to_json());
  std::vector<std::string> rows;
  for (const auto& bin : report.bins) {
    std::string row = csv_number(bin.lo) + "," + csv_number(bin.hi) + "," + std::to_string(bin.n);
    for (double v : {bin.k1_rate, bin.k2_rate, bin.density_err_median, bin.size_err_median,
                     bin.baseline_density_err_median, bin.baseline_size_err_median})
      row += "," + csv_number(v);
    rows.push_back(row);
  }
  write_csv(a.out,
            "lo,hi,n,k1_rate,k2_rate,density_err_median,size_err_median,baseline_density_err_median,"
            "baseline_size_err_median",
            rows);
  write_provenance(sidecar(a.out), {"evaluate",
                                    cfg.to_json(),
                                    cfg.evaluate.seed,
                                    {{"checkpoint", io::sha256_tree(a.ckpt)},
                                     {"embedder", io::sha256_tree(a.embedder)},
                                     {"corpus", io::sha256_tree(a.corpus)}}});
}

struct EmbedderArgs {
  Common common;
  std::string corpus, out;
  std::optional<std::size_t> epochs;
};

void cmd_train_embedder(const EmbedderArgs& a) {
  auto cfg = RunConfig::load(a.common.config_path);
  if (a.common.seed) cfg.metrics.seed = *a.common.seed;
  if (a.epochs) cfg.metrics.epochs = *a.epochs;
  cfg.metrics.validate();
  const auto corpus = synth::load_corpus(a.corpus);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ofstream log(out / "metrics.jsonl", std::ios::binary);
  const auto model = metrics::train_embedder(corpus, cfg.metrics, [&](std::size_t epoch, double loss) {
    log << nlohmann::json{{"epoch", epoch}, {"loss", loss}}.dump() << "\n";
    log.flush();
    spdlog::info("train-embedder: epoch {} loss {:.5f}", epoch, loss);
  });
  metrics::save_embedder(out, model);
  Provenance p{"train-embedder", cfg.to_json(), cfg.metrics.seed,
               {{"corpus", io::sha256_tree(a.corpus)}}};
  p.extra = {{"eval_accuracy", model.eval_accuracy}};
  write_provenance(out / "provenance.json", p);
  spdlog::info("train-embedder: eval accuracy {:.4f}", model.eval_accuracy);
}

void report_error(const char* kind, const std::string& message, const std::string& pointer = {}) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!pointer.empty()) j["pointer"] = pointer;
  std::cerr << j.dump() << "\n";
}

void set_threads(std::optional<int> flag) {
  int n = 0;
  if (flag) n = *flag;
  else if (const char* env = std::getenv("REPAINTLAB_THREADS")) n = std::atoi(env);
  if (n > 0) omp_set_num_threads(n);
}

}  // namespace

int run(const std::vector<std::string>& args) {
#if defined(__GLIBC__)
  // Large activation buffers are freed and reallocated every step; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  CLI::App app{"Diffusion inpainting of synthetic tissue textures", "repaintlab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());
  std::optional<int> threads;
  app.add_option("--threads", threads, "Worker threads (fallback: REPAINTLAB_THREADS)")->check(CLI::PositiveNumber);

  SynthArgs synth_a;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic texture corpus");
  add_common(synth, synth_a.common);
  synth->add_option("--classes", synth_a.classes, "Texture families, 2..8 (default 8)");
  synth->add_option("--per-class", synth_a.per_class, "Patches per family (default 500)");
  synth->add_option("--size", synth_a.size, "Patch side in pixels (default 64)");
  synth->add_option("--out", synth_a.out, "Corpus directory")->required();

  TrainArgs train_a;
  auto* train = app.add_subcommand("train", "Train the denoiser on a corpus");
  add_common(train, train_a.common);
  train->add_option("--data", train_a.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_a.out, "Checkpoint directory")->required();
  train->add_option("--steps", train_a.steps, "Override train.steps");

  SampleArgs sample_a;
  auto* sample = app.add_subcommand("sample", "Draw unconditional samples");
  add_common(sample, sample_a.common);
  sample->add_option("--ckpt", sample_a.ckpt)->required()->check(CLI::ExistingDirectory);
  sample->add_option("--n", sample_a.n, "Number of samples (default 16)");
  sample->add_option("--batch", sample_a.batch)->check(CLI::PositiveNumber);
  sample->add_option("--out", sample_a.out, "PNG directory")->required();

  RepaintArgs repaint_a;
  auto* rp = app.add_subcommand("repaint", "Inpaint the hole of one image");
  add_common(rp, repaint_a.common);
  rp->add_option("--ckpt", repaint_a.ckpt)->required()->check(CLI::ExistingDirectory);
  rp->add_option("--image", repaint_a.image)->required()->check(CLI::ExistingFile);
  rp->add_option("--mask", repaint_a.mask, "8-bit PNG, 255 = known, 0 = hole")->required()->check(CLI::ExistingFile);
  rp->add_option("--jump", repaint_a.jump, "Resampling jump length (default 5)");
  rp->add_flag("--invert-mask", repaint_a.invert_mask, "Mask uses 255 = hole, 0 = known");
  rp->add_option("--out", repaint_a.out)->required();

  FcdArgs fcd_a;
  auto* fcd = app.add_subcommand("fcd", "Frechet distance between two image folders");
  fcd->add_option("--ckpt", fcd_a.ckpt, "Embedder directory")->required()->check(CLI::ExistingDirectory);
  fcd->add_option("--set-a", fcd_a.set_a)->required()->check(CLI::ExistingDirectory);
  fcd->add_option("--set-b", fcd_a.set_b)->required()->check(CLI::ExistingDirectory);
  fcd->add_option("--out", fcd_a.out, "Also write the JSON here");

  BatteryArgs battery_a;
  auto* battery = app.add_subcommand("fcd-battery", "FCD under increasing perturbations");
  battery->add_option("--seed", battery_a.common.seed, "Perturbation seed (default 0)");
  battery->add_option("--ckpt", battery_a.ckpt, "Embedder directory")->required()->check(CLI::ExistingDirectory);
  battery->add_option("--set", battery_a.set, "Folder of real PNGs");
  battery->add_option("--corpus", battery_a.corpus, "Corpus directory (eval split is used)");
  battery->add_option("--kind", battery_a.kind, "gaussian_noise, gaussian_blur, salt_pepper, dataset_mix or all");
  battery->add_option("--levels", battery_a.levels, "Comma-separated levels starting at 0");
  battery->add_option("--mix-dir", battery_a.mix_dir, "Out-of-domain PNGs for dataset_mix")->check(CLI::ExistingDirectory);
  battery->add_option("--out", battery_a.out);

  EvaluateArgs eval_a;
  auto* evaluate = app.add_subcommand("evaluate", "Cell statistics, consistency and FCD of repaints");
  add_common(evaluate, eval_a.common);
  evaluate->add_option("--ckpt", eval_a.ckpt)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--embedder", eval_a.embedder)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--corpus", eval_a.corpus)->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--n", eval_a.n, "Patches to repaint (default 400)");
  evaluate->add_option("--jump", eval_a.jump, "Resampling jump length (default 5)");
  evaluate->add_option("--batch", eval_a.batch, "Chains per repaint call (default 16)");
  evaluate->add_option("--out", eval_a.out, "report.json")->required();

  EmbedderArgs emb_a;
  auto* emb = app.add_subcommand("train-embedder", "Train the FCD embedding classifier");
  add_common(emb, emb_a.common);
  emb->add_option("--corpus", emb_a.corpus)->required()->check(CLI::ExistingDirectory);
  emb->add_option("--out", emb_a.out, "Embedder directory")->required();
  emb->add_option("--epochs", emb_a.epochs, "Override metrics.epochs");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  set_threads(threads);
  // stdout carries JSON results; progress goes to stderr.
  if (!spdlog::get("repaintlab")) spdlog::set_default_logger(spdlog::stderr_color_mt("repaintlab"));

  try {
    if (synth->parsed()) cmd_synth(synth_a);
    else if (train->parsed()) cmd_train(train_a);
    else if (sample->parsed()) cmd_sample(sample_a);
    else if (rp->parsed()) cmd_repaint(repaint_a);
    else if (fcd->parsed()) cmd_fcd(fcd_a);
    else if (battery->parsed()) cmd_battery(battery_a);
    else if (evaluate->parsed()) cmd_evaluate(eval_a);
    else if (emb->parsed()) cmd_train_embedder(emb_a);
  } catch (const ConfigError& e) {
    report_error("config", e.what(), e.pointer());
    return kExitError;
  } catch (const NonFiniteError& e) {
    report_error("non_finite", e.what());
    return kExitError;
  } catch (const ShapeError& e) {
    report_error("shape", e.what());
    return kExitError;
  } catch (const DataError& e) {
    report_error("data", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kExitError;
  }
  return kExitOk;
}

}  // namespace repaintlab::cli
