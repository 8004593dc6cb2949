// pcaae: data generation, stagewise training, PCC evaluation, traversal and
// generator surgery from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "pcaae/adversarial.hpp"
#include "pcaae/config.hpp"
#include "pcaae/eval.hpp"
#include "pcaae/runtime.hpp"
#include "pcaae/surgery.hpp"
#include "pcaae/trainer.hpp"

using namespace pcaae;
namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kNumeric = 4, kDegenerate = 5 };

struct Options {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
  }
};

std::string help_for(const std::string& key) {
  for (const auto& k : RunConfig::keys())
    if (key == k.name) return k.help;
  return {};
}

/// --flag-name bound to config key flag_name.
void key_flag(CLI::App* app, Options& o, const std::string& key) {
  std::string flag = "--" + key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  app->add_option_function<std::string>(
      flag, [&o, key](const std::string& v) { o.overrides[key] = v; }, help_for(key));
}

void config_flag(CLI::App* app, Options& o) {
  app->add_option("--config", o.config_path, "config file of 'key = value' lines");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void print_losses(const char* tag, const StepLosses& l) {
  std::printf("%s recon %.6g cov %.6g total %.6g\n", tag, l.recon, l.cov, l.total);
}

int cmd_gen_data(const Options& o) {
  const RunConfig cfg = o.resolve();
  const std::string out = cfg.require("out");
  const auto parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  ellipse::generate_dataset(cfg.get_u64("count"), cfg.get_size("size"), cfg.get_u64("seed"), out,
                            cfg.get_double("blur_sigma"), cfg.get_double("min_axis"));
  cfg.write_resolved(parent.empty() ? "." : parent.string());
  std::printf("%s checksum %s\n", out.c_str(), hex64(ellipse::file_checksum(out)).c_str());
  return kOk;
}

int cmd_train(const Options& o) {
  const RunConfig rc = o.resolve();
  TrainConfig cfg = rc.train_config();
  cfg.dataset_path = rc.require("data");
  const std::string mode = rc.get("mode");
  if (mode != "pcaae" && mode != "pcawae" && mode != "vanilla")
    throw ConfigError("key 'mode' must be pcaae, pcawae or vanilla, got '" + mode + "'");
  const auto data = ellipse::load_dataset(cfg.dataset_path);
  cfg.image_size = data.header.height;
  cfg.validate();
  fs::create_directories(cfg.checkpoint_dir);
  rc.write_resolved(cfg.checkpoint_dir);

  ImageAutoencoder<float> resume;
  const bool resuming = !rc.get("resume").empty();
  if (resuming) resume = ImageAutoencoder<float>::load(Checkpoint::load(rc.get("resume")));

  const auto log_path = (fs::path(cfg.checkpoint_dir) / "train_log.csv").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path);
  StepLosses last;
  const auto report_every = std::max<std::size_t>(1, cfg.steps_per_stage / 10);
  StepCallback on_step = [&](std::size_t stage, std::uint64_t step, const StepLosses& l) {
    last = l;
    if (step % report_every == 0)
      std::printf("stage %zu step %llu recon %.6g cov %.6g\n", stage, static_cast<unsigned long long>(step), l.recon,
                  l.cov);
  };
  if (mode == "pcaae") {
    train_pcaae<float>(data, cfg, &log, resuming ? &resume : nullptr, on_step);
  } else if (mode == "pcawae") {
    train_pcawae<float>(data, cfg, &log, resuming ? &resume : nullptr, on_step);
  } else {
    if (resuming) throw ConfigError("key 'resume' is not supported for mode vanilla");
    train_vanilla_ae<float>(data, cfg, &log, on_step);
  }
  print_losses("final", last);
  std::printf("checkpoint %s\n", final_checkpoint_path(cfg.checkpoint_dir).c_str());
  return kOk;
}

void write_pcc(const eval::PccMatrix& m, const std::string& dir) {
  fs::create_directories(dir);
  const auto rep = eval::dominance_report(m);
  write_text((fs::path(dir) / "pcc_matrix.csv").string(), eval::matrix_csv(m));
  const std::string text = eval::report_text(m, rep);
  write_text((fs::path(dir) / "pcc_report.txt").string(), text);
  std::fputs(text.c_str(), stdout);
}

int cmd_eval_pcc(const Options& o) {
  const RunConfig rc = o.resolve();
  auto model = ImageAutoencoder<float>::load(Checkpoint::load(rc.require("checkpoint")));
  const auto data = ellipse::load_dataset(rc.require("data"));
  if (data.header.height != model.image_size)
    throw ConfigError("dataset image size " + std::to_string(data.header.height) + " does not match checkpoint size " +
                      std::to_string(model.image_size));
  const auto codes = model.encode_eval(data.images.data(), data.size());
  const std::vector<double> c(codes.begin(), codes.end());
  const std::string dir = rc.get("out_dir");
  rc.write_resolved(dir);
  write_pcc(eval::pcc_matrix(c, model.latent(), data.attrs), dir);
  return kOk;
}

void write_grid(const surgery::Grid& g, const std::string& out) {
  const auto parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  surgery::write_pgm(g, out);
  std::printf("%s %zux%zu\n", out.c_str(), g.width, g.height);
}

int cmd_traverse(const Options& o) {
  const RunConfig rc = o.resolve();
  auto model = ImageAutoencoder<float>::load(Checkpoint::load(rc.require("checkpoint")));
  const auto grid = surgery::traverse_codes<float>(model.latent(), rc.get_size("component"), rc.get_double("range"),
                                                   rc.get_size("steps"), model.image_size,
                                                   [&](const Tensor<float>& z) { return model.decode(z); });
  write_grid(grid, rc.require("out"));
  return kOk;
}

int cmd_surgery_train(const Options& o) {
  const RunConfig rc = o.resolve();
  surgery::SyntheticEllipseGenerator<float> gen(rc.generator_options());
  const auto cfg = rc.surgery_config();
  fs::create_directories(cfg.checkpoint_dir);
  rc.write_resolved(cfg.checkpoint_dir);
  const auto log_path = (fs::path(cfg.checkpoint_dir) / "train_log.csv").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path);
  StepLosses last;
  auto model = surgery::train_surgery(cfg, gen, &log, [&](std::size_t, std::uint64_t, const StepLosses& l) { last = l; });
  print_losses("final", last);
  std::printf("generator checksum %s\n", hex64(gen.checksum()).c_str());
  const auto m = surgery::surgery_pcc(model, gen, rc.get_size("eval_samples"), cfg.sigma_p,
                                      derive_seed(cfg.seed, {seed_tag::kPerturb, 0xe7a1}));
  write_pcc(m, cfg.checkpoint_dir);
  return kOk;
}

int cmd_surgery_traverse(const Options& o) {
  const RunConfig rc = o.resolve();
  surgery::SyntheticEllipseGenerator<float> gen(rc.generator_options());
  auto model = surgery::SurgeryModel<float>::load(Checkpoint::load(rc.require("checkpoint")));
  write_grid(surgery::traverse(model, gen, rc.get_size("component"), rc.get_double("range"), rc.get_size("steps")),
             rc.require("out"));
  return kOk;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const DegenerateVarianceError& e) {
    std::fprintf(stderr, "degenerate model (component %d): %s\n", e.component, e.what());
    return kDegenerate;
  } catch (const DegenerateBatchError& e) {
    std::fprintf(stderr, "degenerate model: %s\n", e.what());
    return kDegenerate;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumeric;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Principal component analysis autoencoder (PCAAE) toolkit"};
  app.require_subcommand(1);

  Options gen_opts, train_opts, eval_opts, trav_opts, strain_opts, strav_opts;

  auto* gen = app.add_subcommand("gen-data", "generate a blurred-ellipse dataset");
  config_flag(gen, gen_opts);
  for (const char* k : {"count", "size", "seed", "blur_sigma", "min_axis", "out"}) key_flag(gen, gen_opts, k);

  auto* train = app.add_subcommand("train", "stagewise training (pcaae, pcawae) or a vanilla autoencoder");
  config_flag(train, train_opts);
  for (const char* k : {"mode", "lambda_cov", "lambda_adv", "stages", "seed", "data", "out_dir", "steps_per_stage",
                        "batch_size", "lr", "beta1", "beta2", "resume"})
    key_flag(train, train_opts, k);

  auto* evalc = app.add_subcommand("eval-pcc", "absolute PCC between latent components and ellipse attributes");
  config_flag(evalc, eval_opts);
  for (const char* k : {"checkpoint", "data", "out_dir"}) key_flag(evalc, eval_opts, k);

  auto* trav = app.add_subcommand("traverse", "sweep one latent component of an image autoencoder into a PGM grid");
  config_flag(trav, trav_opts);
  for (const char* k : {"checkpoint", "component", "range", "steps", "out"}) key_flag(trav, trav_opts, k);

  auto* surg = app.add_subcommand("surgery", "latent surgery around a base point of the synthetic generator");
  surg->require_subcommand(1);
  auto* strain = surg->add_subcommand("train", "train the surgery autoencoder");
  config_flag(strain, strain_opts);
  for (const char* k : {"stages", "seed", "lambda_cov", "steps_per_stage", "batch_size", "lr", "sigma_p", "samples",
                        "out_dir", "gen_seed"})
    key_flag(strain, strain_opts, k);
  auto* strav = surg->add_subcommand("traverse", "sweep one surgery component through the generator");
  config_flag(strav, strav_opts);
  for (const char* k : {"checkpoint", "component", "range", "steps", "out", "gen_seed"}) key_flag(strav, strav_opts, k);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  return guarded([&] {
    worker_limit();
    if (*gen) return cmd_gen_data(gen_opts);
    if (*train) return cmd_train(train_opts);
    if (*evalc) return cmd_eval_pcc(eval_opts);
    if (*trav) return cmd_traverse(trav_opts);
    if (*strain) return cmd_surgery_train(strain_opts);
    return cmd_surgery_traverse(strav_opts);
  });
}
