#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "firegen/pipeline.hpp"

namespace {

namespace pl = firegen::pipeline;

enum Exit : int { kOk = 0, kFailure = 1, kBadArgs = 2, kMissing = 3, kNumerical = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> count;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> codebook_size;
  std::optional<int> latent_dim;
  std::optional<int> clip_length;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::string parameter;
  std::vector<double> values;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override master_seed");
  cmd->add_option("--out", o.out, "Override output_dir");
  cmd->add_option("--alpha", o.alpha, "Generation latent mixing weight");
  cmd->add_option("--beta", o.beta, "Commitment loss weight");
  cmd->add_option("--codebook-size", o.codebook_size, "Number of codebook entries");
  cmd->add_option("--latent-dim", o.latent_dim, "Codebook vector dimension");
  cmd->add_option("--clip-length", o.clip_length, "Frames per VQ-VAE clip");
  cmd->add_option("--count", o.count, "Number of generated sequences");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
}

pl::ExperimentConfig resolve(const Options& o) {
  auto cfg = pl::load_config(o.config);
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.alpha) cfg.vqvae.train.alpha = *o.alpha;
  if (o.beta) cfg.vqvae.train.beta = *o.beta;
  if (o.codebook_size) cfg.vqvae.train.codebook_size = *o.codebook_size;
  if (o.latent_dim) cfg.vqvae.spec.latent_dim = *o.latent_dim;
  if (o.clip_length) cfg.vqvae.clip_length = *o.clip_length;
  if (o.count) cfg.n_generated = *o.count;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wildfire spread data generation and surrogate modelling"};
  app.require_subcommand(1);
  Options o;
  auto* simulate = app.add_subcommand("simulate", "Synthesize the ecoregion and simulate CA datasets");
  auto* train_vqvae = app.add_subcommand("train-vqvae", "Train the VQ-VAE on the CA training set");
  auto* generate = app.add_subcommand("generate", "Generate sequences with the trained VQ-VAE");
  auto* train_surrogate = app.add_subcommand("train-surrogate", "Fit POD and train the LSTM surrogate");
  auto* evaluate = app.add_subcommand("evaluate", "Score surrogates on the held-out test fires");
  auto* ablate = app.add_subcommand("ablate", "Sweep alpha, beta or the generated-set size");
  auto* bench = app.add_subcommand("bench", "Time CA simulation against VQ-VAE generation");
  for (auto* c : {simulate, train_vqvae, generate, train_surrogate, evaluate, ablate, bench}) add_common(c, o);
  for (auto* c : {train_surrogate, evaluate})
    c->add_option("--mode", o.mode, "baseline or proposed")
        ->check(CLI::IsMember({"baseline", "proposed"}));
  train_surrogate->get_option("--mode")->required();
  ablate->add_option("--parameter", o.parameter, "alpha, beta or generated_count")
      ->required()
      ->check(CLI::IsMember({"alpha", "beta", "generated_count"}));
  ablate->add_option("--values", o.values, "Sweep values (defaults from config)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadArgs;
  }

  try {
    const auto cfg = resolve(o);
    pl::set_quiet(o.quiet);
    std::filesystem::path manifest;
    if (*simulate)
      manifest = pl::cmd_simulate(cfg);
    else if (*train_vqvae)
      manifest = pl::cmd_train_vqvae(cfg);
    else if (*generate)
      manifest = pl::cmd_generate(cfg);
    else if (*train_surrogate)
      manifest = pl::cmd_train_surrogate(cfg, *o.mode);
    else if (*evaluate)
      manifest = pl::cmd_evaluate(cfg, o.mode.value_or(""));
    else if (*ablate)
      manifest = pl::cmd_ablate(cfg, o.parameter, o.values);
    else
      manifest = pl::cmd_bench(cfg);
    std::cout << manifest.string() << '\n';
    return kOk;
  } catch (const firegen::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadArgs;
  } catch (const firegen::MissingInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const firegen::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const firegen::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const firegen::DegenerateError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
