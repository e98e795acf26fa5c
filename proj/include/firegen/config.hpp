#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "firegen/ca.hpp"
#include "firegen/errors.hpp"
#include "firegen/geofields.hpp"
#include "firegen/parallel.hpp"
#include "firegen/surrogate.hpp"
#include "firegen/vqvae.hpp"

namespace firegen::pipeline {

using json = nlohmann::ordered_json;

struct SurrogateSettings {
  int q = 64;
  surrogate::LstmConfig lstm{};
  int epochs = 500;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int patience = 50;
};

struct VqvaeSettings {
  vq::EncoderDecoderSpec spec{};
  vq::VQVAEConfig train{};
  int clip_length = 16;
};

struct EvaluateSettings {
  // Frame t is t * interval hours after ignition; frames 1..4 are the
  // 6/12/18/24 h observations and the next `horizon` frames are predicted.
  int first_input_frame = 1;
  int horizon = 4;
  double tau = 0.4;
  int covariate_radius = 8;
  int montage_fires = 4;
};

struct AblateSettings {
  std::vector<double> alpha_values{0.3, 0.6};
  std::vector<double> beta_values{0.1, 0.25, 1.0};
  std::vector<double> generated_count_values{50, 100, 200, 400};
  int seeds_per_value = 1;
};

struct BenchSettings {
  int grid_size = 128;
  int runs = 10;
  int n_snapshots = 16;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 2024;
  std::string output_dir = "out";
  int grid_size = 128;
  int n_train_sims = 40;
  int n_val_sims = 8;
  int n_test_sims = 8;
  int n_generated = 500;
  int n_snapshots = 16;
  int threads = 0;  // 0 = hardware concurrency
  geo::SyntheticEcoregionConfig ecoregion{};
  ca::CAParams ca{};
  VqvaeSettings vqvae{};
  SurrogateSettings surrogate{};
  EvaluateSettings evaluate{};
  AblateSettings ablate{};
  BenchSettings bench{};

  int worker_threads() const { return threads > 0 ? threads : default_threads(); }

  void validate() const {
    if (grid_size < 8) throw InvalidArgument("grid_size must be >= 8");
    if (n_train_sims < 1 || n_val_sims < 1 || n_test_sims < 1 || n_generated < 1)
      throw InvalidArgument("simulation and generation counts must be >= 1");
    if (n_snapshots < 2) throw InvalidArgument("n_snapshots must be >= 2");
    ca.validate();
    vqvae.spec.validate();
    vqvae.train.validate();
    if (vqvae.clip_length < 1 || vqvae.clip_length > n_snapshots)
      throw InvalidArgument("vqvae.clip_length must lie in [1, n_snapshots]");
    vqvae.spec.validate_clip({vqvae.clip_length, grid_size, grid_size});
    if (surrogate.q < 1) throw InvalidArgument("surrogate.q must be >= 1");
    surrogate.lstm.window.validate();
    if (surrogate.lstm.hidden_size < 1 || surrogate.lstm.num_layers < 1)
      throw InvalidArgument("surrogate hidden_size and num_layers must be >= 1");
    if (surrogate.epochs < 0 || surrogate.batch_size < 1 || !(surrogate.learning_rate >= 0.0) ||
        surrogate.patience < 1)
      throw InvalidArgument("bad surrogate training settings");
    if (surrogate.lstm.window.m_in + surrogate.lstm.window.m_out > n_snapshots)
      throw InvalidArgument("m_in + m_out exceeds n_snapshots");
    if (evaluate.first_input_frame < 0 || evaluate.horizon < surrogate.lstm.window.m_out)
      throw InvalidArgument("evaluate.horizon must be >= m_out and first_input_frame >= 0");
    if (ablate.seeds_per_value < 1) throw InvalidArgument("ablate.seeds_per_value must be >= 1");
    if (bench.runs < 1 || bench.grid_size < 8 || bench.n_snapshots < 2)
      throw InvalidArgument("bad bench settings");
  }
};

namespace detail {

// Reads known keys and rejects anything else, so typos fail loudly.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument(where_ + ": expected a JSON object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidArgument(where_ + ": unknown key '" + k + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::Reader r(j, "config");
  r.get("master_seed", c.master_seed);
  r.get("output_dir", c.output_dir);
  r.get("grid_size", c.grid_size);
  r.get("n_train_sims", c.n_train_sims);
  r.get("n_val_sims", c.n_val_sims);
  r.get("n_test_sims", c.n_test_sims);
  r.get("n_generated", c.n_generated);
  r.get("n_snapshots", c.n_snapshots);
  r.get("threads", c.threads);
  if (const json* e = r.child("ecoregion")) {
    detail::Reader s(*e, r.path("ecoregion"));
    s.get("cell_size_m", c.ecoregion.cell_size_m);
    s.get("vegetation_correlation", c.ecoregion.vegetation_correlation);
    s.get("canopy_correlation", c.ecoregion.canopy_correlation);
    s.get("elevation_correlation", c.ecoregion.elevation_correlation);
    s.get("relief_m", c.ecoregion.relief_m);
    s.get("wind_speed", c.ecoregion.wind_speed);
    s.get("wind_direction", c.ecoregion.wind_direction);
  }
  if (const json* e = r.child("ca")) {
    detail::Reader s(*e, r.path("ca"));
    s.get("p_h", c.ca.p_h);
    s.get("veg_gain", c.ca.veg_gain);
    s.get("den_gain", c.ca.den_gain);
    s.get("slope_coeff", c.ca.slope_coeff);
    s.get("wind_c1", c.ca.wind_c1);
    s.get("wind_c2", c.ca.wind_c2);
    s.get("burning_duration_steps", c.ca.burning_duration_steps);
    s.get("steps_per_snapshot", c.ca.steps_per_snapshot);
    s.get("snapshot_interval_hours", c.ca.snapshot_interval_hours);
  }
  if (const json* e = r.child("vqvae")) {
    detail::Reader s(*e, r.path("vqvae"));
    if (const json* st = s.child("stages")) {
      if (!st->is_array()) throw InvalidArgument("config.vqvae.stages must be an array");
      c.vqvae.spec.stages.clear();
      for (const auto& item : *st) {
        vq::Stage stage;
        detail::Reader sr(item, "config.vqvae.stages[]");
        sr.get("t_stride", stage.t_stride);
        sr.get("s_stride", stage.s_stride);
        sr.get("channels", stage.channels);
        sr.get("t_kernel", stage.t_kernel);
        sr.get("s_kernel", stage.s_kernel);
        c.vqvae.spec.stages.push_back(stage);
      }
    }
    s.get("latent_dim", c.vqvae.spec.latent_dim);
    std::string act = vq::activation_name(c.vqvae.spec.activation);
    s.get("activation", act);
    c.vqvae.spec.activation = vq::activation_from_name(act);
    s.get("clip_length", c.vqvae.clip_length);
    s.get("beta", c.vqvae.train.beta);
    s.get("alpha", c.vqvae.train.alpha);
    s.get("codebook_size", c.vqvae.train.codebook_size);
    s.get("learning_rate", c.vqvae.train.learning_rate);
    s.get("epochs", c.vqvae.train.epochs);
    s.get("batch_size", c.vqvae.train.batch_size);
    s.get("reseed_dead_codes", c.vqvae.train.reseed_dead_codes);
  }
  if (const json* e = r.child("surrogate")) {
    detail::Reader s(*e, r.path("surrogate"));
    s.get("q", c.surrogate.q);
    s.get("hidden_size", c.surrogate.lstm.hidden_size);
    s.get("num_layers", c.surrogate.lstm.num_layers);
    s.get("m_in", c.surrogate.lstm.window.m_in);
    s.get("m_out", c.surrogate.lstm.window.m_out);
    std::string loss = c.surrogate.lstm.loss == surrogate::LossKind::Mse ? "mse" : "mae";
    s.get("loss", loss);
    if (loss != "mse" && loss != "mae") throw InvalidArgument("config.surrogate.loss must be mse or mae");
    c.surrogate.lstm.loss = loss == "mse" ? surrogate::LossKind::Mse : surrogate::LossKind::Mae;
    s.get("epochs", c.surrogate.epochs);
    s.get("learning_rate", c.surrogate.learning_rate);
    s.get("batch_size", c.surrogate.batch_size);
    s.get("patience", c.surrogate.patience);
  }
  if (const json* e = r.child("evaluate")) {
    detail::Reader s(*e, r.path("evaluate"));
    s.get("first_input_frame", c.evaluate.first_input_frame);
    s.get("horizon", c.evaluate.horizon);
    s.get("tau", c.evaluate.tau);
    s.get("covariate_radius", c.evaluate.covariate_radius);
    s.get("montage_fires", c.evaluate.montage_fires);
  }
  if (const json* e = r.child("ablate")) {
    detail::Reader s(*e, r.path("ablate"));
    s.get("alpha_values", c.ablate.alpha_values);
    s.get("beta_values", c.ablate.beta_values);
    s.get("generated_count_values", c.ablate.generated_count_values);
    s.get("seeds_per_value", c.ablate.seeds_per_value);
  }
  if (const json* e = r.child("bench")) {
    detail::Reader s(*e, r.path("bench"));
    s.get("grid_size", c.bench.grid_size);
    s.get("runs", c.bench.runs);
    s.get("n_snapshots", c.bench.n_snapshots);
  }
  c.vqvae.train.seed = stable_hash(c.master_seed, "train-vqvae", 1);
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json stages = json::array();
  for (const auto& s : c.vqvae.spec.stages)
    stages.push_back({{"t_stride", s.t_stride}, {"s_stride", s.s_stride}, {"channels", s.channels},
                      {"t_kernel", s.t_kernel}, {"s_kernel", s.s_kernel}});
  return {
      {"master_seed", c.master_seed},
      {"output_dir", c.output_dir},
      {"grid_size", c.grid_size},
      {"n_train_sims", c.n_train_sims},
      {"n_val_sims", c.n_val_sims},
      {"n_test_sims", c.n_test_sims},
      {"n_generated", c.n_generated},
      {"n_snapshots", c.n_snapshots},
      {"threads", c.threads},
      {"ecoregion",
       {{"cell_size_m", c.ecoregion.cell_size_m},
        {"vegetation_correlation", c.ecoregion.vegetation_correlation},
        {"canopy_correlation", c.ecoregion.canopy_correlation},
        {"elevation_correlation", c.ecoregion.elevation_correlation},
        {"relief_m", c.ecoregion.relief_m},
        {"wind_speed", c.ecoregion.wind_speed},
        {"wind_direction", c.ecoregion.wind_direction}}},
      {"ca",
       {{"p_h", c.ca.p_h},
        {"veg_gain", c.ca.veg_gain},
        {"den_gain", c.ca.den_gain},
        {"slope_coeff", c.ca.slope_coeff},
        {"wind_c1", c.ca.wind_c1},
        {"wind_c2", c.ca.wind_c2},
        {"burning_duration_steps", c.ca.burning_duration_steps},
        {"steps_per_snapshot", c.ca.steps_per_snapshot},
        {"snapshot_interval_hours", c.ca.snapshot_interval_hours}}},
      {"vqvae",
       {{"stages", stages},
        {"latent_dim", c.vqvae.spec.latent_dim},
        {"activation", vq::activation_name(c.vqvae.spec.activation)},
        {"clip_length", c.vqvae.clip_length},
        {"beta", c.vqvae.train.beta},
        {"alpha", c.vqvae.train.alpha},
        {"codebook_size", c.vqvae.train.codebook_size},
        {"learning_rate", c.vqvae.train.learning_rate},
        {"epochs", c.vqvae.train.epochs},
        {"batch_size", c.vqvae.train.batch_size},
        {"reseed_dead_codes", c.vqvae.train.reseed_dead_codes}}},
      {"surrogate",
       {{"q", c.surrogate.q},
        {"hidden_size", c.surrogate.lstm.hidden_size},
        {"num_layers", c.surrogate.lstm.num_layers},
        {"m_in", c.surrogate.lstm.window.m_in},
        {"m_out", c.surrogate.lstm.window.m_out},
        {"loss", c.surrogate.lstm.loss == surrogate::LossKind::Mse ? "mse" : "mae"},
        {"epochs", c.surrogate.epochs},
        {"learning_rate", c.surrogate.learning_rate},
        {"batch_size", c.surrogate.batch_size},
        {"patience", c.surrogate.patience}}},
      {"evaluate",
       {{"first_input_frame", c.evaluate.first_input_frame},
        {"horizon", c.evaluate.horizon},
        {"tau", c.evaluate.tau},
        {"covariate_radius", c.evaluate.covariate_radius},
        {"montage_fires", c.evaluate.montage_fires}}},
      {"ablate",
       {{"alpha_values", c.ablate.alpha_values},
        {"beta_values", c.ablate.beta_values},
        {"generated_count_values", c.ablate.generated_count_values},
        {"seeds_per_value", c.ablate.seeds_per_value}}},
      {"bench",
       {{"grid_size", c.bench.grid_size}, {"runs", c.bench.runs}, {"n_snapshots", c.bench.n_snapshots}}},
  };
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
  auto cfg = config_from_json(j);
  cfg.validate();
  return cfg;
}

}  // namespace firegen::pipeline
