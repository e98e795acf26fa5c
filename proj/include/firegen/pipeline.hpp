#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "firegen/binary_io.hpp"
#include "firegen/ca.hpp"
#include "firegen/config.hpp"
#include "firegen/geofields.hpp"
#include "firegen/metrics.hpp"
#include "firegen/parallel.hpp"
#include "firegen/pod.hpp"
#include "firegen/report.hpp"
#include "firegen/surrogate.hpp"
#include "firegen/vqvae.hpp"

namespace firegen::pipeline {

namespace fs = std::filesystem;
using Seq = ca::BurnedSequence;

// ---------------------------------------------------------------------------
// Logging

inline std::function<void(const std::string&)>& log_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::cerr << msg << '\n';
  };
  return sink;
}

inline void log(const std::string& msg) {
  if (log_sink()) log_sink()(msg);
}

inline void set_quiet(bool quiet) {
  if (quiet)
    log_sink() = nullptr;
  else
    log_sink() = [](const std::string& msg) { std::cerr << msg << '\n'; };
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Output layout

struct Layout {
  fs::path root;

  fs::path ecoregion() const { return root / "ecoregion"; }
  fs::path split(const std::string& name) const { return root / "data" / name; }
  fs::path generated() const { return root / "data" / "generated"; }
  fs::path vqvae_dir() const { return root / "vqvae"; }
  fs::path vqvae_model() const { return vqvae_dir() / "model.fvqv"; }
  fs::path surrogate_dir(const std::string& mode) const { return root / ("surrogate_" + mode); }
  fs::path eval_dir() const { return root / "eval"; }
  fs::path ablate_dir(const std::string& param) const { return root / "ablate" / param; }
  fs::path bench_dir() const { return root / "bench"; }
  fs::path manifests() const { return root / "manifests"; }
};

inline void write_json(const fs::path& path, const json& j) {
  auto out = report::open_out(path, true);
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("missing file: " + path.string());
  try {
    return json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Run manifest

/// Records what a command read and wrote. finish() writes
/// manifests/<command>.json and re-verifies every output checksum.
class RunContext {
 public:
  RunContext(const ExperimentConfig& cfg, std::string command)
      : layout_{cfg.output_dir}, command_(std::move(command)), config_(config_to_json(cfg)) {}

  const Layout& layout() const { return layout_; }
  const std::string& command() const { return command_; }

  void input(const fs::path& p) { inputs_[relative(p)] = io::file_checksum(p); }
  void output(const fs::path& p) { outputs_[relative(p)] = io::file_checksum(p); }
  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void timing(const std::string& name, double seconds) { timings_[name] = seconds; }
  void warn(const std::string& msg) {
    log("warning: " + msg);
    warnings_.push_back(msg);
  }
  json& extra() { return extra_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  fs::path manifest_path() const { return layout_.manifests() / (command_ + ".json"); }

  fs::path finish() {
    timing("total", clock_.seconds());
    json j;
    j["command"] = command_;
    j["config"] = config_;
    j["inputs"] = json::array();
    for (const auto& [p, c] : inputs_) j["inputs"].push_back({{"path", p}, {"checksum", c}});
    j["outputs"] = json::array();
    for (const auto& [p, c] : outputs_) j["outputs"].push_back({{"path", p}, {"checksum", c}});
    j["seeds"] = json::object();
    for (const auto& [k, v] : seeds_) j["seeds"][k] = v;
    j["timings_s"] = json::object();
    for (const auto& [k, v] : timings_) j["timings_s"][k] = v;
    j["warnings"] = warnings_;
    if (!extra_.is_null()) j["extra"] = extra_;
    write_json(manifest_path(), j);
    verify_manifest(manifest_path(), layout_.root);
    return manifest_path();
  }

  /// Recomputes every output checksum listed in a manifest; throws on mismatch.
  static void verify_manifest(const fs::path& manifest, const fs::path& root) {
    const json j = read_json(manifest);
    for (const auto& o : j.at("outputs")) {
      const fs::path p = root / o.at("path").get<std::string>();
      if (!fs::exists(p)) throw FormatError("manifest lists missing output: " + p.string());
      if (io::file_checksum(p) != o.at("checksum").get<std::string>())
        throw FormatError("checksum mismatch for " + p.string());
    }
  }

 private:
  std::string relative(const fs::path& p) const {
    const auto rel = p.lexically_normal().lexically_relative(layout_.root.lexically_normal());
    return (rel.empty() || *rel.begin() == "..") ? p.string() : rel.generic_string();
  }

  Layout layout_;
  std::string command_;
  json config_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, double> timings_;
  std::vector<std::string> warnings_;
  json extra_;
  Stopwatch clock_;
};

// ---------------------------------------------------------------------------
// Ecoregion and dataset I/O

inline geo::Ecoregion make_ecoregion(const ExperimentConfig& cfg, int size) {
  auto eco_cfg = cfg.ecoregion;
  eco_cfg.size = size;
  return geo::synth_ecoregion(stable_hash(cfg.master_seed, "ecoregion", 0), eco_cfg);
}

inline void save_ecoregion(const geo::Ecoregion& eco, const fs::path& dir, std::uint64_t master_seed,
                           RunContext& ctx) {
  fs::create_directories(dir);
  json fields;
  for (const geo::RasterGrid* g : {&eco.vegetation_density(), &eco.canopy_cover(), &eco.elevation()}) {
    const auto file = g->name() + ".fgrd";
    geo::save_grid(*g, dir / file);
    ctx.output(dir / file);
    fields[g->name()] = file;
  }
  write_json(dir / "ecoregion.json", {{"wind_speed", eco.wind_speed()},
                                      {"wind_direction", eco.wind_direction()},
                                      {"fields", fields},
                                      {"master_seed", master_seed}});
  ctx.output(dir / "ecoregion.json");
}

inline geo::Ecoregion load_ecoregion(const fs::path& dir, RunContext* ctx = nullptr) {
  const fs::path meta = dir / "ecoregion.json";
  if (!fs::exists(meta))
    throw MissingInput("missing ecoregion at " + dir.string() + "; run `firegen simulate` first");
  const json j = read_json(meta);
  auto grid = [&](const char* name) {
    const fs::path p = dir / j.at("fields").at(name).get<std::string>();
    if (ctx) ctx->input(p);
    return geo::load_grid(p).renamed(name);
  };
  if (ctx) ctx->input(meta);
  return {grid("vegetation_density"), grid("canopy_cover"), grid("elevation"),
          j.at("wind_speed").get<double>(), j.at("wind_direction").get<double>()};
}

inline std::string member_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.fseq", i);
  return buf;
}

/// Writes NNNN.fseq members plus manifest.json; stale members are removed first.
inline void write_dataset(const fs::path& dir, std::span<const Seq> seqs, json meta, RunContext& ctx,
                          std::span<const std::size_t> sources = {}) {
  fs::create_directories(dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".fseq") fs::remove(e.path());
  json members = json::array();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const fs::path p = dir / member_name(i);
    ca::save_sequence(seqs[i], p);
    ctx.output(p);
    json m{{"file", member_name(i)},
           {"seed", seqs[i].seed},
           {"ignition", {seqs[i].ignition.row, seqs[i].ignition.col}},
           {"checksum", io::file_checksum(p)}};
    if (!sources.empty()) m["source_index"] = sources[i];
    members.push_back(std::move(m));
  }
  meta["count"] = seqs.size();
  meta["members"] = std::move(members);
  write_json(dir / "manifest.json", meta);
  ctx.output(dir / "manifest.json");
}

inline std::vector<Seq> load_dataset(const fs::path& dir, RunContext* ctx, const std::string& hint) {
  const fs::path meta = dir / "manifest.json";
  if (!fs::exists(meta))
    throw MissingInput("missing dataset " + dir.string() + "; run `firegen " + hint + "` first");
  const json j = read_json(meta);
  if (ctx) ctx->input(meta);
  std::vector<Seq> out;
  for (const auto& m : j.at("members")) {
    const fs::path p = dir / m.at("file").get<std::string>();
    if (!fs::exists(p)) throw MissingInput("dataset member missing: " + p.string());
    if (io::file_checksum(p) != m.at("checksum").get<std::string>())
      throw FormatError("dataset member checksum mismatch: " + p.string());
    if (ctx) ctx->input(p);
    out.push_back(ca::load_sequence(p));
  }
  if (out.empty()) throw MissingInput("dataset " + dir.string() + " is empty");
  return out;
}

// ---------------------------------------------------------------------------
// In-memory cores shared by the commands, ablations and acceptance harness

/// child = stable_hash(master, "simulate-<split>", i); the ignition draw uses
/// its own stream derived from the child seed.
inline std::vector<Seq> simulate_split(const ExperimentConfig& cfg, const geo::Ecoregion& eco,
                                       const std::string& split, int count) {
  std::vector<Seq> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), cfg.worker_threads(), [&](std::size_t i) {
    const std::uint64_t child = stable_hash(cfg.master_seed, "simulate-" + split, i);
    Rng ignition_rng(stable_hash(child, "ignition", 0));
    const geo::Cell ignition = ca::sample_ignition(ignition_rng, eco);
    out[i] = ca::simulate(eco, cfg.ca, ignition, cfg.n_snapshots, child);
  });
  return out;
}

struct CaDatasets {
  geo::Ecoregion eco;
  std::vector<Seq> train, val, test;
};

inline CaDatasets simulate_all(const ExperimentConfig& cfg) {
  auto eco = make_ecoregion(cfg, cfg.grid_size);
  auto train = simulate_split(cfg, eco, "train", cfg.n_train_sims);
  auto val = simulate_split(cfg, eco, "val", cfg.n_val_sims);
  auto test = simulate_split(cfg, eco, "test", cfg.n_test_sims);
  return {std::move(eco), std::move(train), std::move(val), std::move(test)};
}

using VqModel = vq::VqVae<double>;

struct VqvaeRun {
  VqModel model;
  vq::VQVAEConfig config;
  vq::TrainResult result;
};

inline VqvaeRun train_vqvae_core(const ExperimentConfig& cfg, std::span<const Seq> train,
                                 const std::string& tag = "train-vqvae") {
  if (train.empty()) throw MissingInput("train-vqvae: no training sequences");
  auto tc = cfg.vqvae.train;
  tc.seed = stable_hash(cfg.master_seed, tag, 1);
  const vq::Dims clip{cfg.vqvae.clip_length, train[0].height, train[0].width};
  VqModel model(cfg.vqvae.spec, clip, tc.codebook_size, stable_hash(cfg.master_seed, tag, 0));
  std::vector<nn::Matrix<double>> clips;
  for (const auto& s : train) clips.push_back(model.clip_from_sequence(s));
  Stopwatch sw;
  auto result = vq::train<double>(model, clips, tc, [&](const vq::EpochLosses& e) {
    if (e.epoch % 10 == 0 || e.epoch + 1 == tc.epochs) {
      std::ostringstream msg;
      msg << "vqvae epoch " << e.epoch << " recon=" << e.mean.recon << " codebook=" << e.mean.codebook
          << " commit=" << e.mean.commit << " reseeded=" << e.reseeded_codes << " (" << sw.seconds()
          << " s)";
      log(msg.str());
    }
  });
  return {std::move(model), tc, std::move(result)};
}

struct GeneratedSet {
  std::vector<Seq> sequences;
  std::vector<std::size_t> sources;
};

inline GeneratedSet generate_core(const VqModel& model, std::span<const Seq> train, int count,
                                  double alpha, std::uint64_t seed, int threads) {
  auto samples = vq::generate_dataset(model, train, count, alpha, seed, threads);
  GeneratedSet out;
  for (auto& s : samples) {
    out.sequences.push_back(std::move(s.sequence));
    out.sources.push_back(s.source_index);
  }
  return out;
}

struct GenerationQuality {
  double median_violation = 0.0;
  double mean_violation = 0.0;
  double mean_total_variation = 0.0;
  float min_value = 0.0f;
  float max_value = 0.0f;
  std::vector<double> mean_area_curve;
  bool mean_area_nondecreasing = true;

  json to_json() const {
    return {{"median_monotonicity_violation", median_violation},
            {"mean_monotonicity_violation", mean_violation},
            {"mean_total_variation_per_frame", mean_total_variation},
            {"min_value", min_value},
            {"max_value", max_value},
            {"frames_in_unit_range", min_value >= 0.0f && max_value <= 1.0f},
            {"mean_area_curve", mean_area_curve},
            {"mean_area_nondecreasing", mean_area_nondecreasing}};
  }
};

inline GenerationQuality generation_quality(std::span<const Seq> seqs, double tau) {
  if (seqs.empty()) throw InvalidArgument("generation_quality: empty set");
  GenerationQuality q;
  std::vector<double> violations;
  double tv = 0.0;
  std::size_t frames = 0;
  q.min_value = 1.0f;
  q.max_value = 0.0f;
  q.mean_area_curve.assign(static_cast<std::size_t>(seqs[0].frames), 0.0);
  for (const auto& s : seqs) {
    violations.push_back(metrics::monotonicity_violation_rate(s, tau));
    for (int t = 0; t < s.frames; ++t) {
      tv += metrics::total_variation(s.frame(t), s.height, s.width);
      ++frames;
      if (static_cast<std::size_t>(t) < q.mean_area_curve.size())
        q.mean_area_curve[static_cast<std::size_t>(t)] +=
            static_cast<double>(metrics::burned_count(s.frame(t), tau)) / static_cast<double>(seqs.size());
    }
    const auto [lo, hi] = std::minmax_element(s.data.begin(), s.data.end());
    q.min_value = std::min(q.min_value, *lo);
    q.max_value = std::max(q.max_value, *hi);
  }
  q.median_violation = metrics::median(violations);
  q.mean_violation = metrics::mean(violations);
  q.mean_total_variation = tv / static_cast<double>(frames);
  for (std::size_t t = 1; t < q.mean_area_curve.size(); ++t)
    if (q.mean_area_curve[t] < q.mean_area_curve[t - 1]) q.mean_area_nondecreasing = false;
  return q;
}

/// Spearman correlation of final burned area with vegetation density around
/// the estimated ignition point. The barycentre moves to the first later frame
/// with burned cells when the 12 h frame is empty; fires that never burn are skipped.
inline double vegetation_area_spearman(std::span<const Seq> seqs, const geo::Ecoregion& eco,
                                       const ExperimentConfig& cfg, std::size_t* skipped = nullptr) {
  metrics::CovariateOptions opt;
  opt.neighbourhood_radius = cfg.evaluate.covariate_radius;
  opt.tau = cfg.evaluate.tau;
  std::vector<double> area, veg;
  std::size_t n_skipped = 0;
  for (const auto& s : seqs) {
    auto o = opt;
    o.at_hours = std::min(opt.at_hours, s.hours(s.frames - 1));
    int t = metrics::frame_at_hours(s, opt.barycentre_hours);
    while (t < s.frames && metrics::burned_count(s.frame(t), opt.tau) == 0) ++t;
    if (t == s.frames) {
      ++n_skipped;
      continue;
    }
    o.barycentre_hours = s.hours(t);
    const auto row = metrics::area_vs_covariates(std::span<const Seq>(&s, 1), eco, o).front();
    area.push_back(static_cast<double>(row.final_area));
    veg.push_back(row.mean_vegetation);
  }
  if (skipped) *skipped = n_skipped;
  if (area.size() < 2) throw DegenerateError("vegetation_area_spearman: fewer than two burning fires");
  return metrics::spearman(area, veg);
}

struct SurrogateRun {
  surrogate::LstmSurrogate<double> model;
  pod::PODBasis basis;
  surrogate::LossHistory history;
  pod::CompressionStats stats;
  std::size_t n_sequences = 0;
  std::size_t n_windows = 0;
  std::vector<std::string> warnings;
};

inline std::vector<surrogate::Window> windows_for(std::span<const Seq> seqs, const pod::PODBasis& basis,
                                                  const surrogate::WindowConfig& wc) {
  std::vector<surrogate::Window> out;
  for (const auto& s : seqs) {
    if (s.frames < wc.m_in + wc.m_out) continue;
    auto w = surrogate::make_windows(pod::encode_sequence(basis, s), wc);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

/// POD fit on the pool, then the LSTM on the pool's latent windows with
/// early stopping on the validation sims.
inline SurrogateRun train_surrogate_core(const ExperimentConfig& cfg, std::span<const Seq> pool,
                                         std::span<const Seq> validation, std::uint64_t seed) {
  if (pool.empty()) throw MissingInput("train-surrogate: empty training pool");
  std::vector<std::string> warnings;
  const auto wc = cfg.surrogate.lstm.window;
  std::vector<Seq> usable;
  for (const auto& s : pool)
    if (s.frames >= wc.m_in + wc.m_out) usable.push_back(s);
  if (usable.size() < pool.size())
    warnings.push_back(std::to_string(pool.size() - usable.size()) +
                       " sequences shorter than m_in + m_out were skipped");
  if (usable.empty()) throw InvalidArgument("train-surrogate: no sequence long enough for one window");

  const auto snapshots = pod::SnapshotMatrix::from_sequences(usable);
  int q = cfg.surrogate.q;
  const int max_q = static_cast<int>(std::min(snapshots.dim(), snapshots.n_state()));
  if (q > max_q) {
    warnings.push_back("POD q=" + std::to_string(q) + " exceeds min(dim, n_state)=" +
                       std::to_string(max_q) + "; clamped");
    q = max_q;
  }
  Stopwatch sw;
  auto basis = pod::fit(snapshots, q);
  const auto stats = pod::compression_stats(basis);
  log("pod fit: q=" + std::to_string(q) + " n_state=" + std::to_string(snapshots.n_state()) +
      " gamma=" + report::num(stats.gamma) + " (" + report::num(sw.seconds()) + " s)");
  if (stats.gamma < 0.99)
    warnings.push_back("POD retained energy gamma=" + report::num(stats.gamma) + " is below 0.99");

  const auto train_windows = windows_for(usable, basis, wc);
  const auto val_windows = windows_for(validation, basis, wc);
  surrogate::LstmSurrogate<double> model(q, cfg.surrogate.lstm, stable_hash(seed, "lstm-init", 0));
  surrogate::TrainConfig tc;
  tc.epochs = cfg.surrogate.epochs;
  tc.learning_rate = cfg.surrogate.learning_rate;
  tc.batch_size = cfg.surrogate.batch_size;
  tc.patience = cfg.surrogate.patience;
  tc.seed = stable_hash(seed, "lstm-train", 0);
  tc.on_epoch = [&](int epoch, double train_loss, double val_loss) {
    if (epoch % 25 == 0)
      log("lstm epoch " + std::to_string(epoch) + " train=" + report::num(train_loss) +
          " val=" + report::num(val_loss) + " (" + report::num(sw.seconds()) + " s)");
  };
  auto history = surrogate::train(model, train_windows, val_windows, tc);
  return {std::move(model), std::move(basis), std::move(history), stats, usable.size(),
          train_windows.size(),  std::move(warnings)};
}

/// Mode pool: CA training sims, plus thresholded generated sequences when
/// proposed.
inline std::vector<Seq> surrogate_pool(std::span<const Seq> train, std::span<const Seq> generated,
                                       double tau) {
  std::vector<Seq> pool(train.begin(), train.end());
  for (const auto& g : generated) pool.push_back(metrics::threshold_sequence(g, tau));
  return pool;
}

inline Seq slice(const Seq& s, int start, int count) {
  Seq out(count, s.height, s.width);
  out.snapshot_interval_hours = s.snapshot_interval_hours;
  out.ignition = s.ignition;
  out.seed = s.seed;
  std::copy_n(s.data.begin() + static_cast<std::ptrdiff_t>(start * s.frame_size()),
              static_cast<std::ptrdiff_t>(count * s.frame_size()), out.data.begin());
  return out;
}

struct FrameMetrics {
  std::size_t fire = 0;
  int frame = 0;
  double hours = 0.0;
  double mismatch = 0.0;
  double frobenius = 0.0;
  double ssim = 0.0;
  std::size_t area_true = 0;
  std::size_t area_pred = 0;
};

struct FireMetrics {
  std::size_t fire = 0;
  std::uint64_t seed = 0;
  double mismatch = 0.0;
  double frobenius = 0.0;
  double ssim = 0.0;
};

struct EvalResult {
  std::vector<FrameMetrics> frames;
  std::vector<FireMetrics> fires;
  double mean_mismatch = 0.0;
  double mean_frobenius = 0.0;
  double mean_ssim = 0.0;
  std::vector<Seq> truths;
  std::vector<Seq> predictions;

  json summary() const {
    json per_fire = json::array();
    for (const auto& f : fires)
      per_fire.push_back({{"fire", f.fire}, {"seed", f.seed}, {"relative_mismatch", f.mismatch},
                          {"frobenius_relative", f.frobenius}, {"ssim", f.ssim}});
    return {{"fires", fires.size()},
            {"mean_relative_mismatch", mean_mismatch},
            {"mean_frobenius_relative", mean_frobenius},
            {"mean_ssim", mean_ssim},
            {"per_fire", per_fire}};
  }

  report::Csv csv() const {
    report::Csv c({"fire", "frame", "hours", "relative_mismatch", "frobenius_relative", "ssim",
                   "area_true", "area_pred"});
    for (const auto& f : frames)
      c.row({std::to_string(f.fire), std::to_string(f.frame), report::num(f.hours),
             report::num(f.mismatch), report::num(f.frobenius), report::num(f.ssim),
             std::to_string(f.area_true), std::to_string(f.area_pred)});
    return c;
  }
};

/// Observed input frames for one fire -> binary prediction of `horizon` frames.
using Predictor = std::function<Seq(const Seq& observed, std::size_t fire_index)>;

/// Feeds frames [first, first + m_in) and scores the next `horizon` frames.
inline EvalResult evaluate_fires(std::span<const Seq> test, const Predictor& predict,
                                 const EvaluateSettings& es, int m_in) {
  if (test.empty()) throw MissingInput("evaluate: empty test set");
  const int needed = es.first_input_frame + m_in + es.horizon;
  EvalResult r;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Seq& fire = test[i];
    if (fire.frames < needed)
      throw InvalidArgument("evaluate: test fire " + std::to_string(i) + " has " +
                            std::to_string(fire.frames) + " frames, need " + std::to_string(needed));
    const Seq observed = slice(fire, es.first_input_frame, m_in);
    const Seq truth = slice(fire, es.first_input_frame + m_in, es.horizon);
    const Seq pred = predict(observed, i);
    if (pred.frames != es.horizon || pred.height != fire.height || pred.width != fire.width)
      throw InvalidArgument("evaluate: predictor returned the wrong shape");
    FireMetrics fm{i, fire.seed, 0.0, 0.0, 0.0};
    for (int t = 0; t < es.horizon; ++t) {
      const auto tb = metrics::threshold_burned(truth.frame(t), es.tau);
      const auto pb = metrics::threshold_burned(pred.frame(t), es.tau);
      FrameMetrics f;
      f.fire = i;
      f.frame = es.first_input_frame + m_in + t;
      f.hours = fire.hours(f.frame);
      f.mismatch = metrics::relative_mismatch(pb, tb);
      f.frobenius = metrics::frobenius_relative(pb, tb);
      f.ssim = metrics::ssim(pb, tb, fire.height, fire.width);
      f.area_true = metrics::burned_count(tb, es.tau);
      f.area_pred = metrics::burned_count(pb, es.tau);
      fm.mismatch += f.mismatch / es.horizon;
      fm.frobenius += f.frobenius / es.horizon;
      fm.ssim += f.ssim / es.horizon;
      r.frames.push_back(f);
    }
    r.fires.push_back(fm);
    r.truths.push_back(truth);
    r.predictions.push_back(pred);
  }
  for (const auto& f : r.fires) {
    r.mean_mismatch += f.mismatch;
    r.mean_frobenius += f.frobenius;
    r.mean_ssim += f.ssim;
  }
  const auto n = static_cast<double>(r.fires.size());
  r.mean_mismatch /= n;
  r.mean_frobenius /= n;
  r.mean_ssim /= n;
  return r;
}

inline Predictor surrogate_predictor(const SurrogateRun& run, const EvaluateSettings& es) {
  return [&run, es](const Seq& observed, std::size_t) {
    return surrogate::predict_burned(run.model, run.basis, observed, es.horizon, es.tau).binary;
  };
}

/// One end-to-end comparison at the configured seed: returns evaluation of
/// both surrogate modes on the same held-out fires.
struct Comparison {
  EvalResult baseline;
  EvalResult proposed;
  GenerationQuality quality;
  std::vector<std::string> warnings;
};

inline Comparison compare_modes(const ExperimentConfig& cfg, const CaDatasets& data) {
  auto vq_run = train_vqvae_core(cfg, data.train);
  auto gen = generate_core(vq_run.model, data.train, cfg.n_generated, cfg.vqvae.train.alpha,
                           cfg.master_seed, cfg.worker_threads());
  Comparison c;
  c.quality = generation_quality(gen.sequences, cfg.evaluate.tau);
  const auto m_in = cfg.surrogate.lstm.window.m_in;
  for (const std::string mode : {"baseline", "proposed"}) {
    const auto pool = surrogate_pool(data.train, mode == "proposed" ? std::span<const Seq>(gen.sequences)
                                                                    : std::span<const Seq>(),
                                     cfg.evaluate.tau);
    const auto run = train_surrogate_core(cfg, pool, data.val, stable_hash(cfg.master_seed, "surrogate-" + mode, 0));
    c.warnings.insert(c.warnings.end(), run.warnings.begin(), run.warnings.end());
    (mode == "baseline" ? c.baseline : c.proposed) =
        evaluate_fires(data.test, surrogate_predictor(run, cfg.evaluate), cfg.evaluate, m_in);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Commands

inline fs::path cmd_simulate(const ExperimentConfig& cfg) {
  RunContext ctx(cfg, "simulate");
  const Layout& L = ctx.layout();
  Stopwatch sw;
  auto eco = make_ecoregion(cfg, cfg.grid_size);
  save_ecoregion(eco, L.ecoregion(), cfg.master_seed, ctx);
  ctx.seed("ecoregion", stable_hash(cfg.master_seed, "ecoregion", 0));
  for (const auto& [split, count] :
       std::vector<std::pair<std::string, int>>{{"train", cfg.n_train_sims}, {"val", cfg.n_val_sims},
                                                {"test", cfg.n_test_sims}}) {
    const auto seqs = simulate_split(cfg, eco, split, count);
    json meta{{"split", split},
              {"generated", false},
              {"grid_size", cfg.grid_size},
              {"n_snapshots", cfg.n_snapshots},
              {"ca", config_to_json(cfg).at("ca")}};
    write_dataset(L.split(split), seqs, meta, ctx);
    for (std::size_t i = 0; i < seqs.size(); ++i) ctx.seed(split + "/" + member_name(i), seqs[i].seed);
    log("simulated " + std::to_string(count) + " " + split + " fires");
  }
  ctx.timing("simulate", sw.seconds());
  return ctx.finish();
}

inline fs::path cmd_train_vqvae(const ExperimentConfig& cfg) {
  RunContext ctx(cfg, "train-vqvae");
  const Layout& L = ctx.layout();
  const auto train = load_dataset(L.split("train"), &ctx, "simulate");
  Stopwatch sw;
  auto run = train_vqvae_core(cfg, train);
  ctx.timing("train", sw.seconds());
  ctx.seed("vqvae-init", stable_hash(cfg.master_seed, "train-vqvae", 0));
  ctx.seed("vqvae-train", run.config.seed);
  run.model.save(L.vqvae_model(), run.config);
  ctx.output(L.vqvae_model());

  report::Csv csv({"epoch", "recon", "codebook", "commit", "total", "reseeded_codes"});
  report::Series recon{"reconstruction", {}, {}}, cb{"codebook", {}, {}}, commit{"commitment", {}, {}};
  for (const auto& e : run.result.history) {
    csv.row({std::to_string(e.epoch), report::num(e.mean.recon), report::num(e.mean.codebook),
             report::num(e.mean.commit), report::num(e.mean.total), std::to_string(e.reseeded_codes)});
    for (auto* s : {&recon, &cb, &commit}) s->x.push_back(e.epoch);
    recon.y.push_back(e.mean.recon);
    cb.y.push_back(e.mean.codebook);
    commit.y.push_back(e.mean.commit);
  }
  csv.write(L.vqvae_dir() / "loss.csv");
  ctx.output(L.vqvae_dir() / "loss.csv");
  const std::vector<report::Series> series{recon, cb, commit};
  report::write_line_plot(L.vqvae_dir() / "loss.svg", "VQ-VAE training loss", "epoch", "loss",
                          series, true);
  ctx.output(L.vqvae_dir() / "loss.svg");
  if (!run.result.history.empty()) {
    const auto& first = run.result.history.front().mean;
    const auto& last = run.result.history.back().mean;
    ctx.extra() = {{"recon_first", first.recon}, {"recon_last", last.recon}};
  }
  return ctx.finish();
}

inline VqModel load_vqvae(const Layout& L, RunContext& ctx) {
  if (!fs::exists(L.vqvae_model()))
    throw MissingInput("missing VQ-VAE checkpoint " + L.vqvae_model().string() +
                       "; run `firegen train-vqvae` first");
  ctx.input(L.vqvae_model());
  return VqModel::load(L.vqvae_model()).model;
}

inline fs::path cmd_generate(const ExperimentConfig& cfg) {
  RunContext ctx(cfg, "generate");
  const Layout& L = ctx.layout();
  const auto train = load_dataset(L.split("train"), &ctx, "simulate");
  const auto model = load_vqvae(L, ctx);
  Stopwatch sw;
  const double alpha = cfg.vqvae.train.alpha;
  auto gen = generate_core(model, train, cfg.n_generated, alpha, cfg.master_seed, cfg.worker_threads());
  ctx.timing("generate", sw.seconds());
  json meta{{"generated", true},
            {"alpha", alpha},
            {"source_dataset", "data/train"},
            {"grid_size", train[0].height},
            {"n_snapshots", model.clip_dims().t}};
  write_dataset(L.generated(), gen.sequences, meta, ctx, gen.sources);
  for (std::size_t i = 0; i < gen.sequences.size(); ++i)
    ctx.seed("generated/" + member_name(i), gen.sequences[i].seed);

  const auto q = generation_quality(gen.sequences, cfg.evaluate.tau);
  if (q.min_value < 0.0f || q.max_value > 1.0f)
    throw NumericalFailure("generated frames left [0,1]");
  json quality = q.to_json();
  auto eco = load_ecoregion(L.ecoregion(), &ctx);
  auto spearman = [&](std::span<const Seq> seqs, const std::string& key) {
    try {
      quality[key] = vegetation_area_spearman(seqs, eco, cfg);
    } catch (const DegenerateError& e) {
      quality[key] = nullptr;
      ctx.warn(key + ": " + e.what());
    }
  };
  spearman(gen.sequences, "spearman_area_vegetation_generated");
  spearman(train, "spearman_area_vegetation_ca");
  write_json(L.generated() / "quality.json", quality);
  ctx.output(L.generated() / "quality.json");
  const std::size_t shown = std::min<std::size_t>(4, gen.sequences.size());
  report::write_sequence_strip(L.generated() / "samples.ppm",
                               std::span<const Seq>(gen.sequences).first(shown));
  ctx.output(L.generated() / "samples.ppm");
  log("generated " + std::to_string(gen.sequences.size()) + " sequences at alpha=" + report::num(alpha));
  return ctx.finish();
}

inline void check_mode(const std::string& mode) {
  if (mode != "baseline" && mode != "proposed")
    throw InvalidArgument("mode must be baseline or proposed, got '" + mode + "'");
}

inline fs::path cmd_train_surrogate(const ExperimentConfig& cfg, const std::string& mode) {
  check_mode(mode);
  RunContext ctx(cfg, "train-surrogate-" + mode);
  const Layout& L = ctx.layout();
  const auto train = load_dataset(L.split("train"), &ctx, "simulate");
  const auto val = load_dataset(L.split("val"), &ctx, "simulate");
  std::vector<Seq> generated;
  if (mode == "proposed") {
    if (!fs::exists(L.generated() / "manifest.json"))
      throw MissingInput("proposed mode needs generated data in " + L.generated().string() +
                         "; run `firegen generate` first");
    generated = load_dataset(L.generated(), &ctx, "generate");
  }
  const auto pool = surrogate_pool(train, generated, cfg.evaluate.tau);
  const std::uint64_t seed = stable_hash(cfg.master_seed, "surrogate-" + mode, 0);
  ctx.seed("surrogate", seed);
  Stopwatch sw;
  auto run = train_surrogate_core(cfg, pool, val, seed);
  ctx.timing("train", sw.seconds());
  for (const auto& w : run.warnings) ctx.warn(w);

  const fs::path dir = L.surrogate_dir(mode);
  fs::create_directories(dir);
  pod::save_basis(run.basis, dir / "pod.fpod");
  ctx.output(dir / "pod.fpod");
  run.model.save(dir / "model.flsm", "pod.fpod", io::file_checksum(dir / "pod.fpod"));
  ctx.output(dir / "model.flsm");

  report::Csv csv({"epoch", "train_loss", "validation_loss", "best_validation_so_far"});
  report::Series tr{"train", {}, {}}, va{"validation", {}, {}};
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < run.history.train.size(); ++e) {
    const double v = e < run.history.validation.size() ? run.history.validation[e]
                                                       : std::numeric_limits<double>::quiet_NaN();
    if (v < best) best = v;
    csv.row({std::to_string(e), report::num(run.history.train[e]), report::num(v), report::num(best)});
    tr.x.push_back(static_cast<double>(e));
    va.x.push_back(static_cast<double>(e));
    tr.y.push_back(run.history.train[e]);
    va.y.push_back(v);
  }
  csv.write(dir / "loss.csv");
  ctx.output(dir / "loss.csv");
  const std::vector<report::Series> series{tr, va};
  report::write_line_plot(dir / "loss.svg", "Surrogate loss (" + mode + ")", "epoch", "loss", series, true);
  ctx.output(dir / "loss.svg");
  write_json(dir / "summary.json", {{"mode", mode},
                                    {"pool_sequences", run.n_sequences},
                                    {"generated_sequences", generated.size()},
                                    {"windows", run.n_windows},
                                    {"q", run.basis.q},
                                    {"gamma", run.stats.gamma},
                                    {"rho", run.stats.rho},
                                    {"epochs_run", run.history.train.size()},
                                    {"best_epoch", run.history.best_epoch},
                                    {"best_validation", run.history.best_validation}});
  ctx.output(dir / "summary.json");
  return ctx.finish();
}

struct LoadedSurrogate {
  surrogate::LstmSurrogate<double> model;
  pod::PODBasis basis;
};

inline LoadedSurrogate load_surrogate(const Layout& L, const std::string& mode, RunContext& ctx) {
  const fs::path dir = L.surrogate_dir(mode);
  if (!fs::exists(dir / "model.flsm"))
    throw MissingInput("missing " + mode + " surrogate in " + dir.string() +
                       "; run `firegen train-surrogate --mode " + mode + "` first");
  auto loaded = surrogate::LstmSurrogate<double>::load(dir / "model.flsm");
  const fs::path pod_path = dir / loaded.pod_path;
  if (!fs::exists(pod_path)) throw MissingInput("missing POD basis " + pod_path.string());
  if (io::file_checksum(pod_path) != loaded.pod_checksum)
    throw FormatError("POD basis " + pod_path.string() + " does not match the surrogate checkpoint");
  ctx.input(dir / "model.flsm");
  ctx.input(pod_path);
  return {std::move(loaded.model), pod::load_basis(pod_path)};
}

inline void write_eval_outputs(const EvalResult& r, const fs::path& dir, const ExperimentConfig& cfg,
                               RunContext& ctx) {
  r.csv().write(dir / "metrics.csv");
  ctx.output(dir / "metrics.csv");
  write_json(dir / "summary.json", r.summary());
  ctx.output(dir / "summary.json");

  std::vector<report::MontageRow> rows;
  const auto shown = std::min<std::size_t>(static_cast<std::size_t>(cfg.evaluate.montage_fires), r.fires.size());
  for (std::size_t i = 0; i < shown; ++i) rows.push_back({&r.truths[i], &r.predictions[i]});
  report::write_mismatch_montage(dir / "mismatch.ppm", rows, cfg.evaluate.tau);
  ctx.output(dir / "mismatch.ppm");

  std::vector<report::Series> curves;
  for (std::size_t i = 0; i < shown; ++i) {
    report::Series t{"fire " + std::to_string(i) + " truth", {}, {}};
    report::Series p{"fire " + std::to_string(i) + " predicted", {}, {}};
    for (const auto& f : r.frames)
      if (f.fire == i) {
        t.x.push_back(f.hours);
        p.x.push_back(f.hours);
        t.y.push_back(static_cast<double>(f.area_true));
        p.y.push_back(static_cast<double>(f.area_pred));
      }
    curves.push_back(std::move(t));
    curves.push_back(std::move(p));
  }
  report::write_line_plot(dir / "burned_area.svg", "Burned area", "hours after ignition",
                          "burned cells", curves);
  ctx.output(dir / "burned_area.svg");
}

inline void write_comparison(const json& base, const json& prop, const fs::path& path) {
  report::Csv c({"fire", "seed", "baseline_mismatch", "proposed_mismatch", "baseline_ssim",
                 "proposed_ssim"});
  const auto& b = base.at("per_fire");
  const auto& p = prop.at("per_fire");
  if (b.size() != p.size()) throw InvalidArgument("comparison: evaluations cover different fires");
  for (std::size_t i = 0; i < b.size(); ++i)
    c.row({std::to_string(i), std::to_string(b[i].at("seed").get<std::uint64_t>()),
           report::num(b[i].at("relative_mismatch").get<double>()),
           report::num(p[i].at("relative_mismatch").get<double>()),
           report::num(b[i].at("ssim").get<double>()), report::num(p[i].at("ssim").get<double>())});
  c.row({"mean", "", report::num(base.at("mean_relative_mismatch").get<double>()),
         report::num(prop.at("mean_relative_mismatch").get<double>()),
         report::num(base.at("mean_ssim").get<double>()), report::num(prop.at("mean_ssim").get<double>())});
  c.write(path);
}

/// Evaluates one mode, or both trained modes when `mode` is empty. Writes the
/// paired comparison table whenever both evaluations exist.
inline fs::path cmd_evaluate(const ExperimentConfig& cfg, const std::string& mode = {}) {
  RunContext ctx(cfg, mode.empty() ? "evaluate" : "evaluate-" + mode);
  const Layout& L = ctx.layout();
  std::vector<std::string> modes;
  if (!mode.empty()) {
    check_mode(mode);
    modes.push_back(mode);
  } else {
    for (const std::string m : {"baseline", "proposed"})
      if (fs::exists(L.surrogate_dir(m) / "model.flsm")) modes.push_back(m);
    if (modes.empty())
      throw MissingInput("no trained surrogate found; run `firegen train-surrogate` first");
  }
  const auto test = load_dataset(L.split("test"), &ctx, "simulate");
  for (const auto& m : modes) {
    const auto s = load_surrogate(L, m, ctx);
    EvaluateSettings es = cfg.evaluate;
    const Predictor predict = [&](const Seq& observed, std::size_t) {
      return surrogate::predict_burned(s.model, s.basis, observed, es.horizon, es.tau).binary;
    };
    const auto r = evaluate_fires(test, predict, es, s.model.window().m_in);
    write_eval_outputs(r, L.eval_dir() / m, cfg, ctx);
    log(m + ": mean relative mismatch=" + report::num(r.mean_mismatch) +
        " mean SSIM=" + report::num(r.mean_ssim));
  }
  const fs::path b = L.eval_dir() / "baseline" / "summary.json";
  const fs::path p = L.eval_dir() / "proposed" / "summary.json";
  if (fs::exists(b) && fs::exists(p)) {
    write_comparison(read_json(b), read_json(p), L.eval_dir() / "comparison.csv");
    ctx.output(L.eval_dir() / "comparison.csv");
  }
  return ctx.finish();
}

struct SweepRow {
  double value = 0.0;
  int seed_index = 0;
  std::map<std::string, double> metrics;
};

/// Mean-mismatch sweep over the generated-count; seed s reuses the same
/// generation stream for every count, so larger sets extend smaller ones.
inline std::vector<SweepRow> sweep_generated_count(const ExperimentConfig& cfg, const CaDatasets& data,
                                                   const VqModel& model, std::span<const double> values) {
  std::vector<SweepRow> rows;
  const auto m_in = cfg.surrogate.lstm.window.m_in;
  for (int s = 0; s < cfg.ablate.seeds_per_value; ++s) {
    const std::uint64_t seed = stable_hash(cfg.master_seed, "ablate-generated_count", static_cast<std::uint64_t>(s));
    const int max_count = static_cast<int>(*std::max_element(values.begin(), values.end()));
    const auto gen = generate_core(model, data.train, max_count, cfg.vqvae.train.alpha, seed,
                                   cfg.worker_threads());
    for (double v : values) {
      const auto count = static_cast<std::size_t>(v);
      const auto pool = surrogate_pool(
          data.train, std::span<const Seq>(gen.sequences).first(count), cfg.evaluate.tau);
      const auto run = train_surrogate_core(cfg, pool, data.val, stable_hash(seed, "surrogate", 0));
      const auto r = evaluate_fires(data.test, surrogate_predictor(run, cfg.evaluate), cfg.evaluate, m_in);
      log("generated_count=" + std::to_string(count) + " seed=" + std::to_string(s) +
          " mismatch=" + report::num(r.mean_mismatch) + " ssim=" + report::num(r.mean_ssim));
      rows.push_back({v, s, {{"mean_mismatch", r.mean_mismatch}, {"mean_ssim", r.mean_ssim},
                             {"gamma", run.stats.gamma}}});
    }
  }
  return rows;
}

inline std::vector<SweepRow> sweep_alpha(const ExperimentConfig& cfg, const CaDatasets& data,
                                         const VqModel& model, std::span<const double> values,
                                         std::vector<std::vector<Seq>>* samples = nullptr) {
  std::vector<SweepRow> rows;
  for (double v : values)
    for (int s = 0; s < cfg.ablate.seeds_per_value; ++s) {
      const auto gen = generate_core(model, data.train, cfg.n_generated, v,
                                     stable_hash(cfg.master_seed, "ablate-alpha", static_cast<std::uint64_t>(s)),
                                     cfg.worker_threads());
      const auto q = generation_quality(gen.sequences, cfg.evaluate.tau);
      rows.push_back({v, s, {{"median_violation", q.median_violation},
                             {"mean_violation", q.mean_violation},
                             {"mean_total_variation", q.mean_total_variation},
                             {"spearman_area_vegetation", vegetation_area_spearman(gen.sequences, data.eco, cfg)}}});
      if (samples && s == 0)
        samples->emplace_back(gen.sequences.begin(),
                              gen.sequences.begin() + std::min<std::ptrdiff_t>(3, std::ssize(gen.sequences)));
    }
  return rows;
}

inline std::vector<SweepRow> sweep_beta(const ExperimentConfig& cfg, const CaDatasets& data,
                                        std::span<const double> values,
                                        std::vector<std::vector<Seq>>* samples = nullptr) {
  std::vector<SweepRow> rows;
  for (double v : values)
    for (int s = 0; s < cfg.ablate.seeds_per_value; ++s) {
      auto c = cfg;
      c.vqvae.train.beta = v;
      const auto tag = "ablate-beta-" + std::to_string(s);
      auto run = train_vqvae_core(c, data.train, tag);
      const auto gen = generate_core(run.model, data.train, cfg.n_generated, cfg.vqvae.train.alpha,
                                     stable_hash(cfg.master_seed, tag, 2), cfg.worker_threads());
      const auto q = generation_quality(gen.sequences, cfg.evaluate.tau);
      const auto& last = run.result.history.back().mean;
      rows.push_back({v, s, {{"final_recon", last.recon},
                             {"final_commit", last.commit},
                             {"median_violation", q.median_violation},
                             {"mean_total_variation", q.mean_total_variation}}});
      if (samples && s == 0)
        samples->emplace_back(gen.sequences.begin(),
                              gen.sequences.begin() + std::min<std::ptrdiff_t>(3, std::ssize(gen.sequences)));
    }
  return rows;
}

/// Per value: the mean and the best (lowest for mismatch-like metrics) over seeds.
inline std::map<double, std::pair<double, double>> aggregate(std::span<const SweepRow> rows,
                                                             const std::string& metric) {
  std::map<double, std::vector<double>> by_value;
  for (const auto& r : rows) by_value[r.value].push_back(r.metrics.at(metric));
  std::map<double, std::pair<double, double>> out;
  for (const auto& [v, xs] : by_value)
    out[v] = {metrics::mean(xs), *std::min_element(xs.begin(), xs.end())};
  return out;
}

inline fs::path cmd_ablate(const ExperimentConfig& cfg, const std::string& parameter,
                           std::vector<double> values) {
  if (parameter != "alpha" && parameter != "beta" && parameter != "generated_count")
    throw InvalidArgument("ablate parameter must be alpha, beta or generated_count");
  if (values.empty()) {
    values = parameter == "alpha" ? cfg.ablate.alpha_values
             : parameter == "beta" ? cfg.ablate.beta_values
                                   : cfg.ablate.generated_count_values;
  }
  if (values.empty()) throw InvalidArgument("ablate: empty value list");
  for (double v : values) {
    if (parameter == "alpha" && !(v >= 0.0 && v <= 1.0)) throw InvalidArgument("alpha values must lie in [0,1]");
    if (parameter == "beta" && !(v >= 0.0)) throw InvalidArgument("beta values must be >= 0");
    if (parameter == "generated_count" && !(v >= 1.0 && v == std::floor(v)))
      throw InvalidArgument("generated_count values must be positive integers");
  }
  RunContext ctx(cfg, "ablate-" + parameter);
  const Layout& L = ctx.layout();
  CaDatasets data{load_ecoregion(L.ecoregion(), &ctx), load_dataset(L.split("train"), &ctx, "simulate"),
                  load_dataset(L.split("val"), &ctx, "simulate"),
                  load_dataset(L.split("test"), &ctx, "simulate")};
  std::vector<SweepRow> rows;
  std::vector<std::vector<Seq>> samples;
  std::string headline;
  if (parameter == "alpha") {
    rows = sweep_alpha(cfg, data, load_vqvae(L, ctx), values, &samples);
    headline = "median_violation";
  } else if (parameter == "beta") {
    rows = sweep_beta(cfg, data, values, &samples);
    headline = "final_recon";
  } else {
    rows = sweep_generated_count(cfg, data, load_vqvae(L, ctx), values);
    headline = "mean_mismatch";
  }

  const fs::path dir = L.ablate_dir(parameter);
  std::vector<std::string> header{"value", "seed"};
  for (const auto& [k, v] : rows.front().metrics) header.push_back(k);
  report::Csv table(header);
  for (const auto& r : rows) {
    std::vector<std::string> cells{report::num(r.value), std::to_string(r.seed_index)};
    for (const auto& [k, v] : r.metrics) cells.push_back(report::num(v));
    table.row(cells);
  }
  table.write(dir / "table.csv");
  ctx.output(dir / "table.csv");

  const auto agg = aggregate(rows, headline);
  report::Csv summary({"value", "mean_" + headline, "best_" + headline});
  report::Series mean_s{"mean over seeds", {}, {}}, best_s{"best seed", {}, {}};
  for (const auto& [v, mb] : agg) {
    summary.row({report::num(v), report::num(mb.first), report::num(mb.second)});
    mean_s.x.push_back(v);
    best_s.x.push_back(v);
    mean_s.y.push_back(mb.first);
    best_s.y.push_back(mb.second);
  }
  summary.write(dir / "summary.csv");
  ctx.output(dir / "summary.csv");
  const std::vector<report::Series> series{mean_s, best_s};
  report::write_line_plot(dir / "plot.svg", headline + " vs " + parameter, parameter, headline, series);
  ctx.output(dir / "plot.svg");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const fs::path p = dir / ("samples_" + report::num(values[i]) + ".ppm");
    report::write_sequence_strip(p, samples[i]);
    ctx.output(p);
  }
  if (agg.size() >= 2) {
    std::vector<double> xs, best;
    for (const auto& [v, mb] : agg) {
      xs.push_back(v);
      best.push_back(mb.second);
    }
    ctx.extra() = {{"best_seed_ls_slope", metrics::ls_slope(xs, best)}};
  }
  return ctx.finish();
}

struct BenchResult {
  std::vector<double> ca_seconds;
  std::vector<double> generate_seconds;
  double ca_mean = 0.0, ca_std = 0.0;
  double generate_mean = 0.0, generate_std = 0.0;
  double ratio = 0.0;
};

/// Wall-clock per sequence for one CA run and one VQ-VAE generation at the
/// same grid size and sequence length.
inline BenchResult bench_core(const ExperimentConfig& cfg, const VqModel& model) {
  const int n = cfg.bench.grid_size;
  const auto eco = make_ecoregion(cfg, n);
  const auto clip = model.clip_dims();
  if (clip.h != n || clip.w != n || clip.t > cfg.bench.n_snapshots)
    throw InvalidArgument("bench: model clip " + vq::to_string(clip) + " does not match the bench grid");
  BenchResult r;
  Seq source;
  for (int i = 0; i < cfg.bench.runs; ++i) {
    const std::uint64_t child = stable_hash(cfg.master_seed, "bench-ca", static_cast<std::uint64_t>(i));
    Rng ig(stable_hash(child, "ignition", 0));
    const auto cell = ca::sample_ignition(ig, eco);
    Stopwatch sw;
    auto seq = ca::simulate(eco, cfg.ca, cell, cfg.bench.n_snapshots, child);
    r.ca_seconds.push_back(sw.seconds());
    if (i == 0) source = std::move(seq);
  }
  const auto x = model.clip_from_sequence(source);
  for (int i = 0; i < cfg.bench.runs; ++i) {
    Rng rng(stable_hash(cfg.master_seed, "bench-generate", static_cast<std::uint64_t>(i)));
    Stopwatch sw;
    const auto y = vq::generate(model, x, cfg.vqvae.train.alpha, rng);
    r.generate_seconds.push_back(sw.seconds());
    if (!y.allFinite()) throw NumericalFailure("bench: generation produced non-finite values");
  }
  r.ca_mean = metrics::mean(r.ca_seconds);
  r.ca_std = metrics::stddev(r.ca_seconds);
  r.generate_mean = metrics::mean(r.generate_seconds);
  r.generate_std = metrics::stddev(r.generate_seconds);
  r.ratio = r.ca_mean / r.generate_mean;
  return r;
}

inline fs::path cmd_bench(const ExperimentConfig& cfg) {
  RunContext ctx(cfg, "bench");
  const Layout& L = ctx.layout();
  const auto trained = load_vqvae(L, ctx);
  const auto clip = trained.clip_dims();
  const auto model = trained.with_clip_dims({clip.t, cfg.bench.grid_size, cfg.bench.grid_size});
  const auto r = bench_core(cfg, model);
  report::Csv csv({"run", "ca_seconds", "generate_seconds"});
  for (std::size_t i = 0; i < r.ca_seconds.size(); ++i)
    csv.row({std::to_string(i), report::num(r.ca_seconds[i]), report::num(r.generate_seconds[i])});
  csv.write(L.bench_dir() / "timing.csv");
  ctx.output(L.bench_dir() / "timing.csv");
  write_json(L.bench_dir() / "summary.json",
             {{"grid_size", cfg.bench.grid_size},
              {"n_snapshots", cfg.bench.n_snapshots},
              {"steps_per_snapshot", cfg.ca.steps_per_snapshot},
              {"runs", cfg.bench.runs},
              {"ca_mean_s", r.ca_mean},
              {"ca_std_s", r.ca_std},
              {"generate_mean_s", r.generate_mean},
              {"generate_std_s", r.generate_std},
              {"ca_over_generate", r.ratio}});
  ctx.output(L.bench_dir() / "summary.json");
  log("CA " + report::num(r.ca_mean) + " s, generate " + report::num(r.generate_mean) +
      " s, ratio " + report::num(r.ratio));
  return ctx.finish();
}

}  // namespace firegen::pipeline
