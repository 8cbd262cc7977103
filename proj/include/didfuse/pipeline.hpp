#pragma once

// End-to-end workflows behind the command-line tool: training, fusion,
// decomposition dumps, metric tables, ablations and the seed-dispersion
// harness.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "didfuse/checkpoint.hpp"
#include "didfuse/fusion.hpp"
#include "didfuse/io.hpp"
#include "didfuse/loss.hpp"
#include "didfuse/metrics.hpp"
#include "didfuse/network.hpp"

namespace didfuse {

enum class Precision { kFloat, kDouble };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

// Training variants: the loss variants plus "no-skip", which keeps the full
// loss and removes the skip connections.
inline const std::vector<std::string> kTrainVariants = {"full",      "no-base",    "no-detail",
                                                        "no-decomp", "classic-ae", "no-skip"};

struct TrainConfig {
  int epochs = 120;
  int batch_size = 24;
  double lr = 1e-3;
  std::size_t width = 64;
  std::size_t crop = 128;
  std::uint64_t seed = 0;
  std::string variant = "full";
  SkipMode skip_mode = SkipMode::kAdd;
  Precision precision = Precision::kFloat;
  LossConfig loss;  // variant field is derived from `variant`

  void validate() const;
  Architecture architecture() const;
  LossConfig loss_config() const;
};

// Step schedule: lr / 10 from epoch floor(E/3), lr / 100 from floor(2E/3).
// Epochs are 0-based here.
double lr_for_epoch(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  LossBreakdown mean;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

std::string loss_csv_header();
std::string loss_csv_row(const EpochRecord& e);
void write_loss_csv(const RunRecord& run, const std::filesystem::path& path);

struct TrainingSet {
  std::vector<std::string> ids;
  std::vector<Image> ir;
  std::vector<Image> vis;

  std::size_t size() const { return ids.size(); }
};

// Loads every pair and center-crops both images.
TrainingSet load_training_set(const PairManifest& manifest, std::size_t crop);

struct TrainResult {
  Checkpoint checkpoint;
  RunRecord record;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Throws std::runtime_error as soon as any loss or gradient is not finite.
TrainResult train(const TrainingSet& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

enum class FusionSkip { kAverage, kIr, kVis, kFusedSam };
std::string to_string(FusionSkip s);
FusionSkip parse_fusion_skip(const std::string& s);

struct FuseOptions {
  fusion::FusionConfig fusion;
  FusionSkip skip = FusionSkip::kAverage;
};

// Eval-mode inference in double precision.
Image reconstruct_image(const NetworkParams<float>& params, const Image& img);
Image fuse_images(const NetworkParams<float>& params, const Image& ir, const Image& vis, const FuseOptions& opts);

// Writes the fused image and a JSON sidecar (<out>.json) describing the run.
void fuse_files(const Checkpoint& ckpt, const std::filesystem::path& ir, const std::filesystem::path& vis,
                const FuseOptions& opts, const std::filesystem::path& out, const std::string& ckpt_label = "");

// Fuses every pair of a manifest into <out_dir>/<id>.png.
void fuse_manifest(const Checkpoint& ckpt, const PairManifest& manifest, const FuseOptions& opts,
                   const std::filesystem::path& out_dir);

struct Decomposition {
  Image base;    // empty when the network has no base branch
  Image detail;  // empty when the network has no detail branch
};

// First channel of each feature map, min-max normalized; a flat map becomes
// mid-gray.
Decomposition decompose_image(const NetworkParams<float>& params, const Image& img);
Image normalize_for_display(const Image& map);
std::vector<std::filesystem::path> decompose_file(const Checkpoint& ckpt, const std::filesystem::path& image,
                                                  const std::filesystem::path& out_dir);

struct EvalTable {
  std::vector<std::pair<std::string, metrics::MetricReport>> rows;
  metrics::MetricReport mean;
  std::vector<std::string> warnings;
};

EvalTable evaluate_dir(const std::filesystem::path& fused_dir, const PairManifest& manifest,
                       const metrics::VifConfig& vif = {});
EvalTable evaluate_images(const std::vector<std::string>& ids, const std::vector<Image>& fused,
                          const std::vector<Image>& ir, const std::vector<Image>& vis,
                          const metrics::VifConfig& vif = {});
metrics::MetricReport mean_report(const std::vector<std::pair<std::string, metrics::MetricReport>>& rows);
void write_eval_csv(const EvalTable& table, const std::filesystem::path& path);

// Trains a variant, fuses the held-out pairs, and scores them. Artifacts go
// to out_dir: checkpoint.didf, loss.csv, fused/, metrics.csv.
struct AblationResult {
  TrainResult trained;
  EvalTable eval;
};
AblationResult ablate(const TrainingSet& train_set, const PairManifest& test, const TrainConfig& cfg,
                      const FuseOptions& fuse_opts, const std::filesystem::path& out_dir,
                      const EpochCallback& on_epoch = {});

struct ReproResult {
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::MetricReport> runs;  // mean metric row of each run
  metrics::MetricReport mean, stdev, cv;
};

// Runs seeds 0..runs-1 (or `fixed_seed` every time when set). Artifacts under
// out_dir/run<k>/, plus runs.csv and dispersion.csv.
ReproResult repro(const TrainingSet& train_set, const PairManifest& test, int runs, const TrainConfig& cfg,
                  const FuseOptions& fuse_opts, const std::filesystem::path& out_dir,
                  std::optional<std::uint64_t> fixed_seed = std::nullopt, const EpochCallback& on_epoch = {});

struct StrategyRow {
  fusion::SamStrategy sam;
  bool cam;
  metrics::MetricReport mean;
};

std::vector<StrategyRow> compare_strategies(const Checkpoint& ckpt, const PairManifest& val,
                                            const fusion::FusionConfig& base_cfg = {});
void write_strategy_csv(const std::vector<StrategyRow>& rows, const std::filesystem::path& path);

}  // namespace didfuse
