// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/field.hpp"
#include "renerf/geometry.hpp"
#include "renerf/metrics.hpp"
#include "renerf/optim.hpp"
#include "renerf/render.hpp"
#include "renerf/uncertainty.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace renerf {

enum class Ablation {
  none,            // reset every round, drop synthetic views at the stop fraction
  no_reset,        // continue from the previous round's grid
  keep_synthetic,  // synthetic views stay for the whole run
  no_mask,         // synthetic views used without uncertainty masks
};

Ablation parse_ablation(std::string_view name);
std::string_view ablation_name(Ablation ablation);

struct FactorSource {
  enum class Kind { none, equal, preset, random };
  Kind kind = Kind::preset;
  int n = 7;                                  // equal: interpolation_factors(n)
  FactorPreset preset = FactorPreset::seven_x;
  int random_views = 4;                       // random: this many views at random (gap, beta)

  std::vector<double> factors() const;  // empty for none and random
  std::string describe() const;
};

struct OrbitSpec {
  int train_views = 6;
  int test_views = 6;
  double radius = 3.2;
  double elevation_deg = 25.0;
  double elevation_jitter_deg = 8.0;  // alternating up/down offset per camera
  int width = 48;
  int height = 48;
  double focal = 44.0;
  double phase_deg = 0.0;
};

// Train cameras at phase + k*360/n; test cameras halfway between them.
std::vector<Camera> orbit_cameras(const OrbitSpec& orbit, int count, double phase_deg);

struct UncertaintyConfig {
  double lambda = 1e-2;
  std::size_t max_pool_rays = 200000;
};

struct ExperimentConfig {
  SceneSpec scene;
  GridResolution gt_resolution{96, 96, 96};
  GridResolution train_resolution{64, 64, 64};
  BoundingBox bbox;
  OrbitSpec orbit;
  std::vector<Camera> train_cameras;
  std::vector<Camera> test_cameras;
  std::vector<Camera> target_cameras;  // view-targeting mode; empty when unused
  FactorSource factors;
  MaskRule mask_rule = MaskRule::quantile(0.10);
  TrainConfig train;
  UncertaintyConfig uncertainty;
  int render_samples = 128;
  int rounds = 2;
  Ablation ablation = Ablation::none;
  std::uint64_t seed = 0;

  // Applies the ablation flag to the schedule: keep_synthetic forces stop fraction 1.
  TrainConfig effective_train(int round) const;
  bool masks_enabled() const { return ablation != Ablation::no_mask; }
  void validate() const;
};

// Procedural tabletop used by the benchmark.
SceneSpec reference_scene();
ExperimentConfig reference_experiment(std::uint64_t seed);

// Ground-truth data shared by every round.
struct ExperimentContext {
  VoxelGrid gt_grid;
  std::vector<TrainingView> originals;
  std::vector<Image> test_images;

  static ExperimentContext build(const ExperimentConfig& config);
};

struct SyntheticView {
  TrainingView view;
  UncertaintyMap uncertainty;
  double mu = 0.0;
  double beta = 0.0;
  std::string label;
};

UncertaintyField compute_uncertainty(const VoxelGrid& grid, const std::vector<TrainingView>& originals,
                                     const ExperimentConfig& config, int round);

/// Renders the model at (|train|-1)*|factors| poses interpolated along the
/// proximity chain of `train_cameras` (open chain) and masks each view.
std::vector<SyntheticView> synthesize_views(const VoxelGrid& model, const UncertaintyField& uncertainty,
                                            const std::vector<Camera>& train_cameras,
                                            const std::vector<double>& factors, const ExperimentConfig& config,
                                            int round);

// `count` views at uniformly drawn chain gaps and interpolation factors.
std::vector<SyntheticView> synthesize_random_views(const VoxelGrid& model, const UncertaintyField& uncertainty,
                                                   const std::vector<Camera>& train_cameras, int count,
                                                   const ExperimentConfig& config, int round);

std::vector<SyntheticView> target_views(const VoxelGrid& model, const UncertaintyField& uncertainty,
                                        const std::vector<Camera>& targets, const ExperimentConfig& config, int round);

struct RoundArtifacts {
  int round = 0;
  VoxelGrid grid;
  UncertaintyField uncertainty;  // of this round's model
  std::vector<SyntheticView> synthetic;
  std::vector<MetricsRow> metrics;  // per test view, then MEAN
  std::vector<LossSample> loss_curve;
  std::vector<RenderedView> test_renders;
  std::uint64_t input_checksum = 0;  // synthetic images and masks fed to training
  double wall_seconds = 0.0;

  double mean_psnr() const;
  double mean_ssim() const;
};

class RoundFailed : public std::runtime_error {
 public:
  RoundFailed(int round, const TrainingAborted& cause)
      : std::runtime_error("round " + std::to_string(round) + ": " + cause.what()), round_(round), cause_(cause) {}
  int round() const { return round_; }
  const TrainingAborted& cause() const { return cause_; }

 private:
  int round_;
  TrainingAborted cause_;
};

std::uint64_t checksum_views(const std::vector<SyntheticView>& views);

// Trains one round from already synthesized views; `continue_from` replaces
// the fresh initialization (no-reset ablation).
RoundArtifacts train_round(const ExperimentConfig& config, const ExperimentContext& context, int round,
                           std::vector<SyntheticView> synthetic, const VoxelGrid* continue_from);

// Round 0 trains on originals; round k synthesizes from `previous` and retrains.
RoundArtifacts run_round(const ExperimentConfig& config, const ExperimentContext& context, int round,
                         const RoundArtifacts* previous);

struct ExperimentResult {
  std::vector<RoundArtifacts> rounds;
  std::vector<MetricsRow> metrics() const;
};

struct ExperimentHooks {
  std::function<void(const RoundArtifacts&)> on_round;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentHooks* hooks = nullptr);
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentContext& context,
                                const ExperimentHooks* hooks = nullptr);

// round_k/{grid.rnfgrid, sigma.rnfsigma, metrics.csv, loss.csv, views/, masks/, renders/}
// plus top-level metrics.csv and manifest.
void write_round_directory(const RoundArtifacts& round, const ExperimentConfig& config,
                           const ExperimentContext& context, const std::filesystem::path& run_dir);

// Plain-text manifest: tool version, seed, config snapshot, per-round paths,
// wall-clock and the resolved mask threshold of every synthetic view.
void write_manifest(const std::filesystem::path& path, const ExperimentResult& result,
                    const ExperimentConfig& config, const std::string& config_snapshot);

inline constexpr const char* kToolVersion = "renerf 0.1.0";

}  // namespace renerf
