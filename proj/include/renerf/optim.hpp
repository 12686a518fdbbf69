// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/field.hpp"
#include "renerf/geometry.hpp"
#include "renerf/image.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace renerf {

enum class ViewKind { original, synthetic };

struct TrainingView {
  Camera camera;
  Image image;
  std::vector<std::uint8_t> mask;  // 1 = usable pixel
  ViewKind kind = ViewKind::original;
  int round_created = 0;

  static TrainingView original(const Camera& camera, Image image);
  std::size_t usable_pixels() const;
  void validate() const;
};

struct TrainConfig {
  int iterations = 2000;
  int batch_rays = 1024;
  double learning_rate_density = 0.05;
  double learning_rate_color = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  int n_samples = 128;
  double synthetic_stop_fraction = 0.27;
  double tv_weight = 1e-4;
  Vec3 background = Vec3::Ones();
  std::uint64_t seed = 0;

  void validate() const;
  // Iterations strictly below this index may draw synthetic rays.
  double synthetic_stop_iteration() const { return synthetic_stop_fraction * iterations; }
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<Vec3> target;
  std::vector<std::uint32_t> view;  // source view of each ray
  std::optional<std::uint64_t> jitter_seed;
  std::size_t synthetic_rays = 0;

  std::size_t size() const { return rays.size(); }
};

// Precomputed index of usable pixels, split by view kind.
class RaySampler {
 public:
  explicit RaySampler(const std::vector<TrainingView>& views);

  bool synthetic_active(int iteration, const TrainConfig& config) const {
    return iteration < config.synthetic_stop_iteration() && synthetic_pixels_ > 0;
  }
  RayBatch sample(int iteration, const TrainConfig& config, std::mt19937_64& rng) const;

  std::uint64_t original_pixels() const { return original_pixels_; }
  std::uint64_t synthetic_pixels() const { return synthetic_pixels_; }

 private:
  struct Pixel {
    std::uint32_t view;
    std::uint32_t pixel;
  };
  const std::vector<TrainingView>* views_;
  std::vector<Pixel> original_;
  std::vector<Pixel> synthetic_;
  std::uint64_t original_pixels_ = 0;
  std::uint64_t synthetic_pixels_ = 0;
};

RayBatch sample_ray_batch(const std::vector<TrainingView>& views, int iteration, const TrainConfig& config,
                          std::mt19937_64& rng);

// Mean squared error over every ray-channel entry.
double photometric_loss(std::span<const Vec3> pred, std::span<const Vec3> target);

// Sum of squared differences between axis neighbours, divided by the vertex count.
double total_variation(const VoxelGrid& grid);

struct GridGradient {
  std::vector<double> density;
  std::vector<double> color;
  double photometric = 0.0;
  double loss = 0.0;
};

// Rendered colours for a batch through the fused training path.
std::vector<Vec3> render_batch(const VoxelGrid& grid, const RayBatch& batch, const TrainConfig& config);

double evaluate_loss(const VoxelGrid& grid, const RayBatch& batch, const TrainConfig& config);

// Exact gradient of photometric_loss + tv_weight * total_variation.
GridGradient backward(const VoxelGrid& grid, const RayBatch& batch, const TrainConfig& config);

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(int iteration, std::string block, const std::string& message)
      : std::runtime_error(message), iteration_(iteration), block_(std::move(block)) {}
  int iteration() const { return iteration_; }
  const std::string& block() const { return block_; }

 private:
  int iteration_;
  std::string block_;
};

struct LossSample {
  int iteration = 0;  // first iteration of the 100-iteration block
  double mean_loss = 0.0;
};

struct TrainResult {
  VoxelGrid grid;
  std::vector<LossSample> loss_curve;
};

struct TrainObserver {
  std::function<void(int iteration, const RayBatch& batch)> on_batch;
};

TrainResult train(VoxelGrid initial, const std::vector<TrainingView>& views, const TrainConfig& config,
                  const TrainObserver* observer = nullptr);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossSample>& curve);

}  // namespace renerf
