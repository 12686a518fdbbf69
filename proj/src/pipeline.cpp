// SPDX-License-Identifier: Apache-2.0
#include "renerf/pipeline.hpp"

#include "renerf/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace renerf {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kPoolStream = 3;
constexpr std::uint64_t kRandomViewStream = 4;

std::uint64_t stream_seed(std::uint64_t seed, int round, std::uint64_t stream) {
  return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(round)), stream);
}

}  // namespace

Ablation parse_ablation(std::string_view name) {
  if (name == "none") return Ablation::none;
  if (name == "no_reset") return Ablation::no_reset;
  if (name == "keep_synthetic") return Ablation::keep_synthetic;
  if (name == "no_mask") return Ablation::no_mask;
  throw std::invalid_argument(fmt::format("unknown ablation '{}'", name));
}

std::string_view ablation_name(Ablation ablation) {
  switch (ablation) {
    case Ablation::none: return "none";
    case Ablation::no_reset: return "no_reset";
    case Ablation::keep_synthetic: return "keep_synthetic";
    case Ablation::no_mask: return "no_mask";
  }
  return "none";
}

std::vector<double> FactorSource::factors() const {
  switch (kind) {
    case Kind::equal: return interpolation_factors(n);
    case Kind::preset: return preset_factors(preset);
    case Kind::none:
    case Kind::random: return {};
  }
  return {};
}

std::string FactorSource::describe() const {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::equal: return fmt::format("equal:{}", n);
    case Kind::preset: return std::string(preset_name(preset));
    case Kind::random: return fmt::format("random:{}", random_views);
  }
  return "none";
}

std::vector<Camera> orbit_cameras(const OrbitSpec& orbit, int count, double phase_deg) {
  constexpr double deg = std::numbers::pi / 180.0;
  const Vec3 target(0.0, 0.0, -0.3);
  std::vector<Camera> cameras;
  for (int k = 0; k < count; ++k) {
    const double azimuth = (phase_deg + 360.0 * k / count) * deg;
    const double elevation = (orbit.elevation_deg + (k % 2 == 0 ? -1.0 : 1.0) * orbit.elevation_jitter_deg) * deg;
    const Vec3 eye = target + orbit.radius * Vec3(std::cos(elevation) * std::cos(azimuth),
                                                  std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
    Camera c;
    c.pose = look_at(eye, target, Vec3::UnitZ());
    c.width = orbit.width;
    c.height = orbit.height;
    c.focal_x = c.focal_y = orbit.focal;
    c.principal_x = 0.5 * orbit.width;
    c.principal_y = 0.5 * orbit.height;
    c.near = std::max(0.05, orbit.radius - 2.0);
    c.far = orbit.radius + 2.0;
    cameras.push_back(c);
  }
  return cameras;
}

TrainConfig ExperimentConfig::effective_train(int round) const {
  TrainConfig t = train;
  t.seed = stream_seed(seed, round, kTrainStream);
  if (ablation == Ablation::keep_synthetic) t.synthetic_stop_fraction = 1.0;
  return t;
}

void ExperimentConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("experiment: rounds must be >= 1");
  if (train_cameras.size() < 2) throw std::invalid_argument("experiment: need at least 2 train cameras");
  if (test_cameras.empty()) throw std::invalid_argument("experiment: need at least 1 test camera");
  for (const auto& a : train_cameras)
    for (const auto& b : test_cameras)
      if ((a.pose.position - b.pose.position).norm() < 1e-9 && std::abs(a.pose.rotation.dot(b.pose.rotation)) > 1.0 - 1e-12)
        throw std::invalid_argument("experiment: train and test cameras must be disjoint");
  if (render_samples < 1) throw std::invalid_argument("experiment: render_samples must be >= 1");
  bbox.validate();
  train.validate();
  (void)factors.factors();
}

SceneSpec reference_scene() {
  using Shape = Primitive::Shape;
  SceneSpec s;
  s.background = Vec3::Ones();
  auto box = [&](Vec3 c, Vec3 half, Vec3 color) { s.primitives.push_back({Shape::box, c, half, color, 30.0}); };
  auto sphere = [&](Vec3 c, double r, Vec3 color) {
    s.primitives.push_back({Shape::sphere, c, Vec3::Constant(r), color, 30.0});
  };
  // Table top with a tiled pattern for texture.
  box({0.0, 0.0, -0.78}, {0.9, 0.9, 0.08}, {0.55, 0.5, 0.42});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if ((i + j) % 2 == 0)
        box({-0.675 + 0.45 * i, -0.675 + 0.45 * j, -0.69}, {0.2, 0.2, 0.02}, {0.25, 0.22, 0.2});
  box({-0.35, -0.3, -0.42}, {0.22, 0.22, 0.27}, {0.85, 0.2, 0.15});
  box({-0.35, -0.3, -0.03}, {0.12, 0.12, 0.12}, {0.85, 0.2, 0.75});
  sphere({0.35, 0.3, -0.37}, 0.3, {0.15, 0.3, 0.85});
  box({0.35, -0.45, -0.25}, {0.1, 0.1, 0.43}, {0.2, 0.75, 0.3});
  sphere({-0.3, 0.45, -0.5}, 0.17, {0.9, 0.8, 0.15});
  sphere({0.05, 0.0, 0.35}, 0.14, {0.95, 0.55, 0.1});
  return s;
}

ExperimentConfig reference_experiment(std::uint64_t seed) {
  ExperimentConfig c;
  c.scene = reference_scene();
  c.train_cameras = orbit_cameras(c.orbit, c.orbit.train_views, c.orbit.phase_deg);
  c.test_cameras = orbit_cameras(c.orbit, c.orbit.test_views, c.orbit.phase_deg + 180.0 / c.orbit.train_views);
  c.seed = seed;
  return c;
}

ExperimentContext ExperimentContext::build(const ExperimentConfig& config) {
  config.validate();
  ExperimentContext ctx;
  ctx.gt_grid = build_scene(config.scene, config.gt_resolution, config.bbox);
  const RenderOptions options{config.render_samples, config.scene.background};
  for (const auto& cam : config.train_cameras)
    ctx.originals.push_back(TrainingView::original(cam, render_image(ctx.gt_grid, cam, options).color));
  for (const auto& cam : config.test_cameras) ctx.test_images.push_back(render_image(ctx.gt_grid, cam, options).color);
  return ctx;
}

UncertaintyField compute_uncertainty(const VoxelGrid& grid, const std::vector<TrainingView>& originals,
                                     const ExperimentConfig& config, int round) {
  const DeformationField field = DeformationField::for_grid(grid, config.uncertainty.lambda);
  const auto pool =
      build_ray_pool(originals, config.uncertainty.max_pool_rays, stream_seed(config.seed, round, kPoolStream));
  const HessianDiag h = accumulate_hessian(grid, field, pool, config.render_samples, config.train.background);
  return sigma_field(h, config.uncertainty.lambda);
}

namespace {

SyntheticView synthesize_one(const VoxelGrid& model, const UncertaintyField& uncertainty, const Camera& camera,
                             const ExperimentConfig& config, int round, double beta, std::string label) {
  const RenderOptions options{config.render_samples, config.train.background};
  SyntheticView sv;
  sv.view.camera = camera;
  sv.view.image = render_image(model, camera, options).color;
  sv.view.kind = ViewKind::synthetic;
  sv.view.round_created = round;
  sv.uncertainty = render_uncertainty(model, uncertainty, camera, config.render_samples, config.train.background);
  if (config.masks_enabled()) {
    PixelMask mask = make_mask(sv.uncertainty, config.mask_rule);
    sv.view.mask = std::move(mask.keep);
    sv.mu = mask.mu;
  } else {
    sv.view.mask.assign(sv.view.image.pixel_count(), 1);
    sv.mu = std::numeric_limits<double>::infinity();
  }
  sv.beta = beta;
  sv.label = std::move(label);
  return sv;
}

std::vector<Camera> proximity_chain(const std::vector<Camera>& cameras) {
  if (cameras.size() < 2) throw std::invalid_argument("synthesize_views: need at least 2 train cameras");
  std::vector<Pose> poses;
  for (const auto& c : cameras) poses.push_back(c.pose);
  std::vector<Camera> chain;
  for (std::size_t i : order_poses_by_proximity(poses)) chain.push_back(cameras[i]);
  return chain;
}

}  // namespace

std::vector<SyntheticView> synthesize_views(const VoxelGrid& model, const UncertaintyField& uncertainty,
                                            const std::vector<Camera>& train_cameras,
                                            const std::vector<double>& factors, const ExperimentConfig& config,
                                            int round) {
  const auto chain = proximity_chain(train_cameras);
  std::vector<SyntheticView> out;
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    for (std::size_t j = 0; j < factors.size(); ++j) {
      const Camera cam = interpolate_camera(chain[i], chain[i + 1], factors[j]);
      out.push_back(synthesize_one(model, uncertainty, cam, config, round, factors[j],
                                   fmt::format("syn_{:02d}_{:02d}", i, j)));
    }
  }
  return out;
}

std::vector<SyntheticView> synthesize_random_views(const VoxelGrid& model, const UncertaintyField& uncertainty,
                                                   const std::vector<Camera>& train_cameras, int count,
                                                   const ExperimentConfig& config, int round) {
  const auto chain = proximity_chain(train_cameras);
  std::mt19937_64 rng(stream_seed(config.seed, round, kRandomViewStream));
  std::uniform_int_distribution<std::size_t> gap(0, chain.size() - 2);
  std::uniform_real_distribution<double> factor(0.05, 0.95);
  std::vector<SyntheticView> out;
  for (int k = 0; k < count; ++k) {
    const std::size_t i = gap(rng);
    const double beta = factor(rng);
    out.push_back(synthesize_one(model, uncertainty, interpolate_camera(chain[i], chain[i + 1], beta), config, round,
                                 beta, fmt::format("rnd_{:02d}", k)));
  }
  return out;
}

std::vector<SyntheticView> target_views(const VoxelGrid& model, const UncertaintyField& uncertainty,
                                        const std::vector<Camera>& targets, const ExperimentConfig& config, int round) {
  std::vector<SyntheticView> out;
  for (std::size_t k = 0; k < targets.size(); ++k)
    out.push_back(synthesize_one(model, uncertainty, targets[k], config, round, 0.0, fmt::format("tgt_{:02d}", k)));
  return out;
}

double RoundArtifacts::mean_psnr() const {
  for (const auto& r : metrics)
    if (r.view == "MEAN") return r.psnr;
  return 0.0;
}

double RoundArtifacts::mean_ssim() const {
  for (const auto& r : metrics)
    if (r.view == "MEAN") return r.ssim;
  return 0.0;
}

std::uint64_t checksum_views(const std::vector<SyntheticView>& views) {
  // FNV-1a over image bytes and masks.
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& v : views) {
    feed(v.view.image.data.data(), v.view.image.data.size() * sizeof(double));
    feed(v.view.mask.data(), v.view.mask.size());
  }
  return h;
}

RoundArtifacts train_round(const ExperimentConfig& config, const ExperimentContext& context, int round,
                           std::vector<SyntheticView> synthetic, const VoxelGrid* continue_from) {
  const auto start = std::chrono::steady_clock::now();
  RoundArtifacts out;
  out.round = round;
  out.synthetic = std::move(synthetic);
  out.input_checksum = checksum_views(out.synthetic);

  std::vector<TrainingView> views = context.originals;
  for (const auto& sv : out.synthetic) views.push_back(sv.view);

  VoxelGrid init = continue_from ? *continue_from
                                 : init_grid(config.train_resolution, config.bbox,
                                             stream_seed(config.seed, round, kInitStream));
  TrainResult trained;
  try {
    trained = train(std::move(init), views, config.effective_train(round));
  } catch (const TrainingAborted& e) {
    throw RoundFailed(round, e);
  }
  out.grid = std::move(trained.grid);
  out.grid.quantize_to_float();
  out.loss_curve = std::move(trained.loss_curve);

  const RenderOptions options{config.render_samples, config.train.background};
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t i = 0; i < config.test_cameras.size(); ++i) {
    RenderedView r = render_image(out.grid, config.test_cameras[i], options);
    MetricsRow row{round, fmt::format("test_{:02d}", i), psnr(r.color, context.test_images[i]),
                   ssim(r.color, context.test_images[i])};
    psnr_sum += row.psnr;
    ssim_sum += row.ssim;
    out.metrics.push_back(row);
    out.test_renders.push_back(std::move(r));
  }
  const auto n = static_cast<double>(config.test_cameras.size());
  out.metrics.push_back(MetricsRow{round, "MEAN", psnr_sum / n, ssim_sum / n});

  out.uncertainty = compute_uncertainty(out.grid, context.originals, config, round);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

RoundArtifacts run_round(const ExperimentConfig& config, const ExperimentContext& context, int round,
                         const RoundArtifacts* previous) {
  if (round == 0) {
    if (previous) throw std::invalid_argument("run_round: round 0 takes no source artifacts");
    return train_round(config, context, 0, {}, nullptr);
  }
  if (!previous || previous->round != round - 1)
    throw std::invalid_argument("run_round: round k needs the artifacts of round k-1");

  const auto chain_start = std::chrono::steady_clock::now();
  std::vector<SyntheticView> synthetic;
  if (config.factors.kind == FactorSource::Kind::random) {
    synthetic = synthesize_random_views(previous->grid, previous->uncertainty, config.train_cameras,
                                        config.factors.random_views, config, round);
  } else {
    synthetic = synthesize_views(previous->grid, previous->uncertainty, config.train_cameras,
                                 config.factors.factors(), config, round);
  }
  if (!config.target_cameras.empty()) {
    auto targeted = target_views(previous->grid, previous->uncertainty, config.target_cameras, config, round);
    for (auto& t : targeted) synthetic.push_back(std::move(t));
  }
  const double synth_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - chain_start).count();
  RoundArtifacts out = train_round(config, context, round, std::move(synthetic),
                                   config.ablation == Ablation::no_reset ? &previous->grid : nullptr);
  out.wall_seconds += synth_seconds;
  return out;
}

std::vector<MetricsRow> ExperimentResult::metrics() const {
  std::vector<MetricsRow> rows;
  for (const auto& r : rounds) rows.insert(rows.end(), r.metrics.begin(), r.metrics.end());
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentHooks* hooks) {
  return run_experiment(config, ExperimentContext::build(config), hooks);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentContext& context,
                                const ExperimentHooks* hooks) {
  ExperimentResult result;
  for (int k = 0; k < config.rounds; ++k) {
    const RoundArtifacts* previous = k == 0 ? nullptr : &result.rounds.back();
    RoundArtifacts round = run_round(config, context, k, previous);
    result.rounds.push_back(std::move(round));
    if (hooks && hooks->on_round) hooks->on_round(result.rounds.back());
  }
  return result;
}

void write_round_directory(const RoundArtifacts& round, const ExperimentConfig& config,
                           const ExperimentContext& context, const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  const fs::path dir = run_dir / fmt::format("round_{}", round.round);
  fs::create_directories(dir / "views");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "renders");
  save_grid(round.grid, dir / "grid.rnfgrid");
  save_sigma_field(round.uncertainty, dir / "sigma.rnfsigma");
  write_metrics_csv(dir / "metrics.csv", round.metrics);
  write_loss_csv(dir / "loss.csv", round.loss_curve);
  write_cameras(dir / "train_cameras.txt", config.train_cameras);
  write_cameras(dir / "test_cameras.txt", config.test_cameras);

  std::vector<Camera> synthetic_cameras;
  for (const auto& sv : round.synthetic) {
    synthetic_cameras.push_back(sv.view.camera);
    write_png8(dir / "views" / (sv.label + ".png"), sv.view.image);
    const int w = sv.view.image.width, h = sv.view.image.height;
    std::vector<double> keep(sv.view.mask.begin(), sv.view.mask.end());
    write_png16(dir / "masks" / (sv.label + ".png"), keep, w, h, 1.0);
    double scale = 0.0;
    for (double u : sv.uncertainty.values) scale = std::max(scale, u);
    write_png16(dir / "masks" / (sv.label + "_uncertainty.png"), sv.uncertainty.values, w, h, scale);
    write_float_sidecar(dir / "masks" / (sv.label + "_uncertainty.raw"), sv.uncertainty.values, w, h, 1);
  }
  write_cameras(dir / "synthetic_cameras.txt", synthetic_cameras);

  const RenderOptions options{config.render_samples, config.train.background};
  for (std::size_t i = 0; i < config.train_cameras.size(); ++i) {
    const RenderedView r = render_image(round.grid, config.train_cameras[i], options);
    write_png8(dir / "renders" / fmt::format("train_{:02d}.png", i), r.color);
  }
  for (std::size_t i = 0; i < round.test_renders.size(); ++i) {
    const auto& r = round.test_renders[i];
    write_png8(dir / "renders" / fmt::format("test_{:02d}.png", i), r.color);
    write_depth(dir / "renders" / fmt::format("test_{:02d}_depth.png", i),
                dir / "renders" / fmt::format("test_{:02d}_depth.raw", i), r, config.test_cameras[i]);
    write_png8(dir / "renders" / fmt::format("test_{:02d}_gt.png", i), context.test_images[i]);
  }
}

void write_manifest(const std::filesystem::path& path, const ExperimentResult& result,
                    const ExperimentConfig& config, const std::string& config_snapshot) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << "version = " << kToolVersion << "\n";
  out << "seed = " << config.seed << "\n";
  out << "rounds = " << result.rounds.size() << "\n";
  out << "\n[config]\n" << config_snapshot;
  for (const auto& r : result.rounds) {
    out << fmt::format("\n[round_{}]\n", r.round);
    out << fmt::format("grid = round_{}/grid.rnfgrid\n", r.round);
    out << fmt::format("sigma = round_{}/sigma.rnfsigma\n", r.round);
    out << fmt::format("metrics = round_{}/metrics.csv\n", r.round);
    out << fmt::format("wall_seconds = {:.3f}\n", r.wall_seconds);
    out << fmt::format("mean_psnr = {:.6f}\n", r.mean_psnr());
    out << fmt::format("synthetic_views = {}\n", r.synthetic.size());
    out << fmt::format("input_checksum = {:016x}\n", r.input_checksum);
    for (const auto& sv : r.synthetic) out << fmt::format("mu.{} = {:.9g}\n", sv.label, sv.mu);
  }
}

}  // namespace renerf
