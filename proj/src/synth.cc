#include "epigeo/synth.h"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "epigeo/error.h"

namespace epigeo {
namespace {

std::uint64_t Mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t StreamSeed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return Mix(Mix(seed ^ Mix(stream)) ^ index);
}

double Unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// Camera at `center` looking at the origin, image y axis roughly world +y.
CameraMatrix LookAt(const Eigen::Matrix3d& k, const Eigen::Vector3d& center) {
  const Eigen::Vector3d forward = (-center).normalized();
  Eigen::Vector3d right = Eigen::Vector3d::UnitY().cross(forward);
  if (right.norm() < 1e-9) right = Eigen::Vector3d::UnitX();
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  return CameraMatrix(k, r, -r * center);
}

enum Stream : std::uint64_t {
  kJitterStream = 1,
  kOutlierStream = 2,
  kDynamicStream = 3,
  kIntensityStream = 4,
  kTextureStream = 5,
};

}  // namespace

std::string ToString(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kOrbit: return "orbit";
    case TrajectoryKind::kDolly: return "dolly";
    case TrajectoryKind::kArc: return "arc";
  }
  return "orbit";
}

TrajectoryKind ParseTrajectoryKind(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::kOrbit;
  if (name == "dolly") return TrajectoryKind::kDolly;
  if (name == "arc") return TrajectoryKind::kArc;
  throw ContractError("unknown trajectory kind '" + name + "' (orbit|dolly|arc)");
}

std::string ToString(PointLabel label) {
  switch (label) {
    case PointLabel::kClean: return "clean";
    case PointLabel::kJittered: return "jittered";
    case PointLabel::kOutlier: return "outlier";
    case PointLabel::kDynamic: return "dynamic";
  }
  return "clean";
}

void ValidateTrajectorySpec(const TrajectorySpec& spec) {
  EPIGEO_CHECK(spec.n_frames >= 2, "trajectory needs n_frames >= 2");
  EPIGEO_CHECK(spec.width > 0 && spec.height > 0, "image size must be positive");
  EPIGEO_CHECK(spec.focal > 0.0, "focal length must be positive");
  EPIGEO_CHECK(spec.radius > 0.0, "camera radius must be positive");
  EPIGEO_CHECK(spec.jitter_sigma >= 0.0, "jitter sigma must be non-negative");
  EPIGEO_CHECK(spec.outlier_fraction >= 0.0 && spec.outlier_fraction < 1.0,
               "outlier fraction must be in [0, 1)");
  EPIGEO_CHECK(spec.dynamic_fraction >= 0.0 && spec.dynamic_fraction < 1.0,
               "dynamic fraction must be in [0, 1)");
  EPIGEO_CHECK(spec.outlier_fraction + spec.dynamic_fraction < 1.0,
               "outlier and dynamic fractions must sum to < 1");
}

Scene GenerateScene(int n_points, double extent, std::uint64_t seed) {
  EPIGEO_CHECK(n_points >= 8, "scene needs at least 8 points");
  EPIGEO_CHECK(extent > 0.0, "scene extent must be positive");
  Scene scene;
  scene.seed = seed;
  scene.extent = extent;
  std::mt19937_64 rng(Mix(seed));
  std::uniform_real_distribution<double> u(-extent, extent);
  scene.points3d.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double x = u(rng);
    const double y = u(rng);
    const double z = u(rng);
    scene.points3d.emplace_back(x, y, z);
  }
  return scene;
}

std::vector<CameraMatrix> CameraTrajectory(const TrajectorySpec& spec) {
  ValidateTrajectorySpec(spec);
  Eigen::Matrix3d k;
  k << spec.focal, 0.0, spec.cx, 0.0, spec.focal, spec.cy, 0.0, 0.0, 1.0;
  std::vector<CameraMatrix> cameras;
  cameras.reserve(spec.n_frames);
  const int n = spec.n_frames;
  for (int i = 0; i < n; ++i) {
    switch (spec.kind) {
      case TrajectoryKind::kOrbit: {
        const double theta = i * spec.span / n;
        cameras.push_back(LookAt(
            k, Eigen::Vector3d(spec.radius * std::sin(theta), 0.0,
                               -spec.radius * std::cos(theta))));
        break;
      }
      case TrajectoryKind::kArc: {
        const double theta = -0.5 * spec.span + i * spec.span / (n - 1);
        cameras.push_back(LookAt(
            k, Eigen::Vector3d(spec.radius * std::sin(theta), -spec.arc_height,
                               -spec.radius * std::cos(theta))));
        break;
      }
      case TrajectoryKind::kDolly: {
        const double travel = spec.dolly_distance * i / (n - 1);
        const Eigen::Vector3d center(0.0, 0.0, -spec.radius + travel);
        cameras.emplace_back(k, Eigen::Matrix3d::Identity(), -center);
        break;
      }
    }
  }
  return cameras;
}

ProjectedScene ProjectScene(const Scene& scene, std::span<const CameraMatrix> cameras,
                            const TrajectorySpec& spec,
                            std::span<const std::pair<int, int>> pairs) {
  ValidateTrajectorySpec(spec);
  const int n_points = static_cast<int>(scene.points3d.size());
  const int n_frames = static_cast<int>(cameras.size());

  ProjectedScene out;
  out.dynamic.assign(n_points, false);
  out.velocities.assign(n_points, Eigen::Vector3d::Zero());
  {
    const int n_dynamic = static_cast<int>(std::floor(spec.dynamic_fraction * n_points));
    std::vector<int> order(n_points);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(StreamSeed(spec.seed, kDynamicStream, 0));
    std::shuffle(order.begin(), order.end(), rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < n_dynamic; ++k) {
      Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
      out.dynamic[order[k]] = true;
      out.velocities[order[k]] = spec.dynamic_speed * dir.normalized();
    }
  }

  // pixel[f][p], NaN when outside the image.
  std::vector<std::vector<Eigen::Vector2d>> pixel(n_frames,
                                                  std::vector<Eigen::Vector2d>(n_points));
  out.frames.resize(n_frames);
  for (int f = 0; f < n_frames; ++f) {
    std::mt19937_64 rng(StreamSeed(spec.seed, kJitterStream, f));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int p = 0; p < n_points; ++p) {
      const Eigen::Vector3d world = scene.points3d[p] + f * out.velocities[p];
      const double depth = cameras[f].Depth(world);
      if (!(depth > 0.0)) {
        throw ContractError("point " + std::to_string(p) + " has non-positive depth in frame " +
                            std::to_string(f));
      }
      Eigen::Vector2d px = cameras[f].Project(world).hnormalized();
      // Draw noise for every point so the stream does not depend on visibility.
      const double nx = noise(rng);
      const double ny = noise(rng);
      if (spec.jitter_sigma > 0.0) px += spec.jitter_sigma * Eigen::Vector2d(nx, ny);
      const bool inside = px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= spec.width - 1.0 &&
                          px.y() <= spec.height - 1.0;
      if (inside) {
        out.frames[f].point_ids.push_back(p);
        out.frames[f].pixels.push_back(px);
        pixel[f][p] = px;
      } else {
        pixel[f][p] = Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
      }
    }
  }

  for (const auto& [i, j] : pairs) {
    EPIGEO_CHECK(i >= 0 && j >= 0 && i < n_frames && j < n_frames && i != j,
                 "invalid frame pair");
    CorrespondenceSet set;
    set.frame_i = i;
    set.frame_j = j;
    for (int p = 0; p < n_points; ++p) {
      if (std::isnan(pixel[i][p].x()) || std::isnan(pixel[j][p].x())) continue;
      set.correspondences.push_back({pixel[i][p], pixel[j][p]});
      set.point_ids.push_back(p);
      set.labels.push_back(out.dynamic[p] ? PointLabel::kDynamic
                           : spec.jitter_sigma > 0.0 ? PointLabel::kJittered
                                                     : PointLabel::kClean);
    }
    const int m = static_cast<int>(set.correspondences.size());
    const int n_outliers = static_cast<int>(std::floor(spec.outlier_fraction * m));
    if (n_outliers > 0) {
      std::mt19937_64 rng(StreamSeed(spec.seed, kOutlierStream,
                                     static_cast<std::uint64_t>(i) * 1000003ULL + j));
      std::vector<int> order(m);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      std::uniform_real_distribution<double> ux(0.0, spec.width - 1.0);
      std::uniform_real_distribution<double> uy(0.0, spec.height - 1.0);
      for (int k = 0; k < n_outliers; ++k) {
        const int idx = order[k];
        const double x = ux(rng);
        const double y = uy(rng);
        set.correspondences[idx].x_prime = Eigen::Vector2d(x, y);
        set.labels[idx] = PointLabel::kOutlier;
        set.point_ids[idx] = -1;
      }
    }
    out.pairs.push_back(std::move(set));
  }
  return out;
}

Frame RenderDots(std::span<const Eigen::Vector2d> points, std::span<const int> ids,
                 int width, int height, double dot_sigma, std::uint64_t seed,
                 double texture_amplitude) {
  EPIGEO_CHECK(dot_sigma >= 0.8, "dot sigma must be >= 0.8 px");
  EPIGEO_CHECK(ids.empty() || ids.size() == points.size(),
               "ids must be empty or match points");
  Image canvas(width, height, 0.0);
  if (texture_amplitude > 0.0) {
    // Fixed in image space: identical for every frame with the same seed.
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::uint64_t h = StreamSeed(seed, kTextureStream,
                                           static_cast<std::uint64_t>(y) * width + x);
        canvas(x, y) = texture_amplitude * Unit(h);
      }
    }
  }
  const int radius = static_cast<int>(std::ceil(4.0 * dot_sigma));
  const double denom = 2.0 * dot_sigma * dot_sigma;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const std::uint64_t id = ids.empty() ? k : static_cast<std::uint64_t>(ids[k]);
    const double intensity = 0.4 + 0.6 * Unit(StreamSeed(seed, kIntensityStream, id));
    const Eigen::Vector2d& p = points[k];
    const int x0 = static_cast<int>(std::floor(p.x())) - radius;
    const int y0 = static_cast<int>(std::floor(p.y())) - radius;
    for (int y = std::max(0, y0); y <= std::min(height - 1, y0 + 2 * radius + 1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(width - 1, x0 + 2 * radius + 1); ++x) {
        const double dx = x - p.x();
        const double dy = y - p.y();
        canvas(x, y) += intensity * std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
  }
  for (double& v : canvas.data) v = std::clamp(v, 0.0, 1.0);
  return Frame(width, height, std::move(canvas.data));
}

std::vector<Frame> RenderVideo(const ProjectedScene& projected, const TrajectorySpec& spec,
                               double dot_sigma, double texture_amplitude) {
  std::vector<Frame> frames;
  frames.reserve(projected.frames.size());
  for (const FrameObservations& obs : projected.frames) {
    frames.push_back(RenderDots(obs.pixels, obs.point_ids, spec.width, spec.height,
                                dot_sigma, spec.seed, texture_amplitude));
  }
  return frames;
}

}  // namespace epigeo
