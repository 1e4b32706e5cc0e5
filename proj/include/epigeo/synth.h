#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epigeo/epipolar.h"
#include "epigeo/image.h"

namespace epigeo {

struct Scene {
  std::vector<Eigen::Vector3d> points3d;
  std::uint64_t seed = 0;
  double extent = 0.0;  // points lie in [-extent, extent]^3
};

enum class TrajectoryKind { kOrbit, kDolly, kArc };

std::string ToString(TrajectoryKind kind);
TrajectoryKind ParseTrajectoryKind(const std::string& name);

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kOrbit;
  int n_frames = 8;

  int width = 384;
  int height = 288;
  double focal = 450.0;
  double cx = 192.0;
  double cy = 144.0;

  // Distance from the cameras to the scene origin.
  double radius = 8.0;
  // Orbit: frame k sits at angle k * span / n_frames (full circle by
  // default). Arc: n_frames samples spanning [-span/2, span/2].
  double span = 6.283185307179586;
  // Arc: vertical camera offset.
  double arc_height = 2.0;
  // Dolly: total travel towards the scene along the view axis.
  double dolly_distance = 2.0;

  double jitter_sigma = 0.0;      // px, per point per frame
  double outlier_fraction = 0.0;  // of each pair's correspondences
  double dynamic_fraction = 0.0;  // of the world points
  double dynamic_speed = 0.05;    // world units per frame

  std::uint64_t seed = 0;
};

void ValidateTrajectorySpec(const TrajectorySpec& spec);

Scene GenerateScene(int n_points, double extent, std::uint64_t seed);

std::vector<CameraMatrix> CameraTrajectory(const TrajectorySpec& spec);

enum class PointLabel { kClean, kJittered, kOutlier, kDynamic };

std::string ToString(PointLabel label);

struct FrameObservations {
  std::vector<int> point_ids;            // visible points
  std::vector<Eigen::Vector2d> pixels;   // jitter and motion applied
};

struct CorrespondenceSet {
  int frame_i = 0;
  int frame_j = 0;
  std::vector<Correspondence> correspondences;
  std::vector<PointLabel> labels;
  std::vector<int> point_ids;  // -1 for outliers
};

struct ProjectedScene {
  std::vector<FrameObservations> frames;
  std::vector<CorrespondenceSet> pairs;
  std::vector<bool> dynamic;                 // per world point
  std::vector<Eigen::Vector3d> velocities;   // zero for static points
};

// Pinhole projection of every point into every camera, with the spec's
// degradations. Points outside the image are dropped per frame; pairs only
// use points visible in both frames.
ProjectedScene ProjectScene(const Scene& scene, std::span<const CameraMatrix> cameras,
                            const TrajectorySpec& spec,
                            std::span<const std::pair<int, int>> pairs);

// Gaussian dots with a per-point intensity in [0.4, 1.0] derived from
// (seed, point id); additive, clamped to 1.
Frame RenderDots(std::span<const Eigen::Vector2d> points, std::span<const int> ids,
                 int width, int height, double dot_sigma, std::uint64_t seed,
                 double texture_amplitude = 0.0);

// Renders every frame of a projected scene.
std::vector<Frame> RenderVideo(const ProjectedScene& projected, const TrajectorySpec& spec,
                               double dot_sigma, double texture_amplitude = 0.0);

}  // namespace epigeo
