#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <span>
#include <vector>

namespace epigeo {

// Point pair in pixel coordinates: `x` in frame A, `x_prime` in frame B.
struct Correspondence {
  Eigen::Vector2d x;
  Eigen::Vector2d x_prime;

  Eigen::Vector3d XHomogeneous() const { return x.homogeneous(); }
  Eigen::Vector3d XPrimeHomogeneous() const { return x_prime.homogeneous(); }
};

enum class FundamentalMethod { kEightPoint, kFromCameras };

// Rank-2, unit Frobenius norm, largest-magnitude entry positive.
struct FundamentalMatrix {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  int inlier_count = 0;
  FundamentalMethod method = FundamentalMethod::kEightPoint;
  // sigma_max / sigma_8 of the design matrix (eight-point only).
  double condition_number = 0.0;
};

// P = K [R | t].
class CameraMatrix {
 public:
  CameraMatrix(const Eigen::Matrix3d& k, const Eigen::Matrix3d& r,
               const Eigen::Vector3d& t);

  const Eigen::Matrix3d& K() const { return k_; }
  const Eigen::Matrix3d& R() const { return r_; }
  const Eigen::Vector3d& t() const { return t_; }
  const Eigen::Matrix<double, 3, 4>& P() const { return p_; }
  // World-space camera center -R^T t.
  Eigen::Vector3d Center() const { return -r_.transpose() * t_; }

  Eigen::Vector3d Project(const Eigen::Vector3d& world) const {
    return p_ * world.homogeneous();
  }
  // Camera-frame z of a world point.
  double Depth(const Eigen::Vector3d& world) const {
    return r_.row(2).dot(world) + t_.z();
  }

 private:
  Eigen::Matrix3d k_;
  Eigen::Matrix3d r_;
  Eigen::Vector3d t_;
  Eigen::Matrix<double, 3, 4> p_;
};

// Scale to unit Frobenius norm with the largest-magnitude entry positive.
Eigen::Matrix3d CanonicalizeFundamental(const Eigen::Matrix3d& f);

// 1 - |<a, b>_F| / (|a|_F |b|_F); zero iff a and b are parallel.
double FrobeniusAlignmentError(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

struct NormalizedPoints {
  std::vector<Eigen::Vector2d> points;
  Eigen::Matrix3d transform;  // maps input to normalized coordinates
};

// Centroid to the origin, mean distance sqrt(2).
NormalizedPoints NormalizePoints(std::span<const Eigen::Vector2d> points);

constexpr double kMaxDesignConditionNumber = 1e12;

// Hartley-normalized eight-point algorithm on all given correspondences.
FundamentalMatrix EightPoint(std::span<const Correspondence> correspondences);

constexpr double kEpipolarErrorCap = 1e6;

// Squared algebraic residual over the first-order gradient norm, in px^2.
// Returns kEpipolarErrorCap and sets *capped when the denominator vanishes.
double SampsonError(const Eigen::Matrix3d& f, const Correspondence& c,
                    bool* capped = nullptr);

// Sum of squared point-to-epipolar-line distances in both images.
double SymmetricEpipolarError(const Eigen::Matrix3d& f, const Correspondence& c,
                              bool* capped = nullptr);

struct RansacOptions {
  int iterations = 2000;
  double inlier_threshold = 1.0;  // px^2, applied to the Sampson error
  std::uint64_t seed = 0;
  bool adaptive = false;
  double confidence = 0.999;
};

struct RansacResult {
  FundamentalMatrix f;
  std::vector<bool> inlier_mask;
  int valid_models = 0;
  int degenerate_samples = 0;
  int iterations_run = 0;
};

// Throws EstimationError when no sample produced a model or fewer than 8
// inliers remain; DegenerateConfigurationError when every sample was
// degenerate.
RansacResult RansacFundamental(std::span<const Correspondence> correspondences,
                               const RansacOptions& options);

FundamentalMatrix FundamentalFromCameras(const CameraMatrix& p,
                                         const CameraMatrix& p_prime);

enum class EpipoleSide { kLeft, kRight };

struct Epipole {
  Eigen::Vector3d point;  // third coordinate 1 unless at infinity
  bool at_infinity = false;
};

// kLeft: F e = 0 (epipole in image A). kRight: F^T e' = 0 (image B).
Epipole ComputeEpipole(const Eigen::Matrix3d& f, EpipoleSide side);

Eigen::Matrix3d CrossProductMatrix(const Eigen::Vector3d& v);

}  // namespace epigeo
