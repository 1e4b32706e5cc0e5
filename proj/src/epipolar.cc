#include "epigeo/epipolar.h"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "epigeo/error.h"

namespace epigeo {
namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Design-matrix row for x'^T F x with F flattened row-major.
template <typename Row>
void FillDesignRow(const Eigen::Vector2d& x, const Eigen::Vector2d& xp, Row&& row) {
  row << xp.x() * x.x(), xp.x() * x.y(), xp.x(), xp.y() * x.x(), xp.y() * x.y(),
      xp.y(), x.x(), x.y(), 1.0;
}

Eigen::Matrix3d EnforceRankTwo(const Eigen::Matrix3d& f) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0.0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

// Shared tail of the eight-point solve, given the null direction.
FundamentalMatrix Finish(const Eigen::Matrix<double, 9, 1>& null_vector,
                         const Eigen::Matrix3d& t, const Eigen::Matrix3d& t_prime,
                         double condition_number) {
  Eigen::Matrix3d f_hat;
  f_hat << null_vector(0), null_vector(1), null_vector(2), null_vector(3),
      null_vector(4), null_vector(5), null_vector(6), null_vector(7), null_vector(8);
  f_hat = EnforceRankTwo(f_hat);
  FundamentalMatrix result;
  result.m = CanonicalizeFundamental(t_prime.transpose() * f_hat * t);
  result.method = FundamentalMethod::kEightPoint;
  result.condition_number = condition_number;
  return result;
}

double ConditionFromSingularValues(const Eigen::VectorXd& s) {
  // s has 9 entries, descending; s(8) ~ 0 for consistent data.
  if (s(7) <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(7);
}

FundamentalMatrix EightPointImpl(std::span<const Correspondence> correspondences) {
  const std::size_t n = correspondences.size();
  std::vector<Eigen::Vector2d> a(n);
  std::vector<Eigen::Vector2d> b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = correspondences[i].x;
    b[i] = correspondences[i].x_prime;
  }
  const NormalizedPoints na = NormalizePoints(a);
  const NormalizedPoints nb = NormalizePoints(b);

  Eigen::Matrix<double, 9, 1> null_vector;
  double condition = 0.0;
  if (n <= 9) {
    Eigen::Matrix<double, 9, 9> design = Eigen::Matrix<double, 9, 9>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      FillDesignRow(na.points[i], nb.points[i], design.row(static_cast<int>(i)));
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(design, Eigen::ComputeFullV);
    condition = ConditionFromSingularValues(svd.singularValues());
    null_vector = svd.matrixV().col(8);
  } else {
    Eigen::Matrix<double, Eigen::Dynamic, 9> design(n, 9);
    for (std::size_t i = 0; i < n; ++i) {
      FillDesignRow(na.points[i], nb.points[i], design.row(static_cast<int>(i)));
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(design,
                                                                   Eigen::ComputeFullV);
    condition = ConditionFromSingularValues(svd.singularValues());
    null_vector = svd.matrixV().col(8);
  }
  if (!(condition <= kMaxDesignConditionNumber)) {
    throw DegenerateConfigurationError(
        "eight-point: design matrix condition number exceeds 1e12 "
        "(degenerate point configuration)");
  }
  return Finish(null_vector, na.transform, nb.transform, condition);
}

// Minimal-sample solve for RANSAC. The 8x9 design has a one-dimensional
// kernel; full-pivot LU finds it far faster than an SVD. The pivot ratio
// stands in for the condition number when screening degenerate samples.
FundamentalMatrix MinimalEightPoint(const std::array<Correspondence, 8>& sample) {
  std::vector<Eigen::Vector2d> a(8);
  std::vector<Eigen::Vector2d> b(8);
  for (int i = 0; i < 8; ++i) {
    a[i] = sample[i].x;
    b[i] = sample[i].x_prime;
  }
  const NormalizedPoints na = NormalizePoints(a);
  const NormalizedPoints nb = NormalizePoints(b);
  Eigen::Matrix<double, 8, 9> design;
  for (int i = 0; i < 8; ++i) FillDesignRow(na.points[i], nb.points[i], design.row(i));
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 9>> lu(design);
  const auto u = lu.matrixLU();
  const double largest = std::abs(u(0, 0));
  const double smallest = std::abs(u(7, 7));
  const double condition =
      smallest > 0.0 ? largest / smallest : std::numeric_limits<double>::infinity();
  if (!(condition <= kMaxDesignConditionNumber)) {
    throw DegenerateConfigurationError("eight-point: degenerate minimal sample");
  }
  // Back-substitute the kernel vector: U z = 0 with z(8) = 1 in pivoted order.
  Eigen::Matrix<double, 9, 1> z;
  z(8) = 1.0;
  for (int r = 7; r >= 0; --r) {
    double acc = u(r, 8);
    for (int c = r + 1; c < 8; ++c) acc += u(r, c) * z(c);
    z(r) = -acc / u(r, r);
  }
  const Eigen::Matrix<double, 9, 1> null_vector = lu.permutationQ() * z;
  return Finish(null_vector.normalized(), na.transform, nb.transform, condition);
}

}  // namespace

CameraMatrix::CameraMatrix(const Eigen::Matrix3d& k, const Eigen::Matrix3d& r,
                           const Eigen::Vector3d& t)
    : k_(k), r_(r), t_(t) {
  EPIGEO_CHECK(k(1, 0) == 0.0 && k(2, 0) == 0.0 && k(2, 1) == 0.0,
               "intrinsics must be upper triangular");
  EPIGEO_CHECK(k(0, 0) > 0.0 && k(1, 1) > 0.0 && k(2, 2) > 0.0,
               "intrinsics must have a positive diagonal");
  EPIGEO_CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9,
               "rotation must be orthonormal");
  EPIGEO_CHECK(r.determinant() > 0.0, "rotation must be proper");
  p_.leftCols<3>() = k * r;
  p_.col(3) = k * t;
}

Eigen::Matrix3d CanonicalizeFundamental(const Eigen::Matrix3d& f) {
  const double norm = f.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NumericError("fundamental matrix has zero or non-finite norm");
  }
  Eigen::Matrix3d out = f / norm;
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  out.cwiseAbs().maxCoeff(&r, &c);
  if (out(r, c) < 0.0) out = -out;
  return out;
}

double FrobeniusAlignmentError(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double inner = (a.array() * b.array()).sum();
  return 1.0 - std::abs(inner) / (a.norm() * b.norm());
}

Eigen::Matrix3d CrossProductMatrix(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

NormalizedPoints NormalizePoints(std::span<const Eigen::Vector2d> points) {
  EPIGEO_CHECK(points.size() >= 2, "normalization needs at least 2 points");
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  double mean_dist = 0.0;
  for (const auto& p : points) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(points.size());
  if (!(mean_dist > 0.0)) {
    throw DegenerateConfigurationError("normalization: all points identical");
  }
  const double scale = std::sqrt(2.0) / mean_dist;
  NormalizedPoints out;
  out.transform << scale, 0.0, -scale * centroid.x(), 0.0, scale,
      -scale * centroid.y(), 0.0, 0.0, 1.0;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back(scale * (p - centroid));
  return out;
}

FundamentalMatrix EightPoint(std::span<const Correspondence> correspondences) {
  if (correspondences.size() < 8) {
    throw ContractError("eight-point needs at least 8 correspondences, got " +
                        std::to_string(correspondences.size()));
  }
  FundamentalMatrix f = EightPointImpl(correspondences);
  f.inlier_count = static_cast<int>(correspondences.size());
  return f;
}

double SampsonError(const Eigen::Matrix3d& f, const Correspondence& c, bool* capped) {
  const Eigen::Vector3d x = c.XHomogeneous();
  const Eigen::Vector3d xp = c.XPrimeHomogeneous();
  const Eigen::Vector3d fx = f * x;
  const Eigen::Vector3d ftxp = f.transpose() * xp;
  // x'^T F x cancels heavily near the epipolar line; extended precision keeps
  // the ratio accurate to ~1e-15 relative.
  const double residual = static_cast<double>(
      xp.cast<long double>().dot(f.cast<long double>() * x.cast<long double>()));
  const double denom = fx(0) * fx(0) + fx(1) * fx(1) + ftxp(0) * ftxp(0) + ftxp(1) * ftxp(1);
  if (denom < 1e-15) {
    if (capped != nullptr) *capped = true;
    return kEpipolarErrorCap;
  }
  if (capped != nullptr) *capped = false;
  return residual * residual / denom;
}

double SymmetricEpipolarError(const Eigen::Matrix3d& f, const Correspondence& c,
                              bool* capped) {
  const Eigen::Vector3d x = c.XHomogeneous();
  const Eigen::Vector3d xp = c.XPrimeHomogeneous();
  const Eigen::Vector3d line_b = f * x;              // in image B
  const Eigen::Vector3d line_a = f.transpose() * xp;  // in image A
  const double normal_b = line_b.head<2>().squaredNorm();
  const double normal_a = line_a.head<2>().squaredNorm();
  if (normal_a < 1e-15 || normal_b < 1e-15) {
    if (capped != nullptr) *capped = true;
    return kEpipolarErrorCap;
  }
  if (capped != nullptr) *capped = false;
  const double rb = xp.dot(line_b);
  const double ra = x.dot(line_a);
  return rb * rb / normal_b + ra * ra / normal_a;
}

RansacResult RansacFundamental(std::span<const Correspondence> correspondences,
                               const RansacOptions& options) {
  const std::size_t n = correspondences.size();
  if (n < 8) {
    throw ContractError("RANSAC needs at least 8 correspondences, got " +
                        std::to_string(n));
  }
  EPIGEO_CHECK(options.iterations > 0, "RANSAC iterations must be positive");

  RansacResult result;
  int best_count = -1;
  double best_mean = std::numeric_limits<double>::infinity();
  Eigen::Matrix3d best_f = Eigen::Matrix3d::Zero();
  std::array<Correspondence, 8> sample;
  std::array<int, 8> indices{};
  int planned = options.iterations;

  for (int it = 0; it < planned; ++it) {
    ++result.iterations_run;
    // Per-iteration stream: seed xor iteration index.
    std::mt19937_64 rng(SplitMix64(options.seed ^ static_cast<std::uint64_t>(it)));
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    for (int k = 0; k < 8; ++k) {
      int idx = 0;
      bool fresh = false;
      while (!fresh) {
        idx = pick(rng);
        fresh = std::find(indices.begin(), indices.begin() + k, idx) ==
                indices.begin() + k;
      }
      indices[k] = idx;
      sample[k] = correspondences[idx];
    }
    FundamentalMatrix model;
    try {
      model = MinimalEightPoint(sample);
    } catch (const DegenerateConfigurationError&) {
      ++result.degenerate_samples;
      continue;
    }
    ++result.valid_models;

    int count = 0;
    double sum = 0.0;
    for (const Correspondence& c : correspondences) {
      bool capped = false;
      const double e = SampsonError(model.m, c, &capped);
      if (!capped && e < options.inlier_threshold) {
        ++count;
        sum += e;
      }
    }
    const double mean = count > 0 ? sum / count : std::numeric_limits<double>::infinity();
    if (count > best_count || (count == best_count && mean < best_mean)) {
      best_count = count;
      best_mean = mean;
      best_f = model.m;
      if (options.adaptive && count > 0) {
        const double w = static_cast<double>(count) / static_cast<double>(n);
        const double fail = 1.0 - std::pow(w, 8);
        if (fail <= 0.0) {
          planned = std::min(planned, it + 1);
        } else {
          const double needed = std::log(1.0 - options.confidence) / std::log(fail);
          if (needed < planned) planned = std::max(it + 1, static_cast<int>(std::ceil(needed)));
        }
      }
    }
  }

  if (result.valid_models == 0) {
    if (result.degenerate_samples == result.iterations_run) {
      throw DegenerateConfigurationError(
          "RANSAC: every minimal sample was degenerate");
    }
    throw EstimationError("RANSAC: no iteration produced a valid model");
  }
  if (best_count < 8) {
    throw EstimationError("RANSAC: best model has " + std::to_string(best_count) +
                          " inliers (< 8)");
  }

  std::vector<Correspondence> inliers;
  inliers.reserve(best_count);
  for (const Correspondence& c : correspondences) {
    bool capped = false;
    const double e = SampsonError(best_f, c, &capped);
    if (!capped && e < options.inlier_threshold) inliers.push_back(c);
  }
  FundamentalMatrix refit = EightPoint(inliers);

  result.inlier_mask.assign(n, false);
  int refit_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool capped = false;
    const double e = SampsonError(refit.m, correspondences[i], &capped);
    if (!capped && e < options.inlier_threshold) {
      result.inlier_mask[i] = true;
      ++refit_count;
    }
  }
  if (refit_count < 8) {
    throw EstimationError("RANSAC: refit model has " + std::to_string(refit_count) +
                          " inliers (< 8)");
  }
  refit.inlier_count = refit_count;
  result.f = refit;
  return result;
}

FundamentalMatrix FundamentalFromCameras(const CameraMatrix& p,
                                         const CameraMatrix& p_prime) {
  if ((p.Center() - p_prime.Center()).norm() <= 1e-9) {
    throw DegenerateConfigurationError(
        "coincident camera centers: epipolar geometry undefined");
  }
  // Any right inverse of P gives the same F: two of them differ by multiples
  // of the center C, and [e']x P' C = [e']x e' = 0. [(KR)^-1; 0] avoids the
  // squared conditioning of P^T (P P^T)^-1 for pixel-scale cameras.
  Eigen::Matrix<double, 4, 3> right_inverse = Eigen::Matrix<double, 4, 3>::Zero();
  right_inverse.topRows<3>() = p.R().transpose() * p.K().inverse();
  const Eigen::Vector3d e_prime = p_prime.Project(p.Center());
  FundamentalMatrix f;
  f.m = CanonicalizeFundamental(CrossProductMatrix(e_prime) * p_prime.P() * right_inverse);
  f.method = FundamentalMethod::kFromCameras;
  return f;
}

Epipole ComputeEpipole(const Eigen::Matrix3d& f, EpipoleSide side) {
  // Extended precision: with sigma2/sigma1 ~ 1e-4 (far epipoles) a double
  // Jacobi SVD loses ~1e-7 px on the epipole.
  using MatrixL = Eigen::Matrix<long double, 3, 3>;
  Eigen::JacobiSVD<MatrixL> svd(f.cast<long double>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix<long double, 3, 1> el =
      side == EpipoleSide::kLeft ? svd.matrixV().col(2) : svd.matrixU().col(2);
  Epipole out;
  if (std::abs(el.z()) < 1e-12L) {
    out.point = el.cast<double>();
    out.at_infinity = true;
  } else {
    out.point = (el / el.z()).cast<double>();
  }
  return out;
}

}  // namespace epigeo
