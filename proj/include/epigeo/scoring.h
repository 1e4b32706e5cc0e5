#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epigeo/epipolar.h"
#include "epigeo/features.h"
#include "epigeo/image.h"
#include "json.hpp"

namespace epigeo {

enum class Aggregation { kMean, kMedian, kTrimmedMean };
// Which correspondences feed the per-pair statistics.
enum class ErrorScope { kInliers, kAllMatches };
// Sampson, or the symmetric epipolar distance alternative.
enum class ErrorMetric { kSampson, kSymmetric };

struct ScoringConfig {
  FeatureOptions features;
  RansacOptions ransac;  // ransac.seed is the global seed
  std::vector<int> gaps = {4, 8};
  int stride = 4;
  Aggregation aggregation = Aggregation::kMean;
  ErrorScope scope = ErrorScope::kInliers;
  ErrorMetric metric = ErrorMetric::kSampson;
  double static_threshold = 0.90;
  bool normalize_by_diagonal = true;
  int min_matches = 30;
  SsimOptions ssim;
  // Not part of the hash: never changes results.
  int threads = 0;
};

nlohmann::json ToJson(const ScoringConfig& config);
ScoringConfig ScoringConfigFromJson(const nlohmann::json& j);
std::string ConfigHash(const ScoringConfig& config);

enum class PairStatus { kOk, kTooFewMatches, kEstimationFailed, kDegenerate };

std::string ToString(PairStatus status);
PairStatus ParsePairStatus(const std::string& name);
std::string ToString(Aggregation aggregation);
Aggregation ParseAggregation(const std::string& name);

struct PairScore {
  int frame_i = 0;
  int frame_j = 0;
  int n_matches = 0;
  int n_inliers = 0;
  int n_capped = 0;
  PairStatus status = PairStatus::kTooFewMatches;
  // Present iff status == kOk. Units: px^2, divided by the squared image
  // diagonal when normalize_by_diagonal is on.
  std::optional<double> mean_inlier_sampson;
  std::optional<double> median_inlier_sampson;
  std::optional<Eigen::Matrix3d> fundamental;
};

struct VideoScore {
  std::string video_id;
  std::optional<double> consistency_error;
  std::optional<double> consistency_score;  // 1 / (1 + consistency_error)
  std::optional<double> motion_level;
  int n_pairs = 0;
  int n_valid_pairs = 0;
  bool near_static = false;
  bool insufficient_texture = false;
  std::string config_hash;
  std::vector<PairScore> pairs;

  bool Flagged() const { return near_static || insufficient_texture || !consistency_score; }
};

nlohmann::json ToJson(const PairScore& score);
PairScore PairScoreFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const VideoScore& score, bool include_pairs);
VideoScore VideoScoreFromJson(const nlohmann::json& j);

double ConsistencyScoreFromError(double error);

// Pairs (i, i+g) for i a multiple of `stride`, sorted and deduplicated.
std::vector<std::pair<int, int>> FramePairs(int n_frames, std::span<const int> gaps,
                                            int stride);

// RANSAC seed of pair (i, j); independent of evaluation order.
std::uint64_t PairSeed(std::uint64_t global_seed, int i, int j);

// Epipolar measurement of an already-matched pair. `width`/`height` give the
// image diagonal used for normalization.
PairScore ScoreCorrespondences(std::span<const Correspondence> correspondences,
                               int width, int height, const ScoringConfig& config,
                               int frame_i = 0, int frame_j = 1);

// Matches two extracted feature sets into correspondences.
std::vector<Correspondence> MatchFeatures(const DescriptorSet& a, const DescriptorSet& b,
                                          const FeatureOptions& options);

PairScore ScorePair(const Frame& frame_a, const Frame& frame_b,
                    const ScoringConfig& config, int frame_i = 0, int frame_j = 1);

struct FeatureSource {
  FeatureCache* cache = nullptr;
  std::span<const std::string> frame_hashes;  // one per frame when caching
};

VideoScore ScoreVideo(const std::string& video_id, std::span<const Frame> frames,
                      const ScoringConfig& config, FeatureSource features = {});

struct PairCorrespondences {
  int frame_i = 0;
  int frame_j = 0;
  std::vector<Correspondence> correspondences;
};

// Scores externally supplied correspondences. Motion level is only known when
// frames were available to the caller.
VideoScore ScoreVideoFromCorrespondences(const std::string& video_id,
                                         std::span<const PairCorrespondences> pairs,
                                         int width, int height,
                                         const ScoringConfig& config,
                                         std::optional<double> motion_level = std::nullopt);

// Aggregates per-pair scores into a video record (flags, error, score).
VideoScore AggregateVideo(const std::string& video_id, std::vector<PairScore> pairs,
                          std::optional<double> motion_level, const ScoringConfig& config);

}  // namespace epigeo
