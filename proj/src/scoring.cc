#include "epigeo/scoring.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "epigeo/error.h"
#include "epigeo/jsonl.h"
#include "epigeo/parallel.h"

namespace epigeo {
namespace {

using nlohmann::json;

std::uint64_t Mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double Median(std::vector<double> values) {
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double Mean(std::span<const double> values) {
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double TrimmedMean(std::vector<double> values, double fraction) {
  std::sort(values.begin(), values.end());
  const std::size_t drop = static_cast<std::size_t>(std::floor(fraction * values.size()));
  if (2 * drop >= values.size()) return Median(values);
  return Mean(std::span<const double>(values).subspan(drop, values.size() - 2 * drop));
}

std::string ToString(ErrorScope scope) {
  return scope == ErrorScope::kInliers ? "inliers" : "all_matches";
}

ErrorScope ParseScope(const std::string& s) {
  if (s == "inliers") return ErrorScope::kInliers;
  if (s == "all_matches") return ErrorScope::kAllMatches;
  throw ContractError("unknown error scope '" + s + "' (inliers|all_matches)");
}

std::string ToString(ErrorMetric metric) {
  return metric == ErrorMetric::kSampson ? "sampson" : "symmetric";
}

ErrorMetric ParseMetric(const std::string& s) {
  if (s == "sampson") return ErrorMetric::kSampson;
  if (s == "symmetric") return ErrorMetric::kSymmetric;
  throw ContractError("unknown error metric '" + s + "' (sampson|symmetric)");
}

std::string FormatMatrix(const Eigen::Matrix3d& m) {
  std::string out;
  char buf[40];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      if (!out.empty()) out.push_back(' ');
      out += buf;
    }
  }
  return out;
}

Eigen::Matrix3d ParseMatrix(const std::string& text) {
  std::istringstream in(text);
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!(in >> m(r, c))) throw ContractError("fundamental matrix needs 9 numbers");
    }
  }
  return m;
}

json OptionalNumber(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> ReadOptional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string ToString(PairStatus status) {
  switch (status) {
    case PairStatus::kOk: return "ok";
    case PairStatus::kTooFewMatches: return "too_few_matches";
    case PairStatus::kEstimationFailed: return "estimation_failed";
    case PairStatus::kDegenerate: return "degenerate";
  }
  return "ok";
}

PairStatus ParsePairStatus(const std::string& name) {
  if (name == "ok") return PairStatus::kOk;
  if (name == "too_few_matches") return PairStatus::kTooFewMatches;
  if (name == "estimation_failed") return PairStatus::kEstimationFailed;
  if (name == "degenerate") return PairStatus::kDegenerate;
  throw ContractError("unknown pair status '" + name + "'");
}

std::string ToString(Aggregation aggregation) {
  switch (aggregation) {
    case Aggregation::kMean: return "mean";
    case Aggregation::kMedian: return "median";
    case Aggregation::kTrimmedMean: return "trimmed_mean";
  }
  return "mean";
}

Aggregation ParseAggregation(const std::string& name) {
  if (name == "mean") return Aggregation::kMean;
  if (name == "median") return Aggregation::kMedian;
  if (name == "trimmed_mean") return Aggregation::kTrimmedMean;
  throw ContractError("unknown aggregation '" + name + "' (mean|median|trimmed_mean)");
}

json ToJson(const ScoringConfig& c) {
  const FeatureOptions& f = c.features;
  return json{
      {"features",
       {{"octaves", f.octaves},
        {"scales_per_octave", f.scales_per_octave},
        {"base_sigma", f.base_sigma},
        {"input_sigma", f.input_sigma},
        {"contrast_threshold", f.contrast_threshold},
        {"edge_ratio_threshold", f.edge_ratio_threshold},
        {"max_keypoints", f.max_keypoints},
        {"ratio_threshold", f.ratio_threshold},
        {"mutual_filter", f.mutual_filter},
        {"max_dim", f.max_dim}}},
      {"epipolar",
       {{"iterations", c.ransac.iterations},
        {"inlier_threshold", c.ransac.inlier_threshold},
        {"seed", c.ransac.seed},
        {"adaptive", c.ransac.adaptive},
        {"confidence", c.ransac.confidence}}},
      {"scoring",
       {{"gaps", c.gaps},
        {"stride", c.stride},
        {"aggregation", ToString(c.aggregation)},
        {"scope", ToString(c.scope)},
        {"metric", ToString(c.metric)},
        {"static_threshold", c.static_threshold},
        {"normalize_by_diagonal", c.normalize_by_diagonal},
        {"min_matches", c.min_matches},
        {"ssim",
         {{"window_radius", c.ssim.window_radius},
          {"window_sigma", c.ssim.window_sigma},
          {"k1", c.ssim.k1},
          {"k2", c.ssim.k2},
          {"dynamic_range", c.ssim.dynamic_range}}}}}};
}

ScoringConfig ScoringConfigFromJson(const json& j) {
  ScoringConfig c;
  if (j.contains("features")) {
    const json& f = j.at("features");
    FeatureOptions& o = c.features;
    o.octaves = f.value("octaves", o.octaves);
    o.scales_per_octave = f.value("scales_per_octave", o.scales_per_octave);
    o.base_sigma = f.value("base_sigma", o.base_sigma);
    o.input_sigma = f.value("input_sigma", o.input_sigma);
    o.contrast_threshold = f.value("contrast_threshold", o.contrast_threshold);
    o.edge_ratio_threshold = f.value("edge_ratio_threshold", o.edge_ratio_threshold);
    o.max_keypoints = f.value("max_keypoints", o.max_keypoints);
    o.ratio_threshold = f.value("ratio_threshold", o.ratio_threshold);
    o.mutual_filter = f.value("mutual_filter", o.mutual_filter);
    o.max_dim = f.value("max_dim", o.max_dim);
  }
  if (j.contains("epipolar")) {
    const json& e = j.at("epipolar");
    c.ransac.iterations = e.value("iterations", c.ransac.iterations);
    c.ransac.inlier_threshold = e.value("inlier_threshold", c.ransac.inlier_threshold);
    c.ransac.seed = e.value("seed", c.ransac.seed);
    c.ransac.adaptive = e.value("adaptive", c.ransac.adaptive);
    c.ransac.confidence = e.value("confidence", c.ransac.confidence);
  }
  if (j.contains("scoring")) {
    const json& s = j.at("scoring");
    c.gaps = s.value("gaps", c.gaps);
    c.stride = s.value("stride", c.stride);
    c.aggregation = ParseAggregation(s.value("aggregation", ToString(c.aggregation)));
    c.scope = ParseScope(s.value("scope", ToString(c.scope)));
    c.metric = ParseMetric(s.value("metric", ToString(c.metric)));
    c.static_threshold = s.value("static_threshold", c.static_threshold);
    c.normalize_by_diagonal = s.value("normalize_by_diagonal", c.normalize_by_diagonal);
    c.min_matches = s.value("min_matches", c.min_matches);
    if (s.contains("ssim")) {
      const json& q = s.at("ssim");
      c.ssim.window_radius = q.value("window_radius", c.ssim.window_radius);
      c.ssim.window_sigma = q.value("window_sigma", c.ssim.window_sigma);
      c.ssim.k1 = q.value("k1", c.ssim.k1);
      c.ssim.k2 = q.value("k2", c.ssim.k2);
      c.ssim.dynamic_range = q.value("dynamic_range", c.ssim.dynamic_range);
    }
  }
  return c;
}

std::string ConfigHash(const ScoringConfig& config) { return Digest(ToJson(config)); }

json ToJson(const PairScore& s) {
  json j{{"frame_i", s.frame_i},
         {"frame_j", s.frame_j},
         {"n_matches", s.n_matches},
         {"n_inliers", s.n_inliers},
         {"n_capped", s.n_capped},
         {"status", ToString(s.status)},
         {"mean_inlier_sampson", OptionalNumber(s.mean_inlier_sampson)},
         {"median_inlier_sampson", OptionalNumber(s.median_inlier_sampson)}};
  j["fundamental"] = s.fundamental ? json(FormatMatrix(*s.fundamental)) : json(nullptr);
  return j;
}

PairScore PairScoreFromJson(const json& j) {
  PairScore s;
  s.frame_i = j.at("frame_i").get<int>();
  s.frame_j = j.at("frame_j").get<int>();
  s.n_matches = j.value("n_matches", 0);
  s.n_inliers = j.value("n_inliers", 0);
  s.n_capped = j.value("n_capped", 0);
  s.status = ParsePairStatus(j.at("status").get<std::string>());
  s.mean_inlier_sampson = ReadOptional(j, "mean_inlier_sampson");
  s.median_inlier_sampson = ReadOptional(j, "median_inlier_sampson");
  if (j.contains("fundamental") && j.at("fundamental").is_string()) {
    s.fundamental = ParseMatrix(j.at("fundamental").get<std::string>());
  }
  return s;
}

json ToJson(const VideoScore& v, bool include_pairs) {
  json j{{"video_id", v.video_id},
         {"consistency_error", OptionalNumber(v.consistency_error)},
         {"consistency_score", OptionalNumber(v.consistency_score)},
         {"motion_level", OptionalNumber(v.motion_level)},
         {"n_pairs", v.n_pairs},
         {"n_valid_pairs", v.n_valid_pairs},
         {"flags",
          {{"near_static", v.near_static}, {"insufficient_texture", v.insufficient_texture}}},
         {"config_hash", v.config_hash}};
  if (include_pairs) {
    json pairs = json::array();
    for (const PairScore& p : v.pairs) pairs.push_back(ToJson(p));
    j["pairs"] = std::move(pairs);
  }
  return j;
}

VideoScore VideoScoreFromJson(const json& j) {
  VideoScore v;
  v.video_id = j.at("video_id").get<std::string>();
  v.consistency_error = ReadOptional(j, "consistency_error");
  v.consistency_score = ReadOptional(j, "consistency_score");
  v.motion_level = ReadOptional(j, "motion_level");
  v.n_pairs = j.value("n_pairs", 0);
  v.n_valid_pairs = j.value("n_valid_pairs", 0);
  if (j.contains("flags")) {
    v.near_static = j.at("flags").value("near_static", false);
    v.insufficient_texture = j.at("flags").value("insufficient_texture", false);
  }
  v.config_hash = j.value("config_hash", std::string());
  if (j.contains("pairs")) {
    for (const json& p : j.at("pairs")) v.pairs.push_back(PairScoreFromJson(p));
  }
  return v;
}

double ConsistencyScoreFromError(double error) {
  EPIGEO_CHECK(error >= 0.0 && std::isfinite(error), "consistency error must be finite and >= 0");
  return 1.0 / (1.0 + error);
}

std::vector<std::pair<int, int>> FramePairs(int n_frames, std::span<const int> gaps,
                                            int stride) {
  EPIGEO_CHECK(n_frames >= 2, "frame pairs need at least 2 frames");
  EPIGEO_CHECK(!gaps.empty(), "gap list must not be empty");
  EPIGEO_CHECK(stride >= 1, "stride must be positive");
  std::set<std::pair<int, int>> pairs;
  for (const int g : gaps) {
    EPIGEO_CHECK(g > 0, "gaps must be positive");
    for (int i = 0; i + g < n_frames; i += stride) pairs.emplace(i, i + g);
  }
  return {pairs.begin(), pairs.end()};
}

std::uint64_t PairSeed(std::uint64_t global_seed, int i, int j) {
  const std::uint64_t key =
      (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
      static_cast<std::uint32_t>(j);
  return Mix(global_seed ^ Mix(key));
}

PairScore ScoreCorrespondences(std::span<const Correspondence> correspondences, int width,
                               int height, const ScoringConfig& config, int frame_i,
                               int frame_j) {
  PairScore score;
  score.frame_i = frame_i;
  score.frame_j = frame_j;
  score.n_matches = static_cast<int>(correspondences.size());
  if (score.n_matches < std::max(config.min_matches, 8)) {
    score.status = PairStatus::kTooFewMatches;
    return score;
  }

  RansacOptions options = config.ransac;
  options.seed = PairSeed(config.ransac.seed, frame_i, frame_j);
  RansacResult ransac;
  try {
    ransac = RansacFundamental(correspondences, options);
  } catch (const DegenerateConfigurationError&) {
    score.status = PairStatus::kDegenerate;
    return score;
  } catch (const EstimationError&) {
    score.status = PairStatus::kEstimationFailed;
    return score;
  }
  score.n_inliers = ransac.f.inlier_count;
  score.fundamental = ransac.f.m;

  std::vector<double> errors;
  errors.reserve(correspondences.size());
  for (std::size_t k = 0; k < correspondences.size(); ++k) {
    if (config.scope == ErrorScope::kInliers && !ransac.inlier_mask[k]) continue;
    bool capped = false;
    const double e = config.metric == ErrorMetric::kSampson
                         ? SampsonError(ransac.f.m, correspondences[k], &capped)
                         : SymmetricEpipolarError(ransac.f.m, correspondences[k], &capped);
    if (capped) {
      ++score.n_capped;
      continue;
    }
    errors.push_back(e);
  }
  if (errors.empty()) {
    score.status = PairStatus::kEstimationFailed;
    return score;
  }
  const double mean = Mean(errors);
  const double median = Median(errors);

  // Zero-baseline pairs: F is arbitrary, the tiny error is meaningless.
  // Mean per-match displacement: a centroid difference cancels out for
  // cameras orbiting the scene center.
  double shift = 0.0;
  for (const Correspondence& c : correspondences) shift += (c.x_prime - c.x).norm();
  shift /= static_cast<double>(correspondences.size());
  const double inlier_ratio = static_cast<double>(score.n_inliers) / score.n_matches;
  if (inlier_ratio > 0.99 && median < 1e-6 && shift < 0.5) {
    score.status = PairStatus::kDegenerate;
    return score;
  }

  const double scale =
      config.normalize_by_diagonal ? 1.0 / (static_cast<double>(width) * width +
                                            static_cast<double>(height) * height)
                                   : 1.0;
  score.status = PairStatus::kOk;
  score.mean_inlier_sampson = mean * scale;
  score.median_inlier_sampson = median * scale;
  return score;
}

std::vector<Correspondence> MatchFeatures(const DescriptorSet& a, const DescriptorSet& b,
                                          const FeatureOptions& options) {
  const std::vector<Match> matches = MatchDescriptors(
      a.descriptors, b.descriptors, options.ratio_threshold, options.mutual_filter);
  std::vector<Correspondence> out;
  out.reserve(matches.size());
  std::set<std::array<double, 4>> seen;
  for (const Match& m : matches) {
    const Keypoint& ka = a.keypoints[m.index_a];
    const Keypoint& kb = b.keypoints[m.index_b];
    // Orientation duplicates of one keypoint yield identical point pairs.
    if (!seen.insert({ka.x, ka.y, kb.x, kb.y}).second) continue;
    out.push_back({Eigen::Vector2d(ka.x, ka.y), Eigen::Vector2d(kb.x, kb.y)});
  }
  return out;
}

PairScore ScorePair(const Frame& frame_a, const Frame& frame_b, const ScoringConfig& config,
                    int frame_i, int frame_j) {
  EPIGEO_CHECK(frame_a.SameShape(frame_b), "score_pair: frames must have identical dimensions");
  const DescriptorSet fa = ExtractFeatures(frame_a, config.features);
  const DescriptorSet fb = ExtractFeatures(frame_b, config.features);
  const std::vector<Correspondence> corr = MatchFeatures(fa, fb, config.features);
  return ScoreCorrespondences(corr, frame_a.width(), frame_a.height(), config, frame_i,
                              frame_j);
}

VideoScore AggregateVideo(const std::string& video_id, std::vector<PairScore> pairs,
                          std::optional<double> motion_level, const ScoringConfig& config) {
  VideoScore v;
  v.video_id = video_id;
  v.config_hash = ConfigHash(config);
  v.motion_level = motion_level;
  v.near_static = motion_level.has_value() && *motion_level > config.static_threshold;
  v.n_pairs = static_cast<int>(pairs.size());

  std::vector<double> values;
  int too_few = 0;
  for (const PairScore& p : pairs) {
    if (p.status == PairStatus::kOk) values.push_back(*p.mean_inlier_sampson);
    if (p.status == PairStatus::kTooFewMatches) ++too_few;
  }
  v.n_valid_pairs = static_cast<int>(values.size());
  v.insufficient_texture = 2 * too_few > v.n_pairs || values.empty();
  if (!values.empty()) {
    double error = 0.0;
    switch (config.aggregation) {
      case Aggregation::kMean: error = Mean(values); break;
      case Aggregation::kMedian: error = Median(values); break;
      case Aggregation::kTrimmedMean: error = TrimmedMean(values, 0.1); break;
    }
    v.consistency_error = error;
    v.consistency_score = ConsistencyScoreFromError(error);
  }
  v.pairs = std::move(pairs);
  return v;
}

VideoScore ScoreVideo(const std::string& video_id, std::span<const Frame> frames,
                      const ScoringConfig& config, FeatureSource source) {
  EPIGEO_CHECK(frames.size() >= 2, "score_video needs at least 2 frames");
  for (const Frame& f : frames) {
    EPIGEO_CHECK(f.SameShape(frames[0]), "score_video: all frames must share dimensions");
  }
  const bool caching = source.cache != nullptr && source.frame_hashes.size() == frames.size();
  const int threads = ResolveThreadCount(config.threads);
  const double motion = MotionLevel(frames, config.ssim);
  const auto pair_list = FramePairs(static_cast<int>(frames.size()), config.gaps, config.stride);

  std::vector<int> needed;
  for (const auto& [i, j] : pair_list) {
    needed.push_back(i);
    needed.push_back(j);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());

  const std::string params_hash = caching ? FeatureParamsHash(config.features) : std::string();
  std::vector<DescriptorSet> features(frames.size());
  std::vector<bool> computed(frames.size(), false);
  std::vector<int> todo;
  for (const int f : needed) {
    const DescriptorSet* hit =
        caching ? source.cache->Find(source.frame_hashes[f], params_hash) : nullptr;
    if (hit != nullptr) {
      features[f] = *hit;
    } else {
      todo.push_back(f);
    }
  }
  ParallelFor(todo.size(), threads, [&](std::size_t k) {
    features[todo[k]] = ExtractFeatures(frames[todo[k]], config.features);
  });
  if (caching) {
    for (const int f : todo) source.cache->Insert(source.frame_hashes[f], params_hash, features[f]);
  }

  std::vector<PairScore> pairs(pair_list.size());
  ParallelFor(pair_list.size(), threads, [&](std::size_t k) {
    const auto [i, j] = pair_list[k];
    const auto corr = MatchFeatures(features[i], features[j], config.features);
    pairs[k] = ScoreCorrespondences(corr, frames[0].width(), frames[0].height(), config, i, j);
  });
  return AggregateVideo(video_id, std::move(pairs), motion, config);
}

VideoScore ScoreVideoFromCorrespondences(const std::string& video_id,
                                         std::span<const PairCorrespondences> pairs, int width,
                                         int height, const ScoringConfig& config,
                                         std::optional<double> motion_level) {
  EPIGEO_CHECK(width > 0 && height > 0, "image size must be positive");
  std::vector<PairScore> scores(pairs.size());
  ParallelFor(pairs.size(), ResolveThreadCount(config.threads), [&](std::size_t k) {
    scores[k] = ScoreCorrespondences(pairs[k].correspondences, width, height, config,
                                     pairs[k].frame_i, pairs[k].frame_j);
  });
  return AggregateVideo(video_id, std::move(scores), motion_level, config);
}

}  // namespace epigeo
