#include <cmath>

#include "doctest.h"
#include "epigeo/error.h"
#include "epigeo/jsonl.h"
#include "epigeo/scoring.h"
#include "epigeo/synth.h"
#include "test_util.h"

namespace epigeo {
namespace {

// The distant, zoomed orbit used for rendered-dot experiments.
TrajectorySpec ZoomedOrbit(std::uint64_t seed) {
  TrajectorySpec spec;
  spec.n_frames = 16;
  spec.radius = 40;
  spec.focal = 2200;
  spec.span = 0.04;
  spec.seed = seed;
  return spec;
}

ScoringConfig PixelConfig() {
  ScoringConfig c;
  c.normalize_by_diagonal = false;
  return c;
}

PairScore OkPair(double mean, double median) {
  PairScore p;
  p.status = PairStatus::kOk;
  p.mean_inlier_sampson = mean;
  p.median_inlier_sampson = median;
  p.fundamental = Eigen::Matrix3d::Identity();
  return p;
}

PairScore FailedPair(PairStatus status) {
  PairScore p;
  p.status = status;
  return p;
}

TEST_SUITE("scoring") {
  TEST_CASE("frame pair enumeration") {
    using P = std::vector<std::pair<int, int>>;
    CHECK(FramePairs(10, std::vector<int>{4}, 2) == P{{0, 4}, {2, 6}, {4, 8}});
    CHECK(FramePairs(2, std::vector<int>{1}, 1) == P{{0, 1}});
    CHECK(FramePairs(5, std::vector<int>{5, 9}, 1).empty());
    CHECK(FramePairs(9, std::vector<int>{4, 8}, 4) == P{{0, 4}, {0, 8}, {4, 8}});
    CHECK(FramePairs(6, std::vector<int>{2, 2}, 2) == P{{0, 2}, {2, 4}});
    CHECK_THROWS_AS(FramePairs(6, std::vector<int>{0}, 1), ContractError);
    CHECK_THROWS_AS(FramePairs(6, std::vector<int>{2}, 0), ContractError);
  }

  TEST_CASE("pair seeds depend on the pair only") {
    CHECK(PairSeed(0, 0, 4) == PairSeed(0, 0, 4));
    CHECK(PairSeed(0, 0, 4) != PairSeed(0, 4, 0));
    CHECK(PairSeed(0, 0, 4) != PairSeed(1, 0, 4));
    CHECK(PairSeed(0, 0, 4) != PairSeed(0, 0, 8));
  }

  TEST_CASE("score from error") {
    CHECK(ConsistencyScoreFromError(0.0) == 1.0);
    CHECK(ConsistencyScoreFromError(1.0) == 0.5);
    CHECK_THROWS_AS(ConsistencyScoreFromError(-1.0), ContractError);
  }

  TEST_CASE("aggregation modes") {
    ScoringConfig c;
    std::vector<PairScore> pairs;
    for (double v : {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 100.0}) pairs.push_back(OkPair(v, v));
    c.aggregation = Aggregation::kMean;
    CHECK(*AggregateVideo("v", pairs, 0.5, c).consistency_error == doctest::Approx(14.5));
    c.aggregation = Aggregation::kMedian;
    CHECK(*AggregateVideo("v", pairs, 0.5, c).consistency_error == doctest::Approx(5.5));
    c.aggregation = Aggregation::kTrimmedMean;
    CHECK(*AggregateVideo("v", pairs, 0.5, c).consistency_error == doctest::Approx(5.5));
    const VideoScore v = AggregateVideo("v", pairs, 0.5, c);
    CHECK(*v.consistency_score == doctest::Approx(1.0 / 6.5));
    CHECK(v.config_hash == ConfigHash(c));
    CHECK(v.n_pairs == 10);
    CHECK(v.n_valid_pairs == 10);
    CHECK_FALSE(v.Flagged());
  }

  TEST_CASE("video flags") {
    ScoringConfig c;
    std::vector<PairScore> pairs = {OkPair(1, 1), FailedPair(PairStatus::kTooFewMatches),
                                    FailedPair(PairStatus::kTooFewMatches)};
    const VideoScore sparse = AggregateVideo("v", pairs, 0.5, c);
    CHECK(sparse.insufficient_texture);
    CHECK(sparse.consistency_error.has_value());
    CHECK(sparse.Flagged());

    const VideoScore still = AggregateVideo("v", {OkPair(1, 1)}, 0.95, c);
    CHECK(still.near_static);
    CHECK_FALSE(AggregateVideo("v", {OkPair(1, 1)}, 0.90, c).near_static);

    const VideoScore failed = AggregateVideo("v", {FailedPair(PairStatus::kDegenerate)}, 0.5, c);
    CHECK_FALSE(failed.consistency_error.has_value());
    CHECK(failed.insufficient_texture);
    CHECK(failed.Flagged());
  }

  TEST_CASE("too few correspondences") {
    const auto rig = testing::RandomRig(1, 20);
    const PairScore p = ScoreCorrespondences(rig.correspondences, 640, 480, ScoringConfig{});
    CHECK(p.status == PairStatus::kTooFewMatches);
    CHECK(p.n_matches == 20);
    CHECK_FALSE(p.mean_inlier_sampson.has_value());
    ScoringConfig loose;
    loose.min_matches = 10;
    CHECK(ScoreCorrespondences(rig.correspondences, 640, 480, loose).status == PairStatus::kOk);
  }

  TEST_CASE("diagonal normalization, error scope and metric") {
    const auto rig = testing::RandomRig(2, 80);
    auto cs = rig.correspondences;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& c : cs) c.x_prime += Eigen::Vector2d(n(rng), n(rng));
    ScoringConfig raw;
    raw.normalize_by_diagonal = false;
    const PairScore px = ScoreCorrespondences(cs, 640, 480, raw);
    const PairScore norm = ScoreCorrespondences(cs, 640, 480, ScoringConfig{});
    REQUIRE(px.status == PairStatus::kOk);
    CHECK(*norm.mean_inlier_sampson == doctest::Approx(*px.mean_inlier_sampson / (640.0 * 640 + 480 * 480)).epsilon(1e-12));
    CHECK(*px.median_inlier_sampson <= *px.mean_inlier_sampson * 3);
    ScoringConfig all = raw;
    all.scope = ErrorScope::kAllMatches;
    CHECK(*ScoreCorrespondences(cs, 640, 480, all).mean_inlier_sampson >= *px.mean_inlier_sampson - 1e-12);
    ScoringConfig sym = raw;
    sym.metric = ErrorMetric::kSymmetric;
    CHECK(*ScoreCorrespondences(cs, 640, 480, sym).mean_inlier_sampson > *px.mean_inlier_sampson);
  }

  TEST_CASE("zero baseline is flagged degenerate or scores near zero") {
    const Scene scene = GenerateScene(200, 3.0, 3);
    const TrajectorySpec spec = ZoomedOrbit(3);
    const auto cams = CameraTrajectory(spec);
    const ProjectedScene p = ProjectScene(scene, cams, spec, std::vector<std::pair<int, int>>{{0, 4}});
    const auto frames = RenderVideo(p, spec, 2.5);
    const PairScore s = ScorePair(frames[0], frames[0], PixelConfig());
    const bool degenerate = s.status == PairStatus::kDegenerate;
    const bool tiny = s.status == PairStatus::kOk && *s.mean_inlier_sampson < 1e-6;
    CHECK((degenerate || tiny));
  }

  TEST_CASE("rendered clean orbit pair scores below half a pixel squared") {
    const Scene scene = GenerateScene(400, 3.0, 0);
    const TrajectorySpec spec = ZoomedOrbit(0);
    const auto cams = CameraTrajectory(spec);
    const ProjectedScene p = ProjectScene(scene, cams, spec, std::vector<std::pair<int, int>>{{0, 4}});
    const auto frames = RenderVideo(p, spec, 2.5);
    const PairScore s = ScorePair(frames[0], frames[4], PixelConfig(), 0, 4);
    REQUIRE(s.status == PairStatus::kOk);
    CHECK(*s.mean_inlier_sampson < 0.5);
    CHECK(s.fundamental.has_value());
  }

  TEST_CASE("dynamic points raise the pair error") {
    // Slow movers (a few px over the pair) partly survive the inlier threshold.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Scene scene = GenerateScene(300, 2.0, seed);
      TrajectorySpec spec;
      spec.span = 0.8;
      spec.seed = seed;
      spec.jitter_sigma = 0.3;
      spec.dynamic_speed = 0.01;
      const auto cams = CameraTrajectory(spec);
      const std::vector<std::pair<int, int>> pairs = {{0, 4}};
      const auto clean = ProjectScene(scene, cams, spec, pairs).pairs[0].correspondences;
      spec.dynamic_fraction = 0.4;
      const auto moving = ProjectScene(scene, cams, spec, pairs).pairs[0].correspondences;
      const PairScore a = ScoreCorrespondences(clean, spec.width, spec.height, PixelConfig());
      const PairScore b = ScoreCorrespondences(moving, spec.width, spec.height, PixelConfig());
      REQUIRE(a.status == PairStatus::kOk);
      REQUIRE(b.status == PairStatus::kOk);
      CHECK(*b.mean_inlier_sampson > *a.mean_inlier_sampson);
    }
  }

  TEST_CASE("static video is flagged near-static") {
    const Scene scene = GenerateScene(300, 3.0, 2);
    const TrajectorySpec spec = ZoomedOrbit(2);
    const auto cams = CameraTrajectory(spec);
    const ProjectedScene p = ProjectScene(scene, cams, spec, std::vector<std::pair<int, int>>{{0, 4}});
    const auto frames = RenderVideo(p, spec, 2.5);
    const std::vector<Frame> still(9, frames[0]);
    ScoringConfig c;
    c.gaps = {4};
    const VideoScore v = ScoreVideo("still", still, c);
    CHECK(v.near_static);
    CHECK(*v.motion_level == 1.0);
    CHECK(v.Flagged());
  }

  TEST_CASE("thread count and cache do not change results") {
    const Scene scene = GenerateScene(300, 3.0, 4);
    const TrajectorySpec spec = ZoomedOrbit(4);
    const auto cams = CameraTrajectory(spec);
    const ScoringConfig base;
    const auto pairs = FramePairs(spec.n_frames, base.gaps, base.stride);
    const auto frames = RenderVideo(ProjectScene(scene, cams, spec, pairs), spec, 2.5);
    ScoringConfig one = base, four = base;
    one.threads = 1;
    four.threads = 4;
    const std::string a = CanonicalDump(ToJson(ScoreVideo("v", frames, one), true));
    const std::string b = CanonicalDump(ToJson(ScoreVideo("v", frames, four), true));
    CHECK(a == b);

    std::vector<std::string> hashes;
    for (std::size_t k = 0; k < frames.size(); ++k) hashes.push_back("h" + std::to_string(k));
    FeatureCache cache;
    const std::string cold = CanonicalDump(ToJson(ScoreVideo("v", frames, one, {&cache, hashes}), true));
    CHECK(cache.size() > 0);
    const std::string warm = CanonicalDump(ToJson(ScoreVideo("v", frames, one, {&cache, hashes}), true));
    CHECK(cold == a);
    CHECK(warm == a);
  }

  TEST_CASE("score records round trip through JSON") {
    PairScore p = OkPair(0.25, 0.125);
    Eigen::Matrix3d f;
    f << 0.1, 1.0 / 3.0, -2e-9, 4, 5, 6, 7, 8, std::nextafter(9.0, 10.0);
    p.fundamental = f;
    p.n_capped = 2;
    ScoringConfig c;
    const VideoScore v = AggregateVideo("vid", {p, FailedPair(PairStatus::kEstimationFailed)}, 0.4, c);
    const nlohmann::json j = ToJson(v, true);
    const VideoScore back = VideoScoreFromJson(nlohmann::json::parse(j.dump()));
    CHECK(back.video_id == "vid");
    CHECK(back.consistency_error == v.consistency_error);
    CHECK(back.pairs.size() == 2);
    CHECK(*back.pairs[0].fundamental == f);
    CHECK(back.pairs[1].status == PairStatus::kEstimationFailed);
    CHECK(j["pairs"][1]["fundamental"].is_null());
    CHECK_FALSE(ToJson(v, false).contains("pairs"));
    for (auto s : {PairStatus::kOk, PairStatus::kTooFewMatches, PairStatus::kEstimationFailed,
                   PairStatus::kDegenerate}) {
      CHECK(ParsePairStatus(ToString(s)) == s);
    }
  }

  TEST_CASE("config hash covers results-affecting fields only") {
    ScoringConfig a, b;
    b.threads = 7;
    CHECK(ConfigHash(a) == ConfigHash(b));
    b.ransac.seed = 1;
    CHECK(ConfigHash(a) != ConfigHash(b));
    b = a;
    b.ssim.k2 = 0.04;
    CHECK(ConfigHash(a) != ConfigHash(b));
    b = a;
    b.gaps = {4, 8, 12};
    b.scope = ErrorScope::kAllMatches;
    b.features.max_dim = 512;
    CHECK(ConfigHash(ScoringConfigFromJson(ToJson(b))) == ConfigHash(b));
    CHECK(ConfigHash(a).size() == 16);
  }
}

}  // namespace
}  // namespace epigeo
