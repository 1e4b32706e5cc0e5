#include <Eigen/SVD>
#include <cmath>
#include <random>

#include "doctest.h"
#include "epigeo/epipolar.h"
#include "epigeo/error.h"
#include "test_util.h"

namespace epigeo {
namespace {

using testing::RandomRig;

const Eigen::Matrix3d kRectified = (Eigen::Matrix3d() << 0, 0, 0, 0, 0, -1, 0, 1, 0).finished();

Correspondence Corr(double x, double y, double xp, double yp) {
  return {Eigen::Vector2d(x, y), Eigen::Vector2d(xp, yp)};
}

TEST_SUITE("epipolar") {
  TEST_CASE("Hartley normalization of a square") {
    const std::vector<Eigen::Vector2d> pts = {{0, 0}, {2, 0}, {0, 2}, {2, 2}};
    const NormalizedPoints n = NormalizePoints(pts);
    // Centroid (1,1); mean distance to it is already sqrt(2), so scale 1.
    const Eigen::Matrix3d expected = (Eigen::Matrix3d() << 1, 0, -1, 0, 1, -1, 0, 0, 1).finished();
    CHECK((n.transform - expected).norm() < 1e-12);
    double mean = 0.0;
    for (const auto& p : n.points) mean += p.norm();
    CHECK(mean / 4 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }

  TEST_CASE("normalizing normalized points is a unit-scale similarity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-50, 300);
    std::vector<Eigen::Vector2d> pts(30);
    for (auto& p : pts) p = {u(rng), u(rng)};
    const NormalizedPoints once = NormalizePoints(pts);
    const NormalizedPoints twice = NormalizePoints(once.points);
    CHECK((twice.transform - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  }

  TEST_CASE("normalizing a repeated point is an error") {
    const std::vector<Eigen::Vector2d> pts(5, Eigen::Vector2d(3, 4));
    CHECK_THROWS(NormalizePoints(pts));
  }

  TEST_CASE("canonical form") {
    Eigen::Matrix3d f;
    f << 1, -7, 2, 0, 3, 1, 2, 1, 0;
    const Eigen::Matrix3d c = CanonicalizeFundamental(-4.0 * f);
    CHECK(c.norm() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(c(0, 1) > 0.0);
    CHECK(FrobeniusAlignmentError(c, f) < 1e-15);
    CHECK(FrobeniusAlignmentError(Eigen::Matrix3d::Identity(), kRectified) ==
          doctest::Approx(1.0));
  }

  TEST_CASE("eight point on exact correspondences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto rig = RandomRig(seed, 20);
      const FundamentalMatrix f = EightPoint(rig.correspondences);
      const FundamentalMatrix oracle = FundamentalFromCameras(rig.a, rig.b);
      CHECK(testing::MaxAlgebraicResidual(f.m, rig.correspondences) < 1e-9);
      CHECK(FrobeniusAlignmentError(f.m, oracle.m) < 1e-8);
      CHECK(f.m.norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(Eigen::JacobiSVD<Eigen::Matrix3d>(f.m).singularValues()(2) < 1e-12);
      CHECK(f.method == FundamentalMethod::kEightPoint);
    }
  }

  TEST_CASE("eight coplanar points are degenerate") {
    const auto rig = RandomRig(5, 1);
    std::vector<Correspondence> cs;
    for (int k = 0; k < 8; ++k) {
      const Eigen::Vector3d p(std::cos(k * 0.9) * 1.5, std::sin(k * 1.7), 0.3);
      cs.push_back({rig.a.Project(p).hnormalized(), rig.b.Project(p).hnormalized()});
    }
    bool flagged = false;
    try {
      flagged = EightPoint(cs).condition_number > kMaxDesignConditionNumber;
    } catch (const DegenerateConfigurationError&) {
      flagged = true;
    }
    CHECK(flagged);
  }

  TEST_CASE("eight point needs eight correspondences") {
    const auto rig = RandomRig(1, 7);
    CHECK_THROWS_AS(EightPoint(rig.correspondences), ContractError);
  }

  TEST_CASE("Sampson error hand-evaluated cases") {
    // x' F x = 1; Fx = (0,-1,0), F^T x' = (0,1,0): denominator 1 + 1.
    CHECK(SampsonError(kRectified, Corr(0, 0, 0, 1)) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(SampsonError(kRectified, Corr(3, 5, -2, 5)) == 0.0);
    const Correspondence c = Corr(0.3, -1.2, 4.0, 0.7);
    CHECK(SampsonError(2.0 * kRectified, c) == doctest::Approx(SampsonError(kRectified, c)).epsilon(1e-15));
  }

  TEST_CASE("symmetric epipolar error hand-evaluated case") {
    // x=(1,0), x'=(0,1): residual -1, Fx = (0,-1,0), F^T x' = (0,1,-1).
    // d(x', Fx)^2 = 1/1, d(x, F^T x')^2 = 1/1.
    CHECK(SymmetricEpipolarError(kRectified, Corr(1, 0, 0, 1)) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(SampsonError(kRectified, Corr(1, 0, 0, 1)) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(SymmetricEpipolarError(kRectified, Corr(3, 5, -2, 5)) == 0.0);
  }

  TEST_CASE("errors at the epipole are capped and flagged") {
    // F = [e]x for e = (0,0,1): both image lines vanish at the origin.
    const Eigen::Matrix3d f = (Eigen::Matrix3d() << 0, -1, 0, 1, 0, 0, 0, 0, 0).finished();
    bool capped = false;
    CHECK(SampsonError(f, Corr(0, 0, 0, 0), &capped) == kEpipolarErrorCap);
    CHECK(capped);
    capped = false;
    CHECK(SymmetricEpipolarError(f, Corr(0, 0, 0, 0), &capped) == kEpipolarErrorCap);
    CHECK(capped);
    capped = false;
    SampsonError(f, Corr(1, 2, 3, 1), &capped);
    CHECK_FALSE(capped);
  }

  TEST_CASE("symmetric error bounds Sampson from above") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 640.0);
    std::normal_distribution<double> n(0.0, 3.0);
    int checked = 0;
    for (int k = 0; k < 200; ++k) {
      const auto rig = RandomRig(1000 + k, 5);
      const Eigen::Matrix3d f = FundamentalFromCameras(rig.a, rig.b).m;
      for (const Correspondence& c : rig.correspondences) {
        const Correspondence noisy{c.x + Eigen::Vector2d(n(rng), n(rng)), c.x_prime};
        bool capped_s = false, capped_e = false;
        const double s = SampsonError(f, noisy, &capped_s);
        const double e = SymmetricEpipolarError(f, noisy, &capped_e);
        if (capped_s || capped_e) continue;
        CHECK(e >= s * (1 - 1e-12));
        ++checked;
      }
    }
    CHECK(checked == 1000);
  }

  TEST_CASE("RANSAC on exact correspondences keeps everything") {
    const auto rig = RandomRig(77, 100);
    const RansacResult r = RansacFundamental(rig.correspondences, {});
    CHECK(std::count(r.inlier_mask.begin(), r.inlier_mask.end(), true) == 100);
    CHECK(r.f.inlier_count == 100);
    CHECK(FrobeniusAlignmentError(r.f.m, FundamentalFromCameras(rig.a, rig.b).m) < 1e-8);
  }

  TEST_CASE("RANSAC separates 70 inliers from 30 outliers") {
    auto rig = RandomRig(42, 70);
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
    for (int k = 0; k < 30; ++k) rig.correspondences.push_back(Corr(ux(rng), uy(rng), ux(rng), uy(rng)));
    RansacOptions o;
    o.seed = 42;
    const RansacResult r = RansacFundamental(rig.correspondences, o);
    int recalled = 0, false_inliers = 0;
    for (int k = 0; k < 100; ++k) {
      if (r.inlier_mask[k]) (k < 70 ? recalled : false_inliers)++;
    }
    CHECK(recalled >= 67);
    CHECK(false_inliers <= 2);
    CHECK(r.iterations_run == 2000);
  }

  TEST_CASE("RANSAC is deterministic in its seed") {
    auto rig = RandomRig(8, 60);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 500);
    for (int k = 0; k < 40; ++k) rig.correspondences.push_back(Corr(u(rng), u(rng), u(rng), u(rng)));
    RansacOptions o;
    o.seed = 5;
    o.iterations = 300;
    const RansacResult a = RansacFundamental(rig.correspondences, o);
    const RansacResult b = RansacFundamental(rig.correspondences, o);
    CHECK(a.inlier_mask == b.inlier_mask);
    CHECK(a.f.m == b.f.m);
  }

  TEST_CASE("adaptive RANSAC stops early on clean data") {
    const auto rig = RandomRig(9, 100);
    RansacOptions o;
    o.adaptive = true;
    const RansacResult r = RansacFundamental(rig.correspondences, o);
    CHECK(r.iterations_run < 50);
    CHECK(r.f.inlier_count == 100);
  }

  TEST_CASE("RANSAC contract errors") {
    const auto rig = RandomRig(2, 7);
    CHECK_THROWS_AS(RansacFundamental(rig.correspondences, {}), ContractError);
    const auto ok = RandomRig(2, 20);
    RansacOptions o;
    o.iterations = 0;
    CHECK_THROWS_AS(RansacFundamental(ok.correspondences, o), ContractError);
  }

  TEST_CASE("pure translation gives the skew form") {
    Eigen::Matrix3d k;
    k << 500, 0, 320, 0, 500, 240, 0, 0, 1;
    const CameraMatrix a(k, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
    const CameraMatrix b(k, Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0));
    const FundamentalMatrix f = FundamentalFromCameras(a, b);
    CHECK(f.method == FundamentalMethod::kFromCameras);
    const Eigen::Matrix3d expected = CanonicalizeFundamental(CrossProductMatrix(k * Eigen::Vector3d(1, 0, 0)));
    CHECK((f.m - expected).cwiseAbs().maxCoeff() < 1e-12);
    const Epipole right = ComputeEpipole(f.m, EpipoleSide::kRight);
    CHECK(right.at_infinity);
    CHECK(std::abs(right.point.y()) < 1e-12);
  }

  TEST_CASE("camera-derived F annihilates projected points") {
    const auto rig = RandomRig(13, 500);
    const Eigen::Matrix3d f = FundamentalFromCameras(rig.a, rig.b).m;
    CHECK(testing::MaxAlgebraicResidual(f, rig.correspondences) < 1e-10);
  }

  TEST_CASE("swapping cameras transposes F") {
    const auto rig = RandomRig(21, 1);
    const Eigen::Matrix3d f = FundamentalFromCameras(rig.a, rig.b).m;
    const Eigen::Matrix3d g = FundamentalFromCameras(rig.b, rig.a).m.transpose();
    CHECK(std::min((f - g).norm(), (f + g).norm()) < 1e-9);
  }

  TEST_CASE("epipoles are null vectors and camera-center images") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto rig = RandomRig(300 + seed, 1);
      const Eigen::Matrix3d f = FundamentalFromCameras(rig.a, rig.b).m;
      const Epipole left = ComputeEpipole(f, EpipoleSide::kLeft);
      CHECK((f * left.point).norm() / left.point.norm() < 1e-10);
      const Epipole right = ComputeEpipole(f, EpipoleSide::kRight);
      REQUIRE_FALSE(right.at_infinity);
      const Eigen::Vector2d projected = rig.b.Project(rig.a.Center()).hnormalized();
      CHECK((right.point.head<2>() - projected).norm() < 1e-8);
    }
  }
}

}  // namespace
}  // namespace epigeo
