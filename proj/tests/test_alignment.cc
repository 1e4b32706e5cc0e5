#include <cmath>
#include <numbers>

#include "doctest.h"
#include "epigeo/alignment.h"
#include "epigeo/error.h"

namespace epigeo {
namespace {

const double kLog2 = std::numbers::ln2;

LatentClip Column(std::initializer_list<double> values) {
  LatentClip c(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index k = 0;
  for (double v : values) c(k++, 0) = v;
  return c;
}

LatentClip Random(int t, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  LatentClip c(t, d);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
  return c;
}

LinearVelocityModel RandomModel(int d, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd p(d * d + 2 * d);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = n(rng);
  LinearVelocityModel m(d);
  m.SetParameters(p);
  return m;
}

std::vector<DpoBatchItem> DemoBatch() {
  std::vector<DpoBatchItem> items;
  for (int k = 0; k < 8; ++k) {
    const LatentPair lp = SyntheticLatentPair(0.1 * (k + 1), 8, 4, 1000 + k);
    std::mt19937_64 rng(k);
    items.push_back(SampleItem(lp.winner, lp.loser, rng));
  }
  return items;
}

TEST_SUITE("alignment") {
  TEST_CASE("beta schedule") {
    CHECK(BetaSchedule(1.0, 3.0) == 0.0);
    CHECK(BetaSchedule(0.0, 2.0) == 2.0);
    CHECK(BetaSchedule(0.5, 1.0) == 0.75);
    CHECK_THROWS_AS(BetaSchedule(1.5, 1.0), ContractError);
    CHECK_THROWS_AS(BetaSchedule(0.5, 0.0), ContractError);
  }

  TEST_CASE("interpolation endpoints and fixed point") {
    std::mt19937_64 rng(1);
    const LatentClip x0 = Random(4, 3, rng), eps = Random(4, 3, rng);
    CHECK(Interpolate(x0, eps, 0.0) == x0);
    CHECK(Interpolate(x0, eps, 1.0) == eps);
    for (double t : {0.1, 0.37, 0.9}) CHECK((Interpolate(x0, x0, t) - x0).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("target velocity is the time derivative of the interpolant") {
    std::mt19937_64 rng(2);
    const LatentClip x0 = Random(4, 3, rng), eps = Random(4, 3, rng);
    CHECK(TargetVelocity(x0, x0).isZero(0.0));
    CHECK(TargetVelocity(LatentClip::Zero(4, 3), eps) == eps);
    const double h = 1e-6;
    const LatentClip fd = (Interpolate(x0, eps, 0.4 + h) - Interpolate(x0, eps, 0.4 - h)) / (2 * h);
    CHECK((fd - TargetVelocity(x0, eps)).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("clean prediction inverts the interpolant in both conventions") {
    std::mt19937_64 rng(3);
    const LatentClip x0 = Random(5, 2, rng), eps = Random(5, 2, rng);
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      const LatentClip hat = PredictClean(Interpolate(x0, eps, t), t, TargetVelocity(x0, eps));
      CHECK((hat - x0).cwiseAbs().maxCoeff() < 1e-14);
      // Opposite convention: x_t = t x0 + (1-t) eps, v = x0 - eps.
      const LatentClip xt = t * x0 + (1 - t) * eps;
      const LatentClip lit = PredictClean(xt, t, x0 - eps, CleanMode::kPaperLiteral);
      CHECK((lit - x0).cwiseAbs().maxCoeff() < 1e-14);
    }
    CHECK(PredictClean(x0, 0.0, eps) == x0);
  }

  TEST_CASE("mode and branch names") {
    for (auto m : {CleanMode::kSelfConsistent, CleanMode::kPaperLiteral}) CHECK(ParseCleanMode(ToString(m)) == m);
    for (auto b : {PenaltyBranch::kWinner, PenaltyBranch::kBoth}) CHECK(ParsePenaltyBranch(ToString(b)) == b);
    CHECK_THROWS_AS(ParseCleanMode("other"), ContractError);
  }

  TEST_CASE("softplus is stable") {
    CHECK(Softplus(0.0) == doctest::Approx(kLog2).epsilon(1e-15));
    CHECK(Softplus(1000.0) == 1000.0);
    CHECK(Softplus(-1000.0) >= 0.0);
    CHECK(Softplus(-1000.0) < 1e-300);
    CHECK(Softplus(2.0) == doctest::Approx(std::log1p(std::exp(2.0))).epsilon(1e-15));
  }

  TEST_CASE("identical models give log 2") {
    std::mt19937_64 rng(4);
    const LinearVelocityModel m = RandomModel(3, rng, 0.5);
    DpoBatchItem item{Random(6, 3, rng), Random(6, 3, rng), Random(6, 3, rng), Random(6, 3, rng), 0.3};
    CHECK(std::abs(FlowDpoLoss(item, m, m, 2.0) - kLog2) < 1e-12);
    item.t = 1.0;
    const LinearVelocityModel other = RandomModel(3, rng, 0.5);
    CHECK(std::abs(FlowDpoLoss(item, other, m, 2.0) - kLog2) < 1e-12);
  }

  TEST_CASE("tiny instance evaluated term by term") {
    DpoBatchItem item{Column({0, 0}), Column({1, 1}), Column({1, 0}), Column({1, 0}), 0.5};
    const LinearVelocityModel theta(1);
    const LinearVelocityModel ref(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1),
                                  Eigen::VectorXd::Constant(1, 0.5));
    // v_w = (1, 0), v_l = (0, -1), beta_t = 1 - 0.25.
    const double e_theta_w = 1.0 * 1.0 + 0.0;
    const double e_ref_w = 0.5 * 0.5 + 0.5 * 0.5;
    const double e_theta_l = 0.0 + 1.0 * 1.0;
    const double e_ref_l = 0.5 * 0.5 + 1.5 * 1.5;
    const double inner = -(0.75 / 2) * ((e_theta_w - e_ref_w) - (e_theta_l - e_ref_l));
    const double expected = std::log(1.0 + std::exp(-inner));
    const LossTerms terms = EvaluateLoss(item, theta, ref, {.beta = 1.0, .lambda = 0.0});
    CHECK(terms.e_theta_w == e_theta_w);
    CHECK(terms.e_ref_w == e_ref_w);
    CHECK(terms.e_theta_l == e_theta_l);
    CHECK(terms.e_ref_l == e_ref_l);
    CHECK(terms.inner == doctest::Approx(-0.75).epsilon(1e-15));
    CHECK(terms.dpo == doctest::Approx(expected).epsilon(1e-15));
    CHECK(FlowDpoLoss(item, theta, ref, 1.0) == doctest::Approx(expected).epsilon(1e-15));
  }

  TEST_CASE("temporal variance and penalty") {
    CHECK(MeanTemporalVariance(LatentClip::Constant(5, 3, 0.7)) == 0.0);
    CHECK(TemporalPenalty(Column({0, 2}), 0.0) == 0.0);
    CHECK(MeanTemporalVariance(Column({0, 2})) == 1.0);
    CHECK(TemporalPenalty(Column({0, 2}), 0.001) == doctest::Approx(-0.001).epsilon(1e-15));
  }

  TEST_CASE("total loss composition") {
    std::mt19937_64 rng(5);
    const LinearVelocityModel theta = RandomModel(1, rng, 0.5);
    const LinearVelocityModel ref = RandomModel(1, rng, 0.5);
    const DpoBatchItem random{Column({0.3, -1}), Column({2, 1}), Column({0.1, 0.5}), Column({-1, 1}), 0.4};
    CHECK(TotalLoss(random, theta, ref, {.lambda = 0.0}) == FlowDpoLoss(random, theta, ref, 1.0));

    // theta = ref = 0 and t = 0: the reconstruction is x0_w itself.
    const LinearVelocityModel zero(1);
    const DpoBatchItem still{Column({0.5, 0.5}), Column({2, 1}), Column({0.1, 0.5}), Column({-1, 1}), 0.0};
    CHECK(std::abs(TotalLoss(still, zero, zero, {}) - kLog2) < 1e-15);
    const DpoBatchItem moving{Column({0, 2}), Column({2, 1}), Column({0.1, 0.5}), Column({-1, 1}), 0.0};
    CHECK(TotalLoss(moving, zero, zero, {}) == doctest::Approx(kLog2 - 0.001).epsilon(1e-15));
    const LossTerms both = EvaluateLoss(moving, zero, zero, {.branch = PenaltyBranch::kBoth});
    // Loser clip (2, 1) has variance 0.25; each branch counts half.
    CHECK(both.temporal == doctest::Approx(-0.001 * 0.5 * (1.0 + 0.25)).epsilon(1e-15));
  }

  TEST_CASE("invalid inputs") {
    const LinearVelocityModel m(1);
    DpoBatchItem bad{Column({0, NAN}), Column({1, 1}), Column({1, 0}), Column({1, 0}), 0.5};
    CHECK_THROWS_AS(TotalLoss(bad, m, m, {}), ContractError);
    DpoBatchItem shapes{Column({0, 1, 2}), Column({1, 1}), Column({1, 0}), Column({1, 0}), 0.5};
    CHECK_THROWS_AS(TotalLoss(shapes, m, m, {}), ContractError);
    DpoBatchItem ok{Column({0, 1}), Column({1, 1}), Column({1, 0}), Column({1, 0}), 0.5};
    const LinearVelocityModel huge(Eigen::MatrixXd::Constant(1, 1, 1e300), Eigen::VectorXd::Zero(1),
                                   Eigen::VectorXd::Constant(1, 1e300));
    CHECK_THROWS_AS(TotalLoss(ok, huge, m, {}), NumericError);
    CHECK_THROWS_AS(TotalLoss(ok, m, m, {.lambda = -1.0}), ContractError);
  }

  TEST_CASE("finite-difference checker") {
    const Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(6, -1.0, 2.0);
    const auto quad = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
    CHECK(GradCheck(quad, p, 2.0 * p).max_relative_error < 1e-6);
    const auto cubic = [](const Eigen::VectorXd& x) { return x.array().cube().sum(); };
    const Eigen::VectorXd g = 3.0 * p.array().square();
    const double fine = GradCheck(cubic, p, g, 1e-5).max_relative_error;
    const double coarse = GradCheck(cubic, p, g, 1.0).max_relative_error;
    CHECK(coarse > 100 * fine);
    CHECK(coarse > 0.1);
  }

  TEST_CASE("analytic gradient matches finite differences in every mode") {
    std::mt19937_64 rng(6);
    const LinearVelocityModel theta = RandomModel(3, rng, 0.3);
    const LinearVelocityModel ref = RandomModel(3, rng, 0.3);
    std::vector<DpoBatchItem> items;
    for (int k = 0; k < 3; ++k) {
      items.push_back({Random(5, 3, rng), Random(5, 3, rng), Random(5, 3, rng), Random(5, 3, rng),
                       0.2 + 0.25 * k});
    }
    for (auto mode : {CleanMode::kSelfConsistent, CleanMode::kPaperLiteral}) {
      for (auto branch : {PenaltyBranch::kWinner, PenaltyBranch::kBoth}) {
        const LossOptions o{.beta = 2.0, .lambda = 0.5, .mode = mode, .branch = branch};
        const LossGradient g = TotalLossGradient(items, theta, ref, o);
        CHECK(g.loss == doctest::Approx(MeanTotalLoss(items, theta, ref, o)).epsilon(1e-14));
        const auto f = [&](const Eigen::VectorXd& p) {
          LinearVelocityModel m = theta;
          m.SetParameters(p);
          return MeanTotalLoss(items, m, ref, o);
        };
        CHECK(GradCheck(f, theta.Parameters(), g.gradient).max_relative_error < 1e-5);
      }
    }
  }

  TEST_CASE("parameter layout") {
    LinearVelocityModel m(2);
    CHECK(m.ParameterCount() == 8);
    Eigen::VectorXd p(8);
    p << 1, 2, 3, 4, 5, 6, 7, 8;
    m.SetParameters(p);
    CHECK(m.w()(0, 1) == 2);
    CHECK(m.w()(1, 0) == 3);
    CHECK(m.b()(1) == 6);
    CHECK(m.c()(0) == 7);
    CHECK(m.Parameters() == p);
    const LatentClip v = m.Evaluate(Column({1, 1}).replicate(1, 2), 0.5);
    CHECK(v(0, 0) == 1 + 2 + 0.5 * 5 + 7);
    CHECK_THROWS_AS(m.SetParameters(Eigen::VectorXd::Zero(3)), ContractError);
  }

  TEST_CASE("noise sampling") {
    const LatentPair lp = SyntheticLatentPair(0.5, 6, 3, 9);
    std::mt19937_64 a(1), b(1);
    const DpoBatchItem x = SampleItem(lp.winner, lp.loser, a, {.shared_noise = true, .t = 0.25});
    CHECK(x.eps_w == x.eps_l);
    CHECK(x.t == 0.25);
    const DpoBatchItem y = SampleItem(lp.winner, lp.loser, b);
    CHECK(y.eps_w != y.eps_l);
    CHECK(y.t >= 0.0);
    CHECK(y.t <= 1.0);
    CHECK(MeanTemporalVariance(lp.winner) > MeanTemporalVariance(lp.loser));
  }

  TEST_CASE("toy training") {
    const auto items = DemoBatch();
    std::mt19937_64 rng(0);
    const LinearVelocityModel ref = RandomModel(4, rng, 0.1);
    TrainOptions o;
    const TrainResult r = ToyTrain(items, ref, o);
    REQUIRE(r.trace.size() == 201);
    for (std::size_t k = 1; k < r.trace.size(); ++k) CHECK(r.trace[k] <= r.trace[k - 1] + 1e-9);
    CHECK(MeanMargin(items, r.model, ref, o.loss) > MeanMargin(items, ref, ref, o.loss));

    o.learning_rate = 0.0;
    o.steps = 5;
    const TrainResult flat = ToyTrain(items, ref, o);
    for (double v : flat.trace) CHECK(v == flat.trace[0]);

    o.learning_rate = 1e6;
    CHECK_THROWS_AS(ToyTrain(items, ref, o), NumericError);
  }
}

}  // namespace
}  // namespace epigeo
