#include "epigeo/alignment.h"

#include <cmath>
#include <sstream>

#include "epigeo/error.h"

namespace epigeo {
namespace {

void CheckFinite(double value, const char* term) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite value in ") + term);
  }
}

void CheckSameShape(const LatentClip& a, const LatentClip& b, const char* what) {
  EPIGEO_CHECK(a.rows() == b.rows() && a.cols() == b.cols(),
               std::string(what) + ": shape mismatch");
}

double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// d MeanTemporalVariance / d clip.
LatentClip VarianceGradient(const LatentClip& clip) {
  const double t = static_cast<double>(clip.rows());
  const double d = static_cast<double>(clip.cols());
  const Eigen::RowVectorXd mean = clip.colwise().mean();
  return (clip.rowwise() - mean) * (2.0 / (t * d));
}

double CleanSlope(double t, CleanMode mode) {
  return mode == CleanMode::kSelfConsistent ? -t : 1.0 - t;
}

struct Forward {
  LossTerms terms;
  LatentClip xt_w, xt_l, v_w, v_l, vt_w, vt_l, hat_w, hat_l;
};

Forward RunForward(const DpoBatchItem& item, const VelocityModel& theta,
                   const VelocityModel& ref, const LossOptions& o) {
  ValidateItem(item);
  EPIGEO_CHECK(o.lambda >= 0.0, "lambda must be >= 0");
  Forward f;
  LossTerms& s = f.terms;
  s.beta_t = BetaSchedule(item.t, o.beta);
  f.xt_w = Interpolate(item.x0_w, item.eps_w, item.t);
  f.xt_l = Interpolate(item.x0_l, item.eps_l, item.t);
  f.v_w = TargetVelocity(item.x0_w, item.eps_w);
  f.v_l = TargetVelocity(item.x0_l, item.eps_l);
  f.vt_w = theta.Evaluate(f.xt_w, item.t);
  f.vt_l = theta.Evaluate(f.xt_l, item.t);
  s.e_theta_w = (f.v_w - f.vt_w).squaredNorm();
  s.e_ref_w = (f.v_w - ref.Evaluate(f.xt_w, item.t)).squaredNorm();
  s.e_theta_l = (f.v_l - f.vt_l).squaredNorm();
  s.e_ref_l = (f.v_l - ref.Evaluate(f.xt_l, item.t)).squaredNorm();
  CheckFinite(s.e_theta_w, "theta winner error");
  CheckFinite(s.e_ref_w, "reference winner error");
  CheckFinite(s.e_theta_l, "theta loser error");
  CheckFinite(s.e_ref_l, "reference loser error");
  s.inner = -0.5 * s.beta_t * ((s.e_theta_w - s.e_ref_w) - (s.e_theta_l - s.e_ref_l));
  CheckFinite(s.inner, "inner term");
  s.dpo = Softplus(-s.inner);

  f.hat_w = PredictClean(f.xt_w, item.t, f.vt_w, o.mode);
  if (o.branch == PenaltyBranch::kWinner) {
    s.x0_hat_variance = MeanTemporalVariance(f.hat_w);
  } else {
    f.hat_l = PredictClean(f.xt_l, item.t, f.vt_l, o.mode);
    s.x0_hat_variance = 0.5 * (MeanTemporalVariance(f.hat_w) + MeanTemporalVariance(f.hat_l));
  }
  CheckFinite(s.x0_hat_variance, "temporal variance");
  s.temporal = -o.lambda * s.x0_hat_variance;
  s.total = s.dpo + s.temporal;
  return f;
}

}  // namespace

void ValidateClip(const LatentClip& clip, const std::string& name) {
  EPIGEO_CHECK(clip.rows() >= 2, name + ": need at least 2 frames");
  EPIGEO_CHECK(clip.cols() >= 1, name + ": need at least 1 dim");
  EPIGEO_CHECK(clip.allFinite(), name + ": entries must be finite");
}

void ValidateItem(const DpoBatchItem& item) {
  ValidateClip(item.x0_w, "x0_w");
  ValidateClip(item.x0_l, "x0_l");
  ValidateClip(item.eps_w, "eps_w");
  ValidateClip(item.eps_l, "eps_l");
  CheckSameShape(item.x0_w, item.x0_l, "dpo item");
  CheckSameShape(item.x0_w, item.eps_w, "dpo item");
  CheckSameShape(item.x0_w, item.eps_l, "dpo item");
  EPIGEO_CHECK(item.t >= 0.0 && item.t <= 1.0, "t must lie in [0, 1]");
}

LinearVelocityModel::LinearVelocityModel(int dims)
    : w_(Eigen::MatrixXd::Zero(dims, dims)),
      b_(Eigen::VectorXd::Zero(dims)),
      c_(Eigen::VectorXd::Zero(dims)) {
  EPIGEO_CHECK(dims >= 1, "velocity model needs at least 1 dim");
}

LinearVelocityModel::LinearVelocityModel(Eigen::MatrixXd w, Eigen::VectorXd b,
                                         Eigen::VectorXd c)
    : w_(std::move(w)), b_(std::move(b)), c_(std::move(c)) {
  EPIGEO_CHECK(w_.rows() >= 1 && w_.rows() == w_.cols() && b_.size() == w_.rows() &&
                   c_.size() == w_.rows(),
               "velocity model: W must be DxD with b, c of length D");
}

LatentClip LinearVelocityModel::Evaluate(const LatentClip& x_t, double t) const {
  EPIGEO_CHECK(x_t.cols() == dims(), "velocity model: latent dim mismatch");
  LatentClip v = x_t * w_.transpose();
  v.rowwise() += (b_ * t + c_).transpose();
  return v;
}

Eigen::VectorXd LinearVelocityModel::ParameterVjp(const LatentClip& x_t, double t,
                                                  const LatentClip& upstream) const {
  const int d = dims();
  Eigen::VectorXd g(ParameterCount());
  const Eigen::MatrixXd gw = upstream.transpose() * x_t;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) g[i * d + j] = gw(i, j);
  }
  const Eigen::VectorXd col_sum = upstream.colwise().sum().transpose();
  g.segment(d * d, d) = t * col_sum;
  g.segment(d * d + d, d) = col_sum;
  return g;
}

Eigen::VectorXd LinearVelocityModel::Parameters() const {
  const int d = dims();
  Eigen::VectorXd p(ParameterCount());
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) p[i * d + j] = w_(i, j);
  }
  p.segment(d * d, d) = b_;
  p.segment(d * d + d, d) = c_;
  return p;
}

void LinearVelocityModel::SetParameters(const Eigen::VectorXd& p) {
  EPIGEO_CHECK(p.size() == ParameterCount(), "velocity model: parameter count mismatch");
  const int d = dims();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) w_(i, j) = p[i * d + j];
  }
  b_ = p.segment(d * d, d);
  c_ = p.segment(d * d + d, d);
}

std::string ToString(CleanMode mode) {
  return mode == CleanMode::kSelfConsistent ? "self_consistent" : "paper_literal";
}

CleanMode ParseCleanMode(const std::string& name) {
  if (name == "self_consistent") return CleanMode::kSelfConsistent;
  if (name == "paper_literal") return CleanMode::kPaperLiteral;
  throw ContractError("unknown clean mode '" + name + "' (self_consistent|paper_literal)");
}

std::string ToString(PenaltyBranch branch) {
  return branch == PenaltyBranch::kWinner ? "winner" : "both";
}

PenaltyBranch ParsePenaltyBranch(const std::string& name) {
  if (name == "winner") return PenaltyBranch::kWinner;
  if (name == "both") return PenaltyBranch::kBoth;
  throw ContractError("unknown penalty branch '" + name + "' (winner|both)");
}

double BetaSchedule(double t, double beta) {
  EPIGEO_CHECK(t >= 0.0 && t <= 1.0, "t must lie in [0, 1]");
  EPIGEO_CHECK(beta > 0.0, "beta must be positive");
  return beta * (1.0 - t * t);
}

LatentClip Interpolate(const LatentClip& x0, const LatentClip& eps, double t) {
  CheckSameShape(x0, eps, "interpolate");
  return (1.0 - t) * x0 + t * eps;
}

LatentClip TargetVelocity(const LatentClip& x0, const LatentClip& eps) {
  CheckSameShape(x0, eps, "target_velocity");
  return eps - x0;
}

LatentClip PredictClean(const LatentClip& x_t, double t, const LatentClip& v, CleanMode mode) {
  CheckSameShape(x_t, v, "predict_clean");
  EPIGEO_CHECK(t >= 0.0 && t <= 1.0, "t must lie in [0, 1]");
  return x_t + CleanSlope(t, mode) * v;
}

double Softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double MeanTemporalVariance(const LatentClip& clip) {
  EPIGEO_CHECK(clip.rows() >= 2, "temporal variance needs at least 2 frames");
  const Eigen::RowVectorXd mean = clip.colwise().mean();
  const double total = (clip.rowwise() - mean).squaredNorm();
  return total / static_cast<double>(clip.rows() * clip.cols());
}

double TemporalPenalty(const LatentClip& x0_hat, double lambda) {
  EPIGEO_CHECK(lambda >= 0.0, "lambda must be >= 0");
  return -lambda * MeanTemporalVariance(x0_hat);
}

LossTerms EvaluateLoss(const DpoBatchItem& item, const VelocityModel& theta,
                       const VelocityModel& ref, const LossOptions& options) {
  return RunForward(item, theta, ref, options).terms;
}

double FlowDpoLoss(const DpoBatchItem& item, const VelocityModel& theta,
                   const VelocityModel& ref, double beta) {
  LossOptions o;
  o.beta = beta;
  o.lambda = 0.0;
  return EvaluateLoss(item, theta, ref, o).dpo;
}

double TotalLoss(const DpoBatchItem& item, const VelocityModel& theta,
                 const VelocityModel& ref, const LossOptions& options) {
  return EvaluateLoss(item, theta, ref, options).total;
}

double MeanTotalLoss(const std::vector<DpoBatchItem>& items, const VelocityModel& theta,
                     const VelocityModel& ref, const LossOptions& options) {
  EPIGEO_CHECK(!items.empty(), "batch must not be empty");
  double sum = 0.0;
  for (const DpoBatchItem& item : items) sum += TotalLoss(item, theta, ref, options);
  return sum / static_cast<double>(items.size());
}

LossGradient TotalLossGradient(const std::vector<DpoBatchItem>& items,
                               const LinearVelocityModel& theta,
                               const LinearVelocityModel& ref, const LossOptions& options) {
  EPIGEO_CHECK(!items.empty(), "batch must not be empty");
  LossGradient out;
  out.gradient = Eigen::VectorXd::Zero(theta.ParameterCount());
  for (const DpoBatchItem& item : items) {
    const Forward f = RunForward(item, theta, ref, options);
    const LossTerms& s = f.terms;
    const double dl_dz = -Sigmoid(-s.inner);
    LatentClip up_w = (dl_dz * s.beta_t) * (f.v_w - f.vt_w);
    LatentClip up_l = (-dl_dz * s.beta_t) * (f.v_l - f.vt_l);
    const double slope = CleanSlope(item.t, options.mode);
    if (options.branch == PenaltyBranch::kWinner) {
      up_w += (-options.lambda * slope) * VarianceGradient(f.hat_w);
    } else {
      up_w += (-0.5 * options.lambda * slope) * VarianceGradient(f.hat_w);
      up_l += (-0.5 * options.lambda * slope) * VarianceGradient(f.hat_l);
    }
    out.gradient += theta.ParameterVjp(f.xt_w, item.t, up_w);
    out.gradient += theta.ParameterVjp(f.xt_l, item.t, up_l);
    out.loss += s.total;
  }
  const double n = static_cast<double>(items.size());
  out.loss /= n;
  out.gradient /= n;
  return out;
}

GradCheckResult GradCheck(const std::function<double(const Eigen::VectorXd&)>& loss,
                          const Eigen::VectorXd& params, const Eigen::VectorXd& analytic,
                          double h) {
  EPIGEO_CHECK(params.size() == analytic.size(), "grad check: gradient size mismatch");
  EPIGEO_CHECK(params.size() <= 10000, "grad check: at most 10^4 parameters");
  EPIGEO_CHECK(h > 0.0, "grad check: step must be positive");
  GradCheckResult r;
  r.numeric.resize(params.size());
  Eigen::VectorXd p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p[i] = params[i] + h;
    const double up = loss(p);
    p[i] = params[i] - h;
    const double down = loss(p);
    p[i] = params[i];
    CheckFinite(up, "grad check loss");
    CheckFinite(down, "grad check loss");
    r.numeric[i] = (up - down) / (2.0 * h);
    const double rel =
        std::abs(r.numeric[i] - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
    r.max_relative_error = std::max(r.max_relative_error, rel);
  }
  return r;
}

DpoBatchItem SampleItem(const LatentClip& x0_w, const LatentClip& x0_l, std::mt19937_64& rng,
                        const NoiseOptions& noise) {
  CheckSameShape(x0_w, x0_l, "sample item");
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto draw = [&] {
    LatentClip e(x0_w.rows(), x0_w.cols());
    for (Eigen::Index k = 0; k < e.size(); ++k) e.data()[k] = normal(rng);
    return e;
  };
  DpoBatchItem item;
  item.x0_w = x0_w;
  item.x0_l = x0_l;
  item.eps_w = draw();
  item.eps_l = noise.shared_noise ? item.eps_w : draw();
  item.t = noise.t >= 0.0 ? noise.t : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  ValidateItem(item);
  return item;
}

LatentPair SyntheticLatentPair(double gap, int frames, int dims, std::uint64_t seed) {
  EPIGEO_CHECK(frames >= 2 && dims >= 1, "latent pair needs T >= 2 and D >= 1");
  EPIGEO_CHECK(gap >= 0.0 && std::isfinite(gap), "gap must be finite and >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * 3.141592653589793);
  std::uniform_real_distribution<double> freq(0.5, 1.5);
  LatentPair pair{LatentClip(frames, dims), LatentClip(frames, dims)};
  for (int d = 0; d < dims; ++d) {
    const double f = freq(rng);
    const double p = phase(rng);
    for (int t = 0; t < frames; ++t) {
      pair.winner(t, d) = std::sin(2.0 * 3.141592653589793 * f * t / frames + p);
    }
  }
  pair.loser = 0.3 * pair.winner;
  pair.loser.col(0).array() += 1.0 + 4.0 * gap;
  return pair;
}

TrainResult ToyTrain(const std::vector<DpoBatchItem>& pairs, const LinearVelocityModel& ref,
                     const TrainOptions& options) {
  EPIGEO_CHECK(!pairs.empty(), "toy_train needs at least one pair");
  EPIGEO_CHECK(options.steps >= 0, "steps must be >= 0");
  EPIGEO_CHECK(options.learning_rate >= 0.0, "learning rate must be >= 0");
  EPIGEO_CHECK(ref.ParameterCount() <= 1000, "toy_train: at most 10^3 parameters");
  TrainResult result{ref, {}};
  if (options.init_scale > 0.0) {
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, options.init_scale);
    Eigen::VectorXd p = ref.Parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += normal(rng);
    result.model.SetParameters(p);
  }
  const auto fail = [&](double loss) {
    std::ostringstream msg;
    msg << "toy_train diverged at step " << result.trace.size() << " (loss " << loss
        << "); trace prefix:";
    for (std::size_t k = 0; k < std::min<std::size_t>(result.trace.size(), 5); ++k) {
      msg << ' ' << result.trace[k];
    }
    throw NumericError(msg.str());
  };
  for (int step = 0; step <= options.steps; ++step) {
    const LossGradient g = TotalLossGradient(pairs, result.model, ref, options.loss);
    if (!std::isfinite(g.loss) || g.loss > 1e6) fail(g.loss);
    result.trace.push_back(g.loss);
    if (step == options.steps) break;
    result.model.SetParameters(result.model.Parameters() - options.learning_rate * g.gradient);
  }
  return result;
}

double MeanMargin(const std::vector<DpoBatchItem>& items, const VelocityModel& theta,
                  const VelocityModel& ref, const LossOptions& options) {
  EPIGEO_CHECK(!items.empty(), "batch must not be empty");
  double sum = 0.0;
  for (const DpoBatchItem& item : items) sum += EvaluateLoss(item, theta, ref, options).inner;
  return sum / static_cast<double>(items.size());
}

double MeanWinnerVariance(const std::vector<DpoBatchItem>& items, const VelocityModel& theta,
                          CleanMode mode) {
  EPIGEO_CHECK(!items.empty(), "batch must not be empty");
  double sum = 0.0;
  for (const DpoBatchItem& item : items) {
    const LatentClip xt = Interpolate(item.x0_w, item.eps_w, item.t);
    sum += MeanTemporalVariance(PredictClean(xt, item.t, theta.Evaluate(xt, item.t), mode));
  }
  return sum / static_cast<double>(items.size());
}

}  // namespace epigeo
