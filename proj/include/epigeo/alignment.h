#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace epigeo {

// T frames x D latent dims.
using LatentClip = Eigen::MatrixXd;

void ValidateClip(const LatentClip& clip, const std::string& name);

struct DpoBatchItem {
  LatentClip x0_w, x0_l;
  LatentClip eps_w, eps_l;
  double t = 0.5;
};

void ValidateItem(const DpoBatchItem& item);

class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  virtual LatentClip Evaluate(const LatentClip& x_t, double t) const = 0;
};

// Per frame: v[k,:] = W x[k,:] + b t + c. Parameters are W (row-major), b, c.
class LinearVelocityModel : public VelocityModel {
 public:
  explicit LinearVelocityModel(int dims);
  LinearVelocityModel(Eigen::MatrixXd w, Eigen::VectorXd b, Eigen::VectorXd c);

  LatentClip Evaluate(const LatentClip& x_t, double t) const override;

  // Gradient of <upstream, Evaluate(x_t, t)> with respect to the parameters.
  Eigen::VectorXd ParameterVjp(const LatentClip& x_t, double t,
                               const LatentClip& upstream) const;

  int dims() const { return static_cast<int>(b_.size()); }
  int ParameterCount() const { return dims() * dims() + 2 * dims(); }
  Eigen::VectorXd Parameters() const;
  void SetParameters(const Eigen::VectorXd& p);

  const Eigen::MatrixXd& w() const { return w_; }
  const Eigen::VectorXd& b() const { return b_; }
  const Eigen::VectorXd& c() const { return c_; }

 private:
  Eigen::MatrixXd w_;
  Eigen::VectorXd b_, c_;
};

// How the clean sample is reconstructed from x_t and a velocity.
// kSelfConsistent: x_t - t v, exact for x_t = (1-t) x0 + t eps, v = eps - x0.
// kPaperLiteral: x_t + (1-t) v, exact only under the opposite time convention.
enum class CleanMode { kSelfConsistent, kPaperLiteral };
// Which branch's reconstruction feeds the temporal penalty.
enum class PenaltyBranch { kWinner, kBoth };

std::string ToString(CleanMode mode);
CleanMode ParseCleanMode(const std::string& name);
std::string ToString(PenaltyBranch branch);
PenaltyBranch ParsePenaltyBranch(const std::string& name);

double BetaSchedule(double t, double beta);
LatentClip Interpolate(const LatentClip& x0, const LatentClip& eps, double t);
LatentClip TargetVelocity(const LatentClip& x0, const LatentClip& eps);
LatentClip PredictClean(const LatentClip& x_t, double t, const LatentClip& v,
                        CleanMode mode = CleanMode::kSelfConsistent);

// log(1 + e^x) without overflow.
double Softplus(double x);

// Mean over D of the population variance (divisor T) along time.
double MeanTemporalVariance(const LatentClip& clip);
double TemporalPenalty(const LatentClip& x0_hat, double lambda);

struct LossOptions {
  double beta = 1.0;
  double lambda = 0.001;
  CleanMode mode = CleanMode::kSelfConsistent;
  PenaltyBranch branch = PenaltyBranch::kWinner;
};

struct LossTerms {
  double beta_t = 0.0;
  double e_theta_w = 0.0, e_ref_w = 0.0;
  double e_theta_l = 0.0, e_ref_l = 0.0;
  double inner = 0.0;  // the implicit-reward margin z
  double dpo = 0.0;    // softplus(-z)
  double temporal = 0.0;
  double total = 0.0;
  double x0_hat_variance = 0.0;  // of the penalized reconstruction(s)
};

LossTerms EvaluateLoss(const DpoBatchItem& item, const VelocityModel& theta,
                       const VelocityModel& ref, const LossOptions& options);

double FlowDpoLoss(const DpoBatchItem& item, const VelocityModel& theta,
                   const VelocityModel& ref, double beta);
double TotalLoss(const DpoBatchItem& item, const VelocityModel& theta,
                 const VelocityModel& ref, const LossOptions& options);

struct LossGradient {
  double loss = 0.0;  // mean total loss over the batch
  Eigen::VectorXd gradient;
};

// Analytic gradient of the batch-mean total loss with respect to theta.
LossGradient TotalLossGradient(const std::vector<DpoBatchItem>& items,
                               const LinearVelocityModel& theta,
                               const LinearVelocityModel& ref, const LossOptions& options);

double MeanTotalLoss(const std::vector<DpoBatchItem>& items, const VelocityModel& theta,
                     const VelocityModel& ref, const LossOptions& options);

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::VectorXd numeric;
};

// Central differences against `analytic`; relative error uses
// max(|analytic_i|, 1e-8) as denominator.
GradCheckResult GradCheck(const std::function<double(const Eigen::VectorXd&)>& loss,
                          const Eigen::VectorXd& params, const Eigen::VectorXd& analytic,
                          double h = 1e-5);

struct NoiseOptions {
  bool shared_noise = false;  // one eps for both branches
  double t = -1.0;            // < 0: draw t uniformly per pair
};

DpoBatchItem SampleItem(const LatentClip& x0_w, const LatentClip& x0_l, std::mt19937_64& rng,
                        const NoiseOptions& noise = {});

struct LatentPair {
  LatentClip winner;
  LatentClip loser;
};

// Synthetic clean latents for one preference pair. The winner moves
// smoothly over time; the loser keeps 30% of that motion and sits offset
// along dim 0 by 1 + 4 * gap, so larger score gaps give easier pairs.
LatentPair SyntheticLatentPair(double gap, int frames, int dims, std::uint64_t seed);

struct TrainOptions {
  int steps = 200;
  double learning_rate = 1e-3;
  LossOptions loss;
  std::uint64_t seed = 0;
  // Std-dev of a seeded perturbation of the initial parameters away from ref.
  double init_scale = 0.0;
};

struct TrainResult {
  LinearVelocityModel model;
  std::vector<double> trace;  // steps + 1 losses, trace[k] before step k
};

TrainResult ToyTrain(const std::vector<DpoBatchItem>& pairs, const LinearVelocityModel& ref,
                     const TrainOptions& options);

// Mean implicit-reward margin z over the batch.
double MeanMargin(const std::vector<DpoBatchItem>& items, const VelocityModel& theta,
                  const VelocityModel& ref, const LossOptions& options);

// Mean temporal variance of the winner reconstructions under theta.
double MeanWinnerVariance(const std::vector<DpoBatchItem>& items, const VelocityModel& theta,
                          CleanMode mode);

}  // namespace epigeo
