#include "epigeo/features.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "epigeo/error.h"

namespace epigeo {
namespace {

constexpr int kImageBorder = 5;
constexpr int kMaxRefineSteps = 5;
constexpr int kOrientationBins = 36;
constexpr double kOrientationPeakRatio = 0.8;
constexpr double kOrientationSigmaFactor = 1.5;
constexpr int kDescriptorCells = 4;
constexpr int kDescriptorBins = 8;
constexpr int kDescriptorWindow = 16;
constexpr double kDescriptorClip = 0.2;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

Image Downsample(const Image& image) {
  Image out(image.width / 2, image.height / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out(x, y) = image(2 * x, 2 * y);
  }
  return out;
}

Image Subtract(const Image& a, const Image& b) {
  Image out(a.width, a.height);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

double WrapAngle(double angle) {
  angle = std::fmod(angle, kTwoPi);
  if (angle < 0.0) angle += kTwoPi;
  if (angle >= kTwoPi) angle = 0.0;
  return angle;
}

bool IsLocalExtremum(const std::vector<Image>& dogs, int s, int x, int y,
                     double prefilter) {
  const double v = dogs[s](x, y);
  if (std::abs(v) <= prefilter) return false;
  for (int ds = -1; ds <= 1; ++ds) {
    const Image& level = dogs[s + ds];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (ds == 0 && dy == 0 && dx == 0) continue;
        const double n = level(x + dx, y + dy);
        if (v > 0.0 ? n > v : n < v) return false;
      }
    }
  }
  return true;
}

struct Refined {
  int x, y, s;
  Eigen::Vector3d offset;  // (x, y, s)
  double contrast;
};

// Newton steps on the local quadratic model of D(x, y, s).
bool RefineExtremum(const std::vector<Image>& dogs, int scales, int x, int y,
                    int s, double contrast_threshold, double edge_ratio,
                    Refined* out) {
  const int w = dogs[0].width;
  const int h = dogs[0].height;
  Eigen::Vector3d offset;
  Eigen::Vector3d grad;
  bool converged = false;
  for (int step = 0; step < kMaxRefineSteps; ++step) {
    const Image& prev = dogs[s - 1];
    const Image& cur = dogs[s];
    const Image& next = dogs[s + 1];
    const double v2 = 2.0 * cur(x, y);
    grad << 0.5 * (cur(x + 1, y) - cur(x - 1, y)),
        0.5 * (cur(x, y + 1) - cur(x, y - 1)), 0.5 * (next(x, y) - prev(x, y));
    const double dxx = cur(x + 1, y) + cur(x - 1, y) - v2;
    const double dyy = cur(x, y + 1) + cur(x, y - 1) - v2;
    const double dss = next(x, y) + prev(x, y) - v2;
    const double dxy = 0.25 * (cur(x + 1, y + 1) - cur(x - 1, y + 1) -
                               cur(x + 1, y - 1) + cur(x - 1, y - 1));
    const double dxs = 0.25 * (next(x + 1, y) - next(x - 1, y) -
                               prev(x + 1, y) + prev(x - 1, y));
    const double dys = 0.25 * (next(x, y + 1) - next(x, y - 1) -
                               prev(x, y + 1) + prev(x, y - 1));
    Eigen::Matrix3d hessian;
    hessian << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(hessian);
    if (!lu.isInvertible()) return false;
    offset = -lu.solve(grad);
    if (offset.cwiseAbs().maxCoeff() < 0.5) {
      converged = true;
      break;
    }
    if (offset.cwiseAbs().maxCoeff() > 1e3) return false;
    x += static_cast<int>(std::lround(offset.x()));
    y += static_cast<int>(std::lround(offset.y()));
    s += static_cast<int>(std::lround(offset.z()));
    if (s < 1 || s > scales || x < kImageBorder || x >= w - kImageBorder ||
        y < kImageBorder || y >= h - kImageBorder) {
      return false;
    }
  }
  if (!converged) return false;

  const double contrast = dogs[s](x, y) + 0.5 * grad.dot(offset);
  if (std::abs(contrast) < contrast_threshold) return false;

  const Image& cur = dogs[s];
  const double v2 = 2.0 * cur(x, y);
  const double dxx = cur(x + 1, y) + cur(x - 1, y) - v2;
  const double dyy = cur(x, y + 1) + cur(x, y - 1) - v2;
  const double dxy = 0.25 * (cur(x + 1, y + 1) - cur(x - 1, y + 1) -
                             cur(x + 1, y - 1) + cur(x - 1, y - 1));
  const double trace = dxx + dyy;
  const double det = dxx * dyy - dxy * dxy;
  if (det <= 0.0 ||
      trace * trace * edge_ratio >= (edge_ratio + 1.0) * (edge_ratio + 1.0) * det) {
    return false;
  }
  *out = Refined{x, y, s, offset, contrast};
  return true;
}

std::array<double, kOrientationBins> OrientationHistogram(const Image& image,
                                                          int cx, int cy,
                                                          double sigma) {
  std::array<double, kOrientationBins> raw{};
  const int radius = static_cast<int>(std::lround(3.0 * sigma));
  const double denom = 2.0 * sigma * sigma;
  for (int j = -radius; j <= radius; ++j) {
    const int py = cy + j;
    if (py <= 0 || py >= image.height - 1) continue;
    for (int i = -radius; i <= radius; ++i) {
      const int px = cx + i;
      if (px <= 0 || px >= image.width - 1) continue;
      const double gx = image(px + 1, py) - image(px - 1, py);
      const double gy = image(px, py + 1) - image(px, py - 1);
      const double weight = std::exp(-(i * i + j * j) / denom);
      const double angle = WrapAngle(std::atan2(gy, gx));
      int bin = static_cast<int>(std::lround(angle * kOrientationBins / kTwoPi));
      bin %= kOrientationBins;
      raw[bin] += weight * std::hypot(gx, gy);
    }
  }
  std::array<double, kOrientationBins> smooth{};
  for (int i = 0; i < kOrientationBins; ++i) {
    auto at = [&](int k) { return raw[(k + kOrientationBins) % kOrientationBins]; };
    smooth[i] = (at(i - 2) + at(i + 2)) / 16.0 + 4.0 * (at(i - 1) + at(i + 1)) / 16.0 +
                6.0 * at(i) / 16.0;
  }
  return smooth;
}

}  // namespace

double ScaleSpace::EffectiveSigma(int octave, double level) const {
  return base_sigma * std::pow(2.0, octave + level / scales_per_octave);
}

ScaleSpace BuildScaleSpace(const Frame& frame, int octaves,
                           int scales_per_octave, double base_sigma,
                           double input_sigma) {
  EPIGEO_CHECK(octaves >= 1, "scale space needs at least one octave");
  EPIGEO_CHECK(scales_per_octave >= 3, "scales_per_octave must be >= 3");
  EPIGEO_CHECK(base_sigma > 0.0, "base sigma must be positive");
  const int min_dim = std::min(frame.width(), frame.height());
  const int needed = 16 << octaves;
  if (min_dim < needed) {
    int fit = 0;
    while (fit < 30 && (16 << (fit + 1)) <= min_dim) ++fit;
    throw ContractError("image " + std::to_string(frame.width()) + "x" +
                        std::to_string(frame.height()) + " is smaller than " +
                        std::to_string(needed) + " px required for " +
                        std::to_string(octaves) + " octaves; use at most " +
                        std::to_string(fit) + " octaves");
  }

  ScaleSpace space;
  space.octaves = octaves;
  space.scales_per_octave = scales_per_octave;
  space.base_sigma = base_sigma;
  space.gaussians.resize(octaves);
  space.dogs.resize(octaves);

  const int levels = scales_per_octave + 3;
  std::vector<double> increments(levels, 0.0);
  for (int s = 1; s < levels; ++s) {
    const double prev = base_sigma * std::pow(2.0, (s - 1.0) / scales_per_octave);
    const double cur = base_sigma * std::pow(2.0, static_cast<double>(s) / scales_per_octave);
    increments[s] = std::sqrt(cur * cur - prev * prev);
  }

  Image base(frame);
  if (base_sigma > input_sigma) {
    base = GaussianBlur(base, std::sqrt(base_sigma * base_sigma - input_sigma * input_sigma));
  }
  for (int o = 0; o < octaves; ++o) {
    auto& gauss = space.gaussians[o];
    gauss.reserve(levels);
    gauss.push_back(o == 0 ? std::move(base)
                           : Downsample(space.gaussians[o - 1][scales_per_octave]));
    for (int s = 1; s < levels; ++s) {
      gauss.push_back(GaussianBlur(gauss[s - 1], increments[s]));
    }
    auto& dogs = space.dogs[o];
    dogs.reserve(levels - 1);
    for (int s = 0; s + 1 < levels; ++s) {
      dogs.push_back(Subtract(gauss[s + 1], gauss[s]));
    }
  }
  return space;
}

std::vector<Keypoint> DetectKeypoints(const ScaleSpace& pyramid,
                                      double contrast_threshold,
                                      double edge_ratio_threshold,
                                      int max_keypoints) {
  std::vector<Keypoint> keypoints;
  const int scales = pyramid.scales_per_octave;
  const double prefilter = 0.5 * contrast_threshold;
  for (int o = 0; o < pyramid.octaves; ++o) {
    const auto& dogs = pyramid.dogs[o];
    const int w = dogs[0].width;
    const int h = dogs[0].height;
    const double octave_scale = std::ldexp(1.0, o);
    for (int s = 1; s <= scales; ++s) {
      for (int y = kImageBorder; y < h - kImageBorder; ++y) {
        for (int x = kImageBorder; x < w - kImageBorder; ++x) {
          if (!IsLocalExtremum(dogs, s, x, y, prefilter)) continue;
          Refined r;
          if (!RefineExtremum(dogs, scales, x, y, s, contrast_threshold,
                              edge_ratio_threshold, &r)) {
            continue;
          }
          Keypoint kp;
          kp.x = (r.x + r.offset.x()) * octave_scale;
          kp.y = (r.y + r.offset.y()) * octave_scale;
          const double level = r.s + r.offset.z();
          kp.scale = pyramid.EffectiveSigma(o, level);
          kp.octave_sigma = pyramid.base_sigma * std::pow(2.0, level / scales);
          kp.response = std::abs(r.contrast);
          kp.octave = o;
          kp.layer = r.s;

          const auto hist = OrientationHistogram(
              pyramid.gaussians[o][r.s], r.x, r.y,
              kOrientationSigmaFactor * kp.octave_sigma);
          const double peak = *std::max_element(hist.begin(), hist.end());
          if (peak <= 0.0) continue;
          for (int i = 0; i < kOrientationBins; ++i) {
            const double left = hist[(i + kOrientationBins - 1) % kOrientationBins];
            const double right = hist[(i + 1) % kOrientationBins];
            const double v = hist[i];
            if (v > left && v > right && v >= kOrientationPeakRatio * peak) {
              const double bin = i + 0.5 * (left - right) / (left - 2.0 * v + right);
              Keypoint oriented = kp;
              oriented.orientation = WrapAngle(bin * kTwoPi / kOrientationBins);
              keypoints.push_back(oriented);
            }
          }
        }
      }
    }
  }
  std::stable_sort(keypoints.begin(), keypoints.end(),
                   [](const Keypoint& a, const Keypoint& b) {
                     if (a.response != b.response) return a.response > b.response;
                     if (a.y != b.y) return a.y < b.y;
                     if (a.x != b.x) return a.x < b.x;
                     return a.orientation < b.orientation;
                   });
  if (max_keypoints > 0 && keypoints.size() > static_cast<std::size_t>(max_keypoints)) {
    keypoints.resize(max_keypoints);
  }
  return keypoints;
}

DescriptorSet ComputeDescriptors(const ScaleSpace& pyramid,
                                 std::span<const Keypoint> keypoints) {
  DescriptorSet result;
  constexpr int d = kDescriptorCells;
  constexpr int n = kDescriptorBins;
  for (const Keypoint& kp : keypoints) {
    const Image& image = pyramid.gaussians[kp.octave][kp.layer];
    const double octave_scale = std::ldexp(1.0, kp.octave);
    const double cx = kp.x / octave_scale;
    const double cy = kp.y / octave_scale;
    const double cell = static_cast<double>(kDescriptorWindow) / d *
                        kp.octave_sigma / pyramid.base_sigma;
    const double half = 0.5 * d * cell;
    const double cos_t = std::cos(kp.orientation);
    const double sin_t = std::sin(kp.orientation);
    // Bounding box of the rotated window plus one pixel for gradients.
    const double extent = half * (std::abs(cos_t) + std::abs(sin_t));
    if (cx - extent < 1.0 || cy - extent < 1.0 ||
        cx + extent > image.width - 2.0 || cy + extent > image.height - 2.0) {
      ++result.skipped;
      continue;
    }

    std::array<double, (d + 2) * (d + 2) * (n + 2)> hist{};
    auto bin_at = [&](int r, int c, int o) -> double& {
      return hist[((r + 1) * (d + 2) + (c + 1)) * (n + 2) + o];
    };
    const double weight_denom = 2.0 * half * half;  // sigma = half window
    const int x_min = static_cast<int>(std::floor(cx - extent));
    const int x_max = static_cast<int>(std::ceil(cx + extent));
    const int y_min = static_cast<int>(std::floor(cy - extent));
    const int y_max = static_cast<int>(std::ceil(cy + extent));
    for (int py = y_min; py <= y_max; ++py) {
      for (int px = x_min; px <= x_max; ++px) {
        const double dx = px - cx;
        const double dy = py - cy;
        // Rotate into the keypoint frame.
        const double rx = cos_t * dx + sin_t * dy;
        const double ry = -sin_t * dx + cos_t * dy;
        const double rbin = ry / cell + 0.5 * d - 0.5;
        const double cbin = rx / cell + 0.5 * d - 0.5;
        if (rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d) continue;
        const double gx = image(px + 1, py) - image(px - 1, py);
        const double gy = image(px, py + 1) - image(px, py - 1);
        const double magnitude = std::hypot(gx, gy);
        if (magnitude == 0.0) continue;
        const double weight = std::exp(-(rx * rx + ry * ry) / weight_denom);
        double obin = WrapAngle(std::atan2(gy, gx) - kp.orientation) * n / kTwoPi;
        if (obin >= n) obin -= n;

        const int r0 = static_cast<int>(std::floor(rbin));
        const int c0 = static_cast<int>(std::floor(cbin));
        int o0 = static_cast<int>(std::floor(obin));
        const double fr = rbin - r0;
        const double fc = cbin - c0;
        const double fo = obin - o0;
        const double v = magnitude * weight;
        for (int ir = 0; ir <= 1; ++ir) {
          const double vr = v * (ir ? fr : 1.0 - fr);
          for (int ic = 0; ic <= 1; ++ic) {
            const double vc = vr * (ic ? fc : 1.0 - fc);
            bin_at(r0 + ir, c0 + ic, o0) += vc * (1.0 - fo);
            bin_at(r0 + ir, c0 + ic, o0 + 1) += vc * fo;
          }
        }
      }
    }

    Descriptor desc;
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) {
        // Orientation bin n wraps to 0.
        bin_at(r, c, 0) += bin_at(r, c, n);
        for (int o = 0; o < n; ++o) desc.values[(r * d + c) * n + o] = bin_at(r, c, o);
      }
    }
    double norm = 0.0;
    for (const double v : desc.values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      ++result.skipped;
      continue;
    }
    for (double& v : desc.values) v = std::min(v / norm, kDescriptorClip);
    norm = 0.0;
    for (const double v : desc.values) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : desc.values) v /= norm;

    result.keypoints.push_back(kp);
    result.descriptors.push_back(desc);
  }
  return result;
}

namespace {

double SquaredDistance(const Descriptor& a, const Descriptor& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double diff = a.values[i] - b.values[i];
    sum += diff * diff;
  }
  return sum;
}

}  // namespace

std::vector<Match> MatchDescriptors(std::span<const Descriptor> a,
                                    std::span<const Descriptor> b,
                                    double ratio_threshold, bool mutual_filter) {
  EPIGEO_CHECK(ratio_threshold > 0.0 && ratio_threshold <= 1.0,
               "ratio threshold must be in (0, 1]");
  std::vector<Match> matches;
  if (a.empty() || b.empty()) return matches;

  // Best a-index for every b, used by the mutual filter.
  std::vector<int> best_for_b(b.size(), -1);
  std::vector<double> best_for_b_dist(b.size(), 0.0);
  std::vector<Match> candidates;
  candidates.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double dist = SquaredDistance(a[i], b[j]);
      if (dist < best) {
        second = best;
        best = dist;
        best_j = static_cast<int>(j);
      } else if (dist < second) {
        second = dist;
      }
      if (best_for_b[j] < 0 || dist < best_for_b_dist[j]) {
        best_for_b[j] = static_cast<int>(i);
        best_for_b_dist[j] = dist;
      }
    }
    Match m;
    m.index_a = static_cast<int>(i);
    m.index_b = best_j;
    m.distance = std::sqrt(best);
    if (std::isinf(second)) {
      m.ratio = 0.0;
    } else {
      const double second_dist = std::sqrt(second);
      m.ratio = second_dist > 0.0 ? m.distance / second_dist : 1.0;
    }
    if (m.ratio < ratio_threshold) candidates.push_back(m);
  }
  for (const Match& m : candidates) {
    if (mutual_filter && best_for_b[m.index_b] != m.index_a) continue;
    matches.push_back(m);
  }
  return matches;
}

DescriptorSet ExtractFeatures(const Frame& frame, const FeatureOptions& options) {
  const Frame scaled =
      options.max_dim > 0 ? ResizeToMaxDim(frame, options.max_dim) : frame;
  const ScaleSpace pyramid =
      BuildScaleSpace(scaled, options.octaves, options.scales_per_octave,
                      options.base_sigma, options.input_sigma);
  const std::vector<Keypoint> keypoints =
      DetectKeypoints(pyramid, options.contrast_threshold,
                      options.edge_ratio_threshold, options.max_keypoints);
  DescriptorSet set = ComputeDescriptors(pyramid, keypoints);
  if (!scaled.SameShape(frame)) {
    const double sx = static_cast<double>(frame.width()) / scaled.width();
    const double sy = static_cast<double>(frame.height()) / scaled.height();
    for (Keypoint& kp : set.keypoints) {
      kp.x = (kp.x + 0.5) * sx - 0.5;
      kp.y = (kp.y + 0.5) * sy - 0.5;
      kp.scale *= 0.5 * (sx + sy);
    }
  }
  return set;
}

}  // namespace epigeo
