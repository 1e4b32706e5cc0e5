#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "epigeo/image.h"

namespace epigeo {

struct FeatureOptions {
  int octaves = 4;
  int scales_per_octave = 3;
  double base_sigma = 1.6;
  // Blur already present in the input frame.
  double input_sigma = 0.5;
  double contrast_threshold = 0.03;
  double edge_ratio_threshold = 10.0;
  int max_keypoints = 2000;
  double ratio_threshold = 0.8;
  bool mutual_filter = true;
  // 0 disables rescaling.
  int max_dim = 0;
};

// Gaussian and difference-of-Gaussian pyramid. Octave o holds
// scales_per_octave + 3 blurred levels and scales_per_octave + 2 DoG levels.
struct ScaleSpace {
  int octaves = 0;
  int scales_per_octave = 0;
  double base_sigma = 0.0;
  std::vector<std::vector<Image>> gaussians;
  std::vector<std::vector<Image>> dogs;

  // Blur of level (octave, level) in original-image pixels.
  double EffectiveSigma(int octave, double level) const;
};

struct Keypoint {
  double x = 0.0;  // original-image pixels
  double y = 0.0;
  double scale = 0.0;        // sigma in original-image pixels
  double orientation = 0.0;  // radians in [0, 2 pi)
  double response = 0.0;     // |DoG| at the refined extremum

  // Location in the pyramid, used by the descriptor.
  int octave = 0;
  int layer = 0;
  double octave_sigma = 0.0;  // sigma in octave pixels
};

struct Descriptor {
  std::array<double, 128> values{};
};

struct Match {
  int index_a = 0;
  int index_b = 0;
  double distance = 0.0;
  // best / second-best distance; 0 when b has a single descriptor.
  double ratio = 0.0;
};

struct DescriptorSet {
  std::vector<Keypoint> keypoints;  // keypoints that received a descriptor
  std::vector<Descriptor> descriptors;
  int skipped = 0;                  // windows that left the image
};

ScaleSpace BuildScaleSpace(const Frame& frame, int octaves,
                           int scales_per_octave, double base_sigma,
                           double input_sigma = 0.5);

std::vector<Keypoint> DetectKeypoints(const ScaleSpace& pyramid,
                                      double contrast_threshold,
                                      double edge_ratio_threshold,
                                      int max_keypoints = 2000);

// 4x4 cells x 8 orientation bins over a 16x16 window (at the base scale of
// the octave) rotated to the keypoint orientation.
DescriptorSet ComputeDescriptors(const ScaleSpace& pyramid,
                                 std::span<const Keypoint> keypoints);

std::vector<Match> MatchDescriptors(std::span<const Descriptor> a,
                                    std::span<const Descriptor> b,
                                    double ratio_threshold,
                                    bool mutual_filter = true);

// Full pipeline on one frame. Keypoint coordinates refer to `frame` even
// when `options.max_dim` triggers an internal rescale.
DescriptorSet ExtractFeatures(const Frame& frame, const FeatureOptions& options);

// JSONL sidecar: one line per frame, keyed by (frame hash, parameter hash).
class FeatureCache {
 public:
  FeatureCache() = default;

  static FeatureCache Load(const std::filesystem::path& path);
  void Save(const std::filesystem::path& path) const;

  const DescriptorSet* Find(const std::string& frame_hash,
                            const std::string& params_hash) const;
  void Insert(const std::string& frame_hash, const std::string& params_hash,
              DescriptorSet features);
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, DescriptorSet> entries_;
};

// Canonical hash of the options that influence extracted features.
std::string FeatureParamsHash(const FeatureOptions& options);

}  // namespace epigeo
