#include <fstream>

#include "epigeo/error.h"
#include "epigeo/features.h"
#include "epigeo/jsonl.h"

namespace epigeo {

using nlohmann::json;

std::string FeatureParamsHash(const FeatureOptions& o) {
  return Digest(json{{"octaves", o.octaves},
                     {"scales_per_octave", o.scales_per_octave},
                     {"base_sigma", o.base_sigma},
                     {"input_sigma", o.input_sigma},
                     {"contrast_threshold", o.contrast_threshold},
                     {"edge_ratio_threshold", o.edge_ratio_threshold},
                     {"max_keypoints", o.max_keypoints},
                     {"max_dim", o.max_dim}});
}

FeatureCache FeatureCache::Load(const std::filesystem::path& path) {
  FeatureCache cache;
  if (!std::filesystem::exists(path)) return cache;
  const JsonlDocument doc = ReadJsonl(path);
  for (const json& r : doc.records) {
    DescriptorSet set;
    set.skipped = r.value("skipped", 0);
    const json& kps = r.at("keypoints");
    const json& descs = r.at("descriptors");
    if (kps.size() != descs.size()) {
      throw ContractError("feature cache " + path.string() + ": keypoint/descriptor count mismatch");
    }
    for (std::size_t k = 0; k < kps.size(); ++k) {
      const json& a = kps[k];
      Keypoint kp;
      kp.x = a.at(0);
      kp.y = a.at(1);
      kp.scale = a.at(2);
      kp.orientation = a.at(3);
      kp.response = a.at(4);
      kp.octave = a.at(5);
      kp.layer = a.at(6);
      kp.octave_sigma = a.at(7);
      set.keypoints.push_back(kp);
      Descriptor d;
      if (descs[k].size() != d.values.size()) {
        throw ContractError("feature cache " + path.string() + ": descriptor must have 128 values");
      }
      for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = descs[k][i];
      set.descriptors.push_back(d);
    }
    cache.Insert(r.at("frame_hash"), r.at("params_hash"), std::move(set));
  }
  return cache;
}

void FeatureCache::Save(const std::filesystem::path& path) const {
  JsonlDocument doc;
  doc.header = json{{"kind", "feature_cache"}, {"tool_version", std::string(kToolVersion)}};
  for (const auto& [key, set] : entries_) {
    json kps = json::array();
    json descs = json::array();
    for (std::size_t k = 0; k < set.keypoints.size(); ++k) {
      const Keypoint& kp = set.keypoints[k];
      kps.push_back({kp.x, kp.y, kp.scale, kp.orientation, kp.response, kp.octave, kp.layer,
                     kp.octave_sigma});
      descs.push_back(set.descriptors[k].values);
    }
    doc.records.push_back({{"frame_hash", key.first},
                           {"params_hash", key.second},
                           {"skipped", set.skipped},
                           {"keypoints", std::move(kps)},
                           {"descriptors", std::move(descs)}});
  }
  WriteJsonl(path, doc);
}

const DescriptorSet* FeatureCache::Find(const std::string& frame_hash,
                                        const std::string& params_hash) const {
  const auto it = entries_.find({frame_hash, params_hash});
  return it == entries_.end() ? nullptr : &it->second;
}

void FeatureCache::Insert(const std::string& frame_hash, const std::string& params_hash,
                          DescriptorSet features) {
  entries_[{frame_hash, params_hash}] = std::move(features);
}

}  // namespace epigeo
