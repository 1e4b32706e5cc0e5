#pragma once

#include <filesystem>
#include <string>

#include "epigeo/alignment.h"
#include "epigeo/dataset.h"
#include "epigeo/scoring.h"
#include "json.hpp"

namespace epigeo {

struct RunConfig {
  ScoringConfig scoring;
  PairFilter filter;
  LossOptions alignment;
  bool shared_noise = false;
};

nlohmann::json ToJson(const RunConfig& config);
// Missing keys keep their defaults; unknown top-level sections are rejected.
RunConfig RunConfigFromJson(const nlohmann::json& j);
RunConfig LoadRunConfig(const std::filesystem::path& path);
std::string RunConfigHash(const RunConfig& config);

}  // namespace epigeo
