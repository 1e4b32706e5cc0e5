#include "epigeo/config.h"

#include <fstream>

#include "epigeo/error.h"
#include "epigeo/jsonl.h"

namespace epigeo {

using nlohmann::json;

json ToJson(const RunConfig& c) {
  json j = ToJson(c.scoring);
  j["dataset"] = {{"tau", c.filter.tau},
                  {"epsilon", c.filter.epsilon},
                  {"max_pairs_per_group", c.filter.max_pairs_per_group}};
  j["alignment"] = {{"beta", c.alignment.beta},
                    {"lambda", c.alignment.lambda},
                    {"mode", ToString(c.alignment.mode)},
                    {"penalty_branch", ToString(c.alignment.branch)},
                    {"shared_noise", c.shared_noise}};
  return j;
}

RunConfig RunConfigFromJson(const json& j) {
  EPIGEO_CHECK(j.is_object(), "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    EPIGEO_CHECK(key == "features" || key == "epipolar" || key == "scoring" ||
                     key == "dataset" || key == "alignment",
                 "unknown config section '" + key + "'");
  }
  RunConfig c;
  c.scoring = ScoringConfigFromJson(j);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    c.filter.tau = d.value("tau", c.filter.tau);
    c.filter.epsilon = d.value("epsilon", c.filter.epsilon);
    c.filter.max_pairs_per_group = d.value("max_pairs_per_group", c.filter.max_pairs_per_group);
  }
  if (j.contains("alignment")) {
    const json& a = j.at("alignment");
    c.alignment.beta = a.value("beta", c.alignment.beta);
    c.alignment.lambda = a.value("lambda", c.alignment.lambda);
    c.alignment.mode = ParseCleanMode(a.value("mode", ToString(c.alignment.mode)));
    c.alignment.branch =
        ParsePenaltyBranch(a.value("penalty_branch", ToString(c.alignment.branch)));
    c.shared_noise = a.value("shared_noise", c.shared_noise);
  }
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open config " + path.string());
  try {
    return RunConfigFromJson(json::parse(in));
  } catch (const json::exception& e) {
    throw ContractError("config " + path.string() + ": " + e.what());
  }
}

std::string RunConfigHash(const RunConfig& config) { return Digest(ToJson(config)); }

}  // namespace epigeo
