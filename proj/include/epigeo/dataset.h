#pragma once

#include <optional>
#include <string>
#include <vector>

#include "epigeo/scoring.h"
#include "json.hpp"

namespace epigeo {

struct GenerationGroup {
  std::string prompt_id;
  std::vector<VideoScore> members;
};

struct RankedGroup {
  std::string prompt_id;
  std::vector<std::string> order;  // best first; unflagged members only
  std::vector<std::string> excluded;
  // Set when fewer than two members survive; the group is then skipped.
  std::optional<std::string> skip_reason;
};

struct PreferencePair {
  std::string prompt_id;
  std::string winner_id;
  std::string loser_id;
  double winner_score = 0.0;
  double loser_score = 0.0;
  double score_gap = 0.0;
};

struct PairFilter {
  double tau = 0.05;
  double epsilon = 0.5;
  // 1: best against worst only. 0: every qualifying ordered pair.
  int max_pairs_per_group = 1;
};

void ValidateGroup(const GenerationGroup& group);

// Descending consistency_score; ties go to the lexicographically smaller id.
RankedGroup RankGroup(const GenerationGroup& group);

bool PassesFilter(double winner_score, double loser_score, const PairFilter& filter);

// Throws ContractError when the groups mix config hashes.
std::vector<PreferencePair> BuildPairs(const std::vector<GenerationGroup>& groups,
                                       const PairFilter& filter);

nlohmann::json ToJson(const PreferencePair& pair);
PreferencePair PreferencePairFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const RankedGroup& ranked);

}  // namespace epigeo
