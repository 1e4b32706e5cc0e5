#include "epigeo/dataset.h"

#include <algorithm>
#include <map>
#include <set>

#include "epigeo/error.h"

namespace epigeo {

using nlohmann::json;

void ValidateGroup(const GenerationGroup& group) {
  EPIGEO_CHECK(group.members.size() >= 2,
               "group '" + group.prompt_id + "' needs at least 2 members");
  std::set<std::string> ids;
  for (const VideoScore& m : group.members) {
    EPIGEO_CHECK(ids.insert(m.video_id).second,
                 "group '" + group.prompt_id + "' repeats video id '" + m.video_id + "'");
    EPIGEO_CHECK(m.config_hash == group.members[0].config_hash,
                 "group '" + group.prompt_id + "' mixes config hashes");
  }
}

RankedGroup RankGroup(const GenerationGroup& group) {
  ValidateGroup(group);
  RankedGroup ranked;
  ranked.prompt_id = group.prompt_id;
  std::vector<const VideoScore*> usable;
  for (const VideoScore& m : group.members) {
    if (m.Flagged()) {
      ranked.excluded.push_back(m.video_id);
    } else {
      usable.push_back(&m);
    }
  }
  std::sort(usable.begin(), usable.end(), [](const VideoScore* a, const VideoScore* b) {
    if (*a->consistency_score != *b->consistency_score) {
      return *a->consistency_score > *b->consistency_score;
    }
    return a->video_id < b->video_id;
  });
  for (const VideoScore* m : usable) ranked.order.push_back(m->video_id);
  std::sort(ranked.excluded.begin(), ranked.excluded.end());
  if (usable.size() < 2) ranked.skip_reason = "fewer_than_two_unflagged";
  return ranked;
}

bool PassesFilter(double winner_score, double loser_score, const PairFilter& filter) {
  return winner_score - loser_score > filter.tau && winner_score > filter.epsilon;
}

std::vector<PreferencePair> BuildPairs(const std::vector<GenerationGroup>& groups,
                                       const PairFilter& filter) {
  EPIGEO_CHECK(filter.tau >= 0.0, "tau must be >= 0");
  EPIGEO_CHECK(filter.epsilon > 0.0 && filter.epsilon < 1.0, "epsilon must lie in (0, 1)");
  EPIGEO_CHECK(filter.max_pairs_per_group >= 0, "max pairs per group must be >= 0");
  std::string hash;
  for (const GenerationGroup& g : groups) {
    for (const VideoScore& m : g.members) {
      if (hash.empty()) hash = m.config_hash;
      EPIGEO_CHECK(m.config_hash == hash, "groups were scored under different config hashes");
    }
  }

  std::vector<PreferencePair> out;
  for (const GenerationGroup& g : groups) {
    const RankedGroup ranked = RankGroup(g);
    if (ranked.skip_reason) continue;
    std::map<std::string, double> score;
    for (const VideoScore& m : g.members) {
      if (m.consistency_score) score[m.video_id] = *m.consistency_score;
    }
    const auto make = [&](const std::string& w, const std::string& l) {
      return PreferencePair{g.prompt_id, w, l, score[w], score[l], score[w] - score[l]};
    };
    if (filter.max_pairs_per_group == 1) {
      const PreferencePair p = make(ranked.order.front(), ranked.order.back());
      if (PassesFilter(p.winner_score, p.loser_score, filter)) out.push_back(p);
      continue;
    }
    std::vector<PreferencePair> candidates;
    for (std::size_t a = 0; a < ranked.order.size(); ++a) {
      for (std::size_t b = a + 1; b < ranked.order.size(); ++b) {
        const PreferencePair p = make(ranked.order[a], ranked.order[b]);
        if (PassesFilter(p.winner_score, p.loser_score, filter)) candidates.push_back(p);
      }
    }
    // Largest gaps first; stable sort keeps rank order among equal gaps.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const PreferencePair& x, const PreferencePair& y) {
                       return x.score_gap > y.score_gap;
                     });
    if (filter.max_pairs_per_group > 0 &&
        candidates.size() > static_cast<std::size_t>(filter.max_pairs_per_group)) {
      candidates.resize(filter.max_pairs_per_group);
    }
    out.insert(out.end(), candidates.begin(), candidates.end());
  }
  return out;
}

json ToJson(const PreferencePair& p) {
  return json{{"prompt_id", p.prompt_id},     {"winner_id", p.winner_id},
              {"loser_id", p.loser_id},       {"winner_score", p.winner_score},
              {"loser_score", p.loser_score}, {"score_gap", p.score_gap}};
}

PreferencePair PreferencePairFromJson(const json& j) {
  PreferencePair p;
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.winner_id = j.at("winner_id").get<std::string>();
  p.loser_id = j.at("loser_id").get<std::string>();
  p.winner_score = j.at("winner_score").get<double>();
  p.loser_score = j.at("loser_score").get<double>();
  p.score_gap = j.at("score_gap").get<double>();
  return p;
}

json ToJson(const RankedGroup& r) {
  json j{{"prompt_id", r.prompt_id}, {"order", r.order}, {"excluded", r.excluded}};
  j["skip_reason"] = r.skip_reason ? json(*r.skip_reason) : json(nullptr);
  return j;
}

}  // namespace epigeo
