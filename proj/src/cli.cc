#include "epigeo/cli.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "epigeo/alignment.h"
#include "epigeo/config.h"
#include "epigeo/dataset.h"
#include "epigeo/error.h"
#include "epigeo/features.h"
#include "epigeo/image.h"
#include "epigeo/jsonl.h"
#include "epigeo/scoring.h"
#include "epigeo/synth.h"

namespace epigeo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Artifacts. Every output embeds tool version, the full run config, its hash
// and a SHA-256 of the payload so `--check` can re-validate it.

json MakeHeader(const std::string& command, const RunConfig& config) {
  return json{{"tool", "epigeo"},
              {"tool_version", std::string(kToolVersion)},
              {"command", command},
              {"config", ToJson(config)},
              {"config_hash", RunConfigHash(config)}};
}

void WriteOrPrint(const std::string& path, const std::string& text, std::ostream& out) {
  if (path == "-") {
    out << text;
  } else {
    WriteText(path, text);
  }
}

std::string LinedArtifact(json header, const std::string& body) {
  header["content_sha256"] = Sha256Hex(body);
  return "# " + CanonicalDump(header) + "\n" + body;
}

std::string JsonlBody(const std::vector<json>& records) {
  std::string body;
  for (const json& r : records) body += CanonicalDump(r) + "\n";
  return body;
}

std::string JsonArtifact(json header, const json& data) {
  header["content_sha256"] = Sha256Hex(CanonicalDump(data));
  return json{{"meta", header}, {"data", data}}.dump(2) + "\n";
}

std::string ReadTextFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json ReadJsonFile(const fs::path& path) {
  try {
    return json::parse(ReadTextFile(path));
  } catch (const json::exception& e) {
    throw ContractError(path.string() + ": " + e.what());
  }
}

// Accepts both bare JSON and {"meta", "data"} artifacts.
json Payload(const json& j) {
  return j.is_object() && j.contains("meta") && j.contains("data") ? j.at("data") : j;
}

// Returns a list of problems; empty means the file verified.
std::vector<std::string> CheckArtifact(const fs::path& path) {
  std::vector<std::string> problems;
  const std::string text = ReadTextFile(path);
  json header;
  std::string actual;
  if (!text.empty() && text[0] == '#') {
    const std::size_t eol = text.find('\n');
    const std::string first = text.substr(1, eol == std::string::npos ? std::string::npos : eol - 1);
    header = json::parse(first);
    const std::string body = eol == std::string::npos ? std::string() : text.substr(eol + 1);
    actual = Sha256Hex(body);
    if (header.contains("scoring_config_hash")) {
      const std::string expected = header.at("scoring_config_hash").get<std::string>();
      for (const json& r : ParseJsonl(body).records) {
        if (r.contains("config_hash") && r.at("config_hash") != expected) {
          problems.push_back("record config_hash " + r.at("config_hash").dump() +
                             " differs from header " + expected);
        }
      }
    }
  } else {
    const json j = json::parse(text);
    if (!j.is_object() || !j.contains("meta") || !j.contains("data")) {
      return {"no embedded metadata"};
    }
    header = j.at("meta");
    actual = Sha256Hex(CanonicalDump(j.at("data")));
    if (j.at("data").contains("frames")) {
      for (const json& f : j.at("data").at("frames")) {
        const fs::path file = path.parent_path() / f.at("file").get<std::string>();
        if (!fs::exists(file)) {
          problems.push_back("missing frame " + file.string());
        } else if (Sha256File(file) != f.at("sha256").get<std::string>()) {
          problems.push_back("frame hash mismatch for " + file.string());
        }
      }
    }
  }
  if (!header.contains("config") || !header.contains("config_hash")) {
    problems.push_back("header lacks config or config_hash");
  } else {
    const std::string recomputed = RunConfigHash(RunConfigFromJson(header.at("config")));
    if (recomputed != header.at("config_hash").get<std::string>()) {
      problems.push_back("config_hash " + header.at("config_hash").get<std::string>() +
                         " does not match embedded config (" + recomputed + ")");
    }
  }
  if (!header.contains("content_sha256")) {
    problems.push_back("header lacks content_sha256");
  } else if (header.at("content_sha256").get<std::string>() != actual) {
    problems.push_back("content hash mismatch");
  }
  if (header.value("tool_version", std::string()) != kToolVersion) {
    problems.push_back("written by tool version " + header.value("tool_version", std::string("?")) +
                       ", this is " + std::string(kToolVersion));
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Shared config flags. Values are optional so only flags that were given
// override the config file.

struct ConfigFlags {
  std::string config_path;
  std::optional<std::vector<int>> gaps;
  std::optional<int> stride;
  std::optional<std::string> aggregation;
  std::optional<std::string> scope;
  std::optional<std::string> metric;
  std::optional<double> static_threshold;
  bool no_normalize = false;
  std::optional<int> min_matches;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<double> threshold;
  bool adaptive = false;
  std::optional<int> octaves;
  std::optional<double> contrast;
  std::optional<double> ratio;
  std::optional<int> max_keypoints;
  std::optional<int> max_dim;
  std::optional<double> tau;
  std::optional<double> epsilon;
  std::optional<int> max_pairs;
  std::optional<double> beta;
  std::optional<double> lambda;
  std::optional<std::string> mode;
  std::optional<std::string> branch;
  bool shared_noise = false;
  std::optional<int> threads;
};

void AddConfigFile(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override it")
      ->check(CLI::ExistingFile);
}

void AddScoringFlags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--gaps", f.gaps, "frame gaps for pair selection [4,8]")->delimiter(',');
  cmd->add_option("--stride", f.stride, "start-frame stride [4]");
  cmd->add_option("--aggregation", f.aggregation, "mean|median|trimmed_mean [mean]");
  cmd->add_option("--scope", f.scope, "inliers|all_matches [inliers]");
  cmd->add_option("--metric", f.metric, "sampson|symmetric [sampson]");
  cmd->add_option("--static-threshold", f.static_threshold,
                  "near-static when motion level exceeds this [0.90]");
  cmd->add_flag("--no-normalize", f.no_normalize,
                "report px^2 instead of dividing by the squared image diagonal");
  cmd->add_option("--min-matches", f.min_matches, "minimum matches per pair [30]");
  cmd->add_option("--seed", f.seed, "global RANSAC seed [0]");
  cmd->add_option("--iterations", f.iterations, "RANSAC iterations [2000]");
  cmd->add_option("--threshold", f.threshold, "RANSAC inlier threshold, px^2 [1.0]");
  cmd->add_flag("--adaptive", f.adaptive, "adaptive RANSAC stop at 99.9% confidence");
  cmd->add_option("--octaves", f.octaves, "scale-space octaves [4]");
  cmd->add_option("--contrast", f.contrast, "DoG contrast threshold [0.03]");
  cmd->add_option("--ratio", f.ratio, "Lowe ratio threshold [0.8]");
  cmd->add_option("--max-keypoints", f.max_keypoints, "keypoint cap per frame [2000]");
  cmd->add_option("--max-dim", f.max_dim, "rescale frames so max side <= this; 0 = off [0]");
  cmd->add_option("--threads", f.threads, "worker threads; 0 = auto, capped by EPIGEO_THREADS");
}

void AddFilterFlags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--tau", f.tau, "minimum score gap, strict [0.05]");
  cmd->add_option("--eps", f.epsilon, "minimum winner score, strict [0.5]");
  cmd->add_option("--max-pairs-per-group", f.max_pairs,
                  "1 = best vs worst only, 0 = all qualifying pairs [1]");
}

void AddAlignmentFlags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--beta", f.beta, "DPO beta [1.0]");
  cmd->add_option("--lambda", f.lambda, "temporal penalty weight [0.001]");
  cmd->add_option("--mode", f.mode, "self_consistent|paper_literal [self_consistent]");
  cmd->add_option("--penalty-branch", f.branch, "winner|both [winner]");
  cmd->add_flag("--shared-noise", f.shared_noise, "one noise draw for both branches");
}

RunConfig ResolveConfig(const ConfigFlags& f) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : LoadRunConfig(f.config_path);
  ScoringConfig& s = c.scoring;
  if (f.gaps) s.gaps = *f.gaps;
  if (f.stride) s.stride = *f.stride;
  if (f.aggregation) s.aggregation = ParseAggregation(*f.aggregation);
  if (f.scope) s.scope = *f.scope == "all_matches" ? ErrorScope::kAllMatches
                         : *f.scope == "inliers"   ? ErrorScope::kInliers
                                                   : throw ContractError("unknown scope " + *f.scope);
  if (f.metric) s.metric = *f.metric == "symmetric" ? ErrorMetric::kSymmetric
                           : *f.metric == "sampson" ? ErrorMetric::kSampson
                                                    : throw ContractError("unknown metric " + *f.metric);
  if (f.static_threshold) s.static_threshold = *f.static_threshold;
  if (f.no_normalize) s.normalize_by_diagonal = false;
  if (f.min_matches) s.min_matches = *f.min_matches;
  if (f.seed) s.ransac.seed = *f.seed;
  if (f.iterations) s.ransac.iterations = *f.iterations;
  if (f.threshold) s.ransac.inlier_threshold = *f.threshold;
  if (f.adaptive) s.ransac.adaptive = true;
  if (f.octaves) s.features.octaves = *f.octaves;
  if (f.contrast) s.features.contrast_threshold = *f.contrast;
  if (f.ratio) s.features.ratio_threshold = *f.ratio;
  if (f.max_keypoints) s.features.max_keypoints = *f.max_keypoints;
  if (f.max_dim) s.features.max_dim = *f.max_dim;
  if (f.threads) s.threads = *f.threads;
  if (f.tau) c.filter.tau = *f.tau;
  if (f.epsilon) c.filter.epsilon = *f.epsilon;
  if (f.max_pairs) c.filter.max_pairs_per_group = *f.max_pairs;
  if (f.beta) c.alignment.beta = *f.beta;
  if (f.lambda) c.alignment.lambda = *f.lambda;
  if (f.mode) c.alignment.mode = ParseCleanMode(*f.mode);
  if (f.branch) c.alignment.branch = ParsePenaltyBranch(*f.branch);
  if (f.shared_noise) c.shared_noise = true;
  return c;
}

// ---------------------------------------------------------------------------
// score

struct VideoInput {
  std::string video_id;
  fs::path frames_dir;        // may be empty
  fs::path correspondences;   // may be empty
  int width = 0;
  int height = 0;
};

std::vector<VideoInput> ReadScoreInputs(const fs::path& input) {
  if (fs::is_directory(input)) {
    VideoInput v;
    v.video_id = fs::absolute(input).lexically_normal().filename().string();
    if (v.video_id.empty()) v.video_id = fs::absolute(input).parent_path().filename().string();
    v.frames_dir = input;
    return {v};
  }
  if (!fs::exists(input)) throw ContractError("input does not exist: " + input.string());
  const json manifest = Payload(ReadJsonFile(input));
  if (!manifest.contains("videos") || !manifest.at("videos").is_array()) {
    throw ContractError(input.string() + ": manifest needs a \"videos\" array");
  }
  const fs::path base = input.parent_path();
  std::vector<VideoInput> out;
  std::set<std::string> seen;
  for (const json& e : manifest.at("videos")) {
    VideoInput v;
    v.video_id = e.at("video_id").get<std::string>();
    if (!seen.insert(v.video_id).second) {
      throw ContractError("manifest repeats video id '" + v.video_id + "'");
    }
    if (e.contains("path")) v.frames_dir = base / e.at("path").get<std::string>();
    if (e.contains("correspondences")) {
      v.correspondences = base / e.at("correspondences").get<std::string>();
    }
    v.width = e.value("width", 0);
    v.height = e.value("height", 0);
    if (v.frames_dir.empty() && v.correspondences.empty()) {
      throw ContractError("video '" + v.video_id + "' has neither path nor correspondences");
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<PairCorrespondences> ReadCorrespondenceFile(const fs::path& path, int* width,
                                                        int* height) {
  const JsonlDocument doc = ReadJsonl(path);
  if (doc.header) {
    const json& h = doc.header->contains("data") ? doc.header->at("data") : *doc.header;
    if (*width <= 0) *width = h.value("width", 0);
    if (*height <= 0) *height = h.value("height", 0);
  }
  std::map<std::pair<int, int>, std::vector<Correspondence>> grouped;
  for (const json& r : doc.records) {
    grouped[{r.at("i").get<int>(), r.at("j").get<int>()}].push_back(
        {Eigen::Vector2d(r.at("x").get<double>(), r.at("y").get<double>()),
         Eigen::Vector2d(r.at("xp").get<double>(), r.at("yp").get<double>())});
  }
  std::vector<PairCorrespondences> out;
  for (auto& [key, corr] : grouped) out.push_back({key.first, key.second, std::move(corr)});
  return out;
}

VideoScore ScoreOne(const VideoInput& v, const ScoringConfig& config, bool use_correspondences,
                    FeatureCache* cache) {
  if (use_correspondences && !v.correspondences.empty()) {
    int width = v.width;
    int height = v.height;
    const auto pairs = ReadCorrespondenceFile(v.correspondences, &width, &height);
    std::optional<double> motion;
    if (!v.frames_dir.empty()) {
      const std::vector<Frame> frames = ReadFrameDirectory(v.frames_dir);
      if (frames.size() >= 2) {
        motion = MotionLevel(frames, config.ssim);
        width = frames[0].width();
        height = frames[0].height();
      }
    }
    if (width <= 0 || height <= 0) {
      throw ContractError("video '" + v.video_id + "': image size unknown for correspondences");
    }
    return ScoreVideoFromCorrespondences(v.video_id, pairs, width, height, config, motion);
  }
  if (v.frames_dir.empty()) {
    throw ContractError("video '" + v.video_id +
                        "' has only correspondences; pass --from-correspondences");
  }
  const auto files = ListFrameFiles(v.frames_dir);
  if (files.size() < 2) {
    throw ContractError("video '" + v.video_id + "': need at least 2 frames in " +
                        v.frames_dir.string() + ", found " + std::to_string(files.size()));
  }
  std::vector<Frame> frames;
  std::vector<std::string> hashes;
  for (const fs::path& f : files) {
    frames.push_back(ReadFrame(f));
    if (cache != nullptr) hashes.push_back(Sha256File(f));
  }
  FeatureSource source;
  if (cache != nullptr) {
    source.cache = cache;
    source.frame_hashes = hashes;
  }
  return ScoreVideo(v.video_id, frames, config, source);
}

int CmdScore(const std::string& input, const std::string& output, bool per_pair,
             bool use_correspondences, const std::string& cache_path, const RunConfig& config,
             std::ostream& out, std::ostream& err) {
  const std::vector<VideoInput> videos = ReadScoreInputs(input);
  std::optional<FeatureCache> cache;
  if (!cache_path.empty()) cache = FeatureCache::Load(cache_path);
  std::vector<json> records;
  int flagged = 0;
  for (const VideoInput& v : videos) {
    const VideoScore score = ScoreOne(v, config.scoring, use_correspondences,
                                      cache ? &*cache : nullptr);
    if (score.Flagged()) {
      ++flagged;
      err << "flagged: " << score.video_id << (score.near_static ? " near_static" : "")
          << (score.insufficient_texture ? " insufficient_texture" : "") << "\n";
    }
    records.push_back(ToJson(score, per_pair));
  }
  if (cache) cache->Save(cache_path);
  json header = MakeHeader("score", config);
  header["scoring_config_hash"] = ConfigHash(config.scoring);
  header["n_videos"] = records.size();
  header["n_flagged"] = flagged;
  WriteOrPrint(output, LinedArtifact(header, JsonlBody(records)), out);
  return flagged > 0 ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// rank / pairs

struct LoadedGroups {
  std::vector<GenerationGroup> groups;
  std::string scoring_hash;
};

LoadedGroups LoadGroups(const fs::path& scores_path, const fs::path& groups_path) {
  const JsonlDocument doc = ReadJsonl(scores_path);
  std::map<std::string, VideoScore> scores;
  for (const json& r : doc.records) {
    VideoScore v = VideoScoreFromJson(r);
    const std::string id = v.video_id;
    if (!scores.emplace(id, std::move(v)).second) {
      throw ContractError(scores_path.string() + ": duplicate video id '" + id + "'");
    }
  }
  json manifest = Payload(ReadJsonFile(groups_path));
  if (manifest.is_object() && manifest.contains("groups")) manifest = manifest.at("groups");
  if (!manifest.is_array()) {
    throw ContractError(groups_path.string() + ": expected a list of {prompt_id, video_ids}");
  }
  LoadedGroups out;
  for (const json& g : manifest) {
    GenerationGroup group;
    group.prompt_id = g.at("prompt_id").get<std::string>();
    for (const json& id : g.at("video_ids")) {
      const auto it = scores.find(id.get<std::string>());
      if (it == scores.end()) {
        throw ContractError("group '" + group.prompt_id + "' references unscored video " +
                            id.dump());
      }
      group.members.push_back(it->second);
    }
    out.groups.push_back(std::move(group));
  }
  for (const GenerationGroup& g : out.groups) {
    for (const VideoScore& m : g.members) {
      if (out.scoring_hash.empty()) out.scoring_hash = m.config_hash;
      EPIGEO_CHECK(m.config_hash == out.scoring_hash,
                   "scores were produced under different config hashes");
    }
  }
  return out;
}

int CmdRank(const std::string& scores, const std::string& groups, const std::string& output,
            const RunConfig& config, std::ostream& out, std::ostream& err) {
  const LoadedGroups loaded = LoadGroups(scores, groups);
  std::vector<json> records;
  int skipped = 0;
  for (const GenerationGroup& g : loaded.groups) {
    const RankedGroup ranked = RankGroup(g);
    if (ranked.skip_reason) {
      ++skipped;
      err << "skipped group " << g.prompt_id << ": " << *ranked.skip_reason << "\n";
    }
    records.push_back(ToJson(ranked));
  }
  json header = MakeHeader("rank", config);
  header["scoring_config_hash"] = loaded.scoring_hash;
  header["n_groups"] = records.size();
  header["n_skipped"] = skipped;
  WriteOrPrint(output, LinedArtifact(header, JsonlBody(records)), out);
  return kExitOk;
}

int CmdPairs(const std::string& scores, const std::string& groups, const std::string& output,
             const RunConfig& config, std::ostream& out) {
  const LoadedGroups loaded = LoadGroups(scores, groups);
  const std::vector<PreferencePair> pairs = BuildPairs(loaded.groups, config.filter);
  std::vector<json> records;
  for (const PreferencePair& p : pairs) records.push_back(ToJson(p));
  json header = MakeHeader("pairs", config);
  header["scoring_config_hash"] = loaded.scoring_hash;
  header["tau"] = config.filter.tau;
  header["epsilon"] = config.filter.epsilon;
  header["max_pairs_per_group"] = config.filter.max_pairs_per_group;
  header["n_groups"] = loaded.groups.size();
  header["n_pairs"] = records.size();
  WriteOrPrint(output, LinedArtifact(header, JsonlBody(records)), out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthFlags {
  std::string output;
  std::string kind = "orbit";
  int frames = 16;
  int points = 400;
  double extent = 3.0;
  std::vector<double> jitter = {0.0};
  int scenes = 1;
  double outliers = 0.0;
  double dynamic = 0.0;
  double dynamic_speed = 0.05;
  double dot_sigma = 2.5;
  double texture = 0.0;
  int width = 384;
  int height = 288;
  double focal = 2200.0;
  double radius = 40.0;
  double span = 0.04;
  std::uint64_t seed = 0;
};

json CameraJson(const CameraMatrix& cam) {
  json rows = json::array();
  const Eigen::Matrix<double, 3, 4> p = cam.P();
  for (int r = 0; r < 3; ++r) {
    rows.push_back({p(r, 0), p(r, 1), p(r, 2), p(r, 3)});
  }
  const Eigen::Vector3d c = cam.Center();
  return json{{"P", rows}, {"center", {c.x(), c.y(), c.z()}}};
}

// Writes one scene video into `dir`; returns its manifest entry.
json WriteSynthVideo(const fs::path& dir, const std::string& video_id, const Scene& scene,
                     const TrajectorySpec& spec, const SynthFlags& f, const RunConfig& config) {
  fs::create_directories(dir);
  const std::vector<CameraMatrix> cameras = CameraTrajectory(spec);
  const auto pairs = FramePairs(spec.n_frames, config.scoring.gaps, config.scoring.stride);
  const ProjectedScene projected = ProjectScene(scene, cameras, spec, pairs);
  const std::vector<Frame> frames = RenderVideo(projected, spec, f.dot_sigma, f.texture);

  json frame_list = json::array();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.pgm", k);
    WritePgm(frames[k], dir / name);
    frame_list.push_back({{"file", name}, {"sha256", Sha256File(dir / name)}});
  }

  json header = MakeHeader("synth", config);
  const json geometry{{"kind", ToString(spec.kind)},
                      {"n_frames", spec.n_frames},
                      {"width", spec.width},
                      {"height", spec.height},
                      {"focal", spec.focal},
                      {"cx", spec.cx},
                      {"cy", spec.cy},
                      {"radius", spec.radius},
                      {"span", spec.span},
                      {"jitter_sigma", spec.jitter_sigma},
                      {"outlier_fraction", spec.outlier_fraction},
                      {"dynamic_fraction", spec.dynamic_fraction},
                      {"dynamic_speed", spec.dynamic_speed},
                      {"seed", spec.seed},
                      {"scene_seed", scene.seed},
                      {"n_points", scene.points3d.size()},
                      {"extent", scene.extent},
                      {"dot_sigma", f.dot_sigma},
                      {"texture", f.texture}};

  json cams = json::array();
  for (const CameraMatrix& c : cameras) cams.push_back(CameraJson(c));
  json camera_data{{"geometry", geometry}, {"cameras", cams}};
  WriteText(dir / "cameras.json", JsonArtifact(header, camera_data));

  json dynamic_ids = json::array();
  for (std::size_t k = 0; k < projected.dynamic.size(); ++k) {
    if (projected.dynamic[k]) dynamic_ids.push_back(k);
  }
  json pair_labels = json::array();
  std::vector<json> records;
  for (const CorrespondenceSet& set : projected.pairs) {
    json labels = json::array();
    for (std::size_t k = 0; k < set.correspondences.size(); ++k) {
      const Correspondence& c = set.correspondences[k];
      labels.push_back(ToString(set.labels[k]));
      records.push_back({{"i", set.frame_i},
                         {"j", set.frame_j},
                         {"x", c.x.x()},
                         {"y", c.x.y()},
                         {"xp", c.x_prime.x()},
                         {"yp", c.x_prime.y()},
                         {"label", ToString(set.labels[k])},
                         {"point_id", set.point_ids[k]}});
    }
    pair_labels.push_back(
        {{"frame_i", set.frame_i}, {"frame_j", set.frame_j}, {"labels", labels}});
  }
  WriteText(dir / "labels.json",
            JsonArtifact(header, {{"dynamic_points", dynamic_ids}, {"pairs", pair_labels}}));
  json corr_header = header;
  corr_header["width"] = spec.width;
  corr_header["height"] = spec.height;
  WriteText(dir / "correspondences.jsonl", LinedArtifact(corr_header, JsonlBody(records)));
  WriteText(dir / "frames.json", JsonArtifact(header, {{"frames", frame_list}}));

  return {{"video_id", video_id},
          {"path", dir.filename().string()},
          {"correspondences", (dir.filename() / "correspondences.jsonl").string()},
          {"width", spec.width},
          {"height", spec.height}};
}

int CmdSynth(const SynthFlags& f, const RunConfig& config, std::ostream& out) {
  EPIGEO_CHECK(!f.jitter.empty(), "--jitter needs at least one value");
  EPIGEO_CHECK(f.scenes >= 1, "--scenes must be >= 1");
  TrajectorySpec spec;
  spec.kind = ParseTrajectoryKind(f.kind);
  spec.n_frames = f.frames;
  spec.width = f.width;
  spec.height = f.height;
  spec.focal = f.focal;
  spec.cx = 0.5 * f.width;
  spec.cy = 0.5 * f.height;
  spec.radius = f.radius;
  spec.span = f.span;
  spec.outlier_fraction = f.outliers;
  spec.dynamic_fraction = f.dynamic;
  spec.dynamic_speed = f.dynamic_speed;
  const fs::path root = f.output;
  const bool single = f.scenes == 1 && f.jitter.size() == 1;

  json videos = json::array();
  json groups = json::array();
  for (int s = 0; s < f.scenes; ++s) {
    const std::uint64_t scene_seed = f.seed + static_cast<std::uint64_t>(s);
    const Scene scene = GenerateScene(f.points, f.extent, scene_seed);
    json ids = json::array();
    for (std::size_t k = 0; k < f.jitter.size(); ++k) {
      spec.jitter_sigma = f.jitter[k];
      spec.seed = scene_seed * 1000 + k;
      ValidateTrajectorySpec(spec);
      const std::string id = single ? fs::absolute(root).lexically_normal().filename().string()
                                    : "s" + std::to_string(s) + "_j" + std::to_string(k);
      const fs::path dir = single ? root : root / id;
      json entry = WriteSynthVideo(dir, id, scene, spec, f, config);
      if (single) {
        entry["path"] = ".";
        entry["correspondences"] = "correspondences.jsonl";
      }
      videos.push_back(entry);
      ids.push_back(id);
    }
    groups.push_back({{"prompt_id", "scene_" + std::to_string(scene_seed)}, {"video_ids", ids}});
  }
  const json header = MakeHeader("synth", config);
  WriteText(root / "manifest.json", JsonArtifact(header, {{"videos", videos}}));
  WriteText(root / "groups.json", JsonArtifact(header, {{"groups", groups}}));
  out << "wrote " << videos.size() << " video(s) to " << root.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dpo-demo

LatentClip ClipFromJson(const json& j, const std::string& what) {
  EPIGEO_CHECK(j.is_array() && !j.empty() && j[0].is_array(), what + ": expected [[...], ...]");
  LatentClip clip(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t t = 0; t < j.size(); ++t) {
    EPIGEO_CHECK(j[t].size() == j[0].size(), what + ": ragged rows");
    for (std::size_t d = 0; d < j[t].size(); ++d) clip(t, d) = j[t][d].get<double>();
  }
  ValidateClip(clip, what);
  return clip;
}

json ClipToJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t x = seed ^ (k * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct DemoFlags {
  std::string pairs_path;
  std::string latents_path;
  std::string output;
  int steps = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int frames = 8;
  int dims = 4;
  double t = -1.0;
  double init_scale = 0.0;
};

int CmdDpoDemo(const DemoFlags& f, const RunConfig& config, std::ostream& out) {
  std::vector<LatentPair> latents;
  std::vector<double> gaps;
  if (!f.latents_path.empty()) {
    const json m = Payload(ReadJsonFile(f.latents_path));
    EPIGEO_CHECK(m.contains("pairs"), "latent manifest needs a \"pairs\" array");
    for (const json& p : m.at("pairs")) {
      latents.push_back({ClipFromJson(p.at("winner"), "winner"),
                         ClipFromJson(p.at("loser"), "loser")});
    }
  } else {
    if (!f.pairs_path.empty()) {
      for (const json& r : ReadJsonl(f.pairs_path).records) {
        gaps.push_back(PreferencePairFromJson(r).score_gap);
      }
    } else {
      for (int k = 1; k <= 8; ++k) gaps.push_back(0.1 * k);
    }
    for (std::size_t k = 0; k < gaps.size(); ++k) {
      latents.push_back(SyntheticLatentPair(gaps[k], f.frames, f.dims, MixSeed(f.seed, k)));
    }
  }
  EPIGEO_CHECK(!latents.empty(), "dpo-demo: no preference pairs");

  NoiseOptions noise;
  noise.shared_noise = config.shared_noise;
  noise.t = f.t;
  std::vector<DpoBatchItem> items;
  for (std::size_t k = 0; k < latents.size(); ++k) {
    std::mt19937_64 rng(MixSeed(f.seed ^ 0x5eedULL, k));
    items.push_back(SampleItem(latents[k].winner, latents[k].loser, rng, noise));
  }
  const int dims = static_cast<int>(items[0].x0_w.cols());
  std::mt19937_64 rng(MixSeed(f.seed, 0xabcdefULL));
  std::normal_distribution<double> normal(0.0, 0.1);
  Eigen::VectorXd p(dims * dims + 2 * dims);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = normal(rng);
  LinearVelocityModel ref(dims);
  ref.SetParameters(p);

  TrainOptions train;
  train.steps = f.steps;
  train.learning_rate = f.lr;
  train.loss = config.alignment;
  train.seed = f.seed;
  train.init_scale = f.init_scale;
  const TrainResult result = ToyTrain(items, ref, train);

  std::string csv = "step,total_loss\n";
  char line[64];
  for (std::size_t k = 0; k < result.trace.size(); ++k) {
    std::snprintf(line, sizeof(line), "%zu,%.17g\n", k, result.trace[k]);
    csv += line;
  }
  json header = MakeHeader("dpo-demo", config);
  header["steps"] = f.steps;
  header["learning_rate"] = f.lr;
  header["seed"] = f.seed;
  header["n_pairs"] = items.size();
  header["mode"] = ToString(config.alignment.mode);
  const fs::path dir = f.output;
  fs::create_directories(dir);
  WriteText(dir / "loss_trace.csv", LinedArtifact(header, csv));

  const LinearVelocityModel initial = [&] {
    LinearVelocityModel m = ref;
    if (f.init_scale > 0.0) {
      TrainOptions zero = train;
      zero.steps = 0;
      m = ToyTrain(items, ref, zero).model;
    }
    return m;
  }();
  const json data{
      {"dims", dims},
      {"W", ClipToJson(result.model.w())},
      {"b", std::vector<double>(result.model.b().data(), result.model.b().data() + dims)},
      {"c", std::vector<double>(result.model.c().data(), result.model.c().data() + dims)},
      {"initial_loss", result.trace.front()},
      {"final_loss", result.trace.back()},
      {"initial_margin", MeanMargin(items, initial, ref, config.alignment)},
      {"final_margin", MeanMargin(items, result.model, ref, config.alignment)},
      {"initial_x0_hat_variance", MeanWinnerVariance(items, initial, config.alignment.mode)},
      {"final_x0_hat_variance", MeanWinnerVariance(items, result.model, config.alignment.mode)}};
  WriteText(dir / "final_params.json", JsonArtifact(header, data));
  out << "loss " << result.trace.front() << " -> " << result.trace.back() << "; wrote "
      << (dir / "loss_trace.csv").string() << " and " << (dir / "final_params.json").string()
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ssim

int CmdSsim(const std::vector<std::string>& inputs, const std::string& output,
            const RunConfig& config, std::ostream& out) {
  json data;
  if (inputs.size() == 1) {
    const std::vector<Frame> frames = ReadFrameDirectory(inputs[0]);
    EPIGEO_CHECK(frames.size() >= 2, "ssim: need at least 2 frames in " + inputs[0]);
    const double motion = MotionLevel(frames, config.scoring.ssim);
    data = {{"input", inputs[0]},
            {"n_frames", frames.size()},
            {"motion_level", motion},
            {"near_static", motion > config.scoring.static_threshold}};
  } else {
    EPIGEO_CHECK(inputs.size() == 2, "ssim: give two image files or one frame directory");
    data = {{"a", inputs[0]},
            {"b", inputs[1]},
            {"ssim", Ssim(ReadFrame(inputs[0]), ReadFrame(inputs[1]), config.scoring.ssim)}};
  }
  if (output.empty()) {
    out << CanonicalDump(data) << "\n";
  } else {
    WriteOrPrint(output, LinedArtifact(MakeHeader("ssim", config), CanonicalDump(data) + "\n"),
                 out);
  }
  return kExitOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Epipolar consistency scoring, preference pairs and a Flow-DPO demonstrator"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(0, 1);
  std::vector<std::string> check_files;
  app.add_option("--check", check_files, "re-validate the embedded hashes of output files");

  ConfigFlags flags;

  CLI::App* score = app.add_subcommand("score", "score videos (frame directory or manifest)");
  std::string score_input;
  std::string score_output = "-";
  bool per_pair = false;
  bool from_corr = false;
  std::string cache_path;
  score->add_option("input", score_input, "frame directory or manifest JSON")->required();
  score->add_option("-o,--output", score_output, "output JSONL ('-' = stdout)");
  score->add_flag("--per-pair", per_pair, "embed per-pair scores");
  score->add_flag("--from-correspondences", from_corr,
                  "use manifest correspondence files instead of detecting features");
  score->add_option("--cache", cache_path, "feature cache JSONL (read and updated)");
  AddConfigFile(score, flags);
  AddScoringFlags(score, flags);

  CLI::App* rank = app.add_subcommand("rank", "rank scored videos within prompt groups");
  std::string scores_path;
  std::string groups_path;
  std::string rank_output = "-";
  rank->add_option("scores", scores_path, "VideoScore JSONL")->required()->check(CLI::ExistingFile);
  rank->add_option("--groups", groups_path, "group manifest: [{prompt_id, video_ids}]")
      ->required()
      ->check(CLI::ExistingFile);
  rank->add_option("-o,--output", rank_output, "output JSONL ('-' = stdout)");
  AddConfigFile(rank, flags);

  CLI::App* pairs = app.add_subcommand("pairs", "build filtered preference pairs");
  std::string pairs_output = "-";
  pairs->add_option("scores", scores_path, "VideoScore JSONL")->required()->check(CLI::ExistingFile);
  pairs->add_option("--groups", groups_path, "group manifest: [{prompt_id, video_ids}]")
      ->required()
      ->check(CLI::ExistingFile);
  pairs->add_option("-o,--output", pairs_output, "output JSONL ('-' = stdout)");
  AddConfigFile(pairs, flags);
  AddFilterFlags(pairs, flags);

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene video directory");
  SynthFlags sf;
  synth->add_option("-o,--output", sf.output, "output directory")->required();
  synth->add_option("--kind", sf.kind, "orbit|dolly|arc")->capture_default_str();
  synth->add_option("--frames", sf.frames, "frames per video")->capture_default_str();
  synth->add_option("--points", sf.points, "3D points")->capture_default_str();
  synth->add_option("--extent", sf.extent, "scene half-width")->capture_default_str();
  synth->add_option("--jitter", sf.jitter, "jitter sigma(s) in px; several values make a group")
      ->delimiter(',')
      ->capture_default_str();
  synth->add_option("--scenes", sf.scenes, "number of scenes (groups)")->capture_default_str();
  synth->add_option("--outliers", sf.outliers, "outlier fraction per pair")->capture_default_str();
  synth->add_option("--dynamic", sf.dynamic, "dynamic point fraction")->capture_default_str();
  synth->add_option("--dynamic-speed", sf.dynamic_speed, "world units per frame")
      ->capture_default_str();
  synth->add_option("--dot-sigma", sf.dot_sigma, "rendered dot std in px (>= 0.8)")
      ->capture_default_str();
  synth->add_option("--texture", sf.texture, "fixed background noise amplitude")
      ->capture_default_str();
  synth->add_option("--width", sf.width, "frame width")->capture_default_str();
  synth->add_option("--height", sf.height, "frame height")->capture_default_str();
  synth->add_option("--focal", sf.focal, "focal length px")->capture_default_str();
  synth->add_option("--radius", sf.radius, "camera distance to scene center")
      ->capture_default_str();
  synth->add_option("--span", sf.span, "total orbit/arc angle in radians")->capture_default_str();
  synth->add_option("--seed", sf.seed, "scene seed")->capture_default_str();
  AddConfigFile(synth, flags);
  synth->add_option("--gaps", flags.gaps, "frame gaps of the written correspondences [4,8]")
      ->delimiter(',');
  synth->add_option("--stride", flags.stride, "start-frame stride [4]");

  CLI::App* demo = app.add_subcommand("dpo-demo", "toy Flow-DPO training on synthetic latents");
  DemoFlags df;
  demo->add_option("--pairs", df.pairs_path, "PreferencePair JSONL (latents follow score gaps)");
  demo->add_option("--latents", df.latents_path,
                   "latent manifest {pairs: [{winner, loser}]} (T x D arrays)");
  demo->add_option("-o,--output", df.output, "output directory")->capture_default_str();
  df.output = "dpo_demo";
  demo->add_option("--steps", df.steps, "gradient steps")->capture_default_str();
  demo->add_option("--lr", df.lr, "learning rate")->capture_default_str();
  demo->add_option("--seed", df.seed, "seed for latents, noise and reference model")
      ->capture_default_str();
  demo->add_option("--frames", df.frames, "latent frames T")->capture_default_str();
  demo->add_option("--dims", df.dims, "latent dims D")->capture_default_str();
  demo->add_option("--t", df.t, "fixed time per pair; < 0 draws t uniformly")
      ->capture_default_str();
  demo->add_option("--init-scale", df.init_scale, "perturb initial theta away from ref")
      ->capture_default_str();
  AddConfigFile(demo, flags);
  AddAlignmentFlags(demo, flags);

  CLI::App* ssim = app.add_subcommand("ssim", "SSIM of two frames or motion level of a directory");
  std::vector<std::string> ssim_inputs;
  std::string ssim_output;
  ssim->add_option("inputs", ssim_inputs, "two image files, or one frame directory")
      ->required()
      ->expected(1, 2);
  ssim->add_option("-o,--output", ssim_output, "write an artifact instead of printing");
  AddConfigFile(ssim, flags);
  ssim->add_option("--static-threshold", flags.static_threshold, "near-static threshold [0.90]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (!check_files.empty()) {
      int bad = 0;
      for (const std::string& file : check_files) {
        const auto problems = CheckArtifact(file);
        if (problems.empty()) {
          out << "OK " << file << "\n";
        } else {
          ++bad;
          for (const std::string& p : problems) out << "FAIL " << file << ": " << p << "\n";
        }
      }
      if (app.get_subcommands().empty()) return bad > 0 ? kExitFatal : kExitOk;
      if (bad > 0) return kExitFatal;
    }
    if (app.get_subcommands().empty()) {
      out << app.help();
      return kExitUsage;
    }
    const RunConfig config = ResolveConfig(flags);
    if (score->parsed()) {
      return CmdScore(score_input, score_output, per_pair, from_corr, cache_path, config, out,
                      err);
    }
    if (rank->parsed()) return CmdRank(scores_path, groups_path, rank_output, config, out, err);
    if (pairs->parsed()) return CmdPairs(scores_path, groups_path, pairs_output, config, out);
    if (synth->parsed()) return CmdSynth(sf, config, out);
    if (demo->parsed()) return CmdDpoDemo(df, config, out);
    if (ssim->parsed()) return CmdSsim(ssim_inputs, ssim_output, config, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitUsage;
}

}  // namespace epigeo
