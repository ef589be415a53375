#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vip/ctml.hpp"
#include "vip/error.hpp"
#include "vip/events.hpp"
#include "vip/rng.hpp"
#include "vip/signals.hpp"

namespace vip::synth {

// Seeded corpus generator: videos carrying latent rubric-like concept tracks,
// learner populations emitting clickstreams whose pause/rewind behavior is
// driven by those concepts, and embeddings that linearly encode them.  The
// recorded ground truth is the oracle for end-to-end conformance checks.
struct SynthConfig {
  int n_videos = 200;
  int duration_min_s = 240;
  int duration_max_s = 480;
  int n_learners = 500;  // per course
  int n_courses = 6;
  std::vector<std::string> fields = {"cs", "math", "bio"};

  // feature key -> additive log-intensity while the concept is active.
  // Defaults mirror the association structure the pipeline should recover:
  // breakpoints drive pauses and rewinds, formulas drive pauses.
  std::map<std::string, double> pause_effects = {
      {"visual_breakpoint", 1.6}, {"formula", 1.0}, {"signaling", 0.8}};
  std::map<std::string, double> rewind_effects = {{"visual_breakpoint", 1.2},
                                                  {"semantic_breakpoint", 1.4}};

  int dims_per_part = 16;
  double noise_scale = 0.25;
  double corruption_rate = 0.0;   // probability of an inserted bad line after each event
  double duplicate_fraction = 0.0;  // share of videos re-uploaded under a twin id
  int hotspot_every = 0;  // > 0: every k-th video trades concepts for a planted pause window

  double p_open = 0.65;          // learner opens a given course video
  double base_pause = 0.004;     // per-second hazards while playing
  double base_rewind = 0.003;
  double base_skip = 0.002;
  double quit_hazard = 0.0008;
  double resume_after_pause = 0.85;

  std::uint64_t seed = 0;
};

// Run-length encoded concept level: `value` over [start, start+len).
struct ConceptSegment {
  int start = 0;
  int len = 0;
  int value = 0;  // binary 0/1; ordinal 1..levels
};

using ConceptTracks = std::map<std::string, std::vector<ConceptSegment>>;

struct VideoTruth {
  std::string video_id;
  int duration_s = 0;
  std::string field;
  std::string course_id;
  ConceptTracks tracks;
  Eigen::VectorXd pause_hazard;   // per watching learner, seconds 0..D-1
  Eigen::VectorXd rewind_hazard;  // total backward-seek probability per second
  int hotspot_t = -1;             // planted pause window start, -1 when none
};

struct SessionTruth {
  std::string user_id;
  std::string video_id;  // the id the learner actually watched (twin or original)
  std::vector<signals::PlaybackInterval> intervals;  // intended integer bounds
};

struct Corruption {
  std::int64_t line = 0;  // 0-based line index in the written event log
  std::string kind;       // malformed | truncated | zero_seek | out_of_range | unknown_video
};

struct GroundTruth {
  std::vector<VideoTruth> videos;  // originals only, video order
  std::vector<SessionTruth> sessions;
  std::vector<std::pair<std::string, std::string>> duplicate_pairs;  // original, twin
  std::vector<Corruption> corruptions;
  std::int64_t event_lines = 0;  // genuine lines, before insertions
};

// ------------------------------------------------------------ pure pieces

// Raw concept level at second t (0 before the first segment, which does not
// happen for generated tracks).
int concept_value(const std::vector<ConceptSegment>& track, int t);

// Level mapped onto [0, 1] like the model input convention: binary as-is,
// ordinal (v - 1) / (levels - 1).
double concept_norm(const std::string& feature, int value);

// Piecewise-constant tracks for all fifteen features over [0, duration).
ConceptTracks draw_tracks(Rng& rng, int duration_s);

// Per-second hazard per watching learner: base * exp(sum effect * level),
// capped at 1, with the concept term replaced by a flat 12x window on hotspot
// videos.  `pause` selects the pause map, otherwise the rewind map.
Eigen::VectorXd hazard_series(const SynthConfig& cfg, const ConceptTracks& tracks,
                              int duration_s, int hotspot_t, bool pause);

// --------------------------------------------------------------- generate

struct SynthOutput {
  std::filesystem::path events_path;
  std::filesystem::path metas_path;
  std::filesystem::path manifest_path;
  std::filesystem::path records_path;         // machine concept ratings at the moment grid
  std::filesystem::path truth_videos_path;    // JSONL, one line per video
  std::filesystem::path truth_sessions_path;  // JSONL, one line per session
  std::filesystem::path truth_corpus_path;    // duplicates, corruptions, counts
  GroundTruth truth;
};

// Writes the corpus under out_dir in the formats the ingest/signal/embedding/
// rubric modules consume.  Pure function of the config: reruns are
// bitwise-identical for any thread count (per-video streams are keyed by
// (seed, video index)).
SynthOutput generate(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                     int threads = 1);

GroundTruth read_ground_truth(const std::filesystem::path& truth_videos_path,
                              const std::filesystem::path& truth_sessions_path,
                              const std::filesystem::path& truth_corpus_path);

// ---------------------------------------------------------------- oracle

struct Conformance {
  std::string check;
  bool pass = false;
  std::string detail;
};

// Replays the pipeline's ingest and signal stages over the written corpus
// and scores them against the ground truth: exact corruption counters,
// session reconstruction within a second at every boundary, planted pause
// windows recovered by top-5% labels, and labels correlating with the
// hazard's concept driver.  Missing files fail the dependent checks by name
// instead of throwing.
std::vector<Conformance> oracle_metrics(const GroundTruth& truth,
                                        const std::filesystem::path& events_path,
                                        const std::filesystem::path& metas_path);

}  // namespace vip::synth
