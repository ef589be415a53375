#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vip/error.hpp"

namespace vip::events {

enum class EventKind { Play, Pause, SeekForward, SeekBackward, RateChange };

const char* kind_name(EventKind k);

struct Event {
  std::string user_id;
  std::string video_id;
  std::string course_run_id;
  std::int64_t wall_time_ms = 0;
  EventKind kind = EventKind::Play;
  double pos = 0.0;      // position for play/pause/rate; origin for seeks
  double to_pos = 0.0;   // destination, seeks only
  double rate = 0.0;     // rate events only
};

struct VideoMeta {
  std::string video_id;
  int duration_s = 0;
  std::string checksum;
  std::string field;
  std::string course_id;
  std::vector<std::string> course_run_ids;
  std::string language;
};

struct IngestReport {
  std::size_t total_lines = 0;
  std::size_t accepted = 0;
  std::size_t dropped_malformed = 0;
  std::size_t dropped_zero_seek = 0;
  std::size_t dropped_out_of_range = 0;
  std::size_t dropped_unknown_video = 0;

  std::size_t dropped_total() const {
    return dropped_malformed + dropped_zero_seek + dropped_out_of_range + dropped_unknown_video;
  }
};

struct ParseConfig {
  // Optional per-video durations for range checks.  When empty, no range or
  // unknown-video filtering is applied.
  std::map<std::string, int> durations;
  // Events within this many seconds past the end are kept (clock skew and
  // player-end jitter); beyond it they are dropped and counted.
  double position_tolerance_s = 1.0;
};

struct ParseResult {
  std::vector<Event> events;  // sorted by (user_id, wall_time), ties in input order
  IngestReport report;
};

// Parses a line-delimited event log.  Malformed lines are dropped and
// counted, never fatal; the accepted stream is stably sorted by
// (user_id, wall_time).
ParseResult parse_event_log(const std::filesystem::path& path, const ParseConfig& config = {});
ParseResult parse_event_log_text(const std::string& text, const ParseConfig& config = {});

// Wire form of one accepted event; parse(serialize(e)) == e.
std::string serialize_event(const Event& e);
void write_event_log(const std::filesystem::path& path, const std::vector<Event>& events);

enum class SeekClass { RewindToDestination, SkipFromOrigin };

// Backward seeks are attributed to their destination second, forward seeks to
// their origin second (where the viewer lost interest).  Rounding is half-up.
SeekClass classify_seek(const Event& e);
int attributed_second(const Event& e);

VideoMeta parse_video_meta(const std::string& line);
std::string serialize_video_meta(const VideoMeta& m);
std::vector<VideoMeta> read_video_metas(const std::filesystem::path& path);
void write_video_metas(const std::filesystem::path& path, const std::vector<VideoMeta>& metas);

// Re-uploads of the same content are detected by identical
// (duration, checksum); the canonical id is the lexicographically smallest of
// each group.  Every input id appears as a key (identity when unique).
std::map<std::string, std::string> dedupe_videos(const std::vector<VideoMeta>& metas);

// Applies a dedupe map: rewrites event video ids to canonical ids and keeps
// one meta per canonical id (runs of merged metas are unioned).
void canonicalize(std::vector<Event>& events, std::vector<VideoMeta>& metas,
                  const std::map<std::string, std::string>& canon);

}  // namespace vip::events
