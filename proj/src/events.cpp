#include "vip/events.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vip/io.hpp"

namespace vip::events {

using nlohmann::json;

const char* kind_name(EventKind k) {
  switch (k) {
    case EventKind::Play: return "play";
    case EventKind::Pause: return "pause";
    case EventKind::SeekForward: return "seek_forward";
    case EventKind::SeekBackward: return "seek_backward";
    case EventKind::RateChange: return "rate";
  }
  return "?";
}

namespace {

bool json_number(const json& j, const char* key, double* out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) return false;
  *out = it->get<double>();
  return true;
}

bool json_string(const json& j, const char* key, std::string* out) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return false;
  *out = it->get<std::string>();
  return true;
}

// Parses one wire line.  Returns false (with a reason) instead of throwing:
// a single garbled line must never abort ingestion.
enum class DropReason { None, Malformed, ZeroSeek, OutOfRange, UnknownVideo };

DropReason parse_line(std::string_view line, const ParseConfig& config, Event* out) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return DropReason::Malformed;

  Event e;
  if (!json_string(j, "user_id", &e.user_id) || e.user_id.empty()) return DropReason::Malformed;
  if (!json_string(j, "video_id", &e.video_id) || e.video_id.empty()) return DropReason::Malformed;
  if (!json_string(j, "course_run_id", &e.course_run_id)) return DropReason::Malformed;
  auto ts = j.find("ts_ms");
  if (ts == j.end() || !ts->is_number_integer()) return DropReason::Malformed;
  e.wall_time_ms = ts->get<std::int64_t>();

  std::string kind;
  if (!json_string(j, "kind", &kind)) return DropReason::Malformed;
  double pos = 0.0;
  if (!json_number(j, "pos", &pos) || !std::isfinite(pos) || pos < 0.0)
    return DropReason::Malformed;
  e.pos = pos;

  if (kind == "play") {
    e.kind = EventKind::Play;
  } else if (kind == "pause") {
    e.kind = EventKind::Pause;
  } else if (kind == "seek") {
    double to = 0.0;
    if (!json_number(j, "to_pos", &to) || !std::isfinite(to) || to < 0.0)
      return DropReason::Malformed;
    if (to == pos) return DropReason::ZeroSeek;
    e.kind = to > pos ? EventKind::SeekForward : EventKind::SeekBackward;
    e.to_pos = to;
  } else if (kind == "rate") {
    double r = 0.0;
    if (!json_number(j, "rate", &r) || !std::isfinite(r) || r <= 0.0)
      return DropReason::Malformed;
    e.kind = EventKind::RateChange;
    e.rate = r;
  } else {
    return DropReason::Malformed;
  }

  if (!config.durations.empty()) {
    auto d = config.durations.find(e.video_id);
    if (d == config.durations.end()) return DropReason::UnknownVideo;
    double limit = d->second + config.position_tolerance_s;
    if (e.pos > limit) return DropReason::OutOfRange;
    if ((e.kind == EventKind::SeekForward || e.kind == EventKind::SeekBackward) &&
        e.to_pos > limit)
      return DropReason::OutOfRange;
  }

  *out = e;
  return DropReason::None;
}

ParseResult finish(std::vector<Event> events, IngestReport report) {
  // Stable: simultaneous events keep input order.
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    return a.wall_time_ms < b.wall_time_ms;
  });
  report.accepted = events.size();
  return ParseResult{std::move(events), report};
}

ParseResult parse_lines(const std::function<void(const std::function<void(std::string_view)>&)>& source,
                        const ParseConfig& config) {
  std::vector<Event> events;
  IngestReport report;
  source([&](std::string_view line) {
    ++report.total_lines;
    if (line.empty()) {
      ++report.dropped_malformed;
      return;
    }
    Event e;
    switch (parse_line(line, config, &e)) {
      case DropReason::None: events.push_back(std::move(e)); break;
      case DropReason::Malformed: ++report.dropped_malformed; break;
      case DropReason::ZeroSeek: ++report.dropped_zero_seek; break;
      case DropReason::OutOfRange: ++report.dropped_out_of_range; break;
      case DropReason::UnknownVideo: ++report.dropped_unknown_video; break;
    }
  });
  return finish(std::move(events), report);
}

}  // namespace

ParseResult parse_event_log(const std::filesystem::path& path, const ParseConfig& config) {
  return parse_lines(
      [&](const std::function<void(std::string_view)>& fn) {
        io::for_each_line(path, [&](std::size_t, std::string_view line) { fn(line); });
      },
      config);
}

ParseResult parse_event_log_text(const std::string& text, const ParseConfig& config) {
  return parse_lines(
      [&](const std::function<void(std::string_view)>& fn) {
        std::size_t start = 0;
        while (start < text.size()) {
          std::size_t end = text.find('\n', start);
          if (end == std::string::npos) end = text.size();
          fn(std::string_view(text).substr(start, end - start));
          start = end + 1;
        }
      },
      config);
}

std::string serialize_event(const Event& e) {
  io::ojson j;
  j["user_id"] = e.user_id;
  j["video_id"] = e.video_id;
  j["course_run_id"] = e.course_run_id;
  j["ts_ms"] = e.wall_time_ms;
  switch (e.kind) {
    case EventKind::Play:
      j["kind"] = "play";
      j["pos"] = e.pos;
      break;
    case EventKind::Pause:
      j["kind"] = "pause";
      j["pos"] = e.pos;
      break;
    case EventKind::SeekForward:
    case EventKind::SeekBackward:
      j["kind"] = "seek";
      j["pos"] = e.pos;
      j["to_pos"] = e.to_pos;
      break;
    case EventKind::RateChange:
      j["kind"] = "rate";
      j["pos"] = e.pos;
      j["rate"] = e.rate;
      break;
  }
  return j.dump();
}

void write_event_log(const std::filesystem::path& path, const std::vector<Event>& events) {
  std::string out;
  out.reserve(events.size() * 96);
  for (const Event& e : events) {
    out += serialize_event(e);
    out += '\n';
  }
  io::write_file(path, out);
}

SeekClass classify_seek(const Event& e) {
  if (e.kind == EventKind::SeekBackward) return SeekClass::RewindToDestination;
  if (e.kind == EventKind::SeekForward) return SeekClass::SkipFromOrigin;
  throw ContractViolation("classify_seek: event is not a seek");
}

int attributed_second(const Event& e) {
  switch (classify_seek(e)) {
    case SeekClass::RewindToDestination: return static_cast<int>(std::llround(e.to_pos));
    case SeekClass::SkipFromOrigin: return static_cast<int>(std::llround(e.pos));
  }
  return 0;
}

VideoMeta parse_video_meta(const std::string& line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("malformed video metadata line");
  VideoMeta m;
  if (!json_string(j, "video_id", &m.video_id) || m.video_id.empty())
    throw DataError("video metadata missing video_id");
  auto d = j.find("duration_s");
  if (d == j.end() || !d->is_number_integer() || d->get<int>() <= 0)
    throw DataError("video metadata missing positive duration_s: " + m.video_id);
  m.duration_s = d->get<int>();
  json_string(j, "checksum", &m.checksum);
  json_string(j, "field", &m.field);
  json_string(j, "course_id", &m.course_id);
  json_string(j, "language", &m.language);
  auto runs = j.find("course_run_ids");
  if (runs != j.end() && runs->is_array())
    for (const auto& r : *runs)
      if (r.is_string()) m.course_run_ids.push_back(r.get<std::string>());
  return m;
}

std::string serialize_video_meta(const VideoMeta& m) {
  io::ojson j;
  j["video_id"] = m.video_id;
  j["duration_s"] = m.duration_s;
  j["checksum"] = m.checksum;
  j["field"] = m.field;
  j["course_id"] = m.course_id;
  j["course_run_ids"] = m.course_run_ids;
  j["language"] = m.language;
  return j.dump();
}

std::vector<VideoMeta> read_video_metas(const std::filesystem::path& path) {
  std::vector<VideoMeta> metas;
  io::for_each_line(path, [&](std::size_t, std::string_view line) {
    if (line.empty()) return;
    metas.push_back(parse_video_meta(std::string(line)));
  });
  return metas;
}

void write_video_metas(const std::filesystem::path& path, const std::vector<VideoMeta>& metas) {
  std::string out;
  for (const VideoMeta& m : metas) {
    out += serialize_video_meta(m);
    out += '\n';
  }
  io::write_file(path, out);
}

std::map<std::string, std::string> dedupe_videos(const std::vector<VideoMeta>& metas) {
  std::map<std::pair<int, std::string>, std::string> canonical;
  for (const VideoMeta& m : metas) {
    auto key = std::make_pair(m.duration_s, m.checksum);
    auto it = canonical.find(key);
    if (it == canonical.end())
      canonical.emplace(key, m.video_id);
    else if (m.video_id < it->second)
      it->second = m.video_id;
  }
  std::map<std::string, std::string> result;
  for (const VideoMeta& m : metas)
    result[m.video_id] = canonical.at({m.duration_s, m.checksum});
  return result;
}

void canonicalize(std::vector<Event>& events, std::vector<VideoMeta>& metas,
                  const std::map<std::string, std::string>& canon) {
  for (Event& e : events) {
    auto it = canon.find(e.video_id);
    if (it != canon.end()) e.video_id = it->second;
  }
  std::map<std::string, VideoMeta> kept;
  for (const VideoMeta& m : metas) {
    auto it = canon.find(m.video_id);
    std::string id = it == canon.end() ? m.video_id : it->second;
    auto [slot, inserted] = kept.try_emplace(id, m);
    if (inserted) {
      slot->second.video_id = id;
    } else {
      // Merged duplicate: union the run lists, keep the canonical meta fields.
      for (const std::string& r : m.course_run_ids) {
        auto& runs = slot->second.course_run_ids;
        if (std::find(runs.begin(), runs.end(), r) == runs.end()) runs.push_back(r);
      }
    }
  }
  metas.clear();
  for (auto& [id, m] : kept) metas.push_back(std::move(m));
}

}  // namespace vip::events
