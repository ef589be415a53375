#include "vip/signals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vip/io.hpp"
#include "vip/threading.hpp"

namespace vip::signals {

using events::Event;
using events::EventKind;

const char* signal_name(SignalKind s) {
  switch (s) {
    case SignalKind::Watched: return "watched";
    case SignalKind::PausedAt: return "paused_at";
    case SignalKind::RewoundTo: return "rewound_to";
    case SignalKind::SkippedFrom: return "skipped_from";
  }
  return "?";
}

SignalKind signal_from_name(const std::string& name) {
  for (SignalKind s : kAllSignals)
    if (name == signal_name(s)) return s;
  throw ConfigError("unknown signal name: " + name);
}

Eigen::VectorXd average_rank(const Eigen::Ref<const Eigen::VectorXd>& values) {
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (values(a) != values(b)) return values(a) < values(b);
    return a < b;  // deterministic; irrelevant to averaged ranks
  });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && values(order[j + 1]) == values(order[i])) ++j;
    // Ranks i+1..j+1 (1-based) share their mean, an exact (half-)integer.
    double avg = static_cast<double>(i + j + 2) / 2.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks(order[k]) = avg;
    i = j + 1;
  }
  return ranks;
}

std::vector<PlaybackInterval> reconstruct_playback(std::span<const Event> user_events,
                                                   int duration_s) {
  const double D = static_cast<double>(duration_s);
  std::vector<PlaybackInterval> intervals;
  bool open = false;
  double open_pos = 0.0;
  auto close_at = [&](double b) {
    if (!open) return;
    double a = std::min(open_pos, D);
    b = std::min(b, D);
    if (b > a) intervals.push_back({a, b});
    open = false;
  };
  for (const Event& e : user_events) {
    switch (e.kind) {
      case EventKind::Play:
        close_at(e.pos);
        open = true;
        open_pos = e.pos;
        break;
      case EventKind::Pause:
        close_at(e.pos);
        break;
      case EventKind::SeekForward:
      case EventKind::SeekBackward:
        close_at(e.pos);
        open = true;
        open_pos = e.to_pos;
        break;
      case EventKind::RateChange:
        break;  // excluded from all signals
    }
  }
  close_at(D);  // unclosed interval runs to the end at rate 1.0
  return intervals;
}

namespace {

inline void bin_position(Eigen::VectorXd& counts, double pos) {
  auto t = std::llround(pos);
  if (t >= 0 && t < counts.size()) counts(t) += 1.0;
}

}  // namespace

VideoCounts build_counts(std::span<const Event> video_events, int duration_s) {
  if (duration_s <= 60) throw DataError("VideoTooShort: duration must exceed 60s");
  VideoCounts c;
  c.watched = Eigen::VectorXd::Zero(duration_s);
  c.paused_at = Eigen::VectorXd::Zero(duration_s);
  c.rewound_to = Eigen::VectorXd::Zero(duration_s);
  c.skipped_from = Eigen::VectorXd::Zero(duration_s);
  c.active = Eigen::VectorXd::Zero(duration_s);

  // Seconds covered by the current user, stamped with the user ordinal so the
  // scratch buffer never needs clearing between users.
  std::vector<std::int64_t> covered(static_cast<std::size_t>(duration_s), -1);
  std::int64_t user_ord = -1;

  std::size_t i = 0;
  while (i < video_events.size()) {
    std::size_t j = i;
    while (j < video_events.size() && video_events[j].user_id == video_events[i].user_id) ++j;
    ++user_ord;
    auto user_span = video_events.subspan(i, j - i);
    for (const PlaybackInterval& iv : reconstruct_playback(user_span, duration_s)) {
      auto lo = static_cast<std::int64_t>(std::ceil(iv.a));
      auto hi = static_cast<std::int64_t>(std::ceil(iv.b)) - 1;  // t < b
      lo = std::max<std::int64_t>(lo, 0);
      hi = std::min<std::int64_t>(hi, duration_s - 1);
      for (std::int64_t t = lo; t <= hi; ++t) {
        c.watched(t) += 1.0;
        if (covered[static_cast<std::size_t>(t)] != user_ord) {
          covered[static_cast<std::size_t>(t)] = user_ord;
          c.active(t) += 1.0;
        }
      }
    }
    for (const Event& e : user_span) {
      switch (e.kind) {
        case EventKind::Pause: bin_position(c.paused_at, e.pos); break;
        case EventKind::SeekBackward: bin_position(c.rewound_to, e.to_pos); break;
        case EventKind::SeekForward: bin_position(c.skipped_from, e.pos); break;
        default: break;
      }
    }
    i = j;
  }
  return c;
}

namespace {

SignalSeries make_series(std::string video_id, SignalKind signal, Stage stage, int t0,
                         Eigen::VectorXd values) {
  SignalSeries s;
  s.video_id = std::move(video_id);
  s.signal = signal;
  s.stage = stage;
  s.t0 = t0;
  s.values = std::move(values);
  return s;
}

const Eigen::VectorXd& pick(const VideoCounts& c, SignalKind s) {
  switch (s) {
    case SignalKind::Watched: return c.watched;
    case SignalKind::PausedAt: return c.paused_at;
    case SignalKind::RewoundTo: return c.rewound_to;
    case SignalKind::SkippedFrom: return c.skipped_from;
  }
  return c.watched;
}

}  // namespace

SignalSeries raw_counts(std::span<const Event> video_events, SignalKind signal, int duration_s) {
  VideoCounts c = build_counts(video_events, duration_s);
  std::string vid = video_events.empty() ? std::string() : video_events.front().video_id;
  return make_series(std::move(vid), signal, Stage::RawCounts, 0, pick(c, signal));
}

SignalSeries active_series(std::span<const Event> video_events, int duration_s) {
  VideoCounts c = build_counts(video_events, duration_s);
  std::string vid = video_events.empty() ? std::string() : video_events.front().video_id;
  return make_series(std::move(vid), SignalKind::Watched, Stage::RawCounts, 0,
                     std::move(c.active));
}

SignalSeries preprocess(const SignalSeries& raw, const SignalSeries& active, int duration_s,
                        int trim_s, PreprocessTrace* trace) {
  if (duration_s <= 2 * trim_s) throw DataError("VideoTooShort: duration must exceed 2*trim");
  if (raw.values.size() != duration_s || active.values.size() != duration_s)
    throw ContractViolation("preprocess: series not aligned with duration");

  // Seconds trim_s .. duration_s - trim_s inclusive.
  const Eigen::Index n = duration_s - 2 * trim_s + 1;
  Eigen::VectorXd trimmed = raw.values.segment(trim_s, n);
  Eigen::VectorXd act = active.values.segment(trim_s, n);

  Eigen::VectorXd normalized(n);
  for (Eigen::Index i = 0; i < n; ++i)
    normalized(i) = act(i) > 0.0 ? trimmed(i) / act(i) : 0.0;

  Eigen::VectorXd smoothed = moving_average5(normalized);
  Eigen::VectorXd detrended = detrend_ols(smoothed);
  if (!detrended.allFinite()) throw NumericError("preprocess: non-finite detrended values");

  Eigen::VectorXd rank = average_rank(detrended) / static_cast<double>(n);

  if (trace) {
    trace->trimmed = make_series(raw.video_id, raw.signal, Stage::RawCounts, trim_s, trimmed);
    trace->normalized =
        make_series(raw.video_id, raw.signal, Stage::Normalized, trim_s, normalized);
    trace->smoothed = make_series(raw.video_id, raw.signal, Stage::Smoothed, trim_s, smoothed);
    trace->detrended =
        make_series(raw.video_id, raw.signal, Stage::Detrended, trim_s, detrended);
    trace->rank = make_series(raw.video_id, raw.signal, Stage::Rank, trim_s, rank);
  }
  return make_series(raw.video_id, raw.signal, Stage::Rank, trim_s, std::move(rank));
}

std::vector<int> label_top_k(const SignalSeries& rank_series, int k_percent) {
  if (rank_series.stage != Stage::Rank)
    throw ContractViolation("label_top_k: series must be at Rank stage");
  if (k_percent != 5 && k_percent != 10 && k_percent != 20)
    throw ConfigError("label_top_k: K must be one of {5, 10, 20}");
  // Exclusive cutoff: seconds strictly above the (100-K)th percentile.  With
  // values r/n the comparison only ties when the rank equals the cutoff as a
  // rational, which an inclusive rule would overcount (101 candidates for
  // K=10 on n=100).
  const double cutoff = (100.0 - k_percent) / 100.0;
  std::vector<int> labels(static_cast<std::size_t>(rank_series.values.size()));
  for (Eigen::Index i = 0; i < rank_series.values.size(); ++i)
    labels[static_cast<std::size_t>(i)] = rank_series.values(i) > cutoff ? 1 : 0;
  return labels;
}

VideoSignals build_video_signals(std::span<const Event> video_events,
                                 const events::VideoMeta& meta,
                                 const std::vector<int>& k_percents, int trim_s) {
  VideoCounts counts = build_counts(video_events, meta.duration_s);
  SignalSeries active = make_series(meta.video_id, SignalKind::Watched, Stage::RawCounts, 0,
                                    counts.active);
  VideoSignals vs;
  vs.video_id = meta.video_id;
  vs.field = meta.field;
  vs.course_id = meta.course_id;
  vs.duration_s = meta.duration_s;
  vs.t0 = trim_s;
  for (SignalKind s : kAllSignals) {
    SignalSeries raw =
        make_series(meta.video_id, s, Stage::RawCounts, 0, pick(counts, s));
    vs.rank[static_cast<int>(s)] = preprocess(raw, active, meta.duration_s, trim_s);
  }
  for (int k : k_percents)
    for (SignalKind s : kAllSignals)
      vs.labels[k][static_cast<int>(s)] = label_top_k(vs.rank[static_cast<int>(s)], k);
  return vs;
}

std::vector<Moment> subsample_moments(const VideoSignals& vs, int interval_s) {
  std::vector<Moment> moments;
  const int last = vs.duration_s - vs.t0;
  for (int t = vs.t0; t <= last; t += interval_s) {
    Moment m;
    m.video_id = vs.video_id;
    m.t = t;
    m.field = vs.field;
    m.course_id = vs.course_id;
    const auto idx = static_cast<std::size_t>(t - vs.t0);
    for (const auto& [k, per_signal] : vs.labels)
      for (SignalKind s : kAllSignals)
        m.labels[{s, k}] = per_signal[static_cast<int>(s)][idx];
    moments.push_back(std::move(m));
  }
  return moments;
}

std::vector<VideoSignals> build_all_signals(const std::vector<Event>& all_events,
                                            const std::vector<events::VideoMeta>& metas,
                                            const std::vector<int>& k_percents, int trim_s,
                                            int threads) {
  std::map<std::string, std::vector<Event>> per_video;
  for (const auto& m : metas) per_video[m.video_id];
  for (const Event& e : all_events) {
    auto it = per_video.find(e.video_id);
    if (it != per_video.end()) it->second.push_back(e);
  }
  std::vector<const events::VideoMeta*> ordered;
  ordered.reserve(metas.size());
  for (const auto& m : metas) ordered.push_back(&m);
  std::sort(ordered.begin(), ordered.end(),
            [](const events::VideoMeta* a, const events::VideoMeta* b) {
              return a->video_id < b->video_id;
            });

  std::vector<VideoSignals> result(ordered.size());
  threading::parallel_for(ordered.size(), threads, [&](std::size_t i) {
    const events::VideoMeta& meta = *ordered[i];
    const auto& evs = per_video.at(meta.video_id);
    result[i] = build_video_signals(std::span<const Event>(evs), meta, k_percents, trim_s);
  });
  return result;
}

// ---------------------------------------------------------------------------
// Archive format: one record per video; values at 9 significant digits.

void write_signal_archive(const std::filesystem::path& path,
                          const std::vector<VideoSignals>& videos) {
  std::string out;
  for (const VideoSignals& vs : videos) {
    std::ostringstream line;
    line << "{\"video_id\":" << io::ojson(vs.video_id).dump() << ",\"field\":"
         << io::ojson(vs.field).dump() << ",\"course_id\":" << io::ojson(vs.course_id).dump()
         << ",\"duration_s\":" << vs.duration_s << ",\"t0\":" << vs.t0 << ",\"signals\":{";
    bool first_sig = true;
    for (SignalKind s : kAllSignals) {
      if (!first_sig) line << ',';
      first_sig = false;
      line << '"' << signal_name(s) << "\":[";
      const auto& v = vs.rank[static_cast<int>(s)].values;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) line << ',';
        line << io::format_sig9(v(i));
      }
      line << ']';
    }
    line << "},\"labels\":{";
    bool first_k = true;
    for (const auto& [k, per_signal] : vs.labels) {
      if (!first_k) line << ',';
      first_k = false;
      line << '"' << k << "\":{";
      bool first = true;
      for (SignalKind s : kAllSignals) {
        if (!first) line << ',';
        first = false;
        line << '"' << signal_name(s) << "\":[";
        const auto& bits = per_signal[static_cast<int>(s)];
        for (std::size_t i = 0; i < bits.size(); ++i) {
          if (i) line << ',';
          line << bits[i];
        }
        line << ']';
      }
      line << '}';
    }
    line << "}}\n";
    out += line.str();
  }
  io::write_file(path, out);
}

std::vector<VideoSignals> read_signal_archive(const std::filesystem::path& path) {
  std::vector<VideoSignals> videos;
  io::for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    if (line.empty()) return;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError("signal archive: bad record at line " + std::to_string(lineno));
    VideoSignals vs;
    vs.video_id = j.at("video_id").get<std::string>();
    vs.field = j.value("field", std::string());
    vs.course_id = j.value("course_id", std::string());
    vs.duration_s = j.at("duration_s").get<int>();
    vs.t0 = j.at("t0").get<int>();
    for (SignalKind s : kAllSignals) {
      const auto& arr = j.at("signals").at(signal_name(s));
      Eigen::VectorXd v(arr.size());
      for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i];
      SignalSeries series;
      series.video_id = vs.video_id;
      series.signal = s;
      series.stage = Stage::Rank;
      series.t0 = vs.t0;
      series.values = std::move(v);
      vs.rank[static_cast<int>(s)] = std::move(series);
    }
    for (const auto& [kstr, per_signal] : j.at("labels").items()) {
      int k = std::stoi(kstr);
      for (SignalKind s : kAllSignals)
        vs.labels[k][static_cast<int>(s)] = per_signal.at(signal_name(s)).get<std::vector<int>>();
    }
    videos.push_back(std::move(vs));
  });
  return videos;
}

}  // namespace vip::signals
