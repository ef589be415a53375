#include "vip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>

#include "vip/embedstore.hpp"
#include "vip/io.hpp"
#include "vip/threading.hpp"

namespace vip::synth {

namespace {

using io::ojson;

void validate(const SynthConfig& cfg) {
  if (cfg.n_videos < 1) throw ConfigError("synth: n_videos must be >= 1");
  if (cfg.duration_min_s <= 120) throw ConfigError("synth: durations must exceed 120s");
  if (cfg.duration_max_s < cfg.duration_min_s) throw ConfigError("synth: duration range inverted");
  if (cfg.n_learners < 1) throw ConfigError("synth: n_learners must be >= 1");
  if (cfg.n_courses < 1) throw ConfigError("synth: n_courses must be >= 1");
  if (cfg.fields.empty()) throw ConfigError("synth: fields list is empty");
  if (cfg.dims_per_part < 1) throw ConfigError("synth: dims_per_part must be >= 1");
  if (cfg.noise_scale < 0.0) throw ConfigError("synth: noise_scale must be >= 0");
  if (cfg.corruption_rate < 0.0 || cfg.corruption_rate >= 1.0)
    throw ConfigError("synth: corruption_rate must be in [0, 1)");
  if (cfg.duplicate_fraction < 0.0 || cfg.duplicate_fraction >= 1.0)
    throw ConfigError("synth: duplicate_fraction must be in [0, 1)");
  if (cfg.hotspot_every < 0) throw ConfigError("synth: hotspot_every must be >= 0");
  if (!(cfg.p_open > 0.0) || cfg.p_open > 1.0)
    throw ConfigError("synth: p_open must be in (0, 1]");
  for (double h : {cfg.base_pause, cfg.base_rewind, cfg.base_skip, cfg.quit_hazard})
    if (!(h >= 0.0) || h > 1.0) throw ConfigError("synth: hazards must be in [0, 1]");
  if (cfg.resume_after_pause < 0.0 || cfg.resume_after_pause > 1.0)
    throw ConfigError("synth: resume_after_pause must be in [0, 1]");
  for (const auto* effects : {&cfg.pause_effects, &cfg.rewind_effects})
    for (const auto& [key, e] : *effects) {
      ctml::feature(key);  // unknown concept -> ConfigError
      if (!std::isfinite(e)) throw ConfigError("synth: effect size for " + key + " not finite");
    }
}

// Embedding parts and the rubric features each one can see, mirroring which
// modality carries the feature: the transcript part reads the spoken-content
// features, the slide part the static visual ones, the frame part everything
// visible, and the three deep layers all of it at different noise levels.
struct PartDef {
  const char* name;
  double noise_mult;
  std::vector<std::string> mask;  // empty = all features
};

const std::vector<PartDef>& part_defs() {
  static const std::vector<PartDef> defs = {
      {"transcript", 1.0, {"signaling", "interactivity", "semantic_breakpoint", "redundancy"}},
      {"slide", 1.0, {"formula", "text_object", "structured_viz", "visual_complexity",
                      "redundancy"}},
      {"frames_sparse", 1.2, {"formula", "instructor", "screen", "structured_viz", "text_object",
                              "visual_complexity", "annotating", "animation_video", "photo",
                              "showing", "visual_breakpoint"}},
      {"vlm_layer_1", 1.5, {}},
      {"vlm_layer_32", 0.6, {}},
      {"vlm_layer_64", 1.0, {}},
  };
  return defs;
}

// dims x 15 mixing with columns zeroed outside the part's mask; masked
// columns get N(0, 1/active) entries so embeddings stay O(1).
Eigen::MatrixXd draw_mixing(Rng rng, int dims, const PartDef& part) {
  const auto& table = ctml::feature_table();
  std::vector<bool> active(table.size(), part.mask.empty());
  for (const auto& key : part.mask) active[static_cast<std::size_t>(ctml::feature_index(key))] = true;
  int n_active = 0;
  for (bool a : active) n_active += a ? 1 : 0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_active));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dims, static_cast<Eigen::Index>(table.size()));
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    if (!active[static_cast<std::size_t>(j)]) continue;
    for (Eigen::Index i = 0; i < dims; ++i) A(i, j) = scale * rng.normal();
  }
  return A;
}

// field -> part -> mixing.  The transcript mixing is shared across fields, so
// a field held out from training still transfers partial signal; every other
// part re-randomizes per field.
std::map<std::string, std::map<std::string, Eigen::MatrixXd>> draw_mixings(const SynthConfig& cfg) {
  const Rng root = Rng(cfg.seed).fork("mixing");
  std::map<std::string, std::map<std::string, Eigen::MatrixXd>> out;
  for (const auto& field : cfg.fields)
    for (const auto& part : part_defs()) {
      Rng r = part.name == std::string("transcript") ? root.fork("transcript")
                                                     : root.fork(field).fork(part.name);
      out[field][part.name] = draw_mixing(r, cfg.dims_per_part, part);
    }
  return out;
}

std::string video_id_of(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "v%03d", index);
  return buf;
}

std::string checksum_of(const std::string& original_id) {
  return io::hash_hex(io::fnv1a64("content:" + original_id));
}

struct VideoBlock {
  VideoTruth truth;
  std::string twin_id;  // empty when the video has no re-upload
  std::vector<SessionTruth> sessions;
  std::vector<std::string> event_lines;
  std::vector<int> grid;  // embedded moments
  std::map<std::string, embed::RowMatrixF> emb;
  std::vector<ctml::CTMLRecord> records;
};

Eigen::VectorXd rewind_prob_series(const Eigen::VectorXd& rw_hazard) {
  const int d = static_cast<int>(rw_hazard.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
  for (int s = 5; s < d; ++s) {
    const int lo = std::max(0, s - 25), hi = s - 5;
    out(s) = std::min(rw_hazard.segment(lo, hi - lo + 1).mean(), 0.5);
  }
  return out;
}

void simulate_sessions(const SynthConfig& cfg, const Rng& rngv, VideoBlock& block, int video_index,
                       const std::string& course_id, const std::string& course_run) {
  const int d = block.truth.duration_s;
  const Eigen::VectorXd& pause_p = block.truth.pause_hazard;
  const Eigen::VectorXd rw_hazard =
      hazard_series(cfg, block.truth.tracks, d, block.truth.hotspot_t, false);
  const Eigen::VectorXd rw_prob = rewind_prob_series(rw_hazard);

  for (int k = 0; k < cfg.n_learners; ++k) {
    Rng ru = rngv.fork("user", static_cast<std::uint64_t>(k));
    if (!ru.bernoulli(cfg.p_open)) continue;
    const std::string target =
        !block.twin_id.empty() && ru.bernoulli(0.3) ? block.twin_id : block.truth.video_id;
    const std::string user = course_id + "_u" + std::to_string(k);
    const std::int64_t base_ms = static_cast<std::int64_t>(video_index) * 36'000'000;

    SessionTruth session;
    session.user_id = user;
    session.video_id = target;

    std::int64_t wall = 0;  // ms into the session; content position moves separately
    auto emit = [&](events::EventKind kind, double pos, double to_pos, double rate, int offset) {
      events::Event e;
      e.user_id = user;
      e.video_id = target;
      e.course_run_id = course_run;
      e.wall_time_ms = base_ms + wall + offset;
      e.kind = kind;
      e.pos = pos;
      e.to_pos = to_pos;
      e.rate = rate;
      block.event_lines.push_back(events::serialize_event(e));
    };
    auto jit = [&] { return ru.uniform(0.0, 0.4); };

    int p0 = 0;  // intended start of the open interval
    int s = 0;   // playback position
    bool open = true;
    emit(events::EventKind::Play, jit(), 0.0, 0.0, 100);
    // quit/pause/seek fire only after playback has advanced past the interval
    // start, so every intended interval has length >= 1 and survives
    // reconstruction, which discards empty ones.  The iteration cap bounds
    // rewind-heavy configs; it is unreachable at default hazards.
    int iterations_left = 50 * d;
    while (s < d && iterations_left-- > 0) {
      if (s > p0 && ru.bernoulli(cfg.quit_hazard)) {
        emit(events::EventKind::Pause, s + jit(), 0.0, 0.0, 300);
        session.intervals.push_back({double(p0), double(s)});
        open = false;
        break;
      }
      if (s > p0 && ru.bernoulli(pause_p(s))) {
        emit(events::EventKind::Pause, s + jit(), 0.0, 0.0, 300);
        session.intervals.push_back({double(p0), double(s)});
        if (!ru.bernoulli(cfg.resume_after_pause)) {
          open = false;
          break;
        }
        emit(events::EventKind::Play, s + jit(), 0.0, 0.0, 700);
        p0 = s;
      } else if (s > p0 && rw_prob(s) > 0.0 && ru.bernoulli(rw_prob(s))) {
        const int lo = std::max(0, s - 25), hi = s - 5;
        // destination drawn with probability proportional to its pull
        double total = rw_hazard.segment(lo, hi - lo + 1).sum();
        double u = ru.uniform01() * total;
        int dest = lo;
        for (int t = lo; t <= hi; ++t) {
          u -= rw_hazard(t);
          if (u <= 0.0) {
            dest = t;
            break;
          }
          dest = t;
        }
        emit(events::EventKind::SeekBackward, s + jit(), dest + jit(), 0.0, 400);
        session.intervals.push_back({double(p0), double(s)});
        p0 = dest;
        s = dest;
        wall += 1000;
        continue;
      } else if (s > p0 && s + 5 <= d - 1 && ru.bernoulli(cfg.base_skip)) {
        const int hi = std::min(s + 60, d - 1);
        const int dest = s + 5 + static_cast<int>(ru.uniform_int(
                                     static_cast<std::uint64_t>(hi - (s + 5) + 1)));
        emit(events::EventKind::SeekForward, s + jit(), dest + jit(), 0.0, 400);
        session.intervals.push_back({double(p0), double(s)});
        p0 = dest;
        s = dest;
        wall += 1000;
        continue;
      } else if (ru.bernoulli(0.002)) {
        emit(events::EventKind::RateChange, s + jit(), 0.0, 1.5, 500);
      }
      ++s;
      wall += 1000;
    }
    if (open) session.intervals.push_back({double(p0), double(d)});
    block.sessions.push_back(std::move(session));
  }
}

void embed_moments(const SynthConfig& cfg, const Rng& rngv, VideoBlock& block,
                   const std::map<std::string, Eigen::MatrixXd>& field_mixing) {
  const int d = block.truth.duration_s;
  for (int t = 30; t <= d - 30; t += 5) block.grid.push_back(t);
  const auto& table = ctml::feature_table();
  const Eigen::Index n = static_cast<Eigen::Index>(block.grid.size());

  // raw ratings and normalized concept vector at each grid moment
  Eigen::MatrixXd cnorm(n, static_cast<Eigen::Index>(table.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = block.grid[static_cast<std::size_t>(i)];
    ctml::CTMLRecord rec;
    rec.video_id = block.truth.video_id;
    rec.t = t;
    rec.coder = ctml::Coder::Machine;
    for (std::size_t f = 0; f < table.size(); ++f) {
      const int v = concept_value(block.truth.tracks.at(table[f].key), t);
      rec.values[table[f].key] = v;
      cnorm(i, static_cast<Eigen::Index>(f)) = concept_norm(table[f].key, v);
    }
    block.records.push_back(std::move(rec));
  }

  for (const auto& part : part_defs()) {
    Rng rn = rngv.fork("emb").fork(part.name);
    const Eigen::MatrixXd& A = field_mixing.at(part.name);
    Eigen::MatrixXd e = cnorm * A.transpose();  // n x dims
    const double sigma = cfg.noise_scale * part.noise_mult;
    embed::RowMatrixF out(n, cfg.dims_per_part);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < cfg.dims_per_part; ++j)
        out(i, j) = static_cast<float>(e(i, j) + sigma * rn.normal());
    block.emb[part.name] = std::move(out);
  }
}

struct CorruptLine {
  std::string text;
  std::string kind;
};

CorruptLine make_corrupt(Rng& rng, const std::string& prev_line, const std::string& video0,
                         int duration0) {
  events::Event e;
  e.user_id = "synthetic_noise";
  e.video_id = video0;
  e.course_run_id = "none";
  e.wall_time_ms = 1;
  switch (rng.uniform_int(5)) {
    case 0:
      return {"garbage{{{", "malformed"};
    case 1:
      return {prev_line.substr(0, std::min<std::size_t>(prev_line.size(), 25)), "truncated"};
    case 2:
      e.kind = events::EventKind::SeekForward;
      e.pos = 50.0;
      e.to_pos = 50.0;
      return {events::serialize_event(e), "zero_seek"};
    case 3:
      e.kind = events::EventKind::Pause;
      e.pos = duration0 + 100.0;
      return {events::serialize_event(e), "out_of_range"};
    default:
      e.kind = events::EventKind::Pause;
      e.video_id = "video_that_never_was";
      e.pos = 10.0;
      return {events::serialize_event(e), "unknown_video"};
  }
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

// ------------------------------------------------------------ pure pieces

int concept_value(const std::vector<ConceptSegment>& track, int t) {
  int v = 0;
  for (const auto& seg : track) {
    if (t < seg.start) break;
    if (t < seg.start + seg.len) return seg.value;
    v = seg.value;
  }
  return v;
}

double concept_norm(const std::string& feature, int value) {
  const auto& spec = ctml::feature(feature);
  if (spec.type == ctml::FeatureType::Binary) return double(value);
  return double(value - 1) / double(spec.levels - 1);
}

ConceptTracks draw_tracks(Rng& rng, int duration_s) {
  ConceptTracks out;
  for (const auto& spec : ctml::feature_table()) {
    Rng r = rng.fork(spec.key);
    std::vector<ConceptSegment>& segs = out[spec.key];
    int t = 0;
    if (spec.type == ctml::FeatureType::Binary) {
      int state = r.bernoulli(1.0 / 3.0) ? 1 : 0;
      while (t < duration_s) {
        int len = state == 1 ? 10 + static_cast<int>(r.uniform_int(21))
                             : 25 + static_cast<int>(r.uniform_int(31));
        len = std::min(len, duration_s - t);
        segs.push_back({t, len, state});
        t += len;
        state ^= 1;
      }
    } else {
      while (t < duration_s) {
        int len = std::min(20 + static_cast<int>(r.uniform_int(21)), duration_s - t);
        segs.push_back({t, len, 1 + static_cast<int>(r.uniform_int(5))});
        t += len;
      }
    }
  }
  return out;
}

Eigen::VectorXd hazard_series(const SynthConfig& cfg, const ConceptTracks& tracks, int duration_s,
                              int hotspot_t, bool pause) {
  const double base = pause ? cfg.base_pause : cfg.base_rewind;
  Eigen::VectorXd out(duration_s);
  if (hotspot_t >= 0) {
    out.setConstant(base);
    if (pause) {
      const int len = std::min(5, duration_s - hotspot_t);
      out.segment(hotspot_t, len).setConstant(std::min(12.0 * base, 1.0));
    }
    return out;
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(duration_s);
  const auto& effects = pause ? cfg.pause_effects : cfg.rewind_effects;
  for (const auto& [key, eff] : effects) {
    const auto& track = tracks.at(key);
    for (const auto& seg : track) {
      const double add = eff * concept_norm(key, seg.value);
      if (add == 0.0) continue;
      const int hi = std::min(seg.start + seg.len, duration_s);
      for (int t = seg.start; t < hi; ++t) z(t) += add;
    }
  }
  out = (base * z.array().exp()).min(1.0);  // keep it a probability
  return out;
}

// --------------------------------------------------------------- generate

SynthOutput generate(const SynthConfig& cfg, const std::filesystem::path& out_dir, int threads) {
  validate(cfg);
  std::filesystem::create_directories(out_dir);
  const auto mixings = draw_mixings(cfg);
  const int n_twins = static_cast<int>(std::llround(cfg.duplicate_fraction * cfg.n_videos));

  std::vector<VideoBlock> blocks(static_cast<std::size_t>(cfg.n_videos));
  parallel_for(static_cast<std::size_t>(cfg.n_videos), threads, [&](std::size_t vi) {
    const int i = static_cast<int>(vi);
    VideoBlock& block = blocks[vi];
    const Rng rngv = Rng(cfg.seed).fork("video", static_cast<std::uint64_t>(i));

    const int course = i % cfg.n_courses;
    const std::string course_id = "c" + std::to_string(course);
    const std::string field = cfg.fields[static_cast<std::size_t>(course) % cfg.fields.size()];

    VideoTruth& truth = block.truth;
    truth.video_id = video_id_of(i);
    Rng rd = rngv.fork("duration");
    truth.duration_s =
        cfg.duration_min_s +
        static_cast<int>(rd.uniform_int(
            static_cast<std::uint64_t>(cfg.duration_max_s - cfg.duration_min_s + 1)));
    truth.field = field;
    truth.course_id = course_id;
    Rng rt = rngv.fork("tracks");
    truth.tracks = draw_tracks(rt, truth.duration_s);
    if (cfg.hotspot_every > 0 && i % cfg.hotspot_every == 0) {
      Rng rh = rngv.fork("hotspot");
      truth.hotspot_t =
          60 + static_cast<int>(rh.uniform_int(static_cast<std::uint64_t>(truth.duration_s - 120 + 1)));
    }
    truth.pause_hazard = hazard_series(cfg, truth.tracks, truth.duration_s, truth.hotspot_t, true);
    truth.rewind_hazard = rewind_prob_series(
        hazard_series(cfg, truth.tracks, truth.duration_s, truth.hotspot_t, false));
    if (i < n_twins) block.twin_id = truth.video_id + "_re";

    simulate_sessions(cfg, rngv, block, i, course_id, course_id + "_r0");
    embed_moments(cfg, rngv, block, mixings.at(field));
  });

  // -------- assemble corpus files (sequential: output is thread-agnostic)
  SynthOutput out;
  out.events_path = out_dir / "events.log";
  out.metas_path = out_dir / "videos.meta";
  out.manifest_path = out_dir / "manifest.json";
  out.records_path = out_dir / "concepts.jsonl";
  out.truth_videos_path = out_dir / "truth_videos.jsonl";
  out.truth_sessions_path = out_dir / "truth_sessions.jsonl";
  out.truth_corpus_path = out_dir / "truth_corpus.json";
  GroundTruth& truth = out.truth;

  std::vector<events::VideoMeta> metas;
  for (const auto& block : blocks) {
    events::VideoMeta m;
    m.video_id = block.truth.video_id;
    m.duration_s = block.truth.duration_s;
    m.checksum = checksum_of(block.truth.video_id);
    m.field = block.truth.field;
    m.course_id = block.truth.course_id;
    m.course_run_ids = {block.truth.course_id + "_r0"};
    m.language = "en";
    metas.push_back(m);
    if (!block.twin_id.empty()) {
      events::VideoMeta tw = m;
      tw.video_id = block.twin_id;
      metas.push_back(tw);
      truth.duplicate_pairs.emplace_back(block.truth.video_id, block.twin_id);
    }
  }
  events::write_video_metas(out.metas_path, metas);

  // event log with seeded corruption insertions; recorded line numbers refer
  // to the file as written
  std::string event_text;
  Rng rc = Rng(cfg.seed).fork("corrupt");
  std::int64_t line_no = 0;
  for (const auto& block : blocks)
    for (const auto& line : block.event_lines) {
      event_text += line;
      event_text += '\n';
      ++truth.event_lines;
      ++line_no;
      if (cfg.corruption_rate > 0.0 && rc.bernoulli(cfg.corruption_rate)) {
        CorruptLine noise = make_corrupt(rc, line, blocks[0].truth.video_id,
                                         blocks[0].truth.duration_s);
        truth.corruptions.push_back({line_no, noise.kind});
        event_text += noise.text;
        event_text += '\n';
        ++line_no;
      }
    }
  io::write_file(out.events_path, event_text);

  // embeddings: concatenate per-part blocks in video order
  std::vector<embed::IndexEntry> index;
  std::int64_t row = 0;
  Eigen::Index total_rows = 0;
  for (const auto& block : blocks) total_rows += static_cast<Eigen::Index>(block.grid.size());
  std::vector<std::pair<embed::PartSpec, embed::RowMatrixF>> parts;
  for (const auto& part : part_defs()) {
    embed::RowMatrixF m(total_rows, cfg.dims_per_part);
    Eigen::Index at = 0;
    for (const auto& block : blocks) {
      const auto& b = block.emb.at(part.name);
      m.middleRows(at, b.rows()) = b;
      at += b.rows();
    }
    parts.push_back({{part.name, cfg.dims_per_part, std::string(part.name) + ".f32"}, std::move(m)});
  }
  for (const auto& block : blocks)
    for (int t : block.grid) index.push_back({block.truth.video_id, t, row++});
  embed::write_manifest(out.manifest_path, parts, index);

  std::vector<ctml::CTMLRecord> records;
  for (const auto& block : blocks)
    records.insert(records.end(), block.records.begin(), block.records.end());
  ctml::write_records(out.records_path, records);

  for (const auto& block : blocks) {
    truth.videos.push_back(block.truth);
    truth.sessions.insert(truth.sessions.end(), block.sessions.begin(), block.sessions.end());
  }

  // ground-truth files
  std::string tv;
  for (const auto& v : truth.videos) {
    ojson tracks = ojson::object();
    for (const auto& [key, segs] : v.tracks) {
      ojson arr = ojson::array();
      for (const auto& s : segs) arr.push_back(ojson::array({s.start, s.len, s.value}));
      tracks[key] = std::move(arr);
    }
    auto series = [](const Eigen::VectorXd& x) {
      ojson arr = ojson::array();
      for (Eigen::Index i = 0; i < x.size(); ++i) arr.push_back(io::round_sig9(x(i)));
      return arr;
    };
    ojson line{{"video_id", v.video_id},   {"duration_s", v.duration_s},
               {"field", v.field},         {"course_id", v.course_id},
               {"hotspot_t", v.hotspot_t}, {"tracks", std::move(tracks)},
               {"pause_hazard", series(v.pause_hazard)},
               {"rewind_hazard", series(v.rewind_hazard)}};
    tv += line.dump();
    tv += '\n';
  }
  io::write_file(out.truth_videos_path, tv);

  std::string ts;
  for (const auto& s : truth.sessions) {
    ojson ivs = ojson::array();
    for (const auto& iv : s.intervals) ivs.push_back(ojson::array({iv.a, iv.b}));
    ojson line{{"user_id", s.user_id}, {"video_id", s.video_id}, {"intervals", std::move(ivs)}};
    ts += line.dump();
    ts += '\n';
  }
  io::write_file(out.truth_sessions_path, ts);

  ojson corr = ojson::array();
  for (const auto& c : truth.corruptions)
    corr.push_back(ojson{{"line", c.line}, {"kind", c.kind}});
  ojson pairs = ojson::array();
  for (const auto& [a, b] : truth.duplicate_pairs) pairs.push_back(ojson::array({a, b}));
  ojson corpus{{"duplicate_pairs", std::move(pairs)},
               {"corruptions", std::move(corr)},
               {"event_lines", truth.event_lines},
               {"videos", cfg.n_videos},
               {"sessions", static_cast<std::int64_t>(truth.sessions.size())}};
  io::write_file(out.truth_corpus_path, corpus.dump(2) + "\n");

  return out;
}

GroundTruth read_ground_truth(const std::filesystem::path& truth_videos_path,
                              const std::filesystem::path& truth_sessions_path,
                              const std::filesystem::path& truth_corpus_path) {
  GroundTruth out;
  io::for_each_line(truth_videos_path, [&](std::size_t line_no, std::string_view line) {
    ojson j = ojson::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError("truth videos line " + std::to_string(line_no + 1) + ": not valid JSON");
    VideoTruth v;
    v.video_id = j.at("video_id").get<std::string>();
    v.duration_s = j.at("duration_s").get<int>();
    v.field = j.at("field").get<std::string>();
    v.course_id = j.at("course_id").get<std::string>();
    v.hotspot_t = j.at("hotspot_t").get<int>();
    for (const auto& [key, arr] : j.at("tracks").items()) {
      auto& segs = v.tracks[key];
      for (const auto& s : arr) segs.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
    }
    auto series = [&](const char* key) {
      const auto& arr = j.at(key);
      Eigen::VectorXd x(static_cast<Eigen::Index>(arr.size()));
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = arr[static_cast<std::size_t>(i)].get<double>();
      return x;
    };
    v.pause_hazard = series("pause_hazard");
    v.rewind_hazard = series("rewind_hazard");
    out.videos.push_back(std::move(v));
  });
  io::for_each_line(truth_sessions_path, [&](std::size_t line_no, std::string_view line) {
    ojson j = ojson::parse(line, nullptr, false);
    if (j.is_discarded())
      throw DataError("truth sessions line " + std::to_string(line_no + 1) + ": not valid JSON");
    SessionTruth s;
    s.user_id = j.at("user_id").get<std::string>();
    s.video_id = j.at("video_id").get<std::string>();
    for (const auto& iv : j.at("intervals"))
      s.intervals.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
    out.sessions.push_back(std::move(s));
  });
  ojson corpus = ojson::parse(io::read_file(truth_corpus_path));
  for (const auto& p : corpus.at("duplicate_pairs"))
    out.duplicate_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  for (const auto& c : corpus.at("corruptions"))
    out.corruptions.push_back({c.at("line").get<std::int64_t>(), c.at("kind").get<std::string>()});
  out.event_lines = corpus.at("event_lines").get<std::int64_t>();
  return out;
}

// ---------------------------------------------------------------- oracle

std::vector<Conformance> oracle_metrics(const GroundTruth& truth,
                                        const std::filesystem::path& events_path,
                                        const std::filesystem::path& metas_path) {
  std::vector<Conformance> out;
  auto fail_rest = [&](const std::string& why) {
    for (const char* name : {"ingest_counters", "interval_reconstruction", "hotspot_recovery",
                             "label_concept_correlation"})
      out.push_back({name, false, why});
  };

  if (!std::filesystem::exists(metas_path)) {
    out.push_back({"metas_present", false, "missing file: " + metas_path.string()});
    fail_rest("video metadata missing");
    return out;
  }
  out.push_back({"metas_present", true, ""});
  if (!std::filesystem::exists(events_path)) {
    out.push_back({"events_present", false, "missing file: " + events_path.string()});
    fail_rest("event log missing");
    return out;
  }
  out.push_back({"events_present", true, ""});

  auto metas = events::read_video_metas(metas_path);
  events::ParseConfig pc;
  for (const auto& m : metas) pc.durations[m.video_id] = m.duration_s;
  auto parsed = events::parse_event_log(events_path, pc);

  // exact corruption accounting
  {
    std::size_t malformed = 0, zero_seek = 0, out_of_range = 0, unknown = 0;
    for (const auto& c : truth.corruptions) {
      if (c.kind == "malformed" || c.kind == "truncated") ++malformed;
      else if (c.kind == "zero_seek") ++zero_seek;
      else if (c.kind == "out_of_range") ++out_of_range;
      else if (c.kind == "unknown_video") ++unknown;
    }
    const auto& r = parsed.report;
    const bool ok = r.accepted == static_cast<std::size_t>(truth.event_lines) &&
                    r.dropped_malformed == malformed && r.dropped_zero_seek == zero_seek &&
                    r.dropped_out_of_range == out_of_range && r.dropped_unknown_video == unknown;
    out.push_back({"ingest_counters", ok,
                   "accepted " + std::to_string(r.accepted) + "/" +
                       std::to_string(truth.event_lines) + ", dropped " +
                       std::to_string(r.dropped_total()) + " vs " +
                       std::to_string(truth.corruptions.size()) + " planted"});
  }

  auto canon = events::dedupe_videos(metas);
  events::canonicalize(parsed.events, metas, canon);
  std::map<std::string, int> durations;
  std::map<std::string, events::VideoMeta> meta_of;
  for (const auto& m : metas) {
    durations[m.video_id] = m.duration_s;
    meta_of[m.video_id] = m;
  }

  std::map<std::pair<std::string, std::string>, std::vector<events::Event>> by_session;
  std::map<std::string, std::vector<events::Event>> by_video;
  for (const auto& e : parsed.events) {
    by_session[{e.user_id, e.video_id}].push_back(e);
    by_video[e.video_id].push_back(e);
  }

  // session reconstruction against intended intervals
  {
    std::size_t bad = 0, missing = 0;
    for (const auto& s : truth.sessions) {
      auto canon_it = canon.find(s.video_id);
      const std::string vid = canon_it == canon.end() ? s.video_id : canon_it->second;
      auto it = by_session.find({s.user_id, vid});
      if (it == by_session.end()) {
        ++missing;
        continue;
      }
      auto rec = signals::reconstruct_playback(it->second, durations.at(vid));
      bool match = rec.size() == s.intervals.size();
      for (std::size_t i = 0; match && i < rec.size(); ++i)
        match = std::abs(rec[i].a - s.intervals[i].a) <= 1.0 &&
                std::abs(rec[i].b - s.intervals[i].b) <= 1.0;
      if (!match) ++bad;
    }
    out.push_back({"interval_reconstruction", bad == 0 && missing == 0,
                   std::to_string(bad) + " mismatched, " + std::to_string(missing) +
                       " missing of " + std::to_string(truth.sessions.size()) + " sessions"});
  }

  // hotspot recovery via top-5% pause labels
  {
    std::size_t n_hot = 0, hits = 0;
    for (const auto& v : truth.videos) {
      if (v.hotspot_t < 0) continue;
      ++n_hot;
      auto it = by_video.find(v.video_id);
      if (it == by_video.end()) continue;
      auto vs = signals::build_video_signals(it->second, meta_of.at(v.video_id), {5});
      const auto& bits = vs.labels.at(5)[static_cast<std::size_t>(signals::SignalKind::PausedAt)];
      for (std::size_t i = 0; i < bits.size(); ++i) {
        const int t = vs.t0 + static_cast<int>(i);
        if (bits[i] == 1 && t >= v.hotspot_t - 5 && t <= v.hotspot_t + 9) {
          ++hits;
          break;
        }
      }
    }
    if (n_hot == 0)
      out.push_back({"hotspot_recovery", true, "no hotspot videos"});
    else
      out.push_back({"hotspot_recovery", hits * 5 >= n_hot * 4,
                     std::to_string(hits) + "/" + std::to_string(n_hot) + " recovered"});
  }

  // labels track the concept driver of the pause hazard
  {
    std::vector<double> bits, driver;
    for (const auto& v : truth.videos) {
      if (v.hotspot_t >= 0) continue;
      auto it = by_video.find(v.video_id);
      if (it == by_video.end()) continue;
      auto vs = signals::build_video_signals(it->second, meta_of.at(v.video_id), {5});
      const auto& lab = vs.labels.at(5)[static_cast<std::size_t>(signals::SignalKind::PausedAt)];
      for (std::size_t i = 0; i < lab.size(); ++i) {
        const int t = vs.t0 + static_cast<int>(i);
        bits.push_back(double(lab[i]));
        driver.push_back(std::log(v.pause_hazard(t)));
      }
    }
    const double r = pearson(bits, driver);
    char buf[64];
    std::snprintf(buf, sizeof buf, "point-biserial r = %.3f", r);
    out.push_back({"label_concept_correlation", r >= 0.3, buf});
  }

  return out;
}

}  // namespace vip::synth
