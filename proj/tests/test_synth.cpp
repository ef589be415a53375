#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "vip/embedstore.hpp"
#include "vip/io.hpp"
#include "vip/synth.hpp"

using namespace vip;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vip_synth_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) { return io::read_file(p); }

// small corpus that still exercises twins, corruption and hotspots
synth::SynthConfig small_config() {
  synth::SynthConfig cfg;
  cfg.n_videos = 8;
  cfg.duration_min_s = 240;
  cfg.duration_max_s = 300;
  cfg.n_learners = 60;
  cfg.n_courses = 4;
  cfg.corruption_rate = 0.002;
  cfg.duplicate_fraction = 0.3;  // 2 twins
  cfg.hotspot_every = 7;         // videos 0 and 7
  cfg.dims_per_part = 4;
  cfg.seed = 11;
  return cfg;
}

const synth::Conformance& check_named(const std::vector<synth::Conformance>& checks,
                                      const std::string& name) {
  for (const auto& c : checks)
    if (c.check == name) return c;
  REQUIRE(false);
  static synth::Conformance none;
  return none;
}

}  // namespace

TEST_CASE("config validation rejects out-of-contract settings") {
  auto dir = fresh_dir("cfg");
  synth::SynthConfig cfg;
  cfg.n_videos = 1;
  cfg.n_learners = 1;

  SUBCASE("too-short durations") {
    cfg.duration_min_s = 100;
    cfg.duration_max_s = 100;
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
  SUBCASE("inverted duration range") {
    cfg.duration_min_s = 300;
    cfg.duration_max_s = 240;
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
  SUBCASE("unknown effect concept") {
    cfg.pause_effects["mystery_feature"] = 1.0;
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
  SUBCASE("corruption rate at one") {
    cfg.corruption_rate = 1.0;
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
  SUBCASE("p_open zero") {
    cfg.p_open = 0.0;
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
  SUBCASE("negative noise") {
    cfg.noise_scale = -0.1;
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
  SUBCASE("empty fields") {
    cfg.fields.clear();
    CHECK_THROWS_AS(synth::generate(cfg, dir), ConfigError);
  }
}

TEST_CASE("concept tracks tile the duration with in-range levels") {
  Rng rng(7);
  const int d = 317;
  auto tracks = synth::draw_tracks(rng, d);
  CHECK(tracks.size() == ctml::feature_table().size());
  for (const auto& spec : ctml::feature_table()) {
    const auto& segs = tracks.at(spec.key);
    REQUIRE(!segs.empty());
    int t = 0;
    for (const auto& seg : segs) {
      CHECK(seg.start == t);
      CHECK(seg.len >= 1);
      if (spec.type == ctml::FeatureType::Binary) {
        CHECK(seg.value >= 0);
        CHECK(seg.value <= 1);
      } else {
        CHECK(seg.value >= 1);
        CHECK(seg.value <= spec.levels);
      }
      t += seg.len;
    }
    CHECK(t == d);
    // concept_value agrees with the segment walk at every second
    for (int q = 0; q < d; ++q) {
      int expect = 0;
      for (const auto& seg : segs)
        if (q >= seg.start && q < seg.start + seg.len) expect = seg.value;
      CHECK(synth::concept_value(segs, q) == expect);
    }
  }
  // binary tracks alternate state between adjacent segments
  const auto& vb = tracks.at("visual_breakpoint");
  for (std::size_t i = 1; i < vb.size(); ++i) CHECK(vb[i].value != vb[i - 1].value);
}

TEST_CASE("concept_norm maps binaries as-is and ordinals onto [0, 1]") {
  CHECK(synth::concept_norm("formula", 0) == 0.0);
  CHECK(synth::concept_norm("formula", 1) == 1.0);
  CHECK(synth::concept_norm("visual_complexity", 1) == 0.0);
  CHECK(synth::concept_norm("visual_complexity", 3) == doctest::Approx(0.5));
  CHECK(synth::concept_norm("visual_complexity", 5) == 1.0);
}

TEST_CASE("hazard series: zero effects give a flat base rate") {
  synth::SynthConfig cfg;
  cfg.pause_effects.clear();
  cfg.rewind_effects.clear();
  Rng rng(3);
  auto tracks = synth::draw_tracks(rng, 250);
  auto hp = synth::hazard_series(cfg, tracks, 250, -1, true);
  auto hr = synth::hazard_series(cfg, tracks, 250, -1, false);
  for (int t = 0; t < 250; ++t) {
    CHECK(hp(t) == cfg.base_pause);
    CHECK(hr(t) == cfg.base_rewind);
  }
}

TEST_CASE("hazard series: raising one effect increases hazard exactly where active") {
  synth::SynthConfig lo, hi;
  hi.pause_effects["visual_breakpoint"] = lo.pause_effects.at("visual_breakpoint") + 0.4;
  Rng rng(5);
  auto tracks = synth::draw_tracks(rng, 300);
  auto a = synth::hazard_series(lo, tracks, 300, -1, true);
  auto b = synth::hazard_series(hi, tracks, 300, -1, true);
  int raised = 0;
  for (int t = 0; t < 300; ++t) {
    if (synth::concept_value(tracks.at("visual_breakpoint"), t) == 1) {
      CHECK(b(t) > a(t));
      ++raised;
    } else {
      CHECK(b(t) == a(t));
    }
  }
  CHECK(raised > 0);
  CHECK(raised < 300);
}

TEST_CASE("hazard series: hotspot videos trade concepts for a flat 12x window") {
  synth::SynthConfig cfg;
  Rng rng(9);
  auto tracks = synth::draw_tracks(rng, 280);
  auto hp = synth::hazard_series(cfg, tracks, 280, 100, true);
  auto hr = synth::hazard_series(cfg, tracks, 280, 100, false);
  for (int t = 0; t < 280; ++t) {
    if (t >= 100 && t < 105)
      CHECK(hp(t) == doctest::Approx(12.0 * cfg.base_pause));
    else
      CHECK(hp(t) == cfg.base_pause);
    CHECK(hr(t) == cfg.base_rewind);  // rewind keeps the flat base everywhere
  }
}

TEST_CASE("generation is bitwise deterministic across reruns and thread counts") {
  auto cfg = small_config();
  auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
  auto o1 = synth::generate(cfg, d1, 1);
  auto o2 = synth::generate(cfg, d2, 3);
  for (auto pick : {&synth::SynthOutput::events_path, &synth::SynthOutput::metas_path,
                    &synth::SynthOutput::records_path, &synth::SynthOutput::truth_videos_path,
                    &synth::SynthOutput::truth_sessions_path, &synth::SynthOutput::truth_corpus_path}) {
    CHECK(slurp(o1.*pick) == slurp(o2.*pick));
  }
  // embedding tensors as well, via the manifest's own part files
  auto m1 = embed::EmbeddingManifest::open(o1.manifest_path);
  auto m2 = embed::EmbeddingManifest::open(o2.manifest_path);
  REQUIRE(m1.parts().size() == m2.parts().size());
  REQUIRE(m1.row_count() == m2.row_count());
  std::vector<std::int64_t> all_rows(std::size_t(m1.row_count()));
  for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = std::int64_t(i);
  for (const auto& part : m1.parts()) {
    auto a = m1.assemble_rows({part.name}, all_rows);
    auto b = m2.assemble_rows({part.name}, all_rows);
    CHECK((a.array() == b.array()).all());
  }
}

TEST_CASE("corpus structure: twins, parts, grid index, machine records") {
  auto cfg = small_config();
  auto dir = fresh_dir("shape");
  auto out = synth::generate(cfg, dir, 2);
  const auto& truth = out.truth;

  CHECK(truth.videos.size() == 8);
  CHECK(truth.duplicate_pairs.size() == 2);  // round(0.3 * 8)

  auto metas = events::read_video_metas(out.metas_path);
  CHECK(metas.size() == 10);
  std::map<std::string, events::VideoMeta> by_id;
  for (const auto& m : metas) by_id[m.video_id] = m;
  for (const auto& [orig, twin] : truth.duplicate_pairs) {
    REQUIRE(by_id.count(orig) == 1);
    REQUIRE(by_id.count(twin) == 1);
    CHECK(by_id.at(orig).duration_s == by_id.at(twin).duration_s);
    CHECK(by_id.at(orig).checksum == by_id.at(twin).checksum);
    // the canonical survivor of each twin pair is the original
    auto canon = events::dedupe_videos(metas);
    CHECK(canon.at(twin) == orig);
    CHECK(canon.at(orig) == orig);
  }

  auto manifest = embed::EmbeddingManifest::open(out.manifest_path);
  REQUIRE(manifest.parts().size() == 6);
  std::set<std::string> names;
  for (const auto& p : manifest.parts()) {
    names.insert(p.name);
    CHECK(p.dim == cfg.dims_per_part);
  }
  CHECK(names == std::set<std::string>{"transcript", "slide", "frames_sparse", "vlm_layer_1",
                                       "vlm_layer_32", "vlm_layer_64"});

  // index covers exactly the moment grid of each original video
  std::size_t expected_rows = 0;
  for (const auto& v : truth.videos) expected_rows += std::size_t((v.duration_s - 60) / 5 + 1);
  CHECK(std::size_t(manifest.row_count()) == expected_rows);
  for (const auto& v : truth.videos) {
    CHECK(manifest.has(v.video_id, 30));
    const int last = 30 + 5 * ((v.duration_s - 60) / 5);
    CHECK(manifest.has(v.video_id, last));
    CHECK(!manifest.has(v.video_id, last + 5));
  }

  // machine ratings at the same grid, all valid
  auto records = ctml::read_records(out.records_path);
  CHECK(records.size() == expected_rows);
  for (const auto& r : records) {
    CHECK(r.coder == ctml::Coder::Machine);
    CHECK(r.values.size() == ctml::feature_table().size());
  }

  // at least one learner actually watched a twin id
  bool twin_watched = false;
  for (const auto& s : truth.sessions)
    for (const auto& [orig, twin] : truth.duplicate_pairs)
      if (s.video_id == twin) twin_watched = true;
  CHECK(twin_watched);
}

TEST_CASE("embeddings linearly encode the active concepts per part mask") {
  // with noise off, the transcript part must be an exact linear function of
  // its four features, so moments with identical feature values coincide
  auto cfg = small_config();
  cfg.noise_scale = 0.0;
  cfg.corruption_rate = 0.0;
  cfg.duplicate_fraction = 0.0;
  cfg.hotspot_every = 0;
  cfg.n_videos = 2;
  cfg.n_learners = 1;
  auto dir = fresh_dir("linear");
  auto out = synth::generate(cfg, dir, 1);
  auto manifest = embed::EmbeddingManifest::open(out.manifest_path);
  auto records = ctml::read_records(out.records_path);
  const char* keys[] = {"signaling", "interactivity", "semantic_breakpoint", "redundancy"};

  REQUIRE(std::size_t(manifest.row_count()) == records.size());
  std::map<std::string, std::int64_t> seen;  // feature signature -> first row
  int coincident = 0;
  for (const auto& rec : records) {
    REQUIRE(manifest.has(rec.video_id, rec.t));
    const std::int64_t row = manifest.row_for(rec.video_id, rec.t);
    std::string sig;
    for (const char* k : keys) sig += std::to_string(rec.values.at(k)) + ",";
    auto [it, fresh] = seen.emplace(sig, row);
    if (!fresh) {
      ++coincident;
      const auto a = manifest.part_row("transcript", row);
      const auto b = manifest.part_row("transcript", it->second);
      CHECK((a - b).norm() == doctest::Approx(0.0));
    }
  }
  CHECK(coincident > 0);  // the signature space is tiny, collisions must occur
}

TEST_CASE("oracle passes a clean mid-size corpus end to end") {
  synth::SynthConfig cfg;
  cfg.n_videos = 12;
  cfg.duration_min_s = 240;
  cfg.duration_max_s = 330;
  cfg.n_learners = 150;
  cfg.n_courses = 3;
  cfg.corruption_rate = 0.001;
  cfg.duplicate_fraction = 0.2;
  cfg.hotspot_every = 6;  // videos 0 and 6
  cfg.dims_per_part = 4;
  cfg.seed = 20240901;
  auto dir = fresh_dir("oracle");
  auto out = synth::generate(cfg, dir, 3);

  CHECK(!out.truth.corruptions.empty());
  auto checks = synth::oracle_metrics(out.truth, out.events_path, out.metas_path);
  for (const auto& c : checks) {
    INFO(c.check << ": " << c.detail);
    CHECK(c.pass);
  }
  CHECK(checks.size() == 6);
}

TEST_CASE("oracle counters match planted corruption classes exactly") {
  synth::SynthConfig cfg;
  cfg.n_videos = 4;
  cfg.n_learners = 80;
  cfg.n_courses = 2;
  cfg.corruption_rate = 0.01;
  cfg.seed = 5;
  auto dir = fresh_dir("corrupt");
  auto out = synth::generate(cfg, dir, 1);
  REQUIRE(out.truth.corruptions.size() > 10);

  // each recorded line index holds a line that fails to round-trip
  std::vector<std::string> lines;
  io::for_each_line(out.events_path, [&](std::size_t, std::string_view l) {
    lines.emplace_back(l);
  });
  std::set<std::int64_t> bad_lines;
  for (const auto& c : out.truth.corruptions) {
    REQUIRE(c.line >= 0);
    REQUIRE(std::size_t(c.line) < lines.size());
    bad_lines.insert(c.line);
  }
  CHECK(bad_lines.size() == out.truth.corruptions.size());
  CHECK(lines.size() == std::size_t(out.truth.event_lines) + bad_lines.size());

  auto checks = synth::oracle_metrics(out.truth, out.events_path, out.metas_path);
  const auto& ingest = check_named(checks, "ingest_counters");
  INFO(ingest.detail);
  CHECK(ingest.pass);

  // flipping one genuine line to garbage must break the exact accounting
  std::size_t genuine = 0;
  while (bad_lines.count(std::int64_t(genuine))) ++genuine;
  lines[genuine] = "{broken";
  std::string text;
  for (const auto& l : lines) {
    text += l;
    text += '\n';
  }
  io::write_file(dir / "tampered.log", text);
  auto tampered = synth::oracle_metrics(out.truth, dir / "tampered.log", out.metas_path);
  CHECK(!check_named(tampered, "ingest_counters").pass);
}

TEST_CASE("oracle reports missing inputs as named failures instead of throwing") {
  auto cfg = small_config();
  cfg.n_videos = 2;
  cfg.n_learners = 5;
  auto dir = fresh_dir("missing");
  auto out = synth::generate(cfg, dir, 1);

  auto no_events = synth::oracle_metrics(out.truth, dir / "absent.log", out.metas_path);
  CHECK(!check_named(no_events, "events_present").pass);
  CHECK(!check_named(no_events, "interval_reconstruction").pass);

  auto no_metas = synth::oracle_metrics(out.truth, out.events_path, dir / "absent.meta");
  CHECK(!check_named(no_metas, "metas_present").pass);
  CHECK(!check_named(no_metas, "label_concept_correlation").pass);
}

TEST_CASE("ground truth files round-trip") {
  auto cfg = small_config();
  cfg.n_videos = 3;
  cfg.n_learners = 20;
  auto dir = fresh_dir("roundtrip");
  auto out = synth::generate(cfg, dir, 1);
  auto re = synth::read_ground_truth(out.truth_videos_path, out.truth_sessions_path,
                                     out.truth_corpus_path);

  REQUIRE(re.videos.size() == out.truth.videos.size());
  for (std::size_t i = 0; i < re.videos.size(); ++i) {
    const auto& a = out.truth.videos[i];
    const auto& b = re.videos[i];
    CHECK(a.video_id == b.video_id);
    CHECK(a.duration_s == b.duration_s);
    CHECK(a.field == b.field);
    CHECK(a.course_id == b.course_id);
    CHECK(a.hotspot_t == b.hotspot_t);
    CHECK(a.tracks.size() == b.tracks.size());
    for (const auto& [key, segs] : a.tracks) {
      const auto& other = b.tracks.at(key);
      REQUIRE(segs.size() == other.size());
      for (std::size_t k = 0; k < segs.size(); ++k) {
        CHECK(segs[k].start == other[k].start);
        CHECK(segs[k].len == other[k].len);
        CHECK(segs[k].value == other[k].value);
      }
    }
    REQUIRE(a.pause_hazard.size() == b.pause_hazard.size());
    for (Eigen::Index t = 0; t < a.pause_hazard.size(); ++t) {
      CHECK(b.pause_hazard(t) == doctest::Approx(a.pause_hazard(t)).epsilon(1e-8));
      CHECK(b.rewind_hazard(t) == doctest::Approx(a.rewind_hazard(t)).epsilon(1e-8));
    }
  }
  REQUIRE(re.sessions.size() == out.truth.sessions.size());
  for (std::size_t i = 0; i < re.sessions.size(); ++i) {
    CHECK(re.sessions[i].user_id == out.truth.sessions[i].user_id);
    CHECK(re.sessions[i].video_id == out.truth.sessions[i].video_id);
    REQUIRE(re.sessions[i].intervals.size() == out.truth.sessions[i].intervals.size());
  }
  CHECK(re.duplicate_pairs == out.truth.duplicate_pairs);
  CHECK(re.event_lines == out.truth.event_lines);
  REQUIRE(re.corruptions.size() == out.truth.corruptions.size());
  for (std::size_t i = 0; i < re.corruptions.size(); ++i) {
    CHECK(re.corruptions[i].line == out.truth.corruptions[i].line);
    CHECK(re.corruptions[i].kind == out.truth.corruptions[i].kind);
  }
}

TEST_CASE("session wall times are strictly increasing per user") {
  auto cfg = small_config();
  cfg.n_videos = 4;
  cfg.n_learners = 30;
  cfg.corruption_rate = 0.0;
  auto dir = fresh_dir("walltime");
  auto out = synth::generate(cfg, dir, 1);
  auto metas = events::read_video_metas(out.metas_path);
  events::ParseConfig pc;
  for (const auto& m : metas) pc.durations[m.video_id] = m.duration_s;
  auto parsed = events::parse_event_log(out.events_path, pc);
  CHECK(parsed.report.dropped_total() == 0);
  std::map<std::string, std::int64_t> last;
  for (const auto& e : parsed.events) {
    auto it = last.find(e.user_id);
    if (it != last.end()) CHECK(e.wall_time_ms > it->second);
    last[e.user_id] = e.wall_time_ms;
  }
}
