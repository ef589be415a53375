// Pipeline driver: one config, nine subcommands, deterministic artifacts
// versioned by a hash of the effective configuration.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vip/coder.hpp"
#include "vip/ctml.hpp"
#include "vip/embedstore.hpp"
#include "vip/eval.hpp"
#include "vip/events.hpp"
#include "vip/io.hpp"
#include "vip/model.hpp"
#include "vip/signals.hpp"
#include "vip/synth.hpp"
#include "vip/tcav.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using vip::ConfigError;
using vip::DataError;
using vip::io::ojson;

namespace {

// --------------------------------------------------------------- run config

struct RunConfig {
  // paths
  std::string events, metadata, manifest, concepts, adjudicated, code_requests;
  std::string out_dir = "out";
  // protocol
  std::vector<int> k_percents = {5, 10, 20};
  std::vector<std::string> parts;  // empty: every manifest part, manifest order
  std::string signal = "paused_at";
  int top_percent = 10;
  int trim_s = 30;
  int subsample_interval_s = 5;
  int lift_percent = 10;
  bool lift_per_video = false;
  // split
  std::string split_kind = "course_grouped";
  double test_fraction = 0.10;
  std::string holdout_field;
  // train
  vip::model::TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  // tcav
  std::vector<std::string> tcav_concepts;
  int tcav_repetitions = 25;
  int tcav_max_examples = 500;
  int tcav_bonferroni_m = 150;
  double tcav_alpha = 0.05;
  // coder endpoint
  vip::coder::EndpointConfig endpoint;
  std::vector<std::string> agreement_between = {"machine", "adjudicated"};
  // synth
  vip::synth::SynthConfig synth;

  std::uint64_t seed = 0;
  int threads = 1;
};

void reject_unknown(const ojson& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key \"" + key + "\" in " + where);
}

template <typename T>
void maybe(const ojson& j, const char* key, T* out) {
  auto it = j.find(key);
  if (it != j.end()) *out = it->get<T>();
}

void load_config_file(const fs::path& path, RunConfig* cfg) {
  ojson j = ojson::parse(vip::io::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError("config: " + path.string() + " is not a JSON object");
  reject_unknown(j, {"paths", "protocol", "split", "train", "tcav", "coder", "agreement",
                     "synth", "seed", "threads"},
                 "the top level");

  if (auto p = j.find("paths"); p != j.end()) {
    reject_unknown(*p, {"events", "metadata", "manifest", "concepts", "adjudicated",
                        "code_requests", "out_dir"},
                   "paths");
    maybe(*p, "events", &cfg->events);
    maybe(*p, "metadata", &cfg->metadata);
    maybe(*p, "manifest", &cfg->manifest);
    maybe(*p, "concepts", &cfg->concepts);
    maybe(*p, "adjudicated", &cfg->adjudicated);
    maybe(*p, "code_requests", &cfg->code_requests);
    maybe(*p, "out_dir", &cfg->out_dir);
  }
  if (auto p = j.find("protocol"); p != j.end()) {
    reject_unknown(*p, {"k_percents", "parts", "signal", "top_percent", "trim_s",
                        "subsample_interval_s", "lift_percent", "lift_per_video"},
                   "protocol");
    maybe(*p, "k_percents", &cfg->k_percents);
    maybe(*p, "parts", &cfg->parts);
    maybe(*p, "signal", &cfg->signal);
    maybe(*p, "top_percent", &cfg->top_percent);
    maybe(*p, "trim_s", &cfg->trim_s);
    maybe(*p, "subsample_interval_s", &cfg->subsample_interval_s);
    maybe(*p, "lift_percent", &cfg->lift_percent);
    maybe(*p, "lift_per_video", &cfg->lift_per_video);
  }
  if (auto p = j.find("split"); p != j.end()) {
    reject_unknown(*p, {"kind", "test_fraction", "holdout_field"}, "split");
    maybe(*p, "kind", &cfg->split_kind);
    maybe(*p, "test_fraction", &cfg->test_fraction);
    maybe(*p, "holdout_field", &cfg->holdout_field);
  }
  if (auto p = j.find("train"); p != j.end()) {
    reject_unknown(*p, {"hidden", "dropout", "use_reference", "weight_share", "lr", "batch_size",
                        "max_epochs", "patience", "val_fraction", "seeds"},
                   "train");
    maybe(*p, "hidden", &cfg->train.head.hidden);
    maybe(*p, "dropout", &cfg->train.head.dropout);
    maybe(*p, "use_reference", &cfg->train.head.use_reference);
    maybe(*p, "weight_share", &cfg->train.head.weight_share);
    maybe(*p, "lr", &cfg->train.lr);
    maybe(*p, "batch_size", &cfg->train.batch_size);
    maybe(*p, "max_epochs", &cfg->train.max_epochs);
    maybe(*p, "patience", &cfg->train.patience);
    maybe(*p, "val_fraction", &cfg->train.val_fraction);
    maybe(*p, "seeds", &cfg->seeds);
  }
  if (auto p = j.find("tcav"); p != j.end()) {
    reject_unknown(*p, {"concepts", "repetitions", "max_examples", "bonferroni_m", "alpha"},
                   "tcav");
    maybe(*p, "concepts", &cfg->tcav_concepts);
    maybe(*p, "repetitions", &cfg->tcav_repetitions);
    maybe(*p, "max_examples", &cfg->tcav_max_examples);
    maybe(*p, "bonferroni_m", &cfg->tcav_bonferroni_m);
    maybe(*p, "alpha", &cfg->tcav_alpha);
  }
  if (auto p = j.find("coder"); p != j.end()) {
    reject_unknown(*p, {"base_url", "model", "auth_env", "max_concurrency", "retry_budget",
                        "timeout_seconds", "backoff_initial_ms"},
                   "coder");
    maybe(*p, "base_url", &cfg->endpoint.base_url);
    maybe(*p, "model", &cfg->endpoint.model);
    maybe(*p, "auth_env", &cfg->endpoint.auth_env);
    maybe(*p, "max_concurrency", &cfg->endpoint.max_concurrency);
    maybe(*p, "retry_budget", &cfg->endpoint.retry_budget);
    maybe(*p, "timeout_seconds", &cfg->endpoint.timeout_seconds);
    maybe(*p, "backoff_initial_ms", &cfg->endpoint.backoff_initial_ms);
  }
  if (auto p = j.find("agreement"); p != j.end()) {
    reject_unknown(*p, {"between"}, "agreement");
    maybe(*p, "between", &cfg->agreement_between);
  }
  if (auto p = j.find("synth"); p != j.end()) {
    reject_unknown(*p, {"n_videos", "duration_min_s", "duration_max_s", "n_learners", "n_courses",
                        "fields", "pause_effects", "rewind_effects", "dims_per_part",
                        "noise_scale", "corruption_rate", "duplicate_fraction", "hotspot_every",
                        "p_open", "base_pause", "base_rewind", "base_skip", "quit_hazard",
                        "resume_after_pause"},
                   "synth");
    auto& s = cfg->synth;
    maybe(*p, "n_videos", &s.n_videos);
    maybe(*p, "duration_min_s", &s.duration_min_s);
    maybe(*p, "duration_max_s", &s.duration_max_s);
    maybe(*p, "n_learners", &s.n_learners);
    maybe(*p, "n_courses", &s.n_courses);
    maybe(*p, "fields", &s.fields);
    maybe(*p, "pause_effects", &s.pause_effects);
    maybe(*p, "rewind_effects", &s.rewind_effects);
    maybe(*p, "dims_per_part", &s.dims_per_part);
    maybe(*p, "noise_scale", &s.noise_scale);
    maybe(*p, "corruption_rate", &s.corruption_rate);
    maybe(*p, "duplicate_fraction", &s.duplicate_fraction);
    maybe(*p, "hotspot_every", &s.hotspot_every);
    maybe(*p, "p_open", &s.p_open);
    maybe(*p, "base_pause", &s.base_pause);
    maybe(*p, "base_rewind", &s.base_rewind);
    maybe(*p, "base_skip", &s.base_skip);
    maybe(*p, "quit_hazard", &s.quit_hazard);
    maybe(*p, "resume_after_pause", &s.resume_after_pause);
  }
  maybe(j, "seed", &cfg->seed);
  maybe(j, "threads", &cfg->threads);
}

void validate_config(const RunConfig& cfg) {
  for (int k : cfg.k_percents)
    if (k != 5 && k != 10 && k != 20)
      throw ConfigError("config: k_percents entries must be 5, 10 or 20");
  if (cfg.k_percents.empty()) throw ConfigError("config: k_percents is empty");
  bool has_top = false;
  for (int k : cfg.k_percents) has_top = has_top || k == cfg.top_percent;
  if (!has_top) throw ConfigError("config: top_percent must be one of k_percents");
  vip::signals::signal_from_name(cfg.signal);  // throws on unknown
  if (cfg.lift_percent < 1 || cfg.lift_percent > 100)
    throw ConfigError("config: lift_percent must be in [1, 100]");
  if (cfg.split_kind != "course_grouped" && cfg.split_kind != "field_holdout")
    throw ConfigError("config: split.kind must be course_grouped or field_holdout");
  if (cfg.split_kind == "field_holdout" && cfg.holdout_field.empty())
    throw ConfigError("config: field_holdout needs split.holdout_field");
  if (cfg.seeds.empty()) throw ConfigError("config: train.seeds is empty");
  if (cfg.trim_s < 0) throw ConfigError("config: trim_s must be >= 0");
  if (cfg.subsample_interval_s < 1)
    throw ConfigError("config: subsample_interval_s must be >= 1");
  if (cfg.threads < 1) throw ConfigError("config: threads must be >= 1");
  for (const auto& c : cfg.tcav_concepts) vip::ctml::feature(c);
}

// Every effective setting, in a fixed order.  Hashing this string names the
// run: any change in configuration lands in a fresh artifact directory.
ojson canonical_json(const RunConfig& cfg) {
  ojson j;
  j["paths"] = {{"events", cfg.events},           {"metadata", cfg.metadata},
                {"manifest", cfg.manifest},       {"concepts", cfg.concepts},
                {"adjudicated", cfg.adjudicated}, {"code_requests", cfg.code_requests},
                {"out_dir", cfg.out_dir}};
  j["protocol"] = {{"k_percents", cfg.k_percents},
                   {"parts", cfg.parts},
                   {"signal", cfg.signal},
                   {"top_percent", cfg.top_percent},
                   {"trim_s", cfg.trim_s},
                   {"subsample_interval_s", cfg.subsample_interval_s},
                   {"lift_percent", cfg.lift_percent},
                   {"lift_per_video", cfg.lift_per_video}};
  j["split"] = {{"kind", cfg.split_kind},
                {"test_fraction", cfg.test_fraction},
                {"holdout_field", cfg.holdout_field}};
  j["train"] = {{"hidden", cfg.train.head.hidden},
                {"dropout", cfg.train.head.dropout},
                {"use_reference", cfg.train.head.use_reference},
                {"weight_share", cfg.train.head.weight_share},
                {"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"max_epochs", cfg.train.max_epochs},
                {"patience", cfg.train.patience},
                {"val_fraction", cfg.train.val_fraction},
                {"seeds", cfg.seeds}};
  j["tcav"] = {{"concepts", cfg.tcav_concepts},
               {"repetitions", cfg.tcav_repetitions},
               {"max_examples", cfg.tcav_max_examples},
               {"bonferroni_m", cfg.tcav_bonferroni_m},
               {"alpha", cfg.tcav_alpha}};
  j["coder"] = {{"base_url", cfg.endpoint.base_url},
                {"model", cfg.endpoint.model},
                {"auth_env", cfg.endpoint.auth_env},
                {"max_concurrency", cfg.endpoint.max_concurrency},
                {"retry_budget", cfg.endpoint.retry_budget},
                {"timeout_seconds", cfg.endpoint.timeout_seconds},
                {"backoff_initial_ms", cfg.endpoint.backoff_initial_ms}};
  j["agreement"] = {{"between", cfg.agreement_between}};
  j["synth"] = {{"n_videos", cfg.synth.n_videos},
                {"duration_min_s", cfg.synth.duration_min_s},
                {"duration_max_s", cfg.synth.duration_max_s},
                {"n_learners", cfg.synth.n_learners},
                {"n_courses", cfg.synth.n_courses},
                {"fields", cfg.synth.fields},
                {"pause_effects", cfg.synth.pause_effects},
                {"rewind_effects", cfg.synth.rewind_effects},
                {"dims_per_part", cfg.synth.dims_per_part},
                {"noise_scale", cfg.synth.noise_scale},
                {"corruption_rate", cfg.synth.corruption_rate},
                {"duplicate_fraction", cfg.synth.duplicate_fraction},
                {"hotspot_every", cfg.synth.hotspot_every},
                {"p_open", cfg.synth.p_open},
                {"base_pause", cfg.synth.base_pause},
                {"base_rewind", cfg.synth.base_rewind},
                {"base_skip", cfg.synth.base_skip},
                {"quit_hazard", cfg.synth.quit_hazard},
                {"resume_after_pause", cfg.synth.resume_after_pause}};
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  return j;
}

std::string config_hash(const RunConfig& cfg) {
  return vip::io::hash_hex(vip::io::fnv1a64(canonical_json(cfg).dump()));
}

// ----------------------------------------------------------------- plumbing

struct Run {
  RunConfig cfg;
  std::string hash;
  fs::path dir;
};

Run open_run(const RunConfig& cfg) {
  Run run{cfg, config_hash(cfg), {}};
  run.dir = fs::path(cfg.out_dir) / ("run_" + run.hash);
  fs::create_directories(run.dir);
  ojson snapshot = canonical_json(cfg);
  snapshot["config_hash"] = run.hash;
  vip::io::write_file(run.dir / "config.json", snapshot.dump(2) + "\n");
  return run;
}

void write_artifact(const Run& run, const std::string& name, ojson body) {
  ojson out;
  out["config_hash"] = run.hash;
  for (auto& [key, value] : body.items()) out[key] = std::move(value);
  vip::io::write_file(run.dir / name, out.dump(2) + "\n");
}

ojson read_artifact(const Run& run, const std::string& name) {
  const fs::path path = run.dir / name;
  if (!fs::exists(path))
    throw ConfigError("missing artifact " + path.string() + "; run the producing subcommand first");
  ojson j = ojson::parse(vip::io::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw DataError("artifact " + path.string() + " is not valid JSON");
  const std::string hash = j.value("config_hash", std::string());
  if (hash != run.hash)
    throw DataError("artifact " + path.string() + " was produced by config " + hash +
                    ", current config is " + run.hash + "; refusing to merge");
  return j;
}

fs::path require_input(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("config: paths.") + what + " is not set");
  if (!fs::exists(path))
    throw ConfigError(std::string(what) + " file does not exist: " + path);
  return path;
}

struct Corpus {
  std::vector<vip::events::Event> events;
  std::vector<vip::events::VideoMeta> metas;
  vip::events::IngestReport report;
  std::map<std::string, std::string> canon;
  std::size_t metas_in = 0;
};

Corpus load_corpus(const RunConfig& cfg) {
  Corpus c;
  c.metas = vip::events::read_video_metas(require_input(cfg.metadata, "metadata"));
  c.metas_in = c.metas.size();
  vip::events::ParseConfig pc;
  for (const auto& m : c.metas) pc.durations[m.video_id] = m.duration_s;
  auto parsed = vip::events::parse_event_log(require_input(cfg.events, "events"), pc);
  c.events = std::move(parsed.events);
  c.report = parsed.report;
  c.canon = vip::events::dedupe_videos(c.metas);
  vip::events::canonicalize(c.events, c.metas, c.canon);
  return c;
}

std::vector<vip::signals::VideoSignals> load_archive(const Run& run) {
  const fs::path path = run.dir / "signals.jsonl";
  if (!fs::exists(path))
    throw ConfigError("missing artifact " + path.string() + "; run `signals` first");
  return vip::signals::read_signal_archive(path);
}

std::vector<vip::signals::Moment> all_moments(const std::vector<vip::signals::VideoSignals>& vs,
                                              int interval) {
  std::vector<vip::signals::Moment> out;
  for (const auto& v : vs) {
    auto m = vip::signals::subsample_moments(v, interval);
    out.insert(out.end(), m.begin(), m.end());
  }
  return out;
}

std::vector<std::string> resolve_parts(const RunConfig& cfg,
                                       const vip::embed::EmbeddingManifest& manifest) {
  if (!cfg.parts.empty()) return cfg.parts;
  std::vector<std::string> names;
  for (const auto& p : manifest.parts()) names.push_back(p.name);
  return names;
}

vip::eval::SplitConfig split_config(const RunConfig& cfg) {
  vip::eval::SplitConfig sc;
  sc.kind = cfg.split_kind == "field_holdout" ? vip::eval::SplitKind::FieldHoldout
                                              : vip::eval::SplitKind::CourseGrouped;
  sc.test_fraction = cfg.test_fraction;
  sc.holdout_field = cfg.holdout_field;
  sc.seed = cfg.seed;
  return sc;
}

// -------------------------------------------------------------- subcommands

int cmd_ingest(const Run& run) {
  Corpus c = load_corpus(run.cfg);
  std::size_t merged = 0;
  for (const auto& [id, canon_id] : c.canon)
    if (id != canon_id) ++merged;
  ojson j;
  j["total_lines"] = c.report.total_lines;
  j["accepted"] = c.report.accepted;
  j["dropped_malformed"] = c.report.dropped_malformed;
  j["dropped_zero_seek"] = c.report.dropped_zero_seek;
  j["dropped_out_of_range"] = c.report.dropped_out_of_range;
  j["dropped_unknown_video"] = c.report.dropped_unknown_video;
  j["videos_in"] = c.metas_in;
  j["videos_canonical"] = c.metas.size();
  j["videos_merged"] = merged;
  write_artifact(run, "ingest_report.json", std::move(j));
  std::printf("ingest: %zu events accepted, %zu dropped, %zu videos (%zu merged)\n",
              c.report.accepted, c.report.dropped_total(), c.metas.size(), merged);
  return 0;
}

int cmd_signals(const Run& run) {
  Corpus c = load_corpus(run.cfg);
  auto all = vip::signals::build_all_signals(c.events, c.metas, run.cfg.k_percents,
                                             run.cfg.trim_s, run.cfg.threads);
  vip::signals::write_signal_archive(run.dir / "signals.jsonl", all);

  auto moments = all_moments(all, run.cfg.subsample_interval_s);
  ojson rates = ojson::object();
  for (auto s : vip::signals::kAllSignals) {
    ojson per_k = ojson::object();
    for (int k : run.cfg.k_percents) {
      std::int64_t pos = 0;
      for (const auto& m : moments) pos += m.labels.at({s, k});
      per_k[std::to_string(k)] =
          moments.empty() ? 0.0
                          : vip::io::round_sig9(double(pos) / double(moments.size()));
    }
    rates[vip::signals::signal_name(s)] = std::move(per_k);
  }
  ojson j;
  j["n_videos"] = all.size();
  j["n_moments"] = moments.size();
  j["positive_rates"] = std::move(rates);
  write_artifact(run, "signals_report.json", std::move(j));
  std::printf("signals: %zu videos, %zu moments\n", all.size(), moments.size());
  return 0;
}

int cmd_train(const Run& run) {
  auto manifest = vip::embed::EmbeddingManifest::open(require_input(run.cfg.manifest, "manifest"));
  auto parts = resolve_parts(run.cfg, manifest);
  auto archive = load_archive(run);
  auto moments = all_moments(archive, run.cfg.subsample_interval_s);
  std::vector<std::size_t> rows(moments.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto signal = vip::signals::signal_from_name(run.cfg.signal);
  auto data = vip::eval::build_dataset(moments, rows, manifest, parts, signal,
                                       run.cfg.top_percent);

  vip::model::TrainConfig tc = run.cfg.train;
  tc.top_percent = run.cfg.top_percent;
  tc.seed = run.cfg.seed;
  auto trained = vip::model::train(data, tc);

  vip::model::Checkpoint ckpt;
  ckpt.params = trained.params;
  ckpt.config = tc.head;
  ckpt.layout = manifest.layout_string(parts);
  ckpt.signal = run.cfg.signal;
  ckpt.top_percent = run.cfg.top_percent;
  ckpt.seed = run.cfg.seed;
  vip::model::save_checkpoint(run.dir / "model.ckpt", ckpt);

  ojson j;
  j["signal"] = run.cfg.signal;
  j["top_percent"] = run.cfg.top_percent;
  j["parts"] = parts;
  j["layout"] = ckpt.layout;
  j["head"] = {{"hidden", tc.head.hidden},
               {"dropout", tc.head.dropout},
               {"use_reference", tc.head.use_reference},
               {"weight_share", tc.head.weight_share}};
  j["best_epoch"] = trained.best_epoch;
  j["best_val_loss"] = vip::io::round_sig9(trained.best_val_loss);
  j["balanced_size"] = trained.balanced_size;
  j["val_size"] = trained.val_size;
  ojson log = ojson::array();
  for (const auto& e : trained.log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", vip::io::round_sig9(e.train_loss)},
                   {"val_loss", vip::io::round_sig9(e.val_loss)},
                   {"best", e.best}});
  j["log"] = std::move(log);
  write_artifact(run, "train_report.json", std::move(j));
  std::printf("train: best epoch %d, val loss %.6f, %lld balanced rows\n", trained.best_epoch,
              trained.best_val_loss, static_cast<long long>(trained.balanced_size));
  return 0;
}

int cmd_evaluate(const Run& run) {
  auto manifest = vip::embed::EmbeddingManifest::open(require_input(run.cfg.manifest, "manifest"));
  auto parts = resolve_parts(run.cfg, manifest);
  auto archive = load_archive(run);
  auto moments = all_moments(archive, run.cfg.subsample_interval_s);

  vip::eval::ExperimentConfig base;
  base.parts = parts;
  base.signal = vip::signals::signal_from_name(run.cfg.signal);
  base.top_percent = run.cfg.top_percent;
  base.train = run.cfg.train;
  base.train.top_percent = run.cfg.top_percent;
  base.seeds = run.cfg.seeds;
  base.split = split_config(run.cfg);
  base.lift_percent = run.cfg.lift_percent;
  base.lift_per_video = run.cfg.lift_per_video;
  base.threads = run.cfg.threads;

  // the comparison grid: reference with shared first layer, reference with
  // its own first layer, no reference branch at all
  const struct {
    const char* name;
    bool use_reference, weight_share;
  } variants[] = {{"reference_shared", true, true},
                  {"reference_unshared", true, false},
                  {"no_reference", false, true}};

  ojson grid = ojson::array();
  for (const auto& v : variants) {
    vip::eval::ExperimentConfig ec = base;
    ec.train.head.use_reference = v.use_reference;
    ec.train.head.weight_share = v.weight_share;
    auto result = vip::eval::run_experiment(moments, manifest, ec);
    ojson entry = vip::eval::metrics_to_json(ec, result);
    entry["variant"] = v.name;
    grid.push_back(std::move(entry));
    std::printf("evaluate[%s]: auc %.4f +- %.4f, lift@%d%% %.3f +- %.3f\n", v.name,
                result.auc_mean, result.auc_std, run.cfg.lift_percent, result.lift_mean,
                result.lift_std);
  }
  ojson j;
  j["variants"] = std::move(grid);
  write_artifact(run, "metrics.json", std::move(j));
  return 0;
}

int cmd_tcav(const Run& run) {
  auto manifest = vip::embed::EmbeddingManifest::open(require_input(run.cfg.manifest, "manifest"));
  auto records = vip::ctml::read_records(require_input(run.cfg.concepts, "concepts"));
  const fs::path ckpt_path = run.dir / "model.ckpt";
  if (!fs::exists(ckpt_path))
    throw ConfigError("missing artifact " + ckpt_path.string() + "; run `train` first");
  auto ckpt = vip::model::load_checkpoint(ckpt_path);

  auto parts = resolve_parts(run.cfg, manifest);
  if (ckpt.layout != manifest.layout_string(parts))
    throw ConfigError("checkpoint was trained against embedding layout \"" + ckpt.layout +
                      "\" but the manifest now yields \"" + manifest.layout_string(parts) + "\"");

  auto archive = load_archive(run);
  auto moments = all_moments(archive, run.cfg.subsample_interval_s);
  std::vector<std::size_t> rows(moments.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto signal = vip::signals::signal_from_name(run.cfg.signal);
  auto data = vip::eval::build_dataset(moments, rows, manifest, parts, signal,
                                       run.cfg.top_percent);
  auto reference = vip::model::uniform_reference_means(data);

  vip::tcav::TcavConfig tcfg;
  tcfg.parts = parts;
  tcfg.concepts = run.cfg.tcav_concepts;
  tcfg.repetitions = run.cfg.tcav_repetitions;
  tcfg.max_examples = run.cfg.tcav_max_examples;
  tcfg.bonferroni_m = run.cfg.tcav_bonferroni_m;
  tcfg.alpha = run.cfg.tcav_alpha;
  tcfg.seed = run.cfg.seed;
  tcfg.threads = run.cfg.threads;
  auto results =
      vip::tcav::run_tcav(ckpt.params, ckpt.config, manifest, records, data, reference, tcfg);

  int significant = 0;
  for (const auto& r : results) significant += r.significant ? 1 : 0;
  ojson j;
  j["signal"] = run.cfg.signal;
  j["top_percent"] = run.cfg.top_percent;
  j["results"] = vip::tcav::tcav_to_json(results);
  write_artifact(run, "tcav.json", std::move(j));
  std::printf("tcav: %zu concept-layer pairs, %d significant\n", results.size(), significant);
  return 0;
}

std::vector<vip::coder::CodingRequest> load_requests(const fs::path& path) {
  std::vector<vip::coder::CodingRequest> out;
  vip::io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    ojson j = ojson::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw DataError("code requests line " + std::to_string(line_no + 1) + ": not a JSON object");
    reject_unknown(j, {"video_id", "t", "features", "transcript", "slide_text", "center_frame",
                       "frames"},
                   "code request line " + std::to_string(line_no + 1));
    vip::coder::CodingRequest r;
    r.video_id = j.at("video_id").get<std::string>();
    r.t = j.at("t").get<int>();
    maybe(j, "features", &r.features);
    if (auto it = j.find("transcript"); it != j.end()) r.transcript = it->get<std::string>();
    if (auto it = j.find("slide_text"); it != j.end()) r.slide_text = it->get<std::string>();
    if (auto it = j.find("center_frame"); it != j.end()) r.center_frame = it->get<std::string>();
    maybe(j, "frames", &r.frames);
    out.push_back(std::move(r));
  });
  return out;
}

int cmd_code(const Run& run) {
  if (run.cfg.endpoint.base_url.empty())
    throw ConfigError("config: coder.base_url is not set");
  auto requests = load_requests(require_input(run.cfg.code_requests, "code_requests"));
  if (requests.empty()) throw DataError("code requests file is empty");

  vip::coder::Client client(run.cfg.endpoint);
  auto batch = vip::coder::code_moments(client, requests, run.dir / "code_audit.jsonl");
  std::vector<vip::ctml::CTMLRecord> coded;
  for (const auto& cm : batch.coded) coded.push_back(cm.record);
  vip::ctml::write_records(run.dir / "coded_records.jsonl", coded);

  ojson failures = ojson::array();
  for (const auto& f : batch.failures)
    failures.push_back({{"index", f.index},
                        {"video_id", f.video_id},
                        {"t", f.t},
                        {"message", f.message}});
  ojson j;
  j["n_requests"] = requests.size();
  j["n_coded"] = batch.coded.size();
  j["failures"] = std::move(failures);
  write_artifact(run, "code_report.json", std::move(j));
  std::printf("code: %zu of %zu moments coded\n", batch.coded.size(), requests.size());
  if (batch.coded.empty()) throw DataError("coding failed for every requested moment");
  return 0;
}

int cmd_agreement(const Run& run) {
  auto records = vip::ctml::read_records(require_input(run.cfg.concepts, "concepts"));
  if (!run.cfg.adjudicated.empty()) {
    auto extra = vip::ctml::read_records(require_input(run.cfg.adjudicated, "adjudicated"));
    records.insert(records.end(), extra.begin(), extra.end());
  }
  if (run.cfg.agreement_between.size() != 2)
    throw ConfigError("config: agreement.between needs exactly two coder names");
  const auto x = vip::ctml::coder_from_name(run.cfg.agreement_between[0]);
  const auto y = vip::ctml::coder_from_name(run.cfg.agreement_between[1]);
  auto summary = vip::ctml::agreement_summary(records, x, y);
  bool any = false;
  for (const auto& a : summary) any = any || a.n > 0;
  if (!any)
    throw DataError("EmptyJoin: the two coders share no rated moments");

  ojson rows = ojson::array();
  for (const auto& a : summary)
    rows.push_back({{"feature", a.feature},
                    {"n", a.n},
                    {"kappa", vip::io::round_sig9(a.kappa)}});
  ojson j;
  j["between"] = run.cfg.agreement_between;
  j["features"] = std::move(rows);
  write_artifact(run, "agreement.json", std::move(j));
  std::printf("agreement: %zu features compared\n", summary.size());
  return 0;
}

int cmd_synth(const Run& run) {
  vip::synth::SynthConfig sc = run.cfg.synth;
  sc.seed = run.cfg.seed;
  auto out = vip::synth::generate(sc, run.dir / "corpus", run.cfg.threads);
  auto checks = vip::synth::oracle_metrics(out.truth, out.events_path, out.metas_path);

  ojson conf = ojson::array();
  bool all_pass = true;
  for (const auto& c : checks) {
    conf.push_back({{"check", c.check}, {"pass", c.pass}, {"detail", c.detail}});
    all_pass = all_pass && c.pass;
  }
  ojson j;
  j["paths"] = {{"events", out.events_path.string()},
                {"metadata", out.metas_path.string()},
                {"manifest", out.manifest_path.string()},
                {"concepts", out.records_path.string()},
                {"truth_videos", out.truth_videos_path.string()},
                {"truth_sessions", out.truth_sessions_path.string()},
                {"truth_corpus", out.truth_corpus_path.string()}};
  j["n_videos"] = out.truth.videos.size();
  j["n_sessions"] = out.truth.sessions.size();
  j["n_event_lines"] = out.truth.event_lines;
  j["n_corruptions"] = out.truth.corruptions.size();
  j["n_duplicate_pairs"] = out.truth.duplicate_pairs.size();
  j["conformance"] = std::move(conf);
  write_artifact(run, "synth_report.json", std::move(j));
  std::printf("synth: %zu videos, %zu sessions, conformance %s\n", out.truth.videos.size(),
              out.truth.sessions.size(), all_pass ? "pass" : "FAIL");
  return 0;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

int cmd_report(const Run& run) {
  auto metrics = read_artifact(run, "metrics.json");
  auto tcav_doc = read_artifact(run, "tcav.json");

  // association tables straight from the archive's percentile ranks
  auto records = vip::ctml::read_records(require_input(run.cfg.concepts, "concepts"));
  auto archive = load_archive(run);
  vip::ctml::RankLookup ranks;
  for (const auto& vs : archive) {
    const auto n = vs.rank[0].values.size();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      std::array<double, 4> at{};
      for (int s = 0; s < 4; ++s) at[std::size_t(s)] = vs.rank[std::size_t(s)].values[i];
      ranks[{vs.video_id, vs.t0 + static_cast<int>(i)}] = at;
    }
  }
  auto assoc = vip::ctml::association_summary(records, ranks);

  ojson report;
  report["metrics"] = metrics.at("variants");
  report["tcav"] = tcav_doc.at("results");
  report["associations"] = vip::ctml::associations_to_json(assoc);
  if (fs::exists(run.dir / "agreement.json"))
    report["agreement"] = read_artifact(run, "agreement.json").at("features");
  write_artifact(run, "report.json", std::move(report));

  // plot-ready flat files
  std::string mcsv = "variant,seed,auc,lift,best_epoch,n_test,n_test_pos\n";
  for (const auto& variant : metrics.at("variants")) {
    const std::string name = variant.at("variant").get<std::string>();
    for (const auto& r : variant.at("runs"))
      mcsv += name + "," + r.at("seed").dump() + "," +
              vip::io::format_sig9(r.at("auc").get<double>()) + "," +
              vip::io::format_sig9(r.at("lift").get<double>()) + "," + r.at("best_epoch").dump() +
              "," + r.at("n_test").dump() + "," + r.at("n_test_pos").dump() + "\n";
    mcsv += name + ",mean," + vip::io::format_sig9(variant.at("auc_mean").get<double>()) + "," +
            vip::io::format_sig9(variant.at("lift_mean").get<double>()) + ",,,\n";
    mcsv += name + ",std," + vip::io::format_sig9(variant.at("auc_std").get<double>()) + "," +
            vip::io::format_sig9(variant.at("lift_std").get<double>()) + ",,,\n";
  }
  vip::io::write_file(run.dir / "metrics_flat.csv", mcsv);

  std::string tcsv = "concept,layer,mean,std,t,p,significant,degenerate,fit_quality\n";
  for (const auto& r : tcav_doc.at("results")) {
    tcsv += r.at("concept").get<std::string>() + "," + r.at("layer").get<std::string>() + "," +
            vip::io::format_sig9(r.at("mean").get<double>()) + "," +
            vip::io::format_sig9(r.at("std").get<double>()) + "," +
            vip::io::format_sig9(r.at("t").get<double>()) + "," +
            vip::io::format_sig9(r.at("p").get<double>()) + "," +
            (r.at("significant").get<bool>() ? "1" : "0") + "," +
            (r.at("degenerate").get<bool>() ? "1" : "0") + "," +
            vip::io::format_sig9(r.at("fit_quality").get<double>()) + "\n";
  }
  vip::io::write_file(run.dir / "tcav_flat.csv", tcsv);

  std::string acsv = "feature,signal,level,n,mean_rank,t,p,significant\n";
  for (const auto& a : assoc) {
    const std::string base = csv_escape(a.feature) + "," +
                             vip::signals::signal_name(a.signal) + ",";
    for (const auto& lvl : a.levels) {
      acsv += base + std::to_string(lvl.level) + "," + std::to_string(lvl.n) + "," +
              (lvl.n > 0 ? vip::io::format_sig9(lvl.mean_rank) : "") + ",";
      if (a.ttest) {
        acsv += vip::io::format_sig9(a.ttest->t) + "," + vip::io::format_sig9(a.ttest->p) + "," +
                (a.significant ? "1" : "0");
      } else {
        acsv += ",,";
      }
      acsv += "\n";
    }
  }
  vip::io::write_file(run.dir / "associations_flat.csv", acsv);

  std::printf("report: merged %zu variants, %zu concept-layer pairs, %zu associations\n",
              metrics.at("variants").size(), tcav_doc.at("results").size(), assoc.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learner-video interaction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its keys");

  // flag mirrors of the config keys (flag precedence)
  std::optional<std::string> events, metadata, manifest, concepts, adjudicated, code_requests,
      out_dir, signal, split_kind, holdout_field, coder_url, coder_model, coder_auth_env;
  std::optional<int> top_percent, trim_s, subsample_interval_s, lift_percent, threads, hidden,
      batch_size, max_epochs, patience, tcav_reps, tcav_max_examples, synth_videos,
      synth_learners, synth_courses, synth_hotspot_every, synth_duration_min, synth_duration_max;
  std::optional<double> test_fraction, lr, dropout, noise_scale, corruption_rate,
      duplicate_fraction;
  std::optional<bool> use_reference, weight_share, lift_per_video;
  std::optional<std::uint64_t> seed;
  std::vector<int> k_percents;
  std::vector<std::string> parts, tcav_concepts;
  std::vector<std::uint64_t> seeds;

  app.add_option("--events", events, "event log path");
  app.add_option("--metadata", metadata, "video metadata path");
  app.add_option("--manifest", manifest, "embedding manifest path");
  app.add_option("--concepts", concepts, "concept ratings path");
  app.add_option("--adjudicated", adjudicated, "additional ratings path for agreement");
  app.add_option("--code-requests", code_requests, "coding requests path");
  app.add_option("--out-dir", out_dir, "artifact root directory");
  app.add_option("--signal", signal, "trained signal name");
  app.add_option("--top-percent", top_percent, "label K");
  app.add_option("--k-percents", k_percents, "label thresholds to compute");
  app.add_option("--parts", parts, "embedding part selection");
  app.add_option("--trim", trim_s, "seconds trimmed from each end");
  app.add_option("--subsample-interval", subsample_interval_s, "moment grid step");
  app.add_option("--lift-percent", lift_percent, "lift selection size");
  app.add_option("--lift-per-video", lift_per_video, "average lift per video");
  app.add_option("--split-kind", split_kind, "course_grouped or field_holdout");
  app.add_option("--test-fraction", test_fraction, "course-grouped test share");
  app.add_option("--holdout-field", holdout_field, "field kept for testing");
  app.add_option("--seeds", seeds, "experiment seeds");
  app.add_option("--hidden", hidden, "hidden width");
  app.add_option("--dropout", dropout, "dropout probability");
  app.add_option("--use-reference", use_reference, "reference branch on/off");
  app.add_option("--weight-share", weight_share, "share first-layer weights");
  app.add_option("--lr", lr, "learning rate");
  app.add_option("--batch-size", batch_size, "minibatch size");
  app.add_option("--max-epochs", max_epochs, "epoch cap");
  app.add_option("--patience", patience, "early stopping patience");
  app.add_option("--tcav-reps", tcav_reps, "probe repetitions");
  app.add_option("--tcav-max-examples", tcav_max_examples, "per-repetition example cap");
  app.add_option("--tcav-concepts", tcav_concepts, "concept subset");
  app.add_option("--coder-url", coder_url, "chat-completions endpoint");
  app.add_option("--coder-model", coder_model, "model name");
  app.add_option("--coder-auth-env", coder_auth_env, "env var holding the bearer token");
  app.add_option("--synth-videos", synth_videos, "synthetic corpus size");
  app.add_option("--synth-learners", synth_learners, "learners per course");
  app.add_option("--synth-courses", synth_courses, "course count");
  app.add_option("--synth-noise", noise_scale, "embedding noise scale");
  app.add_option("--synth-corruption", corruption_rate, "bad line insertion rate");
  app.add_option("--synth-duplicates", duplicate_fraction, "twin upload fraction");
  app.add_option("--synth-hotspot-every", synth_hotspot_every, "hotspot video stride");
  app.add_option("--synth-duration-min", synth_duration_min, "shortest video");
  app.add_option("--synth-duration-max", synth_duration_max, "longest video");
  app.add_option("--seed", seed, "root seed");
  app.add_option("--threads", threads, "worker cap");

  for (const char* name : {"ingest", "signals", "train", "evaluate", "tcav", "code", "agreement",
                           "synth", "report"})
    app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(config_path, &cfg);
    if (events) cfg.events = *events;
    if (metadata) cfg.metadata = *metadata;
    if (manifest) cfg.manifest = *manifest;
    if (concepts) cfg.concepts = *concepts;
    if (adjudicated) cfg.adjudicated = *adjudicated;
    if (code_requests) cfg.code_requests = *code_requests;
    if (out_dir) cfg.out_dir = *out_dir;
    if (signal) cfg.signal = *signal;
    if (top_percent) cfg.top_percent = *top_percent;
    if (!k_percents.empty()) cfg.k_percents = k_percents;
    if (!parts.empty()) cfg.parts = parts;
    if (trim_s) cfg.trim_s = *trim_s;
    if (subsample_interval_s) cfg.subsample_interval_s = *subsample_interval_s;
    if (lift_percent) cfg.lift_percent = *lift_percent;
    if (lift_per_video) cfg.lift_per_video = *lift_per_video;
    if (split_kind) cfg.split_kind = *split_kind;
    if (test_fraction) cfg.test_fraction = *test_fraction;
    if (holdout_field) cfg.holdout_field = *holdout_field;
    if (!seeds.empty()) cfg.seeds = seeds;
    if (hidden) cfg.train.head.hidden = *hidden;
    if (dropout) cfg.train.head.dropout = *dropout;
    if (use_reference) cfg.train.head.use_reference = *use_reference;
    if (weight_share) cfg.train.head.weight_share = *weight_share;
    if (lr) cfg.train.lr = *lr;
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (max_epochs) cfg.train.max_epochs = *max_epochs;
    if (patience) cfg.train.patience = *patience;
    if (tcav_reps) cfg.tcav_repetitions = *tcav_reps;
    if (tcav_max_examples) cfg.tcav_max_examples = *tcav_max_examples;
    if (!tcav_concepts.empty()) cfg.tcav_concepts = tcav_concepts;
    if (coder_url) cfg.endpoint.base_url = *coder_url;
    if (coder_model) cfg.endpoint.model = *coder_model;
    if (coder_auth_env) cfg.endpoint.auth_env = *coder_auth_env;
    if (synth_videos) cfg.synth.n_videos = *synth_videos;
    if (synth_learners) cfg.synth.n_learners = *synth_learners;
    if (synth_courses) cfg.synth.n_courses = *synth_courses;
    if (noise_scale) cfg.synth.noise_scale = *noise_scale;
    if (corruption_rate) cfg.synth.corruption_rate = *corruption_rate;
    if (duplicate_fraction) cfg.synth.duplicate_fraction = *duplicate_fraction;
    if (synth_hotspot_every) cfg.synth.hotspot_every = *synth_hotspot_every;
    if (synth_duration_min) cfg.synth.duration_min_s = *synth_duration_min;
    if (synth_duration_max) cfg.synth.duration_max_s = *synth_duration_max;
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;

    validate_config(cfg);
    Run run = open_run(cfg);

    const std::string sub = app.get_subcommands().at(0)->get_name();
    if (sub == "ingest") return cmd_ingest(run);
    if (sub == "signals") return cmd_signals(run);
    if (sub == "train") return cmd_train(run);
    if (sub == "evaluate") return cmd_evaluate(run);
    if (sub == "tcav") return cmd_tcav(run);
    if (sub == "code") return cmd_code(run);
    if (sub == "agreement") return cmd_agreement(run);
    if (sub == "synth") return cmd_synth(run);
    if (sub == "report") return cmd_report(run);
    throw ConfigError("unknown subcommand: " + sub);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const vip::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const vip::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
