#include "vip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "vip/stats.hpp"
#include "vip/threading.hpp"

namespace vip::eval {

double auc(const Eigen::VectorXd& scores, const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (labels.size() != n) throw ContractViolation("auc: size mismatch");
  std::int64_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractViolation("auc: labels must be 0/1");
    n_pos += y;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw NumericError("UndefinedMetric: AUC needs both classes, got " + std::to_string(n_pos) +
                       " positives of " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[static_cast<Eigen::Index>(a)] < scores[static_cast<Eigen::Index>(b)]; });

  // Average ranks across tie groups, then the rank-sum identity:
  // AUC = (R+ - n_pos(n_pos+1)/2) / (n_pos * n_neg).
  double rank_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[static_cast<Eigen::Index>(order[j + 1])] ==
                            scores[static_cast<Eigen::Index>(order[i])])
      ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]]) rank_pos += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double lift_at_k(const Eigen::VectorXd& scores, const std::vector<int>& labels,
                 const std::vector<std::string>& video, int k_percent, bool per_video_average) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (labels.size() != n || video.size() != n) throw ContractViolation("lift_at_k: size mismatch");
  if (k_percent <= 0 || k_percent > 100) throw ConfigError("lift_at_k: K must be in (0, 100]");
  if (n == 0) throw NumericError("UndefinedMetric: lift of an empty set");

  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < n; ++i) by_video[video[i]].push_back(i);

  const double base = k_percent / 100.0;
  double pooled_hits = 0.0, pooled_taken = 0.0, precision_sum = 0.0;
  for (auto& [vid, rows] : by_video) {
    // Highest score first; equal scores resolved toward the earlier moment so
    // the selection is reproducible.
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      const double sa = scores[static_cast<Eigen::Index>(a)];
      const double sb = scores[static_cast<Eigen::Index>(b)];
      if (sa != sb) return sa > sb;
      return a < b;
    });
    const auto take = static_cast<std::size_t>(
        std::ceil(base * static_cast<double>(rows.size())));
    std::size_t hits = 0;
    for (std::size_t k = 0; k < take; ++k) hits += static_cast<std::size_t>(labels[rows[k]]);
    pooled_hits += static_cast<double>(hits);
    pooled_taken += static_cast<double>(take);
    precision_sum += static_cast<double>(hits) / static_cast<double>(take);
  }
  const double precision =
      per_video_average ? precision_sum / static_cast<double>(by_video.size())
                        : pooled_hits / pooled_taken;
  return precision / base;
}

Split make_split(const std::vector<signals::Moment>& moments, const SplitConfig& cfg) {
  if (moments.empty()) throw DataError("make_split: no moments");
  Split s;
  if (cfg.kind == SplitKind::FieldHoldout) {
    std::set<std::string> fields;
    for (const auto& m : moments) fields.insert(m.field);
    if (!fields.count(cfg.holdout_field))
      throw ConfigError("UnknownField: '" + cfg.holdout_field + "' not present in the corpus");
    for (std::size_t i = 0; i < moments.size(); ++i)
      (moments[i].field == cfg.holdout_field ? s.test_rows : s.train_rows).push_back(i);
    if (s.train_rows.empty())
      throw DataError("make_split: every moment belongs to the held-out field");
    s.test_groups = {cfg.holdout_field};
    return s;
  }

  // Course-grouped: whole courses move to the test side until its share of
  // moments reaches the target.
  std::map<std::string, std::int64_t> course_count;
  for (const auto& m : moments) course_count[m.course_id]++;
  std::vector<std::string> courses;
  for (const auto& [c, cnt] : course_count) courses.push_back(c);
  if (courses.size() < 2)
    throw DataError("make_split: need at least two courses for a grouped split");
  Rng rng(cfg.seed);
  Rng sh = rng.fork("course_split");
  sh.shuffle(courses);

  const auto target = static_cast<std::int64_t>(
      std::ceil(cfg.test_fraction * static_cast<double>(moments.size())));
  std::set<std::string> test_courses;
  std::int64_t taken = 0;
  for (const auto& c : courses) {
    if (taken >= target) break;
    if (test_courses.size() + 1 >= courses.size()) break;  // keep a training course
    test_courses.insert(c);
    s.test_groups.push_back(c);
    taken += course_count[c];
  }
  if (test_courses.empty()) {
    test_courses.insert(courses.front());
    s.test_groups.push_back(courses.front());
  }
  for (std::size_t i = 0; i < moments.size(); ++i)
    (test_courses.count(moments[i].course_id) ? s.test_rows : s.train_rows).push_back(i);
  return s;
}

model::Dataset build_dataset(const std::vector<signals::Moment>& moments,
                             const std::vector<std::size_t>& rows,
                             const embed::EmbeddingManifest& manifest,
                             const std::vector<std::string>& parts, signals::SignalKind signal,
                             int top_percent) {
  model::Dataset d;
  d.X.resize(static_cast<Eigen::Index>(rows.size()), manifest.total_dim(parts));
  d.label.reserve(rows.size());
  d.video.reserve(rows.size());
  d.t.reserve(rows.size());
  const std::pair<signals::SignalKind, int> key{signal, top_percent};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& m = moments[rows[i]];
    auto it = m.labels.find(key);
    if (it == m.labels.end())
      throw DataError("moment (" + m.video_id + ", " + std::to_string(m.t) +
                      ") has no label for signal '" + signals::signal_name(signal) + "' at K=" +
                      std::to_string(top_percent));
    const std::int64_t row =
        m.embedding_row >= 0 ? m.embedding_row : manifest.row_for(m.video_id, m.t);
    d.X.row(static_cast<Eigen::Index>(i)) = manifest.assemble_row(parts, row).transpose();
    d.label.push_back(it->second);
    d.video.push_back(m.video_id);
    d.t.push_back(m.t);
  }
  return d;
}

ExperimentResult run_experiment(const std::vector<signals::Moment>& moments,
                                const embed::EmbeddingManifest& manifest,
                                const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("run_experiment: at least one seed required");
  ExperimentResult res;
  res.runs.resize(cfg.seeds.size());

  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    SplitConfig sc = cfg.split;
    sc.seed = seed;
    Split split = make_split(moments, sc);

    model::Dataset train_set =
        build_dataset(moments, split.train_rows, manifest, cfg.parts, cfg.signal, cfg.top_percent);
    model::Dataset test_set =
        build_dataset(moments, split.test_rows, manifest, cfg.parts, cfg.signal, cfg.top_percent);

    model::TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.top_percent = cfg.top_percent;
    model::TrainResult tr = model::train(train_set, tc);

    auto reference = model::uniform_reference_means(test_set);
    Eigen::VectorXd scores = model::predict_dataset(tr.params, tc.head, test_set, reference);

    RunMetrics rm;
    rm.seed = seed;
    rm.auc = auc(scores, test_set.label);
    rm.lift = lift_at_k(scores, test_set.label, test_set.video, cfg.lift_percent,
                        cfg.lift_per_video);
    rm.best_epoch = tr.best_epoch;
    rm.best_val_loss = tr.best_val_loss;
    rm.n_train = static_cast<std::int64_t>(split.train_rows.size());
    rm.n_test = static_cast<std::int64_t>(split.test_rows.size());
    rm.n_test_pos = static_cast<std::int64_t>(
        std::count(test_set.label.begin(), test_set.label.end(), 1));
    rm.test_groups = split.test_groups;
    res.runs[i] = std::move(rm);
  });

  Eigen::VectorXd aucs(static_cast<Eigen::Index>(res.runs.size()));
  Eigen::VectorXd lifts(static_cast<Eigen::Index>(res.runs.size()));
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    aucs[static_cast<Eigen::Index>(i)] = res.runs[i].auc;
    lifts[static_cast<Eigen::Index>(i)] = res.runs[i].lift;
  }
  res.auc_mean = stats::mean(aucs);
  res.lift_mean = stats::mean(lifts);
  res.auc_std = res.runs.size() > 1 ? stats::sample_std(aucs) : 0.0;
  res.lift_std = res.runs.size() > 1 ? stats::sample_std(lifts) : 0.0;
  return res;
}

ojson metrics_to_json(const ExperimentConfig& cfg, const ExperimentResult& r) {
  ojson j;
  j["signal"] = signals::signal_name(cfg.signal);
  j["top_percent"] = cfg.top_percent;
  j["parts"] = cfg.parts;
  j["split"] = cfg.split.kind == SplitKind::CourseGrouped ? "course_grouped" : "field_holdout";
  if (cfg.split.kind == SplitKind::FieldHoldout) j["holdout_field"] = cfg.split.holdout_field;
  j["lift_percent"] = cfg.lift_percent;
  j["lift_per_video"] = cfg.lift_per_video;
  j["use_reference"] = cfg.train.head.use_reference;
  j["weight_share"] = cfg.train.head.weight_share;
  j["auc_mean"] = io::round_sig9(r.auc_mean);
  j["auc_std"] = io::round_sig9(r.auc_std);
  j["lift_mean"] = io::round_sig9(r.lift_mean);
  j["lift_std"] = io::round_sig9(r.lift_std);
  j["runs"] = ojson::array();
  for (const auto& run : r.runs) {
    ojson o;
    o["seed"] = run.seed;
    o["auc"] = io::round_sig9(run.auc);
    o["lift"] = io::round_sig9(run.lift);
    o["best_epoch"] = run.best_epoch;
    o["best_val_loss"] = io::round_sig9(run.best_val_loss);
    o["n_train"] = run.n_train;
    o["n_test"] = run.n_test;
    o["n_test_pos"] = run.n_test_pos;
    o["test_groups"] = run.test_groups;
    j["runs"].push_back(o);
  }
  return j;
}

}  // namespace vip::eval
