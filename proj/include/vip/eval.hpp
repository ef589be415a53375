#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "vip/embedstore.hpp"
#include "vip/error.hpp"
#include "vip/io.hpp"
#include "vip/model.hpp"
#include "vip/signals.hpp"

namespace vip::eval {

using io::ojson;

// Area under the ROC curve via the rank-sum (Mann-Whitney U) identity,
// with tied scores sharing their average rank — ties count 1/2.
// https://en.wikipedia.org/wiki/Mann%E2%80%93Whitney_U_test
double auc(const Eigen::VectorXd& scores, const std::vector<int>& labels);

// Precision of the per-video top ceil(K/100 * n_v) moments by score (ties
// broken toward earlier t), divided by the base rate K/100.  Pooled: one
// precision over the union of per-video selections.  Per-video: mean of the
// per-video precisions.
double lift_at_k(const Eigen::VectorXd& scores, const std::vector<int>& labels,
                 const std::vector<std::string>& video, int k_percent,
                 bool per_video_average = false);

enum class SplitKind { CourseGrouped, FieldHoldout };

struct SplitConfig {
  SplitKind kind = SplitKind::CourseGrouped;
  double test_fraction = 0.10;   // CourseGrouped: target share of test moments
  std::string holdout_field;     // FieldHoldout: the field kept for testing
  std::uint64_t seed = 0;        // CourseGrouped: course shuffle seed
};

struct Split {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  std::vector<std::string> test_groups;  // held-out course ids or the field
};

// Whole courses (or a whole field) go to the test side, never single moments.
Split make_split(const std::vector<signals::Moment>& moments, const SplitConfig& cfg);

// Rows of `moments` (selected by `rows`) turned into a training table:
// embeddings from the manifest, labels for (signal, K).
model::Dataset build_dataset(const std::vector<signals::Moment>& moments,
                             const std::vector<std::size_t>& rows,
                             const embed::EmbeddingManifest& manifest,
                             const std::vector<std::string>& parts, signals::SignalKind signal,
                             int top_percent);

struct ExperimentConfig {
  std::vector<std::string> parts;
  signals::SignalKind signal = signals::SignalKind::PausedAt;
  int top_percent = 10;
  model::TrainConfig train;       // seed field is overwritten per run
  std::vector<std::uint64_t> seeds;
  SplitConfig split;
  int lift_percent = 10;
  bool lift_per_video = false;
  int threads = 1;
};

struct RunMetrics {
  std::uint64_t seed = 0;
  double auc = 0.0;
  double lift = 0.0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::int64_t n_train = 0;
  std::int64_t n_test = 0;
  std::int64_t n_test_pos = 0;
  std::vector<std::string> test_groups;
};

struct ExperimentResult {
  std::vector<RunMetrics> runs;
  double auc_mean = 0.0, auc_std = 0.0;
  double lift_mean = 0.0, lift_std = 0.0;
};

// One train/evaluate cycle per seed (course-grouped splits reshuffle with the
// seed; a field holdout is the same split every run), metrics on the full
// unbalanced test rows, aggregated as mean and sample standard deviation.
ExperimentResult run_experiment(const std::vector<signals::Moment>& moments,
                                const embed::EmbeddingManifest& manifest,
                                const ExperimentConfig& cfg);

ojson metrics_to_json(const ExperimentConfig& cfg, const ExperimentResult& r);

}  // namespace vip::eval
