#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vip/error.hpp"
#include "vip/io.hpp"
#include "vip/signals.hpp"
#include "vip/stats.hpp"

namespace vip::ctml {

using io::ojson;

enum class FeatureType { Binary, Ordinal };

// What a coder must look at to rate the feature.
struct Modality {
  bool center_frame = false;  // the frame at second t
  bool frame_window = false;  // one frame per second over [t-10, t+10]
  bool transcript = false;    // spoken text around t
};

struct FeatureSpec {
  std::string key;           // stable snake_case identifier
  std::string display_name;  // rubric heading
  std::string description;   // rubric text, embedded verbatim in prompts
  FeatureType type = FeatureType::Binary;
  int levels = 2;            // 2 for binary, 5 for the two ordinal scales
  Modality modality;
};

// The fifteen multimedia-design features, in their frozen table order.  The
// order is load-bearing: feature vectors, reports, and prompts all use it.
const std::vector<FeatureSpec>& feature_table();
const FeatureSpec& feature(const std::string& key);
int feature_index(const std::string& key);

enum class Coder { HumanA, HumanB, Adjudicated, Machine };
const char* coder_name(Coder c);
Coder coder_from_name(const std::string& name);

struct CTMLRecord {
  std::string video_id;
  int t = 0;
  Coder coder = Coder::Machine;
  std::map<std::string, int> values;  // feature key -> rating
};

// Rating present, in range for its scale (binary {0,1}, ordinal 1..levels).
void validate_record(const CTMLRecord& r);

// Ratings as model inputs: binary 0/1 as-is, ordinal mapped to [0, 1] via
// (v - 1) / (levels - 1).  Table order.
Eigen::VectorXd features_to_vector(const CTMLRecord& r);

// JSONL, one record per line; (video_id, t, coder) must be unique.
void write_records(const std::filesystem::path& path, const std::vector<CTMLRecord>& records);
std::vector<CTMLRecord> read_records(const std::filesystem::path& path);

// ------------------------------------------------------------------- kappas

// Cohen's kappa over two equal-length rating sequences (nominal agreement).
// https://en.wikipedia.org/wiki/Cohen%27s_kappa
double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b);

// Quadratically weighted kappa for ordinal scales with `levels` categories
// starting at `lo`: disagreement weights (i-j)^2 / (levels-1)^2.  Reduces to
// Cohen's kappa when levels == 2.
double weighted_kappa(const std::vector<int>& a, const std::vector<int>& b, int levels,
                      int lo = 0);

struct FeatureAgreement {
  std::string feature;
  std::int64_t n = 0;   // moments rated by both coders
  double kappa = 0.0;   // nominal for binary, quadratic-weighted for ordinal
};

// Per-feature agreement between two coders over their shared moments.
std::vector<FeatureAgreement> agreement_summary(const std::vector<CTMLRecord>& records,
                                                Coder x, Coder y);

// -------------------------------------------------------- association tables

struct LevelStat {
  int level = 0;
  std::int64_t n = 0;
  double mean_rank = 0.0;  // mean percentile value of the signal at this level
};

struct Association {
  std::string feature;
  signals::SignalKind signal = signals::SignalKind::Watched;
  std::vector<LevelStat> levels;              // empty levels reported with n=0
  std::optional<stats::TTestResult> ttest;    // binary features, both groups >= 2
  bool significant = false;                   // two-sided alpha = 0.01
};

using RankLookup = std::map<std::pair<std::string, int>, std::array<double, 4>>;

// Mean signal percentile per feature level, with a Welch two-sample test for
// the binary features.  `ranks` maps (video, t) to the four percentile values;
// records without a rank entry are skipped.
std::vector<Association> association_summary(const std::vector<CTMLRecord>& records,
                                             const RankLookup& ranks);

ojson associations_to_json(const std::vector<Association>& assoc);

}  // namespace vip::ctml
