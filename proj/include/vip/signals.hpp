#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vip/error.hpp"
#include "vip/events.hpp"

namespace vip::signals {

enum class SignalKind : int { Watched = 0, PausedAt = 1, RewoundTo = 2, SkippedFrom = 3 };

inline constexpr std::array<SignalKind, 4> kAllSignals = {
    SignalKind::Watched, SignalKind::PausedAt, SignalKind::RewoundTo, SignalKind::SkippedFrom};

const char* signal_name(SignalKind s);
SignalKind signal_from_name(const std::string& name);

enum class Stage { RawCounts, Normalized, Smoothed, Detrended, Rank };

struct SignalSeries {
  std::string video_id;
  SignalKind signal = SignalKind::Watched;
  Stage stage = Stage::RawCounts;
  int t0 = 0;  // second of values[0]
  Eigen::VectorXd values;
};

// ---------------------------------------------------------------------------
// Series math.  Free functions over Eigen dense types, templated on scalar.

// Centered 5-tap moving average.  Edge windows shrink to the available
// seconds; the weight of each out-of-range tap is folded into the center tap.
// That keeps the operator symmetric and doubly stochastic: constants are
// fixed points and the series mean is preserved exactly, both of which the
// downstream detrend/rank stages rely on.
template <typename Derived>
Eigen::VectorX<typename Derived::Scalar> moving_average5(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.size();
  Eigen::VectorX<Scalar> out(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::Index lo = t < 2 ? 0 : t - 2;
    Eigen::Index hi = t + 2 >= n ? n - 1 : t + 2;
    Scalar sum = 0;
    for (Eigen::Index s = lo; s <= hi; ++s) sum += x(s);
    Scalar missing = Scalar(4 - (hi - lo));
    out(t) = (sum + missing * x(t)) / Scalar(5);
  }
  return out;
}

// Ordinary least squares line fit y ~ a + b*t over t = 0..n-1, returned as
// (intercept at the centered origin, slope).  The regressor is centered so
// the normal equations decouple.
template <typename Derived>
std::pair<typename Derived::Scalar, typename Derived::Scalar> ols_line(
    const Eigen::DenseBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = y.size();
  if (n == 0) throw ContractViolation("ols_line: empty series");
  Scalar mean = 0;
  for (Eigen::Index i = 0; i < n; ++i) mean += y(i);
  mean /= Scalar(n);
  if (n == 1) return {mean, Scalar(0)};
  Scalar center = Scalar(n - 1) / Scalar(2);
  Scalar num = 0, den = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar tc = Scalar(i) - center;
    num += tc * y(i);
    den += tc * tc;
  }
  return {mean, num / den};
}

// Residuals of the OLS line fit.  Idempotent up to float tolerance: the
// residual has zero projection on both the constant and linear regressors.
template <typename Derived>
Eigen::VectorX<typename Derived::Scalar> detrend_ols(const Eigen::DenseBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = y.size();
  auto [mean, slope] = ols_line(y);
  Scalar center = Scalar(n - 1) / Scalar(2);
  Eigen::VectorX<Scalar> out(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out(i) = y(i) - mean - slope * (Scalar(i) - center);
  return out;
}

// Fractional (average) 1-based ranks; exact-equal values share the mean of
// their rank range.  Returned ranks are integers or half-integers, exact in
// floating point.
Eigen::VectorXd average_rank(const Eigen::Ref<const Eigen::VectorXd>& values);

// ---------------------------------------------------------------------------
// Playback reconstruction and per-video counting.

struct PlaybackInterval {
  double a = 0.0;
  double b = 0.0;  // half-open [a, b)
};

// Events of one (user, video), sorted by wall time.  A play opens an
// interval; the next event closes it at its own position (from_pos for
// seeks, which also reopen at to_pos).  Unclosed intervals run to the end of
// the video.  Rate changes are ignored.
std::vector<PlaybackInterval> reconstruct_playback(std::span<const events::Event> user_events,
                                                   int duration_s);

struct VideoCounts {
  // Length D_v, seconds 0..D_v-1.
  Eigen::VectorXd watched;       // playback intervals covering t
  Eigen::VectorXd paused_at;     // pauses binned at round(pos)
  Eigen::VectorXd rewound_to;    // backward seeks at round(to_pos)
  Eigen::VectorXd skipped_from;  // forward seeks at round(pos)
  Eigen::VectorXd active;        // distinct users with >=1 interval covering t
};

// events: all accepted events of one canonical video, sorted by (user, time).
VideoCounts build_counts(std::span<const events::Event> video_events, int duration_s);

SignalSeries raw_counts(std::span<const events::Event> video_events, SignalKind signal,
                        int duration_s);
SignalSeries active_series(std::span<const events::Event> video_events, int duration_s);

// ---------------------------------------------------------------------------
// Preprocessing to percentile ranks.

struct PreprocessTrace {
  SignalSeries trimmed;     // RawCounts restricted to [trim, D-trim]
  SignalSeries normalized;  // per active learner
  SignalSeries smoothed;
  SignalSeries detrended;
  SignalSeries rank;
};

// Applies trim -> normalize -> smooth -> detrend -> rank.  raw and active
// cover seconds 0..D_v-1; the result covers [trim, D_v-trim].
SignalSeries preprocess(const SignalSeries& raw, const SignalSeries& active, int duration_s,
                        int trim_s = 30, PreprocessTrace* trace = nullptr);

// y(t) = 1 iff the rank value clears the top-K cutoff.  The cutoff is
// exclusive: on 100 distinct-valued seconds, K=10 marks exactly 10.
std::vector<int> label_top_k(const SignalSeries& rank_series, int k_percent);

// ---------------------------------------------------------------------------
// Moments and the per-video signal bundle.

struct Moment {
  std::string video_id;
  int t = 0;
  std::map<std::pair<SignalKind, int>, int> labels;  // (signal, K) -> {0,1}
  std::int64_t embedding_row = -1;                   // <0 when unresolved
  std::string field;
  std::string course_id;
};

struct VideoSignals {
  std::string video_id;
  std::string field;
  std::string course_id;
  int duration_s = 0;
  int t0 = 30;
  std::array<SignalSeries, 4> rank;                       // by SignalKind order
  std::map<int, std::array<std::vector<int>, 4>> labels;  // K -> per-signal bits
};

VideoSignals build_video_signals(std::span<const events::Event> video_events,
                                 const events::VideoMeta& meta, const std::vector<int>& k_percents,
                                 int trim_s = 30);

// Moments at t = t0, t0+interval, ... <= D_v - trim, carrying all labels.
std::vector<Moment> subsample_moments(const VideoSignals& vs, int interval_s = 5);

// Full corpus pass: groups events by video, builds signals for every meta
// (videos shorter than the trim bound are rejected).  Output sorted by
// video_id.
std::vector<VideoSignals> build_all_signals(const std::vector<events::Event>& all_events,
                                            const std::vector<events::VideoMeta>& metas,
                                            const std::vector<int>& k_percents, int trim_s = 30,
                                            int threads = 1);

// Signal archive: one record per video, rank values at 9 significant digits.
void write_signal_archive(const std::filesystem::path& path,
                          const std::vector<VideoSignals>& videos);
std::vector<VideoSignals> read_signal_archive(const std::filesystem::path& path);

}  // namespace vip::signals
