#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <set>
#include <vector>

#include "vip/eval.hpp"
#include "vip/rng.hpp"

using namespace vip;
using namespace vip::eval;

namespace {

// O(n^2) pairwise comparison oracle: ties count one half.
double auc_brute(const Eigen::VectorXd& s, const std::vector<int>& y) {
  double num = 0.0;
  std::int64_t pairs = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!y[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      if (y[static_cast<std::size_t>(j)]) continue;
      ++pairs;
      if (s(i) > s(j))
        num += 1.0;
      else if (s(i) == s(j))
        num += 0.5;
    }
  }
  return num / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("rank-sum AUC equals the pairwise oracle, ties included") {
  Rng rng(99);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_int(60));
    Eigen::VectorXd s(n);
    std::vector<int> y(static_cast<std::size_t>(n));
    int n_pos = 0;
    for (int i = 0; i < n; ++i) {
      // Coarse grid forces plenty of exact ties.
      s(i) = static_cast<double>(rng.uniform_int(8)) / 4.0;
      y[static_cast<std::size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
      n_pos += y[static_cast<std::size_t>(i)];
    }
    if (n_pos == 0 || n_pos == n) {
      y[0] = 1 - y[0];
      n_pos = 0;
      for (int v : y) n_pos += v;
      if (n_pos == 0 || n_pos == n) continue;
    }
    CHECK(auc(s, y) == doctest::Approx(auc_brute(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("AUC refuses single-class inputs") {
  Eigen::VectorXd s(3);
  s << 0.1, 0.5, 0.9;
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1}), NumericError);
  CHECK_THROWS_AS(auc(s, std::vector<int>{0, 0, 0}), NumericError);
}

TEST_CASE("AUC known values") {
  Eigen::VectorXd s(4);
  s << 0.9, 0.8, 0.2, 0.1;
  CHECK(auc(s, {1, 1, 0, 0}) == 1.0);
  CHECK(auc(s, {0, 0, 1, 1}) == 0.0);
  Eigen::VectorXd t = Eigen::VectorXd::Constant(4, 0.5);
  CHECK(auc(t, {1, 0, 1, 0}) == 0.5);  // all tied
}

TEST_CASE("perfect scores give exactly lift 10 at K=10") {
  // 3 videos with n = 40, 25, 66; labels = top ceil(0.1 n) by construction.
  Rng rng(5);
  std::vector<int> sizes = {40, 25, 66};
  std::vector<double> sv;
  std::vector<int> yv;
  std::vector<std::string> vv;
  for (std::size_t v = 0; v < sizes.size(); ++v) {
    const int n = sizes[v];
    const int k = static_cast<int>(std::ceil(0.1 * n));
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = (i + 1.0) / n;
    // Label the top-k scores positive; order of rows shuffled.
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    for (int idx : order) {
      sv.push_back(scores[static_cast<std::size_t>(idx)]);
      yv.push_back(idx >= n - k ? 1 : 0);
      vv.push_back("video" + std::to_string(v));
    }
  }
  Eigen::VectorXd s = Eigen::Map<Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  CHECK(lift_at_k(s, yv, vv, 10) == 10.0);
  CHECK(lift_at_k(s, yv, vv, 10, true) == 10.0);
}

TEST_CASE("random scores give lift near one") {
  Rng rng(1234);
  double total = 0.0;
  const int corpora = 300;
  for (int c = 0; c < corpora; ++c) {
    std::vector<double> sv;
    std::vector<int> yv;
    std::vector<std::string> vv;
    for (int v = 0; v < 4; ++v) {
      const int n = 50 + static_cast<int>(rng.uniform_int(30));
      const int k = static_cast<int>(std::ceil(0.1 * n));
      for (int i = 0; i < n; ++i) {
        sv.push_back(rng.uniform01());
        yv.push_back(i < k ? 1 : 0);  // base rate matches the selection size
        vv.push_back("v" + std::to_string(v));
      }
    }
    Eigen::VectorXd s =
        Eigen::Map<Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
    total += lift_at_k(s, yv, vv, 10);
  }
  CHECK(std::abs(total / corpora - 1.0) < 0.1);
}

TEST_CASE("lift tie-break prefers the earlier row") {
  // Two positives hidden among ties; deterministic selection must take the
  // earliest rows of the tie group.
  Eigen::VectorXd s = Eigen::VectorXd::Constant(10, 0.7);
  std::vector<int> y = {1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  std::vector<std::string> v(10, "vid");
  CHECK(lift_at_k(s, y, v, 10) == 10.0);  // top-1 is row 0
  std::vector<int> y2 = {0, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  CHECK(lift_at_k(s, y2, v, 10) == 0.0);
}

namespace {

std::vector<signals::Moment> grid_moments() {
  std::vector<signals::Moment> ms;
  struct Vid {
    const char* id;
    const char* course;
    const char* field;
    int n;
  };
  // 6 videos over 3 courses and 2 fields with uneven sizes.
  std::vector<Vid> vids = {{"v1", "cA", "math", 30},   {"v2", "cA", "math", 25},
                           {"v3", "cB", "math", 40},   {"v4", "cB", "physics", 35},
                           {"v5", "cC", "physics", 20}, {"v6", "cC", "physics", 45}};
  for (const auto& v : vids) {
    for (int i = 0; i < v.n; ++i) {
      signals::Moment m;
      m.video_id = v.id;
      m.t = 30 + 5 * i;
      m.course_id = v.course;
      m.field = v.field;
      m.labels[{signals::SignalKind::PausedAt, 10}] = i == 0 ? 1 : 0;
      ms.push_back(m);
    }
  }
  return ms;
}

}  // namespace

TEST_CASE("course-grouped split keeps courses intact and reaches the target share") {
  auto ms = grid_moments();
  SplitConfig sc;
  sc.kind = SplitKind::CourseGrouped;
  sc.test_fraction = 0.10;
  sc.seed = 42;
  Split s = make_split(ms, sc);
  CHECK(s.train_rows.size() + s.test_rows.size() == ms.size());
  CHECK(s.test_rows.size() >= static_cast<std::size_t>(0.10 * ms.size()));

  std::set<std::string> test_courses(s.test_groups.begin(), s.test_groups.end());
  for (auto r : s.test_rows) CHECK(test_courses.count(ms[r].course_id) == 1);
  for (auto r : s.train_rows) CHECK(test_courses.count(ms[r].course_id) == 0);

  // Different seeds can pick different courses; the same seed always agrees.
  Split again = make_split(ms, sc);
  CHECK(again.test_groups == s.test_groups);
}

TEST_CASE("field holdout sends exactly that field to the test side") {
  auto ms = grid_moments();
  SplitConfig sc;
  sc.kind = SplitKind::FieldHoldout;
  sc.holdout_field = "physics";
  Split s = make_split(ms, sc);
  for (auto r : s.test_rows) CHECK(ms[r].field == "physics");
  for (auto r : s.train_rows) CHECK(ms[r].field == "math");

  sc.holdout_field = "chemistry";
  CHECK_THROWS_AS(make_split(ms, sc), ConfigError);
}
