#include "vip/ctml.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace vip::ctml {

const std::vector<FeatureSpec>& feature_table() {
  static const std::vector<FeatureSpec> table = [] {
    auto bin = [](std::string key, std::string name, std::string desc, bool center, bool window,
                  bool transcript) {
      FeatureSpec f;
      f.key = std::move(key);
      f.display_name = std::move(name);
      f.description = std::move(desc);
      f.type = FeatureType::Binary;
      f.levels = 2;
      f.modality = {center, window, transcript};
      return f;
    };
    auto ord = [](std::string key, std::string name, std::string desc, bool center, bool window,
                  bool transcript) {
      FeatureSpec f;
      f.key = std::move(key);
      f.display_name = std::move(name);
      f.description = std::move(desc);
      f.type = FeatureType::Ordinal;
      f.levels = 5;
      f.modality = {center, window, transcript};
      return f;
    };
    std::vector<FeatureSpec> t;
    t.push_back(bin("formula", "Formula",
                    "Math notation beyond single symbols is visible.", true, false, false));
    t.push_back(bin("instructor", "Instructor",
                    "Instructor's head is visible in the video.", true, false, false));
    t.push_back(bin("screen", "Screen",
                    "The user interface of a computer screen is embedded inside the image "
                    "(e.g., a code editor).",
                    true, false, false));
    t.push_back(bin("structured_viz", "Structured Information Visualization",
                    "A diagram, graph, schematic drawing, or table is on the slide (no "
                    "formulas, no GUI).",
                    true, false, false));
    t.push_back(bin("text_object", "Text Object",
                    "A printed or handwritten sentence, derivation, or bullet point is "
                    "visible (no labels, titles, footers, text in screenshots or code "
                    "editors, references).",
                    true, false, false));
    t.push_back(ord("visual_complexity", "Visual Complexity",
                    "The amount, complexity, and diversity of textual and graphical content "
                    "objects visible. Ignore instructors and typical slide elements like "
                    "logos or titles as elements.",
                    true, false, false));
    t.push_back(bin("annotating", "Annotating",
                    "In the frame progression, something new is being written by hand on "
                    "the slide or typed letter by letter inside an editor (no pens moving "
                    "without writing).",
                    false, true, false));
    t.push_back(bin("animation_video", "Animation / Video",
                    "Embedded videos or built-in animations (e.g., objects, figures, or "
                    "video footage). Frames showing only lecturer movement, keyboards, "
                    "hands, pointers, showing or typing or writing new text, or slide "
                    "transitions do not meet this requirement.",
                    false, true, false));
    t.push_back(bin("photo", "Photo",
                    "The second frame shows or includes a static real-world photograph, "
                    "e.g., nature, people, objects, scenery (no instructor, hands, "
                    "keyboard, or pointer, scans of handwritings).",
                    false, true, false));
    t.push_back(bin("showing", "Showing",
                    "The lecturer's hand or pen appears on the slide (no writing or "
                    "speaking hand gestures).",
                    false, true, false));
    t.push_back(bin("visual_breakpoint", "Visual Breakpoint",
                    "Clear slide transitions or cuts in videos and animations. No "
                    "additions to the current slide, focus on disappearing content.",
                    false, true, false));
    t.push_back(bin("signaling", "Signaling",
                    "(Subtle) hints of the importance of information (\"main\", "
                    "\"important\", \"interesting\", \"key\", \"noteworthy\", etc.).",
                    false, false, true));
    t.push_back(bin("interactivity", "Interactivity",
                    "Questions or prompts to the audience and other suggestions to active "
                    "learning (such as reflections, lookups, or exercises).",
                    false, false, true));
    t.push_back(bin("semantic_breakpoint", "Semantic Breakpoint",
                    "The video could be clearly cut at one point where the speaker starts "
                    "a new point, an example, a summary, an enumeration, a side note.",
                    true, false, true));
    t.push_back(ord("redundancy", "Redundancy",
                    "Correspondence between the spoken and visible slide content.", false,
                    true, true));
    return t;
  }();
  return table;
}

const FeatureSpec& feature(const std::string& key) {
  for (const auto& f : feature_table())
    if (f.key == key) return f;
  throw ConfigError("unknown feature: '" + key + "'");
}

int feature_index(const std::string& key) {
  const auto& t = feature_table();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].key == key) return static_cast<int>(i);
  throw ConfigError("unknown feature: '" + key + "'");
}

const char* coder_name(Coder c) {
  switch (c) {
    case Coder::HumanA: return "human_a";
    case Coder::HumanB: return "human_b";
    case Coder::Adjudicated: return "adjudicated";
    case Coder::Machine: return "machine";
  }
  return "?";
}

Coder coder_from_name(const std::string& name) {
  for (Coder c : {Coder::HumanA, Coder::HumanB, Coder::Adjudicated, Coder::Machine})
    if (name == coder_name(c)) return c;
  throw DataError("unknown coder: '" + name + "'");
}

void validate_record(const CTMLRecord& r) {
  if (r.video_id.empty()) throw DataError("rating record without video id");
  if (r.t < 0) throw DataError("rating record with negative t");
  for (const auto& f : feature_table()) {
    auto it = r.values.find(f.key);
    if (it == r.values.end())
      throw DataError("rating record (" + r.video_id + ", " + std::to_string(r.t) +
                      ") missing feature '" + f.key + "'");
    const int v = it->second;
    const int lo = f.type == FeatureType::Binary ? 0 : 1;
    const int hi = f.type == FeatureType::Binary ? 1 : f.levels;
    if (v < lo || v > hi)
      throw DataError("feature '" + f.key + "' value " + std::to_string(v) + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  if (r.values.size() != feature_table().size()) {
    for (const auto& kv : r.values) {
      bool known = false;
      for (const auto& f : feature_table()) known = known || f.key == kv.first;
      if (!known) throw DataError("rating record with unknown feature '" + kv.first + "'");
    }
  }
}

Eigen::VectorXd features_to_vector(const CTMLRecord& r) {
  validate_record(r);
  const auto& table = feature_table();
  Eigen::VectorXd out(static_cast<Eigen::Index>(table.size()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    const int v = r.values.at(table[i].key);
    out(static_cast<Eigen::Index>(i)) =
        table[i].type == FeatureType::Binary
            ? static_cast<double>(v)
            : static_cast<double>(v - 1) / static_cast<double>(table[i].levels - 1);
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<CTMLRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    validate_record(r);
    ojson j;
    j["video_id"] = r.video_id;
    j["t"] = r.t;
    j["coder"] = coder_name(r.coder);
    ojson vals;
    for (const auto& f : feature_table()) vals[f.key] = r.values.at(f.key);
    j["features"] = vals;
    out += j.dump();
    out += '\n';
  }
  io::write_file(path, out);
}

std::vector<CTMLRecord> read_records(const std::filesystem::path& path) {
  std::vector<CTMLRecord> out;
  std::set<std::tuple<std::string, int, Coder>> seen;
  io::for_each_line(path, [&](std::size_t lineno, std::string_view line) {
    if (line.empty()) return;
    io::json j;
    try {
      j = io::json::parse(line);
    } catch (const io::json::exception& e) {
      throw DataError("ratings line " + std::to_string(lineno + 1) + ": " + e.what());
    }
    CTMLRecord r;
    try {
      r.video_id = j.at("video_id").get<std::string>();
      r.t = j.at("t").get<int>();
      r.coder = coder_from_name(j.at("coder").get<std::string>());
      for (const auto& [k, v] : j.at("features").items()) {
        if (!v.is_number_integer())
          throw DataError("feature '" + k + "' is not an integer");
        r.values[k] = v.get<int>();
      }
    } catch (const io::json::exception& e) {
      throw DataError("ratings line " + std::to_string(lineno + 1) + ": " + e.what());
    }
    validate_record(r);
    if (!seen.insert({r.video_id, r.t, r.coder}).second)
      throw DataError("ratings line " + std::to_string(lineno + 1) + ": duplicate (" +
                      r.video_id + ", " + std::to_string(r.t) + ", " + coder_name(r.coder) + ")");
    out.push_back(std::move(r));
  });
  return out;
}

// --------------------------------------------------------------------- kappas

double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ContractViolation("cohen_kappa: length mismatch");
  if (a.empty()) throw ContractViolation("cohen_kappa: empty input");
  // Integer counts keep the chance-agreement term exact; accumulating 1/n
  // proportions can miss the pe == 1 degenerate case by one ulp.
  const double n = static_cast<double>(a.size());
  std::map<int, long> ca, cb;
  long agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    if (a[i] == b[i]) ++agree;
  }
  double chance = 0.0;  // n^2 * pe
  for (const auto& [k, c] : ca) {
    auto it = cb.find(k);
    if (it != cb.end()) chance += static_cast<double>(c) * static_cast<double>(it->second);
  }
  // pe == 1 forces both marginals onto one shared category, i.e. identical
  // constant ratings: perfect agreement by convention.
  if (chance >= n * n) return 1.0;
  const double po = static_cast<double>(agree) / n;
  const double pe = chance / (n * n);
  return (po - pe) / (1.0 - pe);
}

double weighted_kappa(const std::vector<int>& a, const std::vector<int>& b, int levels, int lo) {
  if (a.size() != b.size()) throw ContractViolation("weighted_kappa: length mismatch");
  if (a.empty()) throw ContractViolation("weighted_kappa: empty input");
  if (levels < 2) throw ContractViolation("weighted_kappa: need >= 2 levels");
  const int L = levels;
  const double n = static_cast<double>(a.size());
  Eigen::MatrixXd O = Eigen::MatrixXd::Zero(L, L);  // integer-valued counts
  Eigen::VectorXd ma = Eigen::VectorXd::Zero(L), mb = Eigen::VectorXd::Zero(L);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int x = a[i] - lo, y = b[i] - lo;
    if (x < 0 || x >= L || y < 0 || y >= L)
      throw ContractViolation("weighted_kappa: rating outside [lo, lo+levels)");
    O(x, y) += 1.0;
    ma(x) += 1.0;
    mb(y) += 1.0;
  }
  const double denom = static_cast<double>((L - 1) * (L - 1));
  double wo = 0.0, we = 0.0;  // n * sum(wO), n^2 * sum(wE), up to 1/denom
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / denom;
      wo += w * O(i, j);
      we += w * ma(i) * mb(j);
    }
  }
  // we == 0 only when both raters sit constant on the same level.
  if (we <= 0.0) return 1.0;
  return 1.0 - (wo * n) / we;
}

std::vector<FeatureAgreement> agreement_summary(const std::vector<CTMLRecord>& records, Coder x,
                                                Coder y) {
  std::map<std::pair<std::string, int>, const CTMLRecord*> rx, ry;
  for (const auto& r : records) {
    if (r.coder == x) rx[{r.video_id, r.t}] = &r;
    if (r.coder == y) ry[{r.video_id, r.t}] = &r;
  }
  std::vector<FeatureAgreement> out;
  for (const auto& f : feature_table()) {
    std::vector<int> va, vb;
    for (const auto& [key, ra] : rx) {
      auto it = ry.find(key);
      if (it == ry.end()) continue;
      va.push_back(ra->values.at(f.key));
      vb.push_back(it->second->values.at(f.key));
    }
    FeatureAgreement fa;
    fa.feature = f.key;
    fa.n = static_cast<std::int64_t>(va.size());
    if (!va.empty()) {
      fa.kappa = f.type == FeatureType::Binary ? cohen_kappa(va, vb)
                                               : weighted_kappa(va, vb, f.levels, 1);
    }
    out.push_back(std::move(fa));
  }
  return out;
}

// ----------------------------------------------------------- association

std::vector<Association> association_summary(const std::vector<CTMLRecord>& records,
                                             const RankLookup& ranks) {
  std::vector<Association> out;
  for (const auto& f : feature_table()) {
    for (signals::SignalKind sig : signals::kAllSignals) {
      Association assoc;
      assoc.feature = f.key;
      assoc.signal = sig;

      const int lo = f.type == FeatureType::Binary ? 0 : 1;
      const int n_levels = f.type == FeatureType::Binary ? 2 : f.levels;
      std::vector<std::vector<double>> groups(static_cast<std::size_t>(n_levels));
      for (const auto& r : records) {
        auto it = ranks.find({r.video_id, r.t});
        if (it == ranks.end()) continue;  // moment without a signal value
        const int level = r.values.at(f.key) - lo;
        groups[static_cast<std::size_t>(level)].push_back(
            it->second[static_cast<std::size_t>(sig)]);
      }
      for (int l = 0; l < n_levels; ++l) {
        LevelStat ls;
        ls.level = lo + l;
        ls.n = static_cast<std::int64_t>(groups[static_cast<std::size_t>(l)].size());
        if (ls.n > 0) {
          double s = 0.0;
          for (double v : groups[static_cast<std::size_t>(l)]) s += v;
          ls.mean_rank = s / static_cast<double>(ls.n);
        }
        assoc.levels.push_back(ls);
      }
      if (f.type == FeatureType::Binary && groups[0].size() >= 2 && groups[1].size() >= 2) {
        Eigen::VectorXd g0 = Eigen::Map<Eigen::VectorXd>(groups[0].data(),
                                                         static_cast<Eigen::Index>(groups[0].size()));
        Eigen::VectorXd g1 = Eigen::Map<Eigen::VectorXd>(groups[1].data(),
                                                         static_cast<Eigen::Index>(groups[1].size()));
        assoc.ttest = stats::welch_two_sample(g1, g0);
        assoc.significant = assoc.ttest->p < 0.01;
      }
      out.push_back(std::move(assoc));
    }
  }
  return out;
}

ojson associations_to_json(const std::vector<Association>& assoc) {
  ojson arr = ojson::array();
  for (const auto& a : assoc) {
    ojson j;
    j["feature"] = a.feature;
    j["signal"] = signals::signal_name(a.signal);
    j["levels"] = ojson::array();
    for (const auto& l : a.levels) {
      ojson lj;
      lj["level"] = l.level;
      lj["n"] = l.n;
      if (l.n > 0) lj["mean_rank"] = io::round_sig9(l.mean_rank);
      j["levels"].push_back(lj);
    }
    if (a.ttest) {
      j["t"] = io::round_sig9(a.ttest->t);
      j["df"] = io::round_sig9(a.ttest->df);
      j["p"] = io::round_sig9(a.ttest->p);
      j["significant"] = a.significant;
    }
    arr.push_back(j);
  }
  return arr;
}

}  // namespace vip::ctml
