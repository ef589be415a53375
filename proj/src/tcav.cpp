#include "vip/tcav.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vip/eval.hpp"
#include "vip/stats.hpp"
#include "vip/threading.hpp"

namespace vip::tcav {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Full-batch objective over rows of X: L2 logistic on 0/1 targets or ridge
// on (already centered) targets.  Regularizer l2 * |w|^2, bias free.
struct Objective {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  CavKind kind;
  double l2;

  double loss(const Eigen::VectorXd& w, double b) const {
    const double n = static_cast<double>(X.rows());
    Eigen::VectorXd z = (X * w).array() + b;
    double data;
    if (kind == CavKind::BinaryLogistic) {
      // mean softplus(z) - y.z, the stable cross-entropy-from-logits form
      data = (z.array().max(0.0) +
              (-z.array().abs()).unaryExpr([](double v) { return std::log1p(std::exp(v)); }) -
              y.array() * z.array())
                 .sum() /
             n;
    } else {
      data = (z - y).squaredNorm() / n;
    }
    return data + l2 * w.squaredNorm();
  }

  void grad(const Eigen::VectorXd& w, double b, Eigen::VectorXd& gw, double& gb) const {
    const double n = static_cast<double>(X.rows());
    Eigen::VectorXd z = (X * w).array() + b;
    Eigen::VectorXd r;
    if (kind == CavKind::BinaryLogistic) {
      r = z.unaryExpr(&sigmoid) - y;
    } else {
      r = 2.0 * (z - y);
    }
    gw = X.transpose() * r / n + 2.0 * l2 * w;
    gb = r.sum() / n;
  }
};

// Spectral (Barzilai-Borwein) gradient descent with an Armijo backtracking
// safeguard, so every step decreases the objective and the whole path is a
// deterministic function of the inputs.
LinearFit minimize(const Objective& obj, Eigen::VectorXd w, double b) {
  constexpr int kMaxIter = 10000;
  constexpr double kTol = 1e-8;

  Eigen::VectorXd gw;
  double gb = 0.0;
  obj.grad(w, b, gw, gb);
  double f = obj.loss(w, b);

  Eigen::VectorXd pw = w, pgw = gw;
  double pb = b, pgb = gb;

  int it = 0;
  double gn = std::sqrt(gw.squaredNorm() + gb * gb);
  double alpha_ok = 1.0;  // last accepted step length
  // Zhang-Hager nonmonotone reference value; comparing against a running
  // average instead of f keeps spectral steps usable down to the roundoff
  // floor of the objective.  https://doi.org/10.1137/S1052623403428208
  double cref = f, q = 1.0;
  for (; it < kMaxIter && gn >= kTol; ++it) {
    double alpha = alpha_ok;
    if (it > 0) {
      // BB1 step (s.s)/(s.dg), bounded relative to the last accepted step so
      // a wild proposal on a flat stretch cannot cost dozens of backtracks.
      const Eigen::VectorXd s = w - pw;
      const Eigen::VectorXd dg = gw - pgw;
      const double sb = b - pb, dgb = gb - pgb;
      const double num = s.squaredNorm() + sb * sb;
      const double den = s.dot(dg) + sb * dgb;
      if (den > 1e-300) alpha = num / den;
      alpha = std::clamp(alpha, 1e-15, 100.0 * alpha_ok);
    }
    bool moved = false;
    const double g2 = gw.squaredNorm() + gb * gb;
    for (int h = 0; h < 60; ++h) {
      Eigen::VectorXd wn = w - alpha * gw;
      const double bn = b - alpha * gb;
      const double fn = obj.loss(wn, bn);
      if (fn <= cref - 1e-4 * alpha * g2) {
        const double qn = 0.85 * q + 1.0;
        cref = (0.85 * q * cref + fn) / qn;
        q = qn;
        pw.swap(w);
        pgw.swap(gw);
        pb = b;
        pgb = gb;
        w = std::move(wn);
        b = bn;
        f = fn;
        obj.grad(w, b, gw, gb);
        alpha_ok = alpha;
        moved = true;
        break;
      }
      alpha *= 0.25;
    }
    if (!moved) break;  // even the shortest step fails Armijo: numerical floor
    gn = std::sqrt(gw.squaredNorm() + gb * gb);
  }
  LinearFit out;
  out.w = std::move(w);
  out.b = b;
  out.iterations = it;
  out.grad_norm = gn;
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, const std::vector<std::int64_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::int64_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = v(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Held-out quality: AUC of the probe scores for binary concepts, or the
// improvement of the fit over the train-mean predictor for ordinal ones
// (1 - mse/mse_baseline, an out-of-sample R^2).
double held_out_quality(const LinearFit& fit, const Eigen::MatrixXd& Xte,
                        const Eigen::VectorXd& yte, CavKind kind, double train_mean) {
  if (Xte.rows() == 0) return kind == CavKind::BinaryLogistic ? 0.5 : 0.0;
  Eigen::VectorXd z = (Xte * fit.w).array() + fit.b;
  if (kind == CavKind::BinaryLogistic) {
    std::vector<int> labels(static_cast<std::size_t>(yte.size()));
    bool saw0 = false, saw1 = false;
    for (Eigen::Index i = 0; i < yte.size(); ++i) {
      labels[static_cast<std::size_t>(i)] = yte(i) > 0.5 ? 1 : 0;
      (labels[static_cast<std::size_t>(i)] ? saw1 : saw0) = true;
    }
    if (!saw0 || !saw1) return 0.5;  // single-class held-out: uninformative
    return eval::auc(z, labels);
  }
  Eigen::VectorXd yc = yte.array() - train_mean;
  const double mse = (z - yc).squaredNorm() / static_cast<double>(yc.size());
  const double base = yc.squaredNorm() / static_cast<double>(yc.size());
  if (base <= 0.0) return mse <= 0.0 ? 1.0 : 0.0;
  return 1.0 - mse / base;
}

struct CavCore {
  Cav cav;
  SplitIdx split;
};

// The grid walk behind train_cav: 80/20 split, one fit per l2 (warm-started
// along the ascending grid, which a deterministic optimizer keeps
// reproducible), quality on the held-out rows, direction from the winning
// 80% fit itself.
CavCore train_cav_core(const Eigen::MatrixXd& acts, const Eigen::VectorXd& values, CavKind kind,
                       const std::vector<double>& l2_grid, Rng rng) {
  if (acts.rows() != values.size())
    throw ContractViolation("train_cav: activation/value count mismatch");
  if (l2_grid.empty()) throw ContractViolation("train_cav: empty l2 grid");
  for (double l2 : l2_grid)
    if (!(l2 > 0.0)) throw ContractViolation("train_cav: l2 must be positive");
  const Eigen::Index n = acts.rows();
  if (n < 20)
    throw DataError("DegenerateConcept: need at least 20 examples, got " + std::to_string(n));
  std::set<double> distinct;
  for (Eigen::Index i = 0; i < n; ++i) distinct.insert(values(i));
  if (distinct.size() < 2) throw DataError("DegenerateConcept: single class/level");
  if (kind == CavKind::BinaryLogistic) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (values(i) != 0.0 && values(i) != 1.0)
        throw ContractViolation("train_cav: binary concept values must be 0/1");
  }

  CavCore core;
  core.split = split_80_20(values, kind, rng.fork("split"));
  Eigen::MatrixXd Xtr = gather_rows(acts, core.split.train);
  Eigen::MatrixXd Xte = gather_rows(acts, core.split.test);
  Eigen::VectorXd ytr_raw = gather(values, core.split.train);
  Eigen::VectorXd yte = gather(values, core.split.test);

  double train_mean = 0.0;
  Eigen::VectorXd ytr = ytr_raw;
  if (kind == CavKind::OrdinalLinear) {
    train_mean = ytr_raw.mean();
    ytr = ytr_raw.array() - train_mean;
  }

  double best_q = -std::numeric_limits<double>::infinity();
  double best_l2 = l2_grid.front();
  LinearFit best_fit;
  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(acts.cols());
  double b0 = 0.0;
  for (double l2 : l2_grid) {
    Objective obj{Xtr, ytr, kind, l2};
    LinearFit fit = minimize(obj, w0, b0);
    w0 = fit.w;  // warm start the next grid point
    b0 = fit.b;
    const double q = held_out_quality(fit, Xte, yte, kind, train_mean);
    if (q > best_q) {
      best_q = q;
      best_l2 = l2;
      best_fit = std::move(fit);
    }
  }

  Cav& c = core.cav;
  c.kind = kind;
  c.l2 = best_l2;
  c.fit_quality = best_q;
  const double nw = best_fit.w.norm();
  if (nw < 1e-12) {
    c.degenerate = true;
    c.direction = Eigen::VectorXd::Zero(acts.cols());
  } else {
    c.direction = best_fit.w / nw;
  }
  return core;
}

}  // namespace

LinearFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, CavKind kind,
                     double l2) {
  if (X.rows() != y.size()) throw ContractViolation("fit_linear: row/target mismatch");
  if (X.rows() == 0) throw ContractViolation("fit_linear: empty input");
  if (!(l2 > 0.0)) throw ContractViolation("fit_linear: l2 must be positive");
  Objective obj{X, y, kind, l2};
  return minimize(obj, Eigen::VectorXd::Zero(X.cols()), 0.0);
}

SplitIdx split_80_20(const Eigen::VectorXd& values, CavKind kind, Rng rng) {
  const Eigen::Index n = values.size();
  SplitIdx s;
  auto take = [&](std::vector<std::int64_t>& cls) {
    rng.shuffle(cls);
    const std::size_t n_train = cls.size() - cls.size() / 5;
    for (std::size_t i = 0; i < cls.size(); ++i)
      (i < n_train ? s.train : s.test).push_back(cls[i]);
  };
  if (kind == CavKind::BinaryLogistic) {
    std::vector<std::int64_t> neg, pos;
    for (Eigen::Index i = 0; i < n; ++i) (values(i) > 0.5 ? pos : neg).push_back(i);
    take(neg);
    take(pos);
  } else {
    std::vector<std::int64_t> all(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    take(all);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Cav train_cav(const Eigen::MatrixXd& activations, const Eigen::VectorXd& values, CavKind kind,
              const std::vector<double>& l2_grid, Rng rng) {
  return train_cav_core(activations, values, kind, l2_grid, std::move(rng)).cav;
}

Cav random_cav(const Eigen::MatrixXd& activations, const SplitIdx& split, double l2, Rng rng) {
  if (!(l2 > 0.0)) throw ContractViolation("random_cav: l2 must be positive");
  if (split.train.empty()) throw ContractViolation("random_cav: empty train split");
  Eigen::VectorXd labels(activations.rows());
  for (Eigen::Index i = 0; i < labels.size(); ++i) labels(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Eigen::MatrixXd Xtr = gather_rows(activations, split.train);
  Eigen::VectorXd ytr = gather(labels, split.train);
  LinearFit fit = fit_linear(Xtr, ytr, CavKind::BinaryLogistic, l2);
  Cav c;
  c.kind = CavKind::BinaryLogistic;
  c.l2 = l2;
  c.fit_quality = 0.0;
  const double nw = fit.w.norm();
  if (nw < 1e-12) {
    c.degenerate = true;
    c.direction = Eigen::VectorXd::Zero(activations.cols());
  } else {
    c.direction = fit.w / nw;
  }
  return c;
}

// ------------------------------------------------------------------ layers

std::vector<LayerDef> layer_defs(const embed::EmbeddingManifest& manifest,
                                 const std::vector<std::string>& parts, int hidden_dim) {
  if (parts.empty()) throw ConfigError("no embedding parts selected");
  std::vector<LayerDef> out;
  int off = 0;
  for (const auto& name : parts) {
    if (name == "e_x" || name == "h1")
      throw ConfigError("embedding part name collides with the reserved layer '" + name + "'");
    const int d = manifest.dim_of(name);
    out.push_back({name, off, d, false});
    off += d;
  }
  out.push_back({"e_x", 0, off, false});
  out.push_back({"h1", 0, hidden_dim, true});
  return out;
}

ConceptExamples collect_examples(const embed::EmbeddingManifest& manifest,
                                 const std::vector<std::string>& parts,
                                 const std::vector<ctml::CTMLRecord>& records,
                                 ctml::Coder coder) {
  std::map<std::pair<std::string, int>, const ctml::CTMLRecord*> sel;
  for (const auto& r : records)
    if (r.coder == coder && manifest.has(r.video_id, r.t)) sel[{r.video_id, r.t}] = &r;

  ConceptExamples ex;
  std::vector<std::int64_t> rows;
  rows.reserve(sel.size());
  for (const auto& [key, rec] : sel) {
    ex.moments.push_back(key);
    rows.push_back(manifest.row_for(key.first, key.second));
    (void)rec;
  }
  ex.ex = manifest.assemble_rows(parts, rows);
  const Eigen::Index n = ex.ex.rows();
  for (const auto& f : ctml::feature_table()) {
    Eigen::VectorXd col(n);
    Eigen::Index i = 0;
    for (const auto& [key, rec] : sel) {
      (void)key;
      col(i++) = static_cast<double>(rec->values.at(f.key));
    }
    ex.values[f.key] = std::move(col);
  }
  return ex;
}

Eigen::MatrixXd layer_activations(const LayerDef& layer, const Eigen::MatrixXd& ex,
                                  const model::HeadParams& params, const model::HeadConfig& cfg) {
  (void)cfg;
  if (!layer.hidden) {
    if (layer.offset + layer.dim > ex.cols())
      throw ContractViolation("layer_activations: slice outside the assembled input");
    return ex.middleCols(layer.offset, layer.dim);
  }
  if (params.input_dim() != ex.cols())
    throw ContractViolation("layer_activations: model input dim does not match embeddings");
  // First hidden layer of the moment branch, dropout off.
  return ((params.W1 * ex.transpose()).colwise() + params.b1).cwiseMax(0.0).transpose();
}

// -------------------------------------------------------------- model side

PositiveSet positive_set(const model::HeadParams& params, const model::HeadConfig& cfg,
                         const model::Dataset& eval_data,
                         const std::map<std::string, Eigen::VectorXd>& reference) {
  Eigen::VectorXd p = model::predict_dataset(params, cfg, eval_data, reference);
  PositiveSet out;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.5) out.rows.push_back(i);
  const Eigen::Index B = static_cast<Eigen::Index>(out.rows.size());
  const Eigen::Index d = eval_data.X.cols();
  if (B == 0) {
    out.d_input.resize(0, d);
    out.d_hidden.resize(0, params.hidden_dim());
    return out;
  }
  Eigen::MatrixXd X(d, B);
  Eigen::MatrixXd Xref(cfg.use_reference ? d : 0, cfg.use_reference ? B : 0);
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto row = static_cast<Eigen::Index>(out.rows[static_cast<std::size_t>(j)]);
    X.col(j) = eval_data.X.row(row);
    if (cfg.use_reference) {
      auto it = reference.find(eval_data.video[static_cast<std::size_t>(row)]);
      if (it == reference.end())
        throw ContractViolation("positive_set: no reference embedding for video " +
                                eval_data.video[static_cast<std::size_t>(row)]);
      Xref.col(j) = it->second;
    }
  }
  auto g = model::logit_grads(params, cfg, X, Xref);
  out.d_input = g.d_input.transpose();
  out.d_hidden = g.d_hidden.transpose();
  return out;
}

Eigen::MatrixXd layer_gradients(const LayerDef& layer, const PositiveSet& pos) {
  if (layer.hidden) {
    if (layer.dim != pos.d_hidden.cols())
      throw ContractViolation("layer_gradients: hidden dim mismatch");
    return pos.d_hidden;
  }
  if (layer.offset + layer.dim > pos.d_input.cols())
    throw ContractViolation("layer_gradients: slice outside the input gradient");
  return pos.d_input.middleCols(layer.offset, layer.dim);
}

Eigen::VectorXd directional_derivatives(const Eigen::MatrixXd& grads,
                                        const Eigen::VectorXd& direction) {
  if (grads.cols() != direction.size())
    throw ContractViolation("directional_derivatives: dimension mismatch");
  return grads * direction;
}

double tcav_score(const Eigen::VectorXd& d_concept, const Eigen::VectorXd& d_random) {
  if (d_concept.size() != d_random.size())
    throw ContractViolation("tcav_score: derivative count mismatch");
  if (d_concept.size() == 0)
    throw NumericError("UndefinedTcav: no positively predicted examples");
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < d_concept.size(); ++i)
    if (d_concept(i) > d_random(i)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(d_concept.size());
}

Significance significance(const std::vector<double>& scores, int m, double alpha) {
  if (scores.size() < 2) throw ContractViolation("significance: need at least 2 scores");
  if (m < 1 || !(alpha > 0.0)) throw ContractViolation("significance: bad correction");
  Eigen::Map<const Eigen::VectorXd> v(scores.data(), static_cast<Eigen::Index>(scores.size()));
  auto r = stats::one_sample_t(v, 0.5);
  Significance s;
  s.t = r.t;
  s.p = r.p;
  s.significant = r.p < alpha / static_cast<double>(m);
  return s;
}

// ------------------------------------------------------------------ runner

namespace {

// Seeded per-repetition cap on probe rows.  Binary concepts keep their class
// mix (proportional per-class subsample, at least two minority rows), so a
// rare concept cannot lose a whole class to the cap.
std::vector<std::int64_t> cap_rows(const Eigen::VectorXd& vals, CavKind kind, int cap, Rng rng) {
  const Eigen::Index n = vals.size();
  std::vector<std::int64_t> out;
  if (n <= cap) {
    out.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
  if (kind == CavKind::BinaryLogistic) {
    std::vector<std::int64_t> neg, pos;
    for (Eigen::Index i = 0; i < n; ++i) (vals(i) > 0.5 ? pos : neg).push_back(i);
    auto n_pos = static_cast<std::int64_t>(pos.size());
    auto n_neg = static_cast<std::int64_t>(neg.size());
    std::int64_t k_pos = std::llround(static_cast<double>(cap) * static_cast<double>(n_pos) /
                                      static_cast<double>(n));
    k_pos = std::clamp(k_pos, std::min<std::int64_t>(2, n_pos), n_pos);
    std::int64_t k_neg = cap - k_pos;
    if (k_neg > n_neg) {
      k_neg = n_neg;
      k_pos = cap - k_neg;
    }
    if (k_neg < std::min<std::int64_t>(2, n_neg)) {
      k_neg = std::min<std::int64_t>(2, n_neg);
      k_pos = cap - k_neg;
    }
    for (auto idx : rng.sample_without_replacement(neg.size(), static_cast<std::size_t>(k_neg)))
      out.push_back(neg[idx]);
    for (auto idx : rng.sample_without_replacement(pos.size(), static_cast<std::size_t>(k_pos)))
      out.push_back(pos[idx]);
  } else {
    for (auto idx : rng.sample_without_replacement(static_cast<std::size_t>(n),
                                                   static_cast<std::size_t>(cap)))
      out.push_back(static_cast<std::int64_t>(idx));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<TcavResult> run_tcav(const model::HeadParams& params, const model::HeadConfig& cfg,
                                 const embed::EmbeddingManifest& manifest,
                                 const std::vector<ctml::CTMLRecord>& records,
                                 const model::Dataset& eval_data,
                                 const std::map<std::string, Eigen::VectorXd>& reference,
                                 const TcavConfig& tcfg) {
  if (tcfg.repetitions < 2) throw ConfigError("tcav repetitions must be >= 2");
  if (tcfg.max_examples < 20) throw ConfigError("tcav example cap must be >= 20");
  std::vector<std::string> concepts = tcfg.concepts;
  if (concepts.empty())
    for (const auto& f : ctml::feature_table()) concepts.push_back(f.key);
  for (const auto& c : concepts) ctml::feature(c);  // unknown -> ConfigError

  const std::vector<LayerDef> layers = layer_defs(manifest, tcfg.parts, params.hidden_dim());
  const ConceptExamples examples = collect_examples(manifest, tcfg.parts, records, tcfg.coder);
  const PositiveSet pos = positive_set(params, cfg, eval_data, reference);
  if (pos.rows.empty())
    throw NumericError("UndefinedTcav: the model makes no positive predictions on the "
                       "evaluation set");

  std::vector<Eigen::MatrixXd> acts(layers.size()), grads(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    acts[li] = layer_activations(layers[li], examples.ex, params, cfg);
    grads[li] = layer_gradients(layers[li], pos);
  }

  const Rng root = Rng(tcfg.seed).fork("tcav");
  std::vector<TcavResult> results(concepts.size() * layers.size());
  parallel_for(results.size(), tcfg.threads, [&](std::size_t task) {
    const std::size_t ci = task / layers.size();
    const std::size_t li = task % layers.size();
    const std::string& concept_key = concepts[ci];
    const LayerDef& layer = layers[li];
    TcavResult& res = results[task];
    res.concept_key = concept_key;
    res.layer = layer.name;

    const Eigen::VectorXd& vals = examples.values.at(concept_key);
    const CavKind kind = ctml::feature(concept_key).type == ctml::FeatureType::Ordinal
                             ? CavKind::OrdinalLinear
                             : CavKind::BinaryLogistic;
    std::set<double> distinct;
    for (Eigen::Index i = 0; i < vals.size(); ++i) distinct.insert(vals(i));
    const bool usable = examples.n() >= 20 && distinct.size() >= 2;

    double qual_sum = 0.0;
    int qual_n = 0;
    if (!usable) {
      res.degenerate = true;
      res.scores.assign(static_cast<std::size_t>(tcfg.repetitions), 0.5);
    } else {
      const Rng cl = root.fork(concept_key).fork(layer.name);
      for (int rep = 0; rep < tcfg.repetitions; ++rep) {
        Rng rs = cl.fork("rep", static_cast<std::uint64_t>(rep));
        const auto rows = cap_rows(vals, kind, tcfg.max_examples, rs.fork("sample"));
        Eigen::MatrixXd A = gather_rows(acts[li], rows);
        Eigen::VectorXd v = gather(vals, rows);
        CavCore core;
        try {
          core = train_cav_core(A, v, kind, tcfg.l2_grid, rs.fork("cav"));
        } catch (const DataError&) {
          res.degenerate = true;  // cap collapsed the concept in this draw
          res.scores.push_back(0.5);
          continue;
        }
        qual_sum += core.cav.fit_quality;
        ++qual_n;
        if (core.cav.degenerate) {
          res.degenerate = true;
          res.scores.push_back(0.5);
          continue;
        }
        Cav rnd = random_cav(A, core.split, core.cav.l2, rs.fork("random"));
        Eigen::VectorXd dc = grads[li] * core.cav.direction;
        Eigen::VectorXd dr = grads[li] * rnd.direction;
        res.scores.push_back(tcav_score(dc, dr));
      }
    }
    Eigen::Map<const Eigen::VectorXd> sv(res.scores.data(),
                                         static_cast<Eigen::Index>(res.scores.size()));
    res.mean = stats::mean(sv);
    res.std_dev = stats::sample_std(sv);
    const Significance sg = significance(res.scores, tcfg.bonferroni_m, tcfg.alpha);
    res.t_stat = sg.t;
    res.p_value = sg.p;
    res.significant = sg.significant;
    res.fit_quality = qual_n > 0 ? qual_sum / qual_n : 0.0;
  });
  return results;
}

ojson tcav_to_json(const std::vector<TcavResult>& results) {
  auto num = [](double v) { return std::isfinite(v) ? ojson(io::round_sig9(v)) : ojson(nullptr); };
  ojson arr = ojson::array();
  for (const auto& r : results) {
    ojson j;
    j["concept"] = r.concept_key;
    j["layer"] = r.layer;
    j["mean"] = num(r.mean);
    j["std"] = num(r.std_dev);
    j["t"] = num(r.t_stat);
    j["p"] = num(r.p_value);
    j["significant"] = r.significant;
    j["fit_quality"] = num(r.fit_quality);
    j["degenerate"] = r.degenerate;
    ojson sc = ojson::array();
    for (double s : r.scores) sc.push_back(io::round_sig9(s));
    j["scores"] = sc;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace vip::tcav
