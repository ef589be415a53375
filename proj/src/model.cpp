#include "vip/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "vip/io.hpp"

namespace vip::model {

std::vector<Eigen::Map<Eigen::ArrayXd>> param_views(HeadParams& p) {
  std::vector<Eigen::Map<Eigen::ArrayXd>> v;
  v.emplace_back(p.W1.data(), p.W1.size());
  v.emplace_back(p.b1.data(), p.b1.size());
  if (p.W1r.size() > 0) {
    v.emplace_back(p.W1r.data(), p.W1r.size());
    v.emplace_back(p.b1r.data(), p.b1r.size());
  }
  v.emplace_back(p.W2.data(), p.W2.size());
  v.emplace_back(p.b2.data(), p.b2.size());
  v.emplace_back(p.W3.data(), p.W3.size());
  v.emplace_back(&p.b3, 1);
  return v;
}

std::vector<Eigen::Map<const Eigen::ArrayXd>> param_views(const HeadParams& p) {
  std::vector<Eigen::Map<const Eigen::ArrayXd>> v;
  v.emplace_back(p.W1.data(), p.W1.size());
  v.emplace_back(p.b1.data(), p.b1.size());
  if (p.W1r.size() > 0) {
    v.emplace_back(p.W1r.data(), p.W1r.size());
    v.emplace_back(p.b1r.data(), p.b1r.size());
  }
  v.emplace_back(p.W2.data(), p.W2.size());
  v.emplace_back(p.b2.data(), p.b2.size());
  v.emplace_back(p.W3.data(), p.W3.size());
  v.emplace_back(&p.b3, 1);
  return v;
}

namespace {

// Row-by-row fill so the draw order is independent of Eigen's storage order.
void fill_he_normal(Eigen::MatrixXd& m, double fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, sd);
}

}  // namespace

HeadParams init_params(int input_dim, const HeadConfig& cfg, Rng rng) {
  if (input_dim <= 0) throw ContractViolation("init_params: input_dim must be positive");
  if (cfg.hidden <= 0) throw ContractViolation("init_params: hidden must be positive");
  HeadParams p;
  const int h = cfg.hidden;
  p.W1.resize(h, input_dim);
  fill_he_normal(p.W1, input_dim, rng);
  p.b1 = Eigen::VectorXd::Zero(h);
  if (cfg.use_reference && !cfg.weight_share) {
    p.W1r.resize(h, input_dim);
    fill_he_normal(p.W1r, input_dim, rng);
    p.b1r = Eigen::VectorXd::Zero(h);
  }
  p.W2.resize(h, 2 * h);
  fill_he_normal(p.W2, 2.0 * h, rng);
  p.b2 = Eigen::VectorXd::Zero(h);
  Eigen::MatrixXd w3(1, h);
  fill_he_normal(w3, h, rng);
  p.W3 = w3.transpose();
  p.b3 = 0.0;
  return p;
}

HeadParams zeros_like(const HeadParams& like) {
  HeadParams g;
  g.W1 = Eigen::MatrixXd::Zero(like.W1.rows(), like.W1.cols());
  g.b1 = Eigen::VectorXd::Zero(like.b1.size());
  if (like.W1r.size() > 0) {
    g.W1r = Eigen::MatrixXd::Zero(like.W1r.rows(), like.W1r.cols());
    g.b1r = Eigen::VectorXd::Zero(like.b1r.size());
  }
  g.W2 = Eigen::MatrixXd::Zero(like.W2.rows(), like.W2.cols());
  g.b2 = Eigen::VectorXd::Zero(like.b2.size());
  g.W3 = Eigen::VectorXd::Zero(like.W3.size());
  g.b3 = 0.0;
  return g;
}

Eigen::VectorXd forward(const HeadParams& p, const HeadConfig& cfg, const Eigen::MatrixXd& X,
                        const Eigen::MatrixXd& Xref, const Eigen::MatrixXd* mask,
                        ForwardCache* cache) {
  const int h = p.hidden_dim();
  const Eigen::Index B = X.cols();
  if (X.rows() != p.W1.cols()) throw ContractViolation("forward: input dim mismatch");
  if (cfg.use_reference && (Xref.rows() != X.rows() || Xref.cols() != B))
    throw ContractViolation("forward: reference batch shape mismatch");
  if (mask && (mask->rows() != h || mask->cols() != B))
    throw ContractViolation("forward: dropout mask shape mismatch");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;

  c.Apre = (p.W1 * X).colwise() + p.b1;
  c.A = c.Apre.cwiseMax(0.0);

  Eigen::MatrixXd cat(2 * h, B);
  cat.topRows(h) = c.A;
  if (cfg.use_reference) {
    const Eigen::MatrixXd& W1r = cfg.weight_share ? p.W1 : p.W1r;
    const Eigen::VectorXd& b1r = cfg.weight_share ? p.b1 : p.b1r;
    if (W1r.size() == 0) throw ContractViolation("forward: reference branch has no weights");
    c.Rpre = (W1r * Xref).colwise() + b1r;
    c.R = c.Rpre.cwiseMax(0.0);
    cat.bottomRows(h) = c.R;
  } else {
    cat.bottomRows(h).setZero();
  }

  c.Zpre = (p.W2 * cat).colwise() + p.b2;
  c.Z = c.Zpre.cwiseMax(0.0);
  if (mask) {
    // Inverted dropout: surviving units are scaled up so the expected
    // activation matches evaluation mode.
    c.Zdrop = c.Z.cwiseProduct(*mask) / (1.0 - cfg.dropout);
  } else {
    c.Zdrop = c.Z;
  }
  c.logits = (p.W3.transpose() * c.Zdrop).transpose();
  c.logits.array() += p.b3;
  return c.logits;
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& logits) {
  return logits.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

double bce_from_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& y) {
  if (logits.size() != y.size()) throw ContractViolation("bce_from_logits: size mismatch");
  if (logits.size() == 0) throw ContractViolation("bce_from_logits: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    // softplus(x) - y*x, with softplus(x) = max(x,0) + log1p(exp(-|x|))
    total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - y[i] * x;
  }
  return total / static_cast<double>(logits.size());
}

GradResult loss_and_grads(const HeadParams& p, const HeadConfig& cfg, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Xref, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd* mask) {
  const int h = p.hidden_dim();
  const Eigen::Index B = X.cols();
  if (y.size() != B) throw ContractViolation("loss_and_grads: label batch size mismatch");

  ForwardCache c;
  forward(p, cfg, X, Xref, mask, &c);

  GradResult out;
  out.loss = bce_from_logits(c.logits, y);
  out.grads = zeros_like(p);

  // d BCE / d logit = sigmoid(logit) - y, averaged over the batch.
  Eigen::VectorXd dlogit = (sigmoid(c.logits) - y) / static_cast<double>(B);

  out.grads.W3 = c.Zdrop * dlogit;
  out.grads.b3 = dlogit.sum();

  Eigen::MatrixXd dZdrop = p.W3 * dlogit.transpose();  // h x B
  Eigen::MatrixXd dZ = mask ? Eigen::MatrixXd(dZdrop.cwiseProduct(*mask) / (1.0 - cfg.dropout))
                            : std::move(dZdrop);
  Eigen::MatrixXd dZpre =
      dZ.cwiseProduct((c.Zpre.array() > 0.0).cast<double>().matrix());

  Eigen::MatrixXd cat(2 * h, B);
  cat.topRows(h) = c.A;
  if (cfg.use_reference)
    cat.bottomRows(h) = c.R;
  else
    cat.bottomRows(h).setZero();

  out.grads.W2 = dZpre * cat.transpose();
  out.grads.b2 = dZpre.rowwise().sum();

  Eigen::MatrixXd dCat = p.W2.transpose() * dZpre;  // 2h x B
  Eigen::MatrixXd dApre =
      dCat.topRows(h).cwiseProduct((c.Apre.array() > 0.0).cast<double>().matrix());
  out.grads.W1 = dApre * X.transpose();
  out.grads.b1 = dApre.rowwise().sum();
  out.dX = p.W1.transpose() * dApre;

  if (cfg.use_reference) {
    Eigen::MatrixXd dRpre =
        dCat.bottomRows(h).cwiseProduct((c.Rpre.array() > 0.0).cast<double>().matrix());
    if (cfg.weight_share) {
      out.grads.W1 += dRpre * Xref.transpose();
      out.grads.b1 += dRpre.rowwise().sum();
    } else {
      out.grads.W1r = dRpre * Xref.transpose();
      out.grads.b1r = dRpre.rowwise().sum();
    }
  }
  return out;
}

LogitGrads logit_grads(const HeadParams& p, const HeadConfig& cfg, const Eigen::MatrixXd& X,
                       const Eigen::MatrixXd& Xref) {
  const int h = p.hidden_dim();
  const Eigen::Index B = X.cols();
  ForwardCache c;
  forward(p, cfg, X, Xref, nullptr, &c);

  // d logit / d z_pre for every example: W3 gated by the second ReLU.
  Eigen::MatrixXd dZpre =
      (p.W3.replicate(1, B)).cwiseProduct((c.Zpre.array() > 0.0).cast<double>().matrix());
  Eigen::MatrixXd dCat = p.W2.transpose() * dZpre;

  LogitGrads g;
  g.d_hidden = dCat.topRows(h);  // gradient at the activation itself
  Eigen::MatrixXd dApre =
      g.d_hidden.cwiseProduct((c.Apre.array() > 0.0).cast<double>().matrix());
  g.d_input = p.W1.transpose() * dApre;
  return g;
}

// ------------------------------------------------------------------ training

namespace {

struct AdamState {
  HeadParams m, v;
  std::int64_t t = 0;
};

void adam_step(HeadParams& p, const HeadParams& g, AdamState& s, const TrainConfig& cfg) {
  ++s.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  auto pv = param_views(p);
  auto gv = param_views(g);
  auto mv = param_views(s.m);
  auto vv = param_views(s.v);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    mv[i] = cfg.beta1 * mv[i] + (1.0 - cfg.beta1) * gv[i];
    vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * gv[i].square();
    pv[i] -= cfg.lr * (mv[i] / bc1) / ((vv[i] / bc2).sqrt() + cfg.adam_eps);
  }
}

Eigen::MatrixXd make_dropout_mask(int h, Eigen::Index B, double p_drop, Rng rng) {
  Eigen::MatrixXd mask(h, B);
  for (Eigen::Index b = 0; b < B; ++b)
    for (int u = 0; u < h; ++u) mask(u, b) = rng.uniform01() < p_drop ? 0.0 : 1.0;
  return mask;
}

// Gathers dataset rows into column-per-example matrices plus per-row references.
struct Gathered {
  Eigen::MatrixXd X, Xref;
  Eigen::VectorXd y;
};

Gathered gather(const Dataset& data, const std::vector<std::int64_t>& rows,
                const std::map<std::string, Eigen::VectorXd>& reference, bool use_reference) {
  Gathered g;
  const Eigen::Index d = data.X.cols();
  g.X.resize(d, static_cast<Eigen::Index>(rows.size()));
  g.Xref.resize(use_reference ? d : 0, use_reference ? static_cast<Eigen::Index>(rows.size()) : 0);
  g.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    g.X.col(static_cast<Eigen::Index>(i)) = data.X.row(r).transpose();
    g.y[static_cast<Eigen::Index>(i)] = static_cast<double>(data.label[static_cast<std::size_t>(r)]);
    if (use_reference) {
      auto it = reference.find(data.video[static_cast<std::size_t>(r)]);
      if (it == reference.end())
        throw ContractViolation("train: no reference embedding for video '" +
                                data.video[static_cast<std::size_t>(r)] + "'");
      g.Xref.col(static_cast<Eigen::Index>(i)) = it->second;
    }
  }
  return g;
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  const std::int64_t n = data.n();
  if (data.X.rows() != n || static_cast<std::int64_t>(data.video.size()) != n)
    throw ContractViolation("train: dataset arrays disagree on length");
  if (n == 0) throw DataError("CannotTrain: empty dataset");
  for (int v : data.label)
    if (v != 0 && v != 1) throw ContractViolation("train: labels must be 0/1");

  Rng root(cfg.seed);

  // Class balance by subsampling the majority negatives (never upsampling).
  std::vector<std::int64_t> pos, neg;
  for (std::int64_t i = 0; i < n; ++i) (data.label[static_cast<std::size_t>(i)] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw DataError("CannotTrain: need both classes, got " + std::to_string(pos.size()) +
                    " positive / " + std::to_string(neg.size()) + " negative moments");

  std::vector<std::int64_t> balanced = pos;
  if (neg.size() > pos.size()) {
    Rng bal = root.fork("balance");
    std::vector<std::size_t> pick = bal.sample_without_replacement(neg.size(), pos.size());
    for (std::size_t k : pick) balanced.push_back(neg[k]);
  } else {
    balanced.insert(balanced.end(), neg.begin(), neg.end());
  }
  std::sort(balanced.begin(), balanced.end());

  // Per-video reference embeddings over the balanced rows, weighted to restore
  // the unbalanced class prevalence (top fraction K/100 vs 1 - K/100).
  const double w_pos = cfg.top_percent / 100.0;
  const double w_neg = 1.0 - w_pos;
  std::map<std::string, Eigen::VectorXd> ref_sum;
  std::map<std::string, double> ref_wt;
  for (std::int64_t r : balanced) {
    const auto& vid = data.video[static_cast<std::size_t>(r)];
    const double w = data.label[static_cast<std::size_t>(r)] ? w_pos : w_neg;
    auto it = ref_sum.try_emplace(vid, Eigen::VectorXd::Zero(data.X.cols())).first;
    it->second += w * data.X.row(r).transpose();
    ref_wt[vid] += w;
  }
  std::map<std::string, Eigen::VectorXd> reference;
  for (auto& [vid, sum] : ref_sum) {
    const double w = ref_wt[vid];
    if (!(w > 0.0)) throw DataError("DegenerateWeights: reference weights sum to zero for '" + vid + "'");
    reference.emplace(vid, sum / w);
  }

  // Validation holds out whole videos so early stopping never sees moments of
  // a video it also trains on.
  std::map<std::string, std::int64_t> vid_count;
  for (std::int64_t r : balanced) vid_count[data.video[static_cast<std::size_t>(r)]]++;
  std::vector<std::string> vids;
  for (const auto& [v, cnt] : vid_count) vids.push_back(v);
  Rng vs = root.fork("val_split");
  vs.shuffle(vids);
  const std::int64_t val_target = static_cast<std::int64_t>(
      std::ceil(cfg.val_fraction * static_cast<double>(balanced.size())));
  std::set<std::string> val_videos;
  std::int64_t val_count = 0;
  for (const auto& v : vids) {
    if (val_count >= val_target) break;
    if (static_cast<std::int64_t>(val_videos.size()) + 1 >= static_cast<std::int64_t>(vids.size()))
      break;  // keep at least one video for training
    val_videos.insert(v);
    val_count += vid_count[v];
  }

  std::vector<std::int64_t> train_rows, val_rows;
  for (std::int64_t r : balanced)
    (val_videos.count(data.video[static_cast<std::size_t>(r)]) ? val_rows : train_rows).push_back(r);

  bool has_pos = false, has_neg = false;
  for (std::int64_t r : train_rows) (data.label[static_cast<std::size_t>(r)] ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw DataError("CannotTrain: training split is single-class after validation holdout");

  Gathered tr = gather(data, train_rows, reference, cfg.head.use_reference);
  Gathered va;
  if (!val_rows.empty()) va = gather(data, val_rows, reference, cfg.head.use_reference);

  HeadParams params = init_params(static_cast<int>(data.X.cols()), cfg.head, root.fork("init"));
  AdamState adam{zeros_like(params), zeros_like(params), 0};

  TrainResult res;
  res.balanced_size = static_cast<std::int64_t>(balanced.size());
  res.val_size = static_cast<std::int64_t>(val_rows.size());
  double best = std::numeric_limits<double>::infinity();
  HeadParams best_params = params;
  int stale = 0;

  const auto n_tr = static_cast<std::int64_t>(train_rows.size());
  const Eigen::Index d = data.X.cols();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::int64_t> perm(static_cast<std::size_t>(n_tr));
    for (std::int64_t i = 0; i < n_tr; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng sh = root.fork("shuffle", static_cast<std::uint64_t>(epoch));
    sh.shuffle(perm);

    double loss_sum = 0.0;
    std::int64_t step = 0;
    for (std::int64_t lo = 0; lo < n_tr; lo += cfg.batch_size, ++step) {
      const auto B = static_cast<Eigen::Index>(std::min<std::int64_t>(cfg.batch_size, n_tr - lo));
      Eigen::MatrixXd Xb(d, B), Xrb(cfg.head.use_reference ? d : 0, cfg.head.use_reference ? B : 0);
      Eigen::VectorXd yb(B);
      for (Eigen::Index i = 0; i < B; ++i) {
        const auto src = perm[static_cast<std::size_t>(lo + i)];
        Xb.col(i) = tr.X.col(src);
        yb[i] = tr.y[src];
        if (cfg.head.use_reference) Xrb.col(i) = tr.Xref.col(src);
      }
      Eigen::MatrixXd mask;
      const Eigen::MatrixXd* mask_ptr = nullptr;
      if (cfg.head.dropout > 0.0) {
        mask = make_dropout_mask(cfg.head.hidden, B, cfg.head.dropout,
                                 root.fork("dropout", static_cast<std::uint64_t>(epoch))
                                     .fork(static_cast<std::uint64_t>(step)));
        mask_ptr = &mask;
      }
      GradResult g = loss_and_grads(params, cfg.head, Xb, Xrb, yb, mask_ptr);
      if (!std::isfinite(g.loss)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += g.loss * static_cast<double>(B);
      adam_step(params, g.grads, adam, cfg);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(n_tr);
    if (!val_rows.empty()) {
      Eigen::VectorXd vl = forward(params, cfg.head, va.X, va.Xref, nullptr, nullptr);
      log.val_loss = bce_from_logits(vl, va.y);
    } else {
      log.val_loss = log.train_loss;  // single-video corpus: no held-out group exists
    }

    if (log.val_loss < best) {
      best = log.val_loss;
      best_params = params;
      res.best_epoch = epoch;
      log.best = true;
      stale = 0;
    } else {
      ++stale;
    }
    res.log.push_back(log);
    if (stale >= cfg.patience) break;
  }

  res.params = std::move(best_params);
  res.best_val_loss = best;
  return res;
}

std::map<std::string, Eigen::VectorXd> uniform_reference_means(const Dataset& data) {
  std::map<std::string, Eigen::VectorXd> sum;
  std::map<std::string, double> cnt;
  for (std::int64_t i = 0; i < data.n(); ++i) {
    const auto& vid = data.video[static_cast<std::size_t>(i)];
    auto it = sum.try_emplace(vid, Eigen::VectorXd::Zero(data.X.cols())).first;
    it->second += data.X.row(i).transpose();
    cnt[vid] += 1.0;
  }
  for (auto& [vid, s] : sum) s /= cnt[vid];
  return sum;
}

Eigen::VectorXd predict_dataset(const HeadParams& p, const HeadConfig& cfg, const Dataset& data,
                                const std::map<std::string, Eigen::VectorXd>& reference) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(data.n()));
  for (std::int64_t i = 0; i < data.n(); ++i) rows[static_cast<std::size_t>(i)] = i;
  Gathered g = gather(data, rows, reference, cfg.use_reference);
  return sigmoid(forward(p, cfg, g.X, g.Xref, nullptr, nullptr));
}

// ---------------------------------------------------------------- checkpoint

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}
void put_str(std::vector<std::uint8_t>& b, const std::string& s) {
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}
void put_mat(std::vector<std::uint8_t>& b, const Eigen::MatrixXd& m) {
  put_u32(b, static_cast<std::uint32_t>(m.rows()));
  put_u32(b, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(b, m(i, j));
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;
  void need(std::size_t k) const {
    if (pos + k > b.size()) throw DataError("checkpoint corrupt: truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint32_t len = u32();
    need(len);
    std::string s(b.begin() + static_cast<std::ptrdiff_t>(pos),
                  b.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    return s;
  }
  Eigen::MatrixXd mat() {
    std::uint32_t r = u32(), c = u32();
    if (static_cast<std::uint64_t>(r) * c > (1u << 28))
      throw DataError("checkpoint corrupt: absurd matrix size");
    Eigen::MatrixXd m(r, c);
    for (std::uint32_t i = 0; i < r; ++i)
      for (std::uint32_t j = 0; j < c; ++j) m(i, j) = f64();
    return m;
  }
  Eigen::VectorXd vec() {
    Eigen::MatrixXd m = mat();
    if (m.cols() != 1) throw DataError("checkpoint corrupt: expected a column vector");
    return m.col(0);
  }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::vector<std::uint8_t> b;
  b.push_back('V');
  b.push_back('I');
  b.push_back('P');
  b.push_back('C');
  put_u32(b, 1);  // format version
  put_str(b, c.layout);
  put_str(b, c.signal);
  put_u32(b, static_cast<std::uint32_t>(c.top_percent));
  put_u32(b, static_cast<std::uint32_t>(c.config.hidden));
  put_f64(b, c.config.dropout);
  b.push_back(c.config.use_reference ? 1 : 0);
  b.push_back(c.config.weight_share ? 1 : 0);
  put_u64(b, c.seed);
  put_mat(b, c.params.W1);
  put_mat(b, c.params.b1);
  if (c.config.use_reference && !c.config.weight_share) {
    put_mat(b, c.params.W1r);
    put_mat(b, c.params.b1r);
  }
  put_mat(b, c.params.W2);
  put_mat(b, c.params.b2);
  put_mat(b, c.params.W3);
  put_f64(b, c.params.b3);
  io::write_binary(path, b);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = io::read_binary(path);
  Reader r{bytes};
  r.need(4);
  if (bytes[0] != 'V' || bytes[1] != 'I' || bytes[2] != 'P' || bytes[3] != 'C')
    throw DataError("checkpoint corrupt: bad magic");
  r.pos = 4;
  if (r.u32() != 1) throw DataError("checkpoint corrupt: unsupported version");
  Checkpoint c;
  c.layout = r.str();
  c.signal = r.str();
  c.top_percent = static_cast<int>(r.u32());
  c.config.hidden = static_cast<int>(r.u32());
  c.config.dropout = r.f64();
  r.need(2);
  c.config.use_reference = bytes[r.pos++] != 0;
  c.config.weight_share = bytes[r.pos++] != 0;
  c.seed = r.u64();
  c.params.W1 = r.mat();
  c.params.b1 = r.vec();
  if (c.config.use_reference && !c.config.weight_share) {
    c.params.W1r = r.mat();
    c.params.b1r = r.vec();
  }
  c.params.W2 = r.mat();
  c.params.b2 = r.vec();
  c.params.W3 = r.vec();
  c.params.b3 = r.f64();
  if (r.pos != bytes.size()) throw DataError("checkpoint corrupt: trailing bytes");
  if (c.params.W1.rows() != c.config.hidden || c.params.W2.cols() != 2 * c.config.hidden)
    throw DataError("checkpoint corrupt: parameter shapes disagree with config");
  return c;
}

}  // namespace vip::model
