#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vip/ctml.hpp"
#include "vip/embedstore.hpp"
#include "vip/error.hpp"
#include "vip/io.hpp"
#include "vip/model.hpp"
#include "vip/rng.hpp"

namespace vip::tcav {

using io::ojson;

enum class CavKind { BinaryLogistic, OrdinalLinear };

// Regularized linear fit over activation rows: weights + bias of either an
// L2 logistic regression (binary concepts) or a ridge regression on centered
// targets (ordinal concepts).  Solved by deterministic full-batch gradient
// descent (spectral step lengths with an Armijo safeguard), stopping at
// gradient norm < 1e-8 or 10,000 iterations.
// https://en.wikipedia.org/wiki/Barzilai-Borwein_method
struct LinearFit {
  Eigen::VectorXd w;
  double b = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};
LinearFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, CavKind kind, double l2);

// Concept activation vector: the unit-normalized weight direction of the
// best linear probe, with the regularization strength chosen from a grid by
// held-out fit quality on an internal 80/20 split.  The direction comes from
// the 80% fit itself, not a refit on all rows.
struct Cav {
  Eigen::VectorXd direction;  // unit norm, or zero when degenerate
  CavKind kind = CavKind::BinaryLogistic;
  double l2 = 0.0;
  double fit_quality = 0.0;  // held-out AUC (binary) or 1 - mse/mse_baseline (ordinal)
  bool degenerate = false;   // zero-weight fit; direction unusable
};

inline const std::vector<double>& default_l2_grid() {
  static const std::vector<double> g = {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  return g;
}

// activations: one row per example.  values: the concept rating per example
// (0/1 for binary, levels for ordinal).  Throws DataError("DegenerateConcept
// ...") on fewer than 20 examples or a single class/level.
Cav train_cav(const Eigen::MatrixXd& activations, const Eigen::VectorXd& values, CavKind kind,
              const std::vector<double>& l2_grid, Rng rng);

// The paired baseline: fair-coin labels over the same rows and the same
// train/test split, trained as a logistic probe with the concept's l2.
// Exposed pieces so the pairing is testable.
struct SplitIdx {
  std::vector<std::int64_t> train, test;
};
// Stratified by class for binary values (each class split 80/20 separately),
// plain 80/20 for ordinal.
SplitIdx split_80_20(const Eigen::VectorXd& values, CavKind kind, Rng rng);

// Fair-coin labels over all rows, logistic probe on the concept's own train
// rows at the concept's chosen l2.
Cav random_cav(const Eigen::MatrixXd& activations, const SplitIdx& split, double l2, Rng rng);

// ---------------------------------------------------------------- layers

// A named activation space the probes run in: a slice of the assembled input
// embedding (one part or the full "e_x"), or the first hidden layer "h1" of
// the moment branch.
struct LayerDef {
  std::string name;
  int offset = 0;  // column offset into the assembled input (input layers)
  int dim = 0;
  bool hidden = false;  // true for "h1"
};

// Parts in selection order, then the concatenation "e_x", then "h1".
std::vector<LayerDef> layer_defs(const embed::EmbeddingManifest& manifest,
                                 const std::vector<std::string>& parts, int hidden_dim);

// Rated moments that also have embeddings, in ascending (video, t) order,
// with the assembled input row and all 15 concept value columns.
struct ConceptExamples {
  std::vector<std::pair<std::string, int>> moments;
  Eigen::MatrixXd ex;  // n x total_dim(parts)
  std::map<std::string, Eigen::VectorXd> values;  // feature key -> n ratings
  std::int64_t n() const { return ex.rows(); }
};
ConceptExamples collect_examples(const embed::EmbeddingManifest& manifest,
                                 const std::vector<std::string>& parts,
                                 const std::vector<ctml::CTMLRecord>& records, ctml::Coder coder);

// Activations of the examples in one layer: an input slice as stored, or the
// ReLU first hidden layer of the moment branch (dropout off).
Eigen::MatrixXd layer_activations(const LayerDef& layer, const Eigen::MatrixXd& ex,
                                  const model::HeadParams& params, const model::HeadConfig& cfg);

// ------------------------------------------------------------- model side

// Positively predicted evaluation rows (probability > 0.5, fixed for the
// model) with the logit gradients the directional derivatives need.
struct PositiveSet {
  std::vector<std::int64_t> rows;  // indices into the evaluation dataset
  Eigen::MatrixXd d_input;         // |X+| x d_in, one gradient row per example
  Eigen::MatrixXd d_hidden;        // |X+| x hidden
};
PositiveSet positive_set(const model::HeadParams& params, const model::HeadConfig& cfg,
                         const model::Dataset& eval_data,
                         const std::map<std::string, Eigen::VectorXd>& reference);

// Gradient rows of one layer (slice of d_input, all of it for "e_x", or
// d_hidden for "h1").
Eigen::MatrixXd layer_gradients(const LayerDef& layer, const PositiveSet& pos);

// d(x) = grad_layer(x) . direction for every gradient row.
Eigen::VectorXd directional_derivatives(const Eigen::MatrixXd& grads,
                                        const Eigen::VectorXd& direction);

// Fraction of positively predicted examples more sensitive to the concept
// than to the random baseline (strict >).  NumericError on empty input.
double tcav_score(const Eigen::VectorXd& d_concept, const Eigen::VectorXd& d_random);

// One-sample t of the repetition scores against 0.5 (24 df for 25 reps),
// two-sided p, Bonferroni-corrected significance.  Zero variance: p = 0 when
// the mean is off 0.5, else p = 1.
struct Significance {
  double t = 0.0;
  double p = 1.0;
  bool significant = false;
};
Significance significance(const std::vector<double>& scores, int m = 150, double alpha = 0.05);

// ----------------------------------------------------------------- runner

struct TcavConfig {
  std::vector<std::string> parts;     // embedding selection, defines input layers
  std::vector<std::string> concepts;  // default: every feature key
  ctml::Coder coder = ctml::Coder::Machine;
  int repetitions = 25;
  int max_examples = 500;  // per-repetition cap on probe rows, seeded subsample
  int bonferroni_m = 150;
  double alpha = 0.05;
  std::vector<double> l2_grid = default_l2_grid();
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TcavResult {
  std::string concept_key;
  std::string layer;
  std::vector<double> scores;  // one per repetition
  double mean = 0.0;
  double std_dev = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
  bool significant = false;
  double fit_quality = 0.0;  // mean held-out quality of the concept probes
  bool degenerate = false;   // concept unusable or some repetition collapsed
};

// Full procedure: for every (concept, layer) run `repetitions` independent
// probe fits (fresh split, fresh fair-coin baseline, shared l2 within the
// pair) and score the model's positively predicted evaluation rows.  Streams
// are keyed by (concept, layer, repetition), so thread count cannot change
// results.  Degenerate concepts are reported flagged, not dropped.
std::vector<TcavResult> run_tcav(const model::HeadParams& params, const model::HeadConfig& cfg,
                                 const embed::EmbeddingManifest& manifest,
                                 const std::vector<ctml::CTMLRecord>& records,
                                 const model::Dataset& eval_data,
                                 const std::map<std::string, Eigen::VectorXd>& reference,
                                 const TcavConfig& tcfg);

ojson tcav_to_json(const std::vector<TcavResult>& results);

}  // namespace vip::tcav
