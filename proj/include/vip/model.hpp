#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vip/error.hpp"
#include "vip/rng.hpp"

namespace vip::model {

// Two-branch MLP head over a moment embedding e_x and a per-video reference
// embedding e_ref.  Both branches map to a fixed 256-unit hidden layer; their
// concatenation feeds a second 256-unit layer, then a single logit.
struct HeadConfig {
  int hidden = 256;          // width of each hidden layer (contract value)
  double dropout = 0.2;      // drop probability after the second hidden ReLU
  bool use_reference = true; // false: reference branch replaced by zeros
  bool weight_share = true;  // true: both branches share W1/b1
};

struct HeadParams {
  Eigen::MatrixXd W1;   // hidden x d_in
  Eigen::VectorXd b1;   // hidden
  Eigen::MatrixXd W1r;  // hidden x d_in, only when !weight_share (else 0x0)
  Eigen::VectorXd b1r;  // hidden, only when !weight_share
  Eigen::MatrixXd W2;   // hidden x 2*hidden
  Eigen::VectorXd b2;   // hidden
  Eigen::VectorXd W3;   // hidden (read as a row vector)
  double b3 = 0.0;

  int input_dim() const { return static_cast<int>(W1.cols()); }
  int hidden_dim() const { return static_cast<int>(W1.rows()); }
};

// Flat views over every parameter array, in a fixed order; grads and Adam
// moments use the same shapes so the optimizer can walk them in lockstep.
std::vector<Eigen::Map<Eigen::ArrayXd>> param_views(HeadParams& p);
std::vector<Eigen::Map<const Eigen::ArrayXd>> param_views(const HeadParams& p);

// Seeded He-normal initialization; biases start at zero.
HeadParams init_params(int input_dim, const HeadConfig& cfg, Rng rng);

// Zero-filled gradient holder shaped like `like`.
HeadParams zeros_like(const HeadParams& like);

struct ForwardCache {
  Eigen::MatrixXd Apre, A;    // hidden x B, moment branch
  Eigen::MatrixXd Rpre, R;    // hidden x B, reference branch (0x0 when unused)
  Eigen::MatrixXd Zpre, Z;    // hidden x B
  Eigen::MatrixXd Zdrop;      // hidden x B (== Z when no mask)
  Eigen::VectorXd logits;     // B
};

// X and Xref hold one example per column.  `mask` (hidden x B of 0/1), when
// given, applies inverted dropout: z * mask / (1 - p).  Pass nullptr at eval.
Eigen::VectorXd forward(const HeadParams& p, const HeadConfig& cfg, const Eigen::MatrixXd& X,
                        const Eigen::MatrixXd& Xref, const Eigen::MatrixXd* mask,
                        ForwardCache* cache);

Eigen::VectorXd sigmoid(const Eigen::VectorXd& logits);

// Mean binary cross-entropy computed from logits (softplus form, no
// intermediate probabilities, stable for large |logit|).
double bce_from_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& y);

struct GradResult {
  double loss = 0.0;
  HeadParams grads;           // d loss / d params
  Eigen::MatrixXd dX;         // d loss / d e_x, one column per example
};

// Analytic gradients of the mean BCE over the batch.  Shared-weight
// configurations accumulate both branches into W1/b1.
GradResult loss_and_grads(const HeadParams& p, const HeadConfig& cfg, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Xref, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd* mask);

// Per-example d logit / d e_x and d logit / d a (first-hidden activation of
// the moment branch), dropout off.  One column per example.
struct LogitGrads {
  Eigen::MatrixXd d_input;  // d_in x B
  Eigen::MatrixXd d_hidden; // hidden x B
};
LogitGrads logit_grads(const HeadParams& p, const HeadConfig& cfg, const Eigen::MatrixXd& X,
                       const Eigen::MatrixXd& Xref);

// ------------------------------------------------------------------ training

struct Dataset {
  Eigen::MatrixXd X;               // n x d_in, one embedding per row
  std::vector<int> label;          // 0/1
  std::vector<std::string> video;  // per-row video id (validation grouping key)
  std::vector<int> t;              // per-row moment second
  std::int64_t n() const { return static_cast<std::int64_t>(label.size()); }
};

struct TrainConfig {
  HeadConfig head;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 2048;
  int max_epochs = 100;
  int patience = 10;          // epochs without val improvement before stopping
  double val_fraction = 0.10; // of balanced moments, grouped by video
  int top_percent = 10;       // K of the label being fit; sets reference weights
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool best = false;
};

struct TrainResult {
  HeadParams params;          // parameters of the best validation epoch
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::vector<EpochLog> log;
  std::int64_t balanced_size = 0;
  std::int64_t val_size = 0;
};

// Balances classes by seeded negative subsampling, builds per-video reference
// embeddings from the balanced rows (positives weighted K/100, negatives
// 1 - K/100), holds out whole videos for validation, and runs Adam with early
// stopping on validation loss.  Bitwise deterministic for a fixed seed.
TrainResult train(const Dataset& data, const TrainConfig& cfg);

// Per-video uniform mean of the rows in `data` (test-time reference).
std::map<std::string, Eigen::VectorXd> uniform_reference_means(const Dataset& data);

// Probabilities for every row of `data`, pairing each row with its video's
// reference vector (ignored when the head has no reference branch).
Eigen::VectorXd predict_dataset(const HeadParams& p, const HeadConfig& cfg, const Dataset& data,
                                const std::map<std::string, Eigen::VectorXd>& reference);

// ---------------------------------------------------------------- checkpoint

struct Checkpoint {
  HeadParams params;
  HeadConfig config;
  std::string layout;       // embedding part layout the model was trained on
  std::string signal;       // signal name the label came from
  int top_percent = 10;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vip::model
