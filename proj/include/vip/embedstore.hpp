#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vip/error.hpp"

namespace vip::embed {

struct PartSpec {
  std::string name;
  int dim = 0;
  std::string file;  // relative to the manifest directory
};

struct IndexEntry {
  std::string video_id;
  int t = 0;
  std::int64_t row = 0;
};

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Precomputed per-moment embeddings: a manifest naming dimensioned parts
// stored as raw little-endian float32 row-major tensors, plus one shared
// (video_id, t) -> row index.  Fully validated and loaded at open; all reads
// afterwards are pure and safe for concurrent use.
class EmbeddingManifest {
 public:
  static EmbeddingManifest open(const std::filesystem::path& manifest_path);

  const std::vector<PartSpec>& parts() const { return parts_; }
  std::int64_t row_count() const { return row_count_; }
  const std::map<std::pair<std::string, int>, std::int64_t>& index() const { return index_; }

  bool has(const std::string& video_id, int t) const;
  std::int64_t row_for(const std::string& video_id, int t) const;  // MomentNotEmbedded if absent

  int dim_of(const std::string& part) const;  // UnknownPart if absent
  int total_dim(const std::vector<std::string>& selection) const;

  // Persisted with every trained model; fixes the e_x coordinate layout.
  std::string layout_string(const std::vector<std::string>& selection) const;

  // One stored row of one part, widened to double.
  Eigen::VectorXd part_row(const std::string& part, std::int64_t row) const;

  // e_x: concatenation of the selected parts, in selection order.
  Eigen::VectorXd assemble(const std::vector<std::string>& selection, const std::string& video_id,
                           int t) const;
  Eigen::VectorXd assemble_row(const std::vector<std::string>& selection, std::int64_t row) const;

  // Rows stacked into a matrix (one embedding per row), selection layout.
  Eigen::MatrixXd assemble_rows(const std::vector<std::string>& selection,
                                const std::vector<std::int64_t>& rows) const;

  // Weighted mean embedding of a video.  Weights are nonnegative per-moment;
  // uniform scaling of all weights leaves the result unchanged.
  Eigen::VectorXd reference_embedding(const std::vector<std::string>& selection,
                                      const std::string& video_id,
                                      const std::map<int, double>& moment_weights) const;

  // All t values embedded for a video, ascending.
  std::vector<int> moments_of(const std::string& video_id) const;

 private:
  std::filesystem::path dir_;
  std::vector<PartSpec> parts_;
  std::int64_t row_count_ = 0;
  std::map<std::pair<std::string, int>, std::int64_t> index_;
  std::map<std::string, RowMatrixF> data_;  // part name -> row_count x dim
};

// Writes manifest + tensors + index in the exact format open() consumes.
// Part matrices are row-per-moment, float32.
void write_manifest(const std::filesystem::path& manifest_path,
                    const std::vector<std::pair<PartSpec, RowMatrixF>>& parts,
                    const std::vector<IndexEntry>& index);

// Parses "name:dim;name:dim" back into an ordered layout.
std::vector<std::pair<std::string, int>> parse_layout(const std::string& layout_string);

}  // namespace vip::embed
