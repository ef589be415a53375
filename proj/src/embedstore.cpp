#include "vip/embedstore.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>

#include "vip/io.hpp"

namespace vip::embed {

namespace fs = std::filesystem;
using io::json;
using io::ojson;

EmbeddingManifest EmbeddingManifest::open(const fs::path& manifest_path) {
  EmbeddingManifest m;
  m.dir_ = manifest_path.parent_path();

  json doc;
  try {
    doc = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ManifestCorrupt("manifest", std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ManifestCorrupt("manifest", "top level is not an object");
  if (doc.value("version", 0) != 1) throw ManifestCorrupt("manifest", "unsupported version");
  if (doc.value("dtype", "") != "float32le")
    throw ManifestCorrupt("manifest", "dtype must be float32le");
  if (!doc.contains("row_count") || !doc["row_count"].is_number_integer())
    throw ManifestCorrupt("manifest", "row_count missing");
  m.row_count_ = doc["row_count"].get<std::int64_t>();
  if (m.row_count_ < 0) throw ManifestCorrupt("manifest", "row_count negative");
  if (!doc.contains("index_file") || !doc["index_file"].is_string())
    throw ManifestCorrupt("manifest", "index_file missing");
  if (!doc.contains("parts") || !doc["parts"].is_array() || doc["parts"].empty())
    throw ManifestCorrupt("manifest", "parts missing or empty");

  std::set<std::string> seen_names;
  for (const auto& p : doc["parts"]) {
    PartSpec spec;
    if (!p.is_object() || !p.contains("name") || !p.contains("dim") || !p.contains("file"))
      throw ManifestCorrupt("manifest", "part entry missing name/dim/file");
    spec.name = p["name"].get<std::string>();
    if (!p["dim"].is_number_integer()) throw ManifestCorrupt(spec.name, "dim is not an integer");
    spec.dim = p["dim"].get<int>();
    spec.file = p["file"].get<std::string>();
    if (spec.name.empty()) throw ManifestCorrupt(spec.name, "empty part name");
    if (spec.dim <= 0) throw ManifestCorrupt(spec.name, "dim must be positive");
    if (!seen_names.insert(spec.name).second)
      throw ManifestCorrupt(spec.name, "duplicate part name");
    m.parts_.push_back(spec);
  }

  // Tensor payloads: byte length must match row_count * dim * 4 exactly.
  for (const auto& spec : m.parts_) {
    fs::path file = m.dir_ / spec.file;
    std::vector<std::uint8_t> bytes;
    try {
      bytes = io::read_binary(file);
    } catch (const DataError&) {
      throw ManifestCorrupt(spec.name, "tensor file missing: " + spec.file);
    }
    const std::size_t expect =
        static_cast<std::size_t>(m.row_count_) * static_cast<std::size_t>(spec.dim) * 4;
    if (bytes.size() != expect)
      throw ManifestCorrupt(spec.name, "tensor file has " + std::to_string(bytes.size()) +
                                           " bytes, expected " + std::to_string(expect));
    RowMatrixF mat(m.row_count_, spec.dim);
    if (expect > 0) std::memcpy(mat.data(), bytes.data(), expect);
    if (!mat.allFinite()) throw ManifestCorrupt(spec.name, "tensor contains non-finite values");
    m.data_.emplace(spec.name, std::move(mat));
  }

  // Index: one (video_id, t) per row, rows a bijection onto [0, row_count).
  fs::path index_path = m.dir_ / doc["index_file"].get<std::string>();
  std::vector<char> row_seen(static_cast<std::size_t>(m.row_count_), 0);
  std::int64_t entries = 0;
  try {
    io::for_each_line(index_path, [&](std::size_t lineno, std::string_view line) {
      if (line.empty()) return;
      std::istringstream ss{std::string(line)};
      std::string video_id, t_str, row_str;
      if (!std::getline(ss, video_id, '\t') || !std::getline(ss, t_str, '\t') ||
          !std::getline(ss, row_str))
        throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": expected 3 tab-separated fields");
      int t = 0;
      std::int64_t row = 0;
      try {
        std::size_t used = 0;
        t = std::stoi(t_str, &used);
        if (used != t_str.size()) throw std::invalid_argument("trailing");
        row = std::stoll(row_str, &used);
        if (used != row_str.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": bad number");
      }
      if (video_id.empty())
        throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": empty video id");
      if (t < 0) throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": negative t");
      if (row < 0 || row >= m.row_count_)
        throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": row out of range");
      if (row_seen[static_cast<std::size_t>(row)])
        throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": row referenced twice");
      row_seen[static_cast<std::size_t>(row)] = 1;
      if (!m.index_.emplace(std::make_pair(video_id, t), row).second)
        throw ManifestCorrupt("index", "line " + std::to_string(lineno + 1) + ": duplicate (video, t)");
      ++entries;
    });
  } catch (const DataError& e) {
    if (dynamic_cast<const ManifestCorrupt*>(&e)) throw;
    throw ManifestCorrupt("index", std::string("index file unreadable: ") + e.what());
  }
  if (entries != m.row_count_)
    throw ManifestCorrupt("index", "index has " + std::to_string(entries) + " entries, expected " +
                                       std::to_string(m.row_count_));
  return m;
}

bool EmbeddingManifest::has(const std::string& video_id, int t) const {
  return index_.count({video_id, t}) > 0;
}

std::int64_t EmbeddingManifest::row_for(const std::string& video_id, int t) const {
  auto it = index_.find({video_id, t});
  if (it == index_.end())
    throw DataError("MomentNotEmbedded: no embedding for (" + video_id + ", " + std::to_string(t) +
                    ")");
  return it->second;
}

int EmbeddingManifest::dim_of(const std::string& part) const {
  for (const auto& p : parts_)
    if (p.name == part) return p.dim;
  throw ConfigError("UnknownPart: '" + part + "' not in manifest");
}

int EmbeddingManifest::total_dim(const std::vector<std::string>& selection) const {
  int d = 0;
  for (const auto& s : selection) d += dim_of(s);
  return d;
}

std::string EmbeddingManifest::layout_string(const std::vector<std::string>& selection) const {
  std::string out;
  for (const auto& s : selection) {
    if (!out.empty()) out += ';';
    out += s + ':' + std::to_string(dim_of(s));
  }
  return out;
}

Eigen::VectorXd EmbeddingManifest::part_row(const std::string& part, std::int64_t row) const {
  auto it = data_.find(part);
  if (it == data_.end()) throw ConfigError("UnknownPart: '" + part + "' not in manifest");
  if (row < 0 || row >= row_count_)
    throw ContractViolation("part_row: row " + std::to_string(row) + " out of range");
  return it->second.row(row).cast<double>().transpose();
}

Eigen::VectorXd EmbeddingManifest::assemble_row(const std::vector<std::string>& selection,
                                                std::int64_t row) const {
  if (selection.empty()) throw ConfigError("empty part selection");
  Eigen::VectorXd out(total_dim(selection));
  int off = 0;
  for (const auto& s : selection) {
    int d = dim_of(s);
    out.segment(off, d) = part_row(s, row);
    off += d;
  }
  return out;
}

Eigen::VectorXd EmbeddingManifest::assemble(const std::vector<std::string>& selection,
                                            const std::string& video_id, int t) const {
  return assemble_row(selection, row_for(video_id, t));
}

Eigen::MatrixXd EmbeddingManifest::assemble_rows(const std::vector<std::string>& selection,
                                                 const std::vector<std::int64_t>& rows) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), total_dim(selection));
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = assemble_row(selection, rows[i]).transpose();
  return out;
}

Eigen::VectorXd EmbeddingManifest::reference_embedding(
    const std::vector<std::string>& selection, const std::string& video_id,
    const std::map<int, double>& moment_weights) const {
  if (moment_weights.empty())
    throw DataError("DegenerateWeights: no moments given for video '" + video_id + "'");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(total_dim(selection));
  double total = 0.0;
  for (const auto& [t, w] : moment_weights) {
    if (!(w >= 0.0)) throw ContractViolation("reference_embedding: negative weight");
    if (w == 0.0) continue;
    acc += w * assemble(selection, video_id, t);
    total += w;
  }
  if (!(total > 0.0))
    throw DataError("DegenerateWeights: weights for video '" + video_id + "' sum to zero");
  return acc / total;
}

std::vector<int> EmbeddingManifest::moments_of(const std::string& video_id) const {
  std::vector<int> out;
  // map keys are sorted, so the video's (video_id, t) block is contiguous and t ascends.
  for (auto it = index_.lower_bound({video_id, std::numeric_limits<int>::min()});
       it != index_.end() && it->first.first == video_id; ++it)
    out.push_back(it->first.second);
  return out;
}

void write_manifest(const fs::path& manifest_path,
                    const std::vector<std::pair<PartSpec, RowMatrixF>>& parts,
                    const std::vector<IndexEntry>& index) {
  fs::path dir = manifest_path.parent_path();
  const auto row_count = static_cast<std::int64_t>(index.size());

  ojson doc;
  doc["version"] = 1;
  doc["dtype"] = "float32le";
  doc["row_count"] = row_count;
  doc["index_file"] = "index.tsv";
  doc["parts"] = ojson::array();
  for (const auto& [spec, mat] : parts) {
    if (mat.rows() != row_count)
      throw ContractViolation("write_manifest: part '" + spec.name + "' has " +
                              std::to_string(mat.rows()) + " rows, index has " +
                              std::to_string(row_count));
    if (mat.cols() != spec.dim)
      throw ContractViolation("write_manifest: part '" + spec.name + "' dim mismatch");
    ojson p;
    p["name"] = spec.name;
    p["dim"] = spec.dim;
    p["file"] = spec.file;
    doc["parts"].push_back(p);

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(mat.size()) * 4);
    if (!bytes.empty()) std::memcpy(bytes.data(), mat.data(), bytes.size());
    io::write_binary(dir / spec.file, bytes);
  }

  std::string tsv;
  for (const auto& e : index) {
    tsv += e.video_id;
    tsv += '\t';
    tsv += std::to_string(e.t);
    tsv += '\t';
    tsv += std::to_string(e.row);
    tsv += '\n';
  }
  io::write_file(dir / "index.tsv", tsv);
  io::write_file(manifest_path, doc.dump(2) + "\n");
}

std::vector<std::pair<std::string, int>> parse_layout(const std::string& layout_string) {
  std::vector<std::pair<std::string, int>> out;
  std::istringstream ss(layout_string);
  std::string item;
  while (std::getline(ss, item, ';')) {
    auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= item.size())
      throw DataError("bad layout string: '" + layout_string + "'");
    int dim = 0;
    try {
      std::size_t used = 0;
      dim = std::stoi(item.substr(colon + 1), &used);
      if (used != item.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("bad layout string: '" + layout_string + "'");
    }
    if (dim <= 0) throw DataError("bad layout string: '" + layout_string + "'");
    out.emplace_back(item.substr(0, colon), dim);
  }
  if (out.empty()) throw DataError("bad layout string: '" + layout_string + "'");
  return out;
}

}  // namespace vip::embed
