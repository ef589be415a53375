#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vip/embedstore.hpp"
#include "vip/io.hpp"
#include "vip/rng.hpp"

using namespace vip;
using namespace vip::embed;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vip_test_embed_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// 4 rows over two videos, two parts of dim 3 and 2.
fs::path write_fixture(const fs::path& dir) {
  RowMatrixF a(4, 3), b(4, 2);
  int k = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = static_cast<float>(k++);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) b(i, j) = static_cast<float>(100 + k++);
  std::vector<IndexEntry> index = {
      {"vidA", 30, 0}, {"vidA", 35, 1}, {"vidB", 30, 2}, {"vidB", 35, 3}};
  write_manifest(dir / "manifest.json",
                 {{{"transcript", 3, "transcript.f32"}, a}, {{"slide", 2, "slide.f32"}, b}},
                 index);
  return dir / "manifest.json";
}

}  // namespace

TEST_CASE("write/open round trip with ordered assembly") {
  TempDir tmp;
  auto m = EmbeddingManifest::open(write_fixture(tmp.path));
  CHECK(m.row_count() == 4);
  CHECK(m.dim_of("transcript") == 3);
  CHECK(m.dim_of("slide") == 2);
  CHECK(m.total_dim({"transcript", "slide"}) == 5);
  CHECK(m.layout_string({"slide", "transcript"}) == "slide:2;transcript:3");

  // Row 1 = vidA@35: transcript (3,4,5), slide (104+?,..).
  Eigen::VectorXd e = m.assemble({"transcript", "slide"}, "vidA", 35);
  REQUIRE(e.size() == 5);
  CHECK(e(0) == 3.0);
  CHECK(e(1) == 4.0);
  CHECK(e(2) == 5.0);

  // Selection order defines the concatenation order.
  Eigen::VectorXd r = m.assemble({"slide", "transcript"}, "vidA", 35);
  CHECK(r(2) == 3.0);
  CHECK(r(0) == e(3));

  CHECK(m.has("vidB", 30));
  CHECK(!m.has("vidB", 40));
  CHECK_THROWS_AS(m.row_for("vidB", 40), DataError);
  CHECK_THROWS_AS(m.dim_of("nope"), ConfigError);

  auto ts = m.moments_of("vidA");
  REQUIRE(ts.size() == 2);
  CHECK(ts[0] == 30);
  CHECK(ts[1] == 35);
}

TEST_CASE("weighted reference embedding normalizes by the total weight") {
  TempDir tmp;
  auto m = EmbeddingManifest::open(write_fixture(tmp.path));
  Eigen::VectorXd e0 = m.assemble({"transcript"}, "vidA", 30);
  Eigen::VectorXd e1 = m.assemble({"transcript"}, "vidA", 35);

  Eigen::VectorXd ref = m.reference_embedding({"transcript"}, "vidA", {{30, 0.1}, {35, 0.9}});
  Eigen::VectorXd want = 0.1 * e0 + 0.9 * e1;
  for (int i = 0; i < 3; ++i) CHECK(ref(i) == doctest::Approx(want(i)).epsilon(1e-12));

  // Scale invariance in the weights.
  Eigen::VectorXd ref2 = m.reference_embedding({"transcript"}, "vidA", {{30, 1.0}, {35, 9.0}});
  for (int i = 0; i < 3; ++i) CHECK(ref2(i) == doctest::Approx(ref(i)).epsilon(1e-12));

  CHECK_THROWS_AS(m.reference_embedding({"transcript"}, "vidA", {{30, 0.0}, {35, 0.0}}),
                  DataError);
  CHECK_THROWS_AS(m.reference_embedding({"transcript"}, "vidA", {}), DataError);
}

TEST_CASE("tensor byte-length mismatch is rejected at open, naming the part") {
  TempDir tmp;
  auto path = write_fixture(tmp.path);
  // Truncate one tensor by one float.
  auto bytes = io::read_binary(tmp.path / "slide.f32");
  bytes.resize(bytes.size() - 4);
  io::write_binary(tmp.path / "slide.f32", bytes);
  try {
    EmbeddingManifest::open(path);
    FAIL("expected ManifestCorrupt");
  } catch (const ManifestCorrupt& e) {
    CHECK(e.part() == "slide");
  }
}

TEST_CASE("missing tensor file is rejected") {
  TempDir tmp;
  auto path = write_fixture(tmp.path);
  fs::remove(tmp.path / "transcript.f32");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);
}

TEST_CASE("index integrity: duplicates, bad rows, count mismatches") {
  TempDir tmp;
  auto path = write_fixture(tmp.path);

  auto with_index = [&](const std::string& tsv) {
    io::write_file(tmp.path / "index.tsv", tsv);
    return path;
  };

  // Duplicate (video, t).
  with_index("vidA\t30\t0\nvidA\t30\t1\nvidB\t30\t2\nvidB\t35\t3\n");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);

  // Row referenced twice.
  with_index("vidA\t30\t0\nvidA\t35\t0\nvidB\t30\t2\nvidB\t35\t3\n");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);

  // Row out of range.
  with_index("vidA\t30\t0\nvidA\t35\t1\nvidB\t30\t2\nvidB\t35\t9\n");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);

  // Too few entries for row_count.
  with_index("vidA\t30\t0\nvidA\t35\t1\n");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);

  // Garbage numbers.
  with_index("vidA\t30\tzero\nvidA\t35\t1\nvidB\t30\t2\nvidB\t35\t3\n");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);
}

TEST_CASE("manifest JSON problems are rejected") {
  TempDir tmp;
  auto path = write_fixture(tmp.path);
  io::write_file(path, "{not json");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);
  io::write_file(path, "{\"version\":2}");
  CHECK_THROWS_AS(EmbeddingManifest::open(path), ManifestCorrupt);
}

TEST_CASE("layout strings parse back to the selection") {
  auto lay = parse_layout("transcript:3;slide:2");
  REQUIRE(lay.size() == 2);
  CHECK(lay[0].first == "transcript");
  CHECK(lay[0].second == 3);
  CHECK(lay[1].first == "slide");
  CHECK(lay[1].second == 2);
  CHECK_THROWS_AS(parse_layout("nodim"), DataError);
  CHECK_THROWS_AS(parse_layout("a:0"), DataError);
  CHECK_THROWS_AS(parse_layout(""), DataError);
}

TEST_CASE("assemble_rows stacks embeddings row-per-moment") {
  TempDir tmp;
  auto m = EmbeddingManifest::open(write_fixture(tmp.path));
  Eigen::MatrixXd M = m.assemble_rows({"transcript"}, {2, 0});
  REQUIRE(M.rows() == 2);
  REQUIRE(M.cols() == 3);
  CHECK(M(0, 0) == 6.0);  // row 2 = vidB@30
  CHECK(M(1, 0) == 0.0);  // row 0 = vidA@30
}
