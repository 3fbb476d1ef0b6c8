#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "docpool/embed_store.hpp"
#include "docpool/error.hpp"
#include "oracles.hpp"
#include "testkit.hpp"

using namespace docpool;

namespace {

EmbeddingMatrix two_by_three() { return EmbeddingMatrix(2, 3, {1.f, 2.f, 3.f, -4.f, 5.5f, 6.25f}); }

std::string serialize(const EmbeddingMatrix& m) {
  std::ostringstream out;
  write_semb(out, m);
  return out.str();
}

template <typename T>
void poke(std::string& bytes, std::size_t offset, T value) {
  std::memcpy(bytes.data() + offset, &value, sizeof(T));
}

}  // namespace

TEST(Matrix, ShapeAndAccess) {
  const auto m = two_by_three();
  EXPECT_EQ(m.count(), 2u);
  EXPECT_EQ(m.dim(), 3u);
  EXPECT_FLOAT_EQ(m(1, 2), 6.25f);
  EXPECT_FLOAT_EQ(m.row(1)[0], -4.f);
  EXPECT_THROW(EmbeddingMatrix(1, 0), ValidationError);
  EXPECT_THROW(EmbeddingMatrix(2, 2, {1.f, 2.f, 3.f}), ValidationError);
}

TEST(Matrix, SliceAndStack) {
  const auto m = two_by_three();
  const auto tail = m.slice(1, 1);
  EXPECT_EQ(tail.count(), 1u);
  EXPECT_FLOAT_EQ(tail(0, 1), 5.5f);
  const EmbeddingMatrix* parts[] = {&m, &tail};
  const auto stacked = stack_rows(parts);
  EXPECT_EQ(stacked.count(), 3u);
  EXPECT_FLOAT_EQ(stacked(2, 2), 6.25f);
}

TEST(Matrix, ValidateFiniteNamesEntry) {
  auto m = two_by_three();
  m(1, 1) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(m.validate_finite(), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(Semb, StreamRoundTripIsBitExact) {
  std::mt19937_64 rng(11);
  const auto m = testkit::random_matrix(rng, 17, 5);
  const auto bytes = serialize(m);
  EXPECT_EQ(bytes.size(), 20u + 17 * 5 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "SEMB");
  std::istringstream in(bytes);
  EXPECT_EQ(read_semb(in), m);
}

TEST(Semb, HeaderLayoutIsLittleEndian) {
  const auto bytes = serialize(two_by_three());
  const unsigned char expected[] = {'S', 'E', 'M', 'B', 1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0};
  ASSERT_GE(bytes.size(), sizeof(expected));
  for (std::size_t i = 0; i < sizeof(expected); ++i) {
    EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expected[i]) << "byte " << i;
  }
  float first = 0;
  std::memcpy(&first, bytes.data() + 20, 4);
  EXPECT_EQ(first, 1.f);
}

TEST(Semb, EmptyMatrixRoundTrips) {
  const EmbeddingMatrix m(0, 4);
  std::istringstream in(serialize(m));
  const auto back = read_semb(in);
  EXPECT_EQ(back.count(), 0u);
  EXPECT_EQ(back.dim(), 4u);
}

TEST(Semb, BadMagicIsFormatError) {
  auto bytes = serialize(two_by_three());
  bytes.replace(0, 4, "XXXX");
  std::istringstream in(bytes);
  try {
    read_semb(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Semb, UnsupportedVersionReportsOffset) {
  auto bytes = serialize(two_by_three());
  poke<std::uint32_t>(bytes, 4, 7);
  std::istringstream in(bytes);
  try {
    read_semb(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(Semb, ZeroDimIsValidationError) {
  auto bytes = serialize(two_by_three());
  poke<std::uint32_t>(bytes, 8, 0);
  std::istringstream in(bytes);
  try {
    read_semb(in);
    FAIL() << "expected ValidationError";
  } catch (const FormatError&) {
    FAIL() << "dim=0 should be a plain validation error";
  } catch (const ValidationError&) {
  }
}

TEST(Semb, TruncationReportsByteOffset) {
  const auto bytes = serialize(two_by_three());
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 3));
    try {
      read_semb(in);
      FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.offset(), bytes.size() - 3);
      EXPECT_NE(std::string(e.what()).find("at byte"), std::string::npos);
    }
  }
  {
    std::istringstream in(bytes.substr(0, 10));
    try {
      read_semb(in);
      FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.offset(), 10u);
    }
  }
}

TEST(Semb, NanPayloadIsValidationError) {
  auto bytes = serialize(two_by_three());
  poke<float>(bytes, 20 + 4 * 4, std::numeric_limits<float>::quiet_NaN());
  std::istringstream in(bytes);
  EXPECT_THROW(read_semb(in), ValidationError);
}

TEST(Semb, WriteRejectsNonFinite) {
  auto m = two_by_three();
  m(0, 0) = std::numeric_limits<float>::infinity();
  std::ostringstream out;
  EXPECT_THROW(write_semb(out, m), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(Store, DirectoryRoundTrip) {
  testkit::TempDir dir;
  std::mt19937_64 rng(5);
  EmbeddingMap map;
  map.emplace("doc-b", testkit::random_matrix(rng, 3, 4));
  map.emplace("doc-a", testkit::random_matrix(rng, 1, 4));
  store_embeddings_dir(map, dir / "embs");
  EXPECT_TRUE(std::filesystem::exists(dir / "embs" / "doc-a.semb"));
  EXPECT_EQ(load_embeddings(dir / "embs"), map);
}

TEST(Store, ContainerRoundTripKeepsOrderAndValues) {
  testkit::TempDir dir;
  std::mt19937_64 rng(6);
  EmbeddingMap map;
  for (int i = 0; i < 12; ++i) map.emplace("d" + std::to_string(i), testkit::random_matrix(rng, 1 + i % 4, 7));
  const auto path = dir / "all.semb";
  store_embeddings(map, path);
  EXPECT_TRUE(std::filesystem::exists(index_sidecar_path(path)));
  EXPECT_EQ(index_sidecar_path(path).filename(), "all.semb.idx");
  const auto back = load_embeddings(path);
  EXPECT_EQ(back, map);
  // The container itself is a plain SEMB file holding every row.
  EXPECT_EQ(read_semb_file(path).count(), 30u);
}

TEST(Store, StoreThenLoadTwoByThree) {
  testkit::TempDir dir;
  EmbeddingMap map;
  map.emplace("x", two_by_three());
  store_embeddings(map, dir / "x.semb");
  EXPECT_EQ(load_embeddings(dir / "x.semb").at("x"), two_by_three());
}

TEST(Store, MissingFilesAreIoErrors) {
  testkit::TempDir dir;
  EXPECT_THROW(load_embeddings(dir / "nothing.semb"), IoError);
  EmbeddingMap map;
  map.emplace("x", two_by_three());
  store_embeddings(map, dir / "c.semb");
  std::filesystem::remove(index_sidecar_path(dir / "c.semb"));
  EXPECT_THROW(load_embeddings(dir / "c.semb"), IoError);
}

TEST(Store, SidecarOutOfRangeIsValidationError) {
  testkit::TempDir dir;
  EmbeddingMap map;
  map.emplace("x", two_by_three());
  store_embeddings(map, dir / "c.semb");
  testkit::write_text(index_sidecar_path(dir / "c.semb"), R"({"x":[1,5]})");
  EXPECT_THROW(load_embeddings(dir / "c.semb"), ValidationError);
  testkit::write_text(index_sidecar_path(dir / "c.semb"), R"({"x":["a",1]})");
  EXPECT_THROW(load_embeddings(dir / "c.semb"), ValidationError);
}

TEST(Store, FormatErrorInDirectoryNamesFile) {
  testkit::TempDir dir;
  std::filesystem::create_directory(dir / "embs");
  testkit::write_text(dir / "embs" / "bad.semb", "SEMB\x01");
  try {
    load_embeddings(dir / "embs");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.semb"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------

TEST(Pca, LineYEqualsX) {
  EmbeddingMatrix pool(0, 2);
  for (int i = -5; i <= 5; ++i) pool.append_row(std::vector<double>{1.0 * i, 1.0 * i});
  const auto model = pca_fit(pool, 1);
  EXPECT_NEAR(model.components[0], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(model.components[1], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(model.explained_variance[0], 22.0, 1e-9);  // sum of 2 i^2 over n - 1
}

TEST(Pca, ConstantPoolProjectsToZero) {
  EmbeddingMatrix pool(0, 3);
  for (int i = 0; i < 6; ++i) pool.append_row(std::vector<double>{0.5, -1.0, 2.0});
  const auto model = pca_fit(pool, 2);
  const auto projected = pca_apply(model, pool);
  for (const float v : projected.values()) EXPECT_EQ(v, 0.f);
}

TEST(Pca, MatchesJacobiOracle) {
  std::mt19937_64 rng(21);
  // Anisotropic pool so the spectrum is well separated.
  EmbeddingMatrix pool(0, 32);
  for (int i = 0; i < 500; ++i) {
    auto v = testkit::gaussian_vector(rng, 32);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] *= 1.0 + 0.25 * static_cast<double>(k);
    pool.append_row(std::span<const double>(v));
  }
  const auto model = pca_fit(pool, 8);
  const auto eig = oracle::jacobi_eigen(oracle::covariance(oracle::rows_of(pool)));
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_NEAR(model.explained_variance[c], eig.values[c], 1e-6 * std::max(1.0, eig.values[c]));
    const double overlap = testkit::dot(model.component(c), eig.vectors[c]);
    EXPECT_NEAR(std::abs(overlap), 1.0, 1e-6) << "component " << c;
  }
}

TEST(Pca, ComponentsOrthonormalAndProjectionDecorrelated) {
  std::mt19937_64 rng(22);
  const auto pool = testkit::random_matrix(rng, 300, 12);
  const auto model = pca_fit(pool, 6);
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      EXPECT_NEAR(testkit::dot(model.component(a), model.component(b)), a == b ? 1.0 : 0.0, 1e-5);
    }
  }
  const auto cov = oracle::covariance(oracle::rows_of(pca_apply(model, pool)));
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      if (a != b) {
        EXPECT_LT(std::abs(cov[a][b]), 1e-5);
      }
    }
  }
}

TEST(Pca, FullRankReconstructsCenteredPool) {
  std::mt19937_64 rng(23);
  const auto pool = testkit::random_matrix(rng, 40, 6);
  const auto model = pca_fit(pool, 6);
  const auto projected = pca_apply(model, pool);
  for (std::size_t i = 0; i < pool.count(); ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      double back = 0.0;
      for (std::size_t c = 0; c < 6; ++c) back += projected(i, c) * model.component(c)[j];
      EXPECT_NEAR(back, pool(i, j) - model.mean[j], 1e-5);
    }
  }
}

TEST(Pca, ApplyMatchesMatrixProductOracle) {
  std::mt19937_64 rng(24);
  const auto pool = testkit::random_matrix(rng, 50, 9);
  const auto model = pca_fit(pool, 4);
  const auto m = testkit::random_matrix(rng, 7, 9);
  const auto out = pca_apply(model, m);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      double expected = 0.0;
      for (std::size_t j = 0; j < 9; ++j) expected += model.components[c * 9 + j] * (m(i, j) - model.mean[j]);
      EXPECT_NEAR(out(i, c), expected, 1e-6);
    }
  }
  // A row equal to the mean maps to the origin.
  EmbeddingMatrix mean_row(0, 9);
  mean_row.append_row(std::span<const double>(model.mean));
  const auto origin = pca_apply(model, mean_row);
  for (const float v : origin.values()) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(Pca, IdentityComponentsLeaveInputUnchanged) {
  PcaModel model;
  model.input_dim = 3;
  model.k = 3;
  model.mean = {0, 0, 0};
  model.components = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  model.explained_variance = {1, 1, 1};
  const auto m = two_by_three();
  EXPECT_EQ(pca_apply(model, m), m);
}

TEST(Pca, Errors) {
  std::mt19937_64 rng(25);
  const auto pool = testkit::random_matrix(rng, 5, 8);
  try {
    pca_fit(pool, 6);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient samples"), std::string::npos);
  }
  EXPECT_THROW(pca_fit(pool, 9), ValidationError);
  const auto model = pca_fit(pool, 2);
  EXPECT_THROW(pca_apply(model, testkit::random_matrix(rng, 2, 7)), ValidationError);
}

TEST(Pca, DefaultDimensionOn1024) {
  std::mt19937_64 rng(26);
  const auto pool = testkit::random_matrix(rng, 400, 1024);
  const auto model = pca_fit(pool);
  EXPECT_EQ(model.k, 128u);
  const auto out = pca_apply(model, pool.slice(0, 3));
  EXPECT_EQ(out.dim(), 128u);
  for (std::size_t c = 1; c < model.k; ++c) EXPECT_GE(model.explained_variance[c - 1], model.explained_variance[c]);
}

TEST(Pca, FileRoundTrip) {
  testkit::TempDir dir;
  std::mt19937_64 rng(27);
  const auto model = pca_fit(testkit::random_matrix(rng, 30, 5), 3);
  save_pca_file(dir / "m.pca", model);
  const auto back = load_pca_file(dir / "m.pca");
  EXPECT_EQ(back.input_dim, 5u);
  EXPECT_EQ(back.k, 3u);
  EXPECT_EQ(back.mean, model.mean);
  EXPECT_EQ(back.components, model.components);
  EXPECT_EQ(back.explained_variance, model.explained_variance);
  testkit::write_text(dir / "bad.pca", "SPCA");
  EXPECT_THROW(load_pca_file(dir / "bad.pca"), FormatError);
}

// ---------------------------------------------------------------------------

TEST(Normalize, ThreeFourFive) {
  const auto v = l2_normalize(std::vector<double>{3, 4});
  EXPECT_DOUBLE_EQ(v[0], 0.6);
  EXPECT_DOUBLE_EQ(v[1], 0.8);
}

TEST(Normalize, ZeroVectorUnchangedAndIdempotent) {
  EXPECT_EQ(l2_normalize(std::vector<double>{0, 0, 0}), (std::vector<double>{0, 0, 0}));
  std::mt19937_64 rng(8);
  const auto v = testkit::gaussian_vector(rng, 16);
  const auto once = l2_normalize(v);
  const auto twice = l2_normalize(once);
  EXPECT_NEAR(l2_norm(once), 1.0, 1e-15);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-15);
}
