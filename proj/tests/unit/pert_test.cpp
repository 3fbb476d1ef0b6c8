#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "docpool/error.hpp"
#include "docpool/pert.hpp"
#include "oracles.hpp"
#include "testkit.hpp"

using namespace docpool;

TEST(PertPdf, VanishesAtEndpointsAndOutside) {
  EXPECT_EQ(pert_pdf(0.0, 0.0, 0.3, 1.0, 20.0), 0.0);
  EXPECT_EQ(pert_pdf(1.0, 0.0, 0.3, 1.0, 20.0), 0.0);
  EXPECT_EQ(pert_pdf(-0.1, 0.0, 0.3, 1.0, 20.0), 0.0);
  EXPECT_EQ(pert_pdf(1.1, 0.0, 0.3, 1.0, 20.0), 0.0);
}

TEST(PertPdf, SymmetricAboutCentralMode) {
  for (const double delta : {0.01, 0.1, 0.37, 0.5}) {
    EXPECT_NEAR(pert_pdf(0.5 - delta, -0.5, 0.5, 1.5, 20.0), pert_pdf(0.5 + delta, -0.5, 0.5, 1.5, 20.0), 1e-12);
  }
}

TEST(PertPdf, MatchesClosedFormOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng) - 0.5;
    const double c = a + 0.1 + u(rng);
    const double b = a + (c - a) * u(rng);
    const double x = a + (c - a) * u(rng);
    const double gamma = 1.0 + 30.0 * u(rng);
    const double expected = oracle::pert_pdf(x, a, b, c, gamma);
    EXPECT_NEAR(pert_pdf(x, a, b, c, gamma), expected, 1e-10 * std::max(1.0, expected));
  }
}

TEST(PertPdf, IntegratesToOne) {
  for (const auto& [a, b, c] : {std::tuple{0.0, 0.5, 1.0}, std::tuple{-0.125, 0.0625, 0.1875},
                                std::tuple{2.0, 2.9, 3.0}, std::tuple{0.0, 0.05, 1.0}}) {
    const double area = oracle::trapezoid([&](double x) { return pert_pdf(x, a, b, c, 20.0); }, a, c, 100000);
    EXPECT_NEAR(area, 1.0, 1e-6) << a << " " << b << " " << c;
  }
}

TEST(PertPdf, RejectsDegenerateSupport) {
  EXPECT_THROW(pert_pdf(0.5, 1.0, 1.0, 1.0, 20.0), ValidationError);
  EXPECT_THROW(pert_pdf(0.5, 1.0, 0.5, 0.0, 20.0), ValidationError);
  EXPECT_THROW(pert_pdf(0.5, 0.0, 2.0, 1.0, 20.0), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(Bank, PlacementForSixteenParts) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  EXPECT_DOUBLE_EQ(bank.mode(0), 1.0 / 32.0);
  EXPECT_DOUBLE_EQ(bank.mode(15), 31.0 / 32.0);
  EXPECT_DOUBLE_EQ(bank.support_low(3), bank.mode(3) - 1.0 / 16.0);
  EXPECT_DOUBLE_EQ(bank.support_high(3), bank.mode(3) + 1.0 / 16.0);
  EXPECT_EQ(bank.window(0).size(), 1025u);
}

TEST(Bank, SinglePartCoversEverything) {
  const auto bank = build_window_bank(1, 20.0, 1024);
  EXPECT_DOUBLE_EQ(bank.mode(0), 0.5);
  EXPECT_DOUBLE_EQ(bank.support_low(0), -0.5);
  EXPECT_DOUBLE_EQ(bank.support_high(0), 1.5);
  for (const double v : bank.window(0)) EXPECT_GT(v, 0.0);
}

TEST(Bank, AdjacentWindowsOverlap) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  for (std::size_t j = 0; j + 1 < 16; ++j) {
    bool shared = false;
    for (std::size_t i = 0; i <= 1024; ++i) shared |= bank.window(j)[i] > 0 && bank.window(j + 1)[i] > 0;
    EXPECT_TRUE(shared) << j;
  }
}

TEST(Bank, CacheMatchesOracleAndIsNonNegative) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  for (std::size_t j = 0; j < 16; ++j) {
    const double lo = bank.support_low(j), mode = bank.mode(j), hi = bank.support_high(j);
    for (std::size_t i = 0; i <= 1024; ++i) {
      const double v = bank.window(j)[i];
      EXPECT_GE(v, 0.0);
      const double expected = oracle::pert_pdf(static_cast<double>(i) / 1024.0, lo, mode, hi, 20.0);
      EXPECT_NEAR(v, expected, 1e-10 * std::max(1.0, expected));
    }
  }
}

TEST(Bank, InteriorWindowsSymmetricOnGrid) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  for (std::size_t j = 1; j + 1 < 16; ++j) {
    const auto w = bank.window(j);
    const auto centre = static_cast<std::size_t>(std::lround(bank.mode(j) * 1024));
    for (std::size_t k = 1; k <= 64; ++k) EXPECT_NEAR(w[centre - k], w[centre + k], 1e-9) << j << " " << k;
  }
}

TEST(Bank, BitReproducible) {
  EXPECT_EQ(build_window_bank(16, 20.0, 1024), build_window_bank(16, 20.0, 1024));
  EXPECT_FALSE(build_window_bank(16, 20.0, 1024) == build_window_bank(16, 19.0, 1024));
}

TEST(Bank, LookupUsesNearestSample) {
  const auto bank = build_window_bank(4, 20.0, 8);
  EXPECT_EQ(bank.lookup(1, 3.0 / 8.0 + 0.01), bank.window(1)[3]);
  EXPECT_EQ(bank.lookup(1, 3.0 / 8.0 - 0.01), bank.window(1)[3]);
  EXPECT_EQ(bank.lookup(1, -1.0), bank.window(1)[0]);
  EXPECT_EQ(bank.lookup(1, 2.0), bank.window(1)[8]);
}

TEST(Bank, RejectsBadParameters) {
  EXPECT_THROW(build_window_bank(0), ValidationError);
  EXPECT_THROW(build_window_bank(4, 20.0, 0), ValidationError);
  EXPECT_THROW(build_window_bank(4, -1.0), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(WindowWeights, SingleSentence) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  const auto w = window_weights(bank, 1);
  // x = 0.5 is inside the supports of windows 7 and 8 only (open ends are 0).
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(w(j, 0), (j == 7 || j == 8) ? 1.0 : 0.0) << j;
}

TEST(WindowWeights, RowsSumToOneAndMatchOracle) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  for (const std::size_t n : {2u, 3u, 7u, 16u, 33u, 50u, 100u}) {
    const auto w = window_weights(bank, n);
    const auto expected = oracle::window_weights(16, 20.0, 1024, n);
    for (std::size_t j = 0; j < 16; ++j) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        sum += w(j, s);
        EXPECT_NEAR(w(j, s), expected[j][s], 1e-12);
      }
      if (sum > 0) {
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(WindowWeights, PeakFallsInOwnPart) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  const std::size_t n = 100;
  const auto w = window_weights(bank, n);
  for (std::size_t j = 0; j < 16; ++j) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < n; ++s) {
      if (w(j, s) > w(j, best)) best = s;
    }
    const double x = (static_cast<double>(best) + 0.5) / static_cast<double>(n);
    EXPECT_GE(x, static_cast<double>(j) / 16.0);
    EXPECT_LT(x, static_cast<double>(j + 1) / 16.0);
  }
}

// ---------------------------------------------------------------------------

TEST(Boilerplate, DisabledIsAllOnes) {
  const std::vector<Document> docs = {testkit::make_doc("a", "en", {"x", "x", "y"}, {}, Split::kTrain, "d")};
  const auto b = boilerplate_weights(docs, false);
  EXPECT_EQ(b.at("a"), (std::vector<double>{1, 1, 1}));
}

TEST(Boilerplate, InverseDocumentFrequencyWithinDomain) {
  std::vector<Document> docs;
  for (int i = 0; i < 4; ++i) {
    docs.push_back(testkit::make_doc("p" + std::to_string(i), "en", {"Menu", "Story " + std::to_string(i)}, {},
                                     Split::kTrain, "site.example"));
  }
  docs.push_back(testkit::make_doc("other", "en", {"Menu", "Other"}, {}, Split::kTrain, "elsewhere.example"));
  docs.push_back(testkit::make_doc("loose", "en", {"Menu"}));
  const auto b = boilerplate_weights(docs, true);
  EXPECT_EQ(b.at("p2"), (std::vector<double>{0.25, 1.0}));
  EXPECT_EQ(b.at("other"), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(b.at("loose"), (std::vector<double>{1.0}));
}

TEST(Boilerplate, RepeatWithinOneDocumentCountsOnce) {
  const std::vector<Document> docs = {testkit::make_doc("a", "en", {"same", "same"}, {}, Split::kTrain, "d"),
                                      testkit::make_doc("b", "en", {"same"}, {}, Split::kTrain, "d")};
  EXPECT_EQ(boilerplate_weights(docs, true).at("a"), (std::vector<double>{0.5, 0.5}));
}

// ---------------------------------------------------------------------------

TEST(TkPert, IdenticalSentencesGiveScaledCopies) {
  const auto bank = build_window_bank(4, 20.0, 1024);
  std::vector<double> r = {0.6, 0.0, -0.8};
  EmbeddingMatrix m(0, 3);
  for (int i = 0; i < 9; ++i) m.append_row(std::span<const double>(r));
  const auto v = tk_pert(m, bank);
  ASSERT_EQ(v.size(), 12u);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(v[j * 3 + k], r[k] / 2.0, 1e-7);
  }
  EXPECT_NEAR(testkit::norm(v), 1.0, 1e-12);
}

TEST(TkPert, SingleSentenceIsCollinear) {
  const auto bank = build_window_bank(16, 20.0, 1024);
  std::mt19937_64 rng(3);
  const auto m = testkit::random_matrix(rng, 1, 8);
  const auto row = to_double(m.row(0));
  const auto v = tk_pert(m, bank);
  std::size_t nonzero = 0;
  for (std::size_t j = 0; j < 16; ++j) {
    std::span<const double> part(v.data() + j * 8, 8);
    if (testkit::norm(part) == 0.0) continue;
    ++nonzero;
    EXPECT_NEAR(testkit::cosine(part, row), 1.0, 1e-12);
  }
  EXPECT_EQ(nonzero, 2u);
}

TEST(TkPert, MatchesExplicitSummation) {
  std::mt19937_64 rng(4);
  const auto bank = build_window_bank(4, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 20, 8);
  const auto v = tk_pert(m, bank);
  const auto expected = oracle::pert_compose(m, 4, 20.0, 1024, {}, {});
  ASSERT_EQ(v.size(), expected.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], expected[i], 1e-10);
}

TEST(TkPert, BoilerplateFactorsEnterPerSentence) {
  std::mt19937_64 rng(5);
  const auto bank = build_window_bank(4, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 12, 6);
  std::vector<double> b(12);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (auto& x : b) x = u(rng);
  const auto v = tk_pert(m, bank, b);
  const auto expected = oracle::pert_compose(m, 4, 20.0, 1024, b, {});
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], expected[i], 1e-10);
}

TEST(TkPert, PositiveScalingInvariance) {
  std::mt19937_64 rng(6);
  const auto bank = build_window_bank(8, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 15, 5);
  EmbeddingMatrix scaled = m;
  for (std::size_t i = 0; i < scaled.count(); ++i) {
    for (auto& x : scaled.row(i)) x *= 4.0f;  // exact in binary floating point
  }
  const auto a = tk_pert(m, bank);
  const auto b = tk_pert(scaled, bank);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(TkPert, ReversalChangesOutput) {
  std::mt19937_64 rng(7);
  const auto bank = build_window_bank(16, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 10, 6);
  EmbeddingMatrix reversed(0, 6);
  for (std::size_t i = m.count(); i-- > 0;) reversed.append_row(m.row(i));
  EXPECT_LT(testkit::cosine(tk_pert(m, bank), tk_pert(reversed, bank)), 1.0 - 1e-6);
}

TEST(TfPert, ConstantScoresReduceToTkPert) {
  std::mt19937_64 rng(8);
  const auto bank = build_window_bank(16, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 30, 8);
  const std::vector<double> tfidf(30, 0.37);
  const auto a = tk_pert(m, bank);
  const auto b = tf_pert(m, bank, {}, tfidf);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(TfPert, OneHotScoreGivesCollinearParts) {
  std::mt19937_64 rng(9);
  const auto bank = build_window_bank(4, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 8, 5);
  std::vector<double> tfidf(8, 0.0);
  tfidf[5] = 1.0;
  const auto v = tf_pert(m, bank, {}, tfidf);
  const auto row = to_double(m.row(5));
  for (std::size_t j = 0; j < 4; ++j) {
    std::span<const double> part(v.data() + j * 5, 5);
    if (testkit::norm(part) > 0) {
      EXPECT_NEAR(testkit::cosine(part, row), 1.0, 1e-12);
    }
  }
}

TEST(TfPert, MatchesExplicitSummation) {
  std::mt19937_64 rng(10);
  const auto bank = build_window_bank(4, 20.0, 1024);
  const auto m = testkit::random_matrix(rng, 20, 8);
  std::vector<double> tfidf(20), boiler(20);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (auto& x : tfidf) x = u(rng);
  for (auto& x : boiler) x = 0.5 * u(rng) + 0.01;
  const auto v = tf_pert(m, bank, boiler, tfidf);
  const auto expected = oracle::pert_compose(m, 4, 20.0, 1024, boiler, tfidf);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], expected[i], 1e-10);
}

TEST(TfPert, LengthMismatchIsError) {
  const auto bank = build_window_bank(4);
  const EmbeddingMatrix m(3, 2, {1, 0, 0, 1, 1, 1});
  EXPECT_THROW(tf_pert(m, bank, {}, std::vector<double>{1.0, 2.0}), ValidationError);
  EXPECT_THROW(tk_pert(m, bank, std::vector<double>{1.0}), ValidationError);
  EXPECT_THROW(tk_pert(EmbeddingMatrix(0, 2), bank), ValidationError);
}
