#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "trinityx/data.hpp"

using namespace trinityx;

namespace {

std::vector<Example> parse(const std::string& s) {
  std::istringstream in(s);
  return read_corpus(in);
}

std::string parse_error_of(const std::string& s) {
  try {
    parse(s);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(LoadCorpus, EmptyInputGivesEmptyList) {
  EXPECT_TRUE(parse("").empty());
  EXPECT_TRUE(parse("\n  \n").empty());
}

TEST(LoadCorpus, OneValidLine) {
  const auto c = parse(R"({"text": "how to bake", "dimension": "helpful", "class_label": 2, "split": "test"})");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0], (Example{"how to bake", 0, 2, Split::test}));
}

TEST(LoadCorpus, MissingDimensionNamesLineOne) {
  const std::string msg = parse_error_of(R"({"text": "x", "class_label": 0, "split": "train"})");
  EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("dimension"), std::string::npos) << msg;
}

TEST(LoadCorpus, ErrorsCarryTheirLineNumber) {
  const std::string good = R"({"text": "x", "dimension": "honest", "class_label": 0, "split": "train"})";
  EXPECT_NE(parse_error_of(good + "\n" + R"({"text": "x", "dimension": "polite", "class_label": 0, "split": "train"})")
                .find("line 2"),
            std::string::npos);
  EXPECT_NE(parse_error_of(good + "\n\n{not json").find("line 3"), std::string::npos);
  EXPECT_NE(parse_error_of(R"({"text": "x", "dimension": "honest", "class_label": -1, "split": "train"})").find("class_label"),
            std::string::npos);
  EXPECT_NE(parse_error_of(R"({"text": "x", "dimension": "honest", "class_label": 0, "split": "dev"})").find("split"),
            std::string::npos);
  EXPECT_NE(parse_error_of(R"({"text": "", "dimension": "honest", "class_label": 0, "split": "train"})").find("text"),
            std::string::npos);
  EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), IoError);
}

TEST(LoadCorpus, SaveRoundTripIsLossless) {
  const auto corpus = synth_corpus(3, 20, 4);
  std::stringstream ss;
  write_corpus(ss, corpus);
  EXPECT_EQ(read_corpus(ss), corpus);
}

TEST(Tokenize, LowercaseAsciiAlnumRuns) {
  EXPECT_EQ(tokenize("Hello, World! x2-Y"), (std::vector<std::string>{"hello", "world", "x2", "y"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("  ...  ").empty());
  EXPECT_EQ(tokenize("caf\xc3\xa9 ok"), (std::vector<std::string>{"caf", "ok"}));
}

TEST(FitTfidf, SingleDocument) {
  const TfidfModel m = fit_tfidf({{"a b", 0, 0, Split::train}}, 500);
  ASSERT_EQ(m.size(), 500u);
  ASSERT_GE(m.index_of("a"), 0);
  ASSERT_GE(m.index_of("b"), 0);
  EXPECT_DOUBLE_EQ(m.idf()[m.index_of("a")], 1.0);
  EXPECT_DOUBLE_EQ(m.idf()[m.index_of("b")], 1.0);
}

TEST(FitTfidf, DuplicatedDocument) {
  const TfidfModel one = fit_tfidf({{"a b", 0, 0, Split::train}}, 10);
  const TfidfModel two = fit_tfidf({{"a b", 0, 0, Split::train}, {"a b", 0, 0, Split::train}}, 10);
  EXPECT_EQ(one.vocabulary(), two.vocabulary());
  EXPECT_EQ(one.idf(), two.idf());
}

TEST(FitTfidf, AbsentTermNeverEntersAndPaddingHasZeroIdf) {
  const TfidfModel m = fit_tfidf({{"a b", 0, 0, Split::train}}, 5);
  EXPECT_EQ(m.index_of("c"), -1);
  EXPECT_EQ(m.index_of(""), -1);
  for (std::size_t i = 2; i < 5; ++i) {
    EXPECT_EQ(m.vocabulary()[i], "");
    EXPECT_EQ(m.idf()[i], 0.0);
  }
}

TEST(FitTfidf, OrderByDocumentFrequencyThenLexicographic) {
  // df: z=3, b=2, a=2, c=1
  const TfidfModel m = fit_tfidf({{"z a b", 0, 0, Split::train}, {"z a b c", 0, 0, Split::train},
                                  {"z z z", 0, 0, Split::train}},
                                 3);
  EXPECT_EQ(m.vocabulary(), (std::vector<std::string>{"z", "a", "b"}));
  // idf = ln((1 + 3) / (1 + 2)) + 1 for a and b.
  EXPECT_NEAR(m.idf()[1], std::log(4.0 / 3.0) + 1.0, 1e-15);
  EXPECT_NEAR(m.idf()[0], 1.0, 1e-15);
}

TEST(FitTfidf, DeterministicAndErrors) {
  const auto corpus = synth_corpus(5, 30);
  const TfidfModel a = fit_tfidf(corpus), b = fit_tfidf(corpus);
  EXPECT_EQ(a.vocabulary(), b.vocabulary());
  EXPECT_EQ(a.idf(), b.idf());
  EXPECT_THROW(fit_tfidf({}), ArgumentError);
}

TEST(Featurize, NoInVocabularyTermsGivesZero) {
  const TfidfModel m = fit_tfidf({{"a b", 0, 0, Split::train}}, 8);
  const Vector v = featurize(m, "x y z");
  EXPECT_EQ(v, Vector(8, 0.0));
  EXPECT_EQ(featurize(m, ""), Vector(8, 0.0));
}

TEST(Featurize, RepetitionNormalizesAway) {
  const TfidfModel m = fit_tfidf({{"a", 0, 0, Split::train}}, 1);
  EXPECT_EQ(featurize(m, "a a"), featurize(m, "a"));
  EXPECT_EQ(featurize(m, "a"), (Vector{1.0}));
}

TEST(Featurize, HandWeights) {
  // N=2; df(a)=2 -> idf 1; df(b)=1 -> idf ln(3/2)+1.
  const TfidfModel m = fit_tfidf({{"a b", 0, 0, Split::train}, {"a", 0, 0, Split::train}}, 2);
  const double ib = std::log(1.5) + 1.0;
  const Vector v = featurize(m, "a a b");
  const double norm = std::sqrt(4.0 + ib * ib);
  EXPECT_NEAR(v[m.index_of("a")], 2.0 / norm, 1e-15);
  EXPECT_NEAR(v[m.index_of("b")], ib / norm, 1e-15);
}

TEST(Featurize, PropertyLengthAndUnitOrZeroNorm) {
  const auto corpus = synth_corpus(7, 50);
  const TfidfModel m = fit_tfidf(corpus);
  Rng rng(1);
  for (const auto& e : corpus) {
    const Vector v = featurize(m, e.text);
    ASSERT_EQ(v.size(), 500u);
    EXPECT_NEAR(norm2(v), 1.0, 1e-12);
  }
  for (int trial = 0; trial < 100; ++trial) {
    std::string s;
    for (int k = 0; k < 8; ++k) s += static_cast<char>(32 + rng.index(95));
    const double n = norm2(featurize(m, s));
    EXPECT_TRUE(n == 0.0 || std::abs(n - 1.0) < 1e-12) << s;
  }
}

TEST(TfidfJson, RoundTrip) {
  const TfidfModel m = fit_tfidf(synth_corpus(2, 10), 50);
  const TfidfModel back = TfidfModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.vocabulary(), m.vocabulary());
  EXPECT_EQ(back.idf(), m.idf());
  nlohmann::json bad = m.to_json();
  bad["tokenizer"] = "whitespace";
  EXPECT_THROW(TfidfModel::from_json(bad), ParseError);
}

TEST(SynthCorpus, DeterministicPerSeed) {
  EXPECT_EQ(synth_corpus(42, 50), synth_corpus(42, 50));
  EXPECT_NE(synth_corpus(42, 50), synth_corpus(43, 50));
}

TEST(SynthCorpus, CountContract) {
  const auto c = synth_corpus(1, 100);
  ASSERT_EQ(c.size(), 300u);
  std::size_t per[3] = {0, 0, 0};
  for (const auto& e : c) ++per[e.dimension];
  EXPECT_EQ(per[0], 100u);
  EXPECT_EQ(per[1], 100u);
  EXPECT_EQ(per[2], 100u);
  EXPECT_THROW(synth_corpus(1, 0), ArgumentError);
}

TEST(SynthCorpus, ClassLabelFollowsKeywordGroup) {
  for (const auto& e : synth_corpus(9, 60, 4)) {
    ASSERT_LT(e.class_label, 4u);
    std::set<std::size_t> classes;
    for (const auto& t : tokenize(e.text))
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t j = 0; j < synth::kKeywordsPerClass; ++j)
          if (t == synth::class_keyword(e.dimension, c, j)) classes.insert(c);
    EXPECT_EQ(classes, (std::set<std::size_t>{e.class_label})) << e.text;
  }
}

TEST(SynthCorpus, SplitIsRoughlyEightyTwentyAndFollowsHash) {
  const auto c = synth_corpus(42, 200);
  std::size_t test = 0;
  for (const auto& e : c) {
    EXPECT_EQ(e.split, split_for(e.text));
    test += e.split == Split::test;
  }
  EXPECT_NEAR(static_cast<double>(test) / c.size(), 0.2, 0.05);
}

TEST(SynthCorpus, DimensionsSeparableByPerceptron) {
  // Independent oracle: a multi-class perceptron on the TF-IDF features.
  const auto corpus = synth_corpus(42, 200);
  const auto train = filter_split(corpus, Split::train);
  const TfidfModel m = fit_tfidf(train);
  std::vector<Vector> xs;
  for (const auto& e : train) xs.push_back(featurize(m, e.text));
  std::vector<Vector> w(3, Vector(m.size() + 1, 0.0));
  auto score = [&](std::size_t k, const Vector& x) {
    double s = w[k].back();
    for (std::size_t i = 0; i < x.size(); ++i) s += w[k][i] * x[i];
    return s;
  };
  auto predict = [&](const Vector& x) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (score(k, x) > score(best, x)) best = k;
    return best;
  };
  for (int epoch = 0; epoch < 20; ++epoch)
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const std::size_t p = predict(xs[i]), y = train[i].dimension;
      if (p == y) continue;
      for (std::size_t j = 0; j < xs[i].size(); ++j) {
        w[y][j] += xs[i][j];
        w[p][j] -= xs[i][j];
      }
      w[y].back() += 1.0;
      w[p].back() -= 1.0;
    }
  std::size_t ok = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) ok += predict(xs[i]) == train[i].dimension;
  EXPECT_GE(static_cast<double>(ok) / xs.size(), 0.99);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}
