// Corpus I/O, TF-IDF featurization and the synthetic three-dimension corpus.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "trinityx/error.hpp"
#include "trinityx/expert_bank.hpp"
#include "trinityx/rng.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Example {
  std::string text;
  std::size_t dimension = 0;  // index into dimension_names()
  std::size_t class_label = 0;
  Split split = Split::train;

  bool operator==(const Example&) const = default;
};

inline std::size_t parse_dimension(std::string_view name) {
  const auto& names = dimension_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw ParseError("unknown dimension \"" + std::string(name) + "\"");
}

inline nlohmann::json to_json(const Example& e) {
  return {{"text", e.text},
          {"dimension", dimension_names().at(e.dimension)},
          {"class_label", e.class_label},
          {"split", std::string(to_string(e.split))}};
}

/// One JSON object per line with fields text, dimension, class_label, split.
/// Blank lines are skipped.
inline std::vector<Example> read_corpus(std::istream& is) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw ParseError(std::string("invalid JSON: ") + err.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", lineno);
    for (const char* key : {"text", "dimension", "class_label", "split"})
      if (!j.contains(key)) throw ParseError(std::string("missing field \"") + key + "\"", lineno);
    Example e;
    if (!j["text"].is_string() || j["text"].get<std::string>().empty())
      throw ParseError("field \"text\" must be a non-empty string", lineno);
    e.text = j["text"].get<std::string>();
    if (!j["dimension"].is_string()) throw ParseError("field \"dimension\" must be a string", lineno);
    try {
      e.dimension = parse_dimension(j["dimension"].get<std::string>());
    } catch (const ParseError& err) {
      throw ParseError(err.what(), lineno);
    }
    if (!j["class_label"].is_number_unsigned()) throw ParseError("field \"class_label\" must be a non-negative integer", lineno);
    e.class_label = j["class_label"].get<std::size_t>();
    const auto& split = j["split"];
    if (split == "train")
      e.split = Split::train;
    else if (split == "test")
      e.split = Split::test;
    else
      throw ParseError("field \"split\" must be \"train\" or \"test\"", lineno);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Example> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path);
  return read_corpus(in);
}

inline void write_corpus(std::ostream& os, const std::vector<Example>& corpus) {
  for (const auto& e : corpus) os << to_json(e).dump() << '\n';
}

inline void save_corpus(const std::string& path, const std::vector<Example>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path);
  write_corpus(out, corpus);
}

inline std::vector<Example> filter_split(const std::vector<Example>& corpus, Split s) {
  std::vector<Example> out;
  std::copy_if(corpus.begin(), corpus.end(), std::back_inserter(out), [&](const Example& e) { return e.split == s; });
  return out;
}

inline constexpr std::string_view kTokenizerSpec = "ascii-lowercase; split on non-alphanumeric bytes";

/// ASCII-lowercased maximal runs of [a-z0-9]. Every other byte separates.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (c < 128 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Vocabulary of exactly `size` slots; unused slots hold "" with idf 0.
class TfidfModel {
 public:
  TfidfModel() = default;
  TfidfModel(std::vector<std::string> vocabulary, Vector idf) : vocabulary_(std::move(vocabulary)), idf_(std::move(idf)) {
    if (vocabulary_.size() != idf_.size()) throw ShapeError("tfidf: vocabulary and idf lengths differ");
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
      if (idf_[i] < 0.0 || !std::isfinite(idf_[i])) throw DomainError("tfidf: idf must be finite and >= 0");
      if (!vocabulary_[i].empty()) index_.emplace(vocabulary_[i], i);
    }
  }

  std::size_t size() const noexcept { return vocabulary_.size(); }
  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
  const Vector& idf() const noexcept { return idf_; }

  std::ptrdiff_t index_of(const std::string& term) const {
    auto it = index_.find(term);
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  }

  nlohmann::json to_json() const {
    return {{"vocabulary", vocabulary_}, {"idf", idf_}, {"tokenizer", std::string(kTokenizerSpec)}};
  }

  static TfidfModel from_json(const nlohmann::json& j) {
    try {
      if (j.at("tokenizer").get<std::string>() != kTokenizerSpec) throw ParseError("tfidf: unsupported tokenizer spec");
      return TfidfModel(j.at("vocabulary").get<std::vector<std::string>>(), j.at("idf").get<Vector>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("tfidf: ") + e.what());
    }
  }

 private:
  std::vector<std::string> vocabulary_;
  Vector idf_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Top-`size` terms by document frequency (ties: lexicographic), smoothed
/// idf_t = ln((1 + N) / (1 + df_t)) + 1.
inline TfidfModel fit_tfidf(const std::vector<Example>& corpus, std::size_t size = 500) {
  if (corpus.empty()) throw ArgumentError("fit_tfidf: empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& e : corpus) {
    auto toks = tokenize(e.text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[t];
  }
  std::vector<std::pair<std::string, std::size_t>> terms(df.begin(), df.end());
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const double n_docs = static_cast<double>(corpus.size());
  std::vector<std::string> vocab(size);
  Vector idf(size, 0.0);
  for (std::size_t i = 0; i < std::min(size, terms.size()); ++i) {
    vocab[i] = terms[i].first;
    idf[i] = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(terms[i].second))) + 1.0;
  }
  return TfidfModel(std::move(vocab), std::move(idf));
}

/// Term counts times idf, L2-normalized; the zero vector stays zero.
inline Vector featurize(const TfidfModel& model, std::string_view text) {
  Vector v(model.size(), 0.0);
  for (const auto& tok : tokenize(text)) {
    const auto idx = model.index_of(tok);
    if (idx >= 0) v[static_cast<std::size_t>(idx)] += 1.0;
  }
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= model.idf()[i];
  const double norm = norm2(v);
  if (norm > 0.0)
    for (double& x : v) x /= norm;
  return v;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Split rule shared by synth_corpus: test iff fnv1a(text) % 5 == 0.
inline Split split_for(std::string_view text) { return fnv1a(text) % 5 == 0 ? Split::test : Split::train; }

namespace synth {

inline const std::vector<std::vector<std::string>>& dimension_pools() {
  static const std::vector<std::vector<std::string>> pools{
      {"recipe", "explain", "guide", "steps", "tutorial", "summary", "plan", "advice", "schedule", "tips",
       "organize", "improve", "learn", "example", "outline", "draft", "compare", "suggest", "translate", "review"},
      {"weapon", "exploit", "poison", "attack", "steal", "hack", "violence", "threat", "malware", "fraud",
       "bypass", "harm", "dangerous", "illegal", "smuggle", "explosive", "abuse", "stalk", "scam", "toxic"},
      {"fact", "history", "science", "capital", "true", "myth", "evidence", "date", "population", "origin",
       "claim", "source", "verify", "record", "statistic", "discovery", "theory", "measure", "definition", "event"}};
  return pools;
}

inline const std::vector<std::string>& noise_pool() {
  static const std::vector<std::string> pool{
      "the", "please", "what", "how", "can", "you", "about", "tell", "me", "some",
      "would", "like", "know", "want", "need", "this", "that", "with", "for", "and",
      "is", "are", "was", "it", "of", "to", "in", "on", "my", "your",
      "do", "does", "give", "show", "make", "find", "thing", "way", "time", "people"};
  return pool;
}

/// Class keyword j of class c in dimension d, e.g. "helpc1w3".
inline std::string class_keyword(std::size_t d, std::size_t c, std::size_t j) {
  return dimension_names()[d].substr(0, 4) + "c" + std::to_string(c) + "w" + std::to_string(j);
}

inline constexpr std::size_t kDimensionTokens = 4;
inline constexpr std::size_t kClassTokens = 2;
inline constexpr std::size_t kNoiseTokens = 5;
inline constexpr std::size_t kKeywordsPerClass = 5;

}  // namespace synth

/// Synthetic stand-in for the three alignment datasets.
///
/// Each text mixes 4 tokens from its dimension's pool, 2 keywords of one
/// class from that dimension's class groups, and 5 shared noise tokens, in
/// shuffled order. class_label is the class whose keyword group occurs.
/// Dimensions use disjoint pools, so they are linearly separable in TF-IDF
/// space. Examples come out dimension-major (all helpful, then harmless,
/// then honest); the split follows split_for().
inline std::vector<Example> synth_corpus(std::uint64_t seed, std::size_t per_dimension_count,
                                         std::size_t class_count = 3) {
  if (per_dimension_count < 1 || class_count < 1) throw ArgumentError("synth_corpus: counts must be >= 1");
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(per_dimension_count * dimension_names().size());
  for (std::size_t d = 0; d < dimension_names().size(); ++d) {
    const auto& pool = synth::dimension_pools()[d];
    for (std::size_t k = 0; k < per_dimension_count; ++k) {
      const std::size_t c = rng.index(class_count);
      std::vector<std::string> toks;
      for (std::size_t i = 0; i < synth::kDimensionTokens; ++i) toks.push_back(pool[rng.index(pool.size())]);
      for (std::size_t i = 0; i < synth::kClassTokens; ++i)
        toks.push_back(synth::class_keyword(d, c, rng.index(synth::kKeywordsPerClass)));
      for (std::size_t i = 0; i < synth::kNoiseTokens; ++i)
        toks.push_back(synth::noise_pool()[rng.index(synth::noise_pool().size())]);
      rng.shuffle(toks);
      std::string text;
      for (const auto& t : toks) text += (text.empty() ? "" : " ") + t;
      const Split split = split_for(text);
      out.push_back({std::move(text), d, c, split});
    }
  }
  return out;
}

}  // namespace trinityx
