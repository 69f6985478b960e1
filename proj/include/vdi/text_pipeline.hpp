#pragma once

#include <cctype>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vdi/error.hpp"

namespace vdi::text {

inline constexpr std::string_view kDefaultMaskToken = "[MASK]";

/// Lowercases, turns every character other than letters, digits and
/// apostrophes into a separator, and splits on whitespace. Apostrophes at
/// token edges are dropped.
inline std::vector<std::string> tokenize(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0, e = current.size();
    while (b < e && current[b] == '\'') ++b;
    while (e > b && current[e - 1] == '\'') --e;
    if (e > b) tokens.emplace_back(current.substr(b, e - b));
    current.clear();
  };
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// A query sentence: the raw string plus its normalized tokens.
struct QuerySentence {
  std::vector<std::string> tokens;
  std::string raw;

  static QuerySentence parse(std::string_view raw) {
    QuerySentence q{tokenize(raw), std::string(raw)};
    if (q.tokens.empty()) throw EmptyContent("query sentence has no tokens: '" + q.raw + "'");
    return q;
  }

  std::size_t size() const { return tokens.size(); }
  std::string normalized() const { return join(tokens); }

  bool operator==(const QuerySentence&) const = default;
};

/// Half-open token range [start_token, end_token).
struct NounChunkSpan {
  std::size_t start_token = 0;
  std::size_t end_token = 0;

  bool contains(std::size_t p) const { return p >= start_token && p < end_token; }
  bool operator==(const NounChunkSpan&) const = default;
};

/// Throws unless spans are non-empty, in range, sorted and pairwise disjoint.
inline void validate_spans(const std::vector<NounChunkSpan>& spans, std::size_t token_count) {
  std::size_t floor = 0;
  for (const auto& s : spans) {
    if (s.start_token >= s.end_token || s.end_token > token_count || s.start_token < floor) {
      throw Error("invalid noun chunk span [" + std::to_string(s.start_token) + ", " +
                  std::to_string(s.end_token) + ") for " + std::to_string(token_count) +
                  " tokens");
    }
    floor = s.end_token;
  }
}

// ---------------------------------------------------------------------------
// Lexicon

enum class WordClass { noun, adj, det, poss };

inline std::optional<WordClass> word_class_from_string(std::string_view s) {
  if (s == "NOUN") return WordClass::noun;
  if (s == "ADJ") return WordClass::adj;
  if (s == "DET") return WordClass::det;
  if (s == "POSS") return WordClass::poss;
  return std::nullopt;
}

/// Closed word-class lexicon: `word<TAB>class` per line, classes NOUN, ADJ,
/// DET, POSS. Blank lines and lines starting with '#' are skipped. The first
/// entry for a word wins.
class Lexicon {
 public:
  Lexicon() = default;

  static Lexicon parse(std::istream& in) {
    Lexicon lex;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(line_no, "expected word<TAB>class");
      const std::string word = line.substr(0, tab);
      const auto cls = word_class_from_string(line.substr(tab + 1));
      if (word.empty() || !cls) throw ParseError(line_no, "bad lexicon entry '" + line + "'");
      lex.add(word, *cls);
    }
    return lex;
  }

  static Lexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon '" + path + "'");
    return parse(in);
  }

  /// The lexicon bundled with the library.
  static const Lexicon& builtin();

  void add(const std::string& word, WordClass cls) { entries_.emplace(word, cls); }

  std::optional<WordClass> lookup(const std::string& word) const {
    auto it = entries_.find(word);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, WordClass> entries_;
};

namespace detail {

inline constexpr std::string_view kBuiltinLexicon[][2] = {
    // determiners and quantifiers
    {"a", "DET"}, {"an", "DET"}, {"the", "DET"}, {"this", "DET"}, {"that", "DET"},
    {"these", "DET"}, {"those", "DET"}, {"some", "DET"}, {"another", "DET"}, {"each", "DET"},
    {"every", "DET"}, {"two", "DET"}, {"three", "DET"},
    // possessives
    {"his", "POSS"}, {"her", "POSS"}, {"their", "POSS"}, {"its", "POSS"}, {"my", "POSS"},
    {"your", "POSS"}, {"our", "POSS"},
    // adjectives
    {"tall", "ADJ"}, {"short", "ADJ"}, {"small", "ADJ"}, {"big", "ADJ"}, {"large", "ADJ"},
    {"little", "ADJ"}, {"red", "ADJ"}, {"blue", "ADJ"}, {"green", "ADJ"}, {"white", "ADJ"},
    {"black", "ADJ"}, {"young", "ADJ"}, {"old", "ADJ"}, {"other", "ADJ"}, {"new", "ADJ"},
    {"hot", "ADJ"}, {"cold", "ADJ"}, {"wooden", "ADJ"}, {"empty", "ADJ"}, {"dirty", "ADJ"},
    {"clean", "ADJ"}, {"front", "ADJ"}, {"back", "ADJ"}, {"first", "ADJ"}, {"second", "ADJ"},
    // nouns
    {"person", "NOUN"}, {"people", "NOUN"}, {"man", "NOUN"}, {"woman", "NOUN"},
    {"boy", "NOUN"}, {"girl", "NOUN"}, {"child", "NOUN"}, {"door", "NOUN"},
    {"doorway", "NOUN"}, {"window", "NOUN"}, {"table", "NOUN"}, {"chair", "NOUN"},
    {"cup", "NOUN"}, {"glass", "NOUN"}, {"bottle", "NOUN"}, {"phone", "NOUN"},
    {"book", "NOUN"}, {"bag", "NOUN"}, {"box", "NOUN"}, {"ball", "NOUN"}, {"dog", "NOUN"},
    {"cat", "NOUN"}, {"car", "NOUN"}, {"floor", "NOUN"}, {"room", "NOUN"},
    {"kitchen", "NOUN"}, {"bed", "NOUN"}, {"food", "NOUN"}, {"sandwich", "NOUN"},
    {"shoes", "NOUN"}, {"clothes", "NOUN"}, {"towel", "NOUN"}, {"laptop", "NOUN"},
    {"picture", "NOUN"}, {"mirror", "NOUN"}, {"dishes", "NOUN"}, {"light", "NOUN"},
    {"blanket", "NOUN"}, {"pillow", "NOUN"}, {"shelf", "NOUN"}, {"cabinet", "NOUN"},
    {"refrigerator", "NOUN"}, {"hand", "NOUN"}, {"hands", "NOUN"}, {"face", "NOUN"},
    {"hair", "NOUN"}, {"water", "NOUN"}, {"paper", "NOUN"}, {"camera", "NOUN"},
    {"broom", "NOUN"}, {"vacuum", "NOUN"}, {"television", "NOUN"}, {"sofa", "NOUN"},
    {"couch", "NOUN"}, {"coffee", "NOUN"}, {"handle", "NOUN"}, {"stairs", "NOUN"},
    {"closet", "NOUN"}, {"bathroom", "NOUN"}, {"medicine", "NOUN"}, {"sink", "NOUN"},
};

}  // namespace detail

inline const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = [] {
    Lexicon l;
    for (const auto& entry : detail::kBuiltinLexicon) {
      l.add(std::string(entry[0]), *word_class_from_string(entry[1]));
    }
    return l;
  }();
  return lex;
}

// ---------------------------------------------------------------------------
// Chunker backends

class ChunkerBackend {
 public:
  virtual ~ChunkerBackend() = default;
  virtual std::vector<NounChunkSpan> extract(const QuerySentence& q) const = 0;
};

/// Marks maximal runs of determiner / possessive / adjective / noun tokens
/// that end in a noun. A determiner or possessive that follows a noun starts
/// a new run; non-noun tokens trailing the last noun of a run are left out.
class RuleBasedChunker final : public ChunkerBackend {
 public:
  RuleBasedChunker() : lexicon_(&Lexicon::builtin()) {}
  explicit RuleBasedChunker(const Lexicon& lexicon) : lexicon_(&lexicon) {}

  std::vector<NounChunkSpan> extract(const QuerySentence& q) const override {
    std::vector<NounChunkSpan> spans;
    const auto& t = q.tokens;
    std::size_t i = 0;
    while (i < t.size()) {
      if (!lexicon_->lookup(t[i])) {
        ++i;
        continue;
      }
      const std::size_t start = i;
      std::optional<std::size_t> last_noun;
      std::size_t j = i;
      for (; j < t.size(); ++j) {
        const auto cls = lexicon_->lookup(t[j]);
        if (!cls) break;
        const bool opener = *cls == WordClass::det || *cls == WordClass::poss;
        if (opener && last_noun) break;
        if (*cls == WordClass::noun) last_noun = j;
      }
      if (last_noun) {
        spans.push_back({start, *last_noun + 1});
        i = *last_noun + 1;
      } else {
        i = j;
      }
    }
    return spans;
  }

 private:
  const Lexicon* lexicon_;
};

/// Adapter slot for an external parser. The callable's output is validated
/// against the span invariants before it is returned.
class ExternalChunker final : public ChunkerBackend {
 public:
  using Fn = std::function<std::vector<NounChunkSpan>(const QuerySentence&)>;
  explicit ExternalChunker(Fn fn) : fn_(std::move(fn)) {}

  std::vector<NounChunkSpan> extract(const QuerySentence& q) const override {
    auto spans = fn_(q);
    validate_spans(spans, q.size());
    return spans;
  }

 private:
  Fn fn_;
};

inline std::vector<NounChunkSpan> extract_noun_chunks(const QuerySentence& q,
                                                      const ChunkerBackend& backend) {
  if (q.tokens.empty()) throw EmptyContent("cannot chunk an empty sentence");
  return backend.extract(q);
}

inline std::vector<NounChunkSpan> extract_noun_chunks(const QuerySentence& q) {
  static const RuleBasedChunker chunker;
  return extract_noun_chunks(q, chunker);
}

// ---------------------------------------------------------------------------
// Masked queries

/// Static query keeps only noun-chunk tokens; dynamic query keeps only the
/// tokens outside every chunk. Each position is masked in exactly one.
struct MaskedQueryPair {
  QuerySentence original;
  std::vector<std::string> static_query;
  std::vector<std::string> dynamic_query;
  std::vector<NounChunkSpan> chunk_spans;
  std::string mask_token{kDefaultMaskToken};

  bool in_chunk(std::size_t p) const {
    for (const auto& s : chunk_spans) {
      if (s.contains(p)) return true;
    }
    return false;
  }
  bool static_masked(std::size_t p) const { return !in_chunk(p); }
  bool dynamic_masked(std::size_t p) const { return in_chunk(p); }

  /// Fills the dynamic query's masked slots from the static query.
  std::vector<std::string> unmask() const {
    std::vector<std::string> out = dynamic_query;
    for (std::size_t p = 0; p < out.size(); ++p) {
      if (dynamic_masked(p)) out[p] = static_query[p];
    }
    return out;
  }
};

inline MaskedQueryPair make_masked_pair(const QuerySentence& q,
                                        const std::vector<NounChunkSpan>& spans,
                                        std::string_view mask_token = kDefaultMaskToken) {
  validate_spans(spans, q.size());
  MaskedQueryPair pair{q, q.tokens, q.tokens, spans, std::string(mask_token)};
  std::size_t covered = 0;
  for (std::size_t p = 0; p < q.size(); ++p) {
    if (pair.in_chunk(p)) {
      pair.dynamic_query[p] = pair.mask_token;
      ++covered;
    } else {
      pair.static_query[p] = pair.mask_token;
    }
  }
  if (covered == 0) throw EmptyContent("no noun chunk: static query would be all mask tokens");
  if (covered == q.size()) {
    throw EmptyContent("noun chunks cover the sentence: dynamic query would be all mask tokens");
  }
  return pair;
}

/// Convenience: chunk with `backend` and mask. Returns nullopt on EmptyContent.
inline std::optional<MaskedQueryPair> try_masked_pair(const QuerySentence& q,
                                                      const ChunkerBackend& backend,
                                                      std::string_view mask_token = kDefaultMaskToken) {
  try {
    return make_masked_pair(q, extract_noun_chunks(q, backend), mask_token);
  } catch (const EmptyContent&) {
    return std::nullopt;
  }
}

}  // namespace vdi::text
