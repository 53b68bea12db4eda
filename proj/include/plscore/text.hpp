#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "plscore/errors.hpp"

namespace plscore {

enum class Framing { None, Mlm, Causal };

// Token table with a fixed reserved block at the front. Immutable once
// built; ids are dense and stable across save/load.
class Vocab {
 public:
  enum class Mode { Word, Char };

  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kCls = 3;
  static constexpr int kSep = 4;
  static constexpr int kBos = 5;
  static constexpr int kEos = 6;
  static constexpr int kNumReserved = 7;

  // Tokens with corpus frequency >= min_count get an id; the rest map to
  // [UNK]. Ordering: frequency descending, then lexicographic.
  static Vocab build(const std::vector<std::string>& lines, int min_count,
                     Mode mode);

  int size() const { return static_cast<int>(id_to_tok_.size()); }
  // Token types a sentence position can actually hold (excludes reserved
  // framing/mask ids, includes [UNK]).
  int scoreable_size() const { return size() - kNumReserved + 1; }
  Mode mode() const { return mode_; }

  int id(const std::string& tok) const;
  const std::string& token(int id) const;
  static bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

  // Splits raw text into surface tokens (whitespace words or UTF-8
  // characters, spaces included as tokens in character mode).
  std::vector<std::string> tokenize(const std::string& raw) const;

  std::string to_json_string() const;
  static Vocab from_json_string(const std::string& s);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  Vocab() = default;
  void add_token(const std::string& tok);

  Mode mode_ = Mode::Word;
  std::vector<std::string> id_to_tok_;
  std::unordered_map<std::string, int> tok_to_id_;
};

// A tokenized utterance. `tokens` holds content ids only; framing ids are
// attached on demand by framed_ids().
struct Sentence {
  std::string raw;          // normalized surface form
  std::vector<int> tokens;  // no framing/mask ids
  Framing framing = Framing::None;

  int length() const { return static_cast<int>(tokens.size()); }
};

struct Corpus {
  std::vector<Sentence> sentences;
  long n_tok = 0;   // sum of |tokens|
  long n_word = 0;  // sum of whitespace word counts of raw text
};

// Collapses whitespace runs, trims, optionally lowercases (ASCII).
std::string normalize_text(const std::string& raw, bool lowercase = false);

long count_words(const std::string& raw);

// Tokenizes `raw` against `vocab`; OOV tokens map to [UNK] (counted into
// *unk_count when given).
Sentence encode(const Vocab& vocab, const std::string& raw, Framing framing,
                bool lowercase = false, long* unk_count = nullptr);

// Inverse of encode for in-vocabulary text.
std::string decode(const Vocab& vocab, const Sentence& s);

// Content ids wrapped in framing tokens: [CLS] w [SEP] or [BOS] w [EOS].
std::vector<int> framed_ids(const Sentence& s);

// Appends " ." unless the text already ends with ".".
std::string append_period(const std::string& raw);

std::vector<std::string> load_lines(const std::string& path);

Corpus make_corpus(const Vocab& vocab, const std::vector<std::string>& lines,
                   Framing framing, bool lowercase = false,
                   long* unk_count = nullptr);

}  // namespace plscore
