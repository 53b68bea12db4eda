#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plscore/model.hpp"
#include "plscore/pool.hpp"
#include "plscore/text.hpp"

namespace plscore {

struct TokenScore {
  int position = 0;  // 1-based content position
  int token_id = 0;
  double log_prob = 0.0;  // natural base
};

struct ScoreReport {
  std::string raw;
  std::vector<TokenScore> per_token;
  double total = 0.0;
  int token_count = 0;
  long word_count = 0;
};

struct CurvePoint {
  int position = 0;
  double mean_ce = 0.0;
  long count = 0;
};

enum class Normalization { Tokens, Words };

struct CorpusReport {
  std::vector<ScoreReport> sentences;
  long n_tok = 0;
  long n_word = 0;
  double pppl_token = 0.0;
  double pppl_word = 0.0;
  Normalization norm = Normalization::Tokens;
  double pppl() const {
    return norm == Normalization::Tokens ? pppl_token : pppl_word;
  }
};

// GNMT length penalty ((5 + |W|) / 6)^alpha.
double length_penalty(double alpha, int length);

// How the causal scorer treats the end-of-sentence conditional.
//   Exclude:     computed, reported separately, not in total (default).
//   Include:     added to total.
//   FixedLength: normalization-audit mode; conditionals renormalize over
//                the token types a sentence position can hold, and the
//                final position is forced when the sentence fills the
//                model's capacity.
enum class EosMode { Exclude, Include, FixedLength };

// PLL via one masked copy per position, evaluated `batch` copies at a time
// (parallel across a pool when given; totals are batch-size invariant).
ScoreReport pll(const Model& model, const Sentence& sentence, int batch,
                const Pool* pool = nullptr);

// Chain-rule log probability from a causal model, one forward pass.
ScoreReport log_prob(const Model& model, const Sentence& sentence,
                     EosMode eos = EosMode::Exclude);

// PLL summands read at each position with the original token left in
// place; one forward pass.
ScoreReport pll_no_mask(const Model& model, const Sentence& sentence);

// Single-pass scalar from the sentence-regression head.
double score_maskless(const Model& model, const Sentence& sentence);

// Sentence scorer abstraction used by rescoring/judging. Immutable and
// shareable across threads.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ScoreReport score(const Sentence& sentence) const = 0;
  virtual const Vocab& vocab() const = 0;
  virtual Framing framing() const = 0;
  virtual bool lowercase() const = 0;

  // Encodes raw text per the scorer's framing/casing, then scores it.
  ScoreReport score_text(const std::string& raw) const;
};

class MaskedPllScorer final : public Scorer {
 public:
  MaskedPllScorer(const Model& model, const Vocab& vocab, int batch = 16,
                  const Pool* pool = nullptr)
      : model_(&model), vocab_(&vocab), batch_(batch), pool_(pool) {}
  ScoreReport score(const Sentence& s) const override {
    return pll(*model_, s, batch_, pool_);
  }
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return Framing::Mlm; }
  bool lowercase() const override { return model_->config().lowercase; }

 private:
  const Model* model_;
  const Vocab* vocab_;
  int batch_;
  const Pool* pool_;
};

class NoMaskPllScorer final : public Scorer {
 public:
  NoMaskPllScorer(const Model& model, const Vocab& vocab)
      : model_(&model), vocab_(&vocab) {}
  ScoreReport score(const Sentence& s) const override {
    return pll_no_mask(*model_, s);
  }
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return Framing::Mlm; }
  bool lowercase() const override { return model_->config().lowercase; }

 private:
  const Model* model_;
  const Vocab* vocab_;
};

class CausalScorer final : public Scorer {
 public:
  CausalScorer(const Model& model, const Vocab& vocab,
               EosMode eos = EosMode::Exclude)
      : model_(&model), vocab_(&vocab), eos_(eos) {}
  ScoreReport score(const Sentence& s) const override {
    return log_prob(*model_, s, eos_);
  }
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return Framing::Causal; }
  bool lowercase() const override { return model_->config().lowercase; }

 private:
  const Model* model_;
  const Vocab* vocab_;
  EosMode eos_;
};

class MasklessScorer final : public Scorer {
 public:
  MasklessScorer(const Model& model, const Vocab& vocab)
      : model_(&model), vocab_(&vocab) {}
  ScoreReport score(const Sentence& s) const override;
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return Framing::Mlm; }
  bool lowercase() const override { return model_->config().lowercase; }

 private:
  const Model* model_;
  const Vocab* vocab_;
};

// Corpus pseudo-perplexity; both token and word normalizations are always
// recorded, `norm` selects the headline value.
CorpusReport pppl(const Scorer& scorer, const Corpus& corpus,
                  Normalization norm = Normalization::Tokens,
                  const Pool* pool = nullptr);

// Mean cross-entropy (natural base) by 1-based position, optionally over
// sentences of one exact token length.
std::vector<CurvePoint> positionwise_curve(const Scorer& scorer,
                                           const Corpus& corpus,
                                           std::optional<int> length_filter,
                                           const Pool* pool = nullptr);

}  // namespace plscore
