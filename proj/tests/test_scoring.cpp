#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "plscore/errors.hpp"
#include "plscore/model.hpp"
#include "plscore/pool.hpp"
#include "plscore/scoring.hpp"
#include "support/fixtures.hpp"

using namespace plscore;

namespace {

// All-zero parameters give identical (uniform) logits at every position.
fixtures::Trained uniform_stub() {
  fixtures::Trained t = fixtures::untrained_mlm();
  for (auto& p : t.model.params())
    std::fill(p.t.data.begin(), p.t.data.end(), 0.0);
  return t;
}

// Emits one fixed report regardless of input.
class FixedScorer final : public Scorer {
 public:
  FixedScorer(const Vocab& v, ScoreReport r) : vocab_(&v), r_(std::move(r)) {}
  ScoreReport score(const Sentence&) const override { return r_; }
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return Framing::Mlm; }
  bool lowercase() const override { return false; }

 private:
  const Vocab* vocab_;
  ScoreReport r_;
};

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      double x = (a[i] - a[j]) * (b[i] - b[j]);
      if (x > 0)
        ++concordant;
      else if (x < 0)
        ++discordant;
    }
  return static_cast<double>(concordant - discordant) /
         static_cast<double>(concordant + discordant);
}

}  // namespace

TEST_CASE("length_penalty fixtures") {
  CHECK(length_penalty(1.0, 1) == doctest::Approx(1.0));
  CHECK(length_penalty(1.0, 19) == doctest::Approx(4.0));
  CHECK(length_penalty(0.6, 19) == doctest::Approx(2.2974).epsilon(1e-4));
  CHECK(length_penalty(0.7, 0) == doctest::Approx(std::pow(5.0 / 6.0, 0.7)));
  CHECK(length_penalty(0.7, 0) > 0.0);
  CHECK_THROWS_AS(length_penalty(1.0, -1), ContractError);
  CHECK_THROWS_AS(length_penalty(-0.1, 3), ContractError);
}

TEST_CASE("pll totals are per-token sums of nonpositive values") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s = encode(fix.vocab, "these small birds sing .", Framing::Mlm);
  ScoreReport r = pll(fix.model, s, 4);
  REQUIRE(r.per_token.size() == 5);
  double total = 0.0;
  for (const auto& t : r.per_token) {
    CHECK(t.log_prob <= 0.0);
    CHECK(std::exp(t.log_prob) <= 1.0);
    CHECK(std::exp(t.log_prob) > 0.0);
    total += t.log_prob;
  }
  CHECK(r.total == doctest::Approx(total).epsilon(1e-6));
  CHECK(r.token_count == 5);
  CHECK(r.word_count == 5);
}

TEST_CASE("empty sentence scores zero") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s;
  s.framing = Framing::Mlm;
  ScoreReport r = pll(fix.model, s, 4);
  CHECK(r.total == 0.0);
  CHECK(r.per_token.empty());
}

TEST_CASE("pll is batch-size invariant") {
  const auto& fix = fixtures::shared_mlm();
  Pool pool(4);
  for (const auto& line : fixtures::grammar_lines(10, 71)) {
    Sentence s = encode(fix.vocab, line, Framing::Mlm);
    ScoreReport r1 = pll(fix.model, s, 1);
    ScoreReport r8 = pll(fix.model, s, 8, &pool);
    ScoreReport r32 = pll(fix.model, s, 32, &pool);
    CHECK(r1.total == doctest::Approx(r8.total).epsilon(1e-9));
    CHECK(r1.total == doctest::Approx(r32.total).epsilon(1e-9));
  }
}

TEST_CASE("over-length sentences name the limit") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s;
  s.framing = Framing::Mlm;
  s.tokens.assign(40, Vocab::kNumReserved);
  try {
    pll(fix.model, s, 4);
    FAIL("expected LengthError");
  } catch (const LengthError& e) {
    CHECK(std::string(e.what()).find(
              std::to_string(fix.model.config().max_content_len())) !=
          std::string::npos);
  }
}

TEST_CASE("wrong model kind is a capability error") {
  const auto& mlm = fixtures::shared_mlm();
  const auto& causal = fixtures::shared_causal();
  Sentence sm = encode(mlm.vocab, "this cat hides .", Framing::Mlm);
  Sentence sc = encode(causal.vocab, "this cat hides .", Framing::Causal);
  CHECK_THROWS_AS(pll(causal.model, sm, 4), CapabilityError);
  CHECK_THROWS_AS(log_prob(mlm.model, sc), CapabilityError);
}

TEST_CASE("log_prob is the sum of chain-rule conditionals") {
  const auto& fix = fixtures::shared_causal();
  Sentence s = encode(fix.vocab, "those hens wait .", Framing::Causal);
  ScoreReport r = log_prob(fix.model, s);
  double chain = 0.0;
  for (int t = 1; t <= s.length(); ++t)
    chain += conditional_log_prob(fix.model, s, t);
  CHECK(r.total == doctest::Approx(chain).epsilon(1e-9));
  CHECK(static_cast<int>(r.per_token.size()) == s.length());

  // EOS-inclusive totals are strictly lower.
  ScoreReport with_eos = log_prob(fix.model, s, EosMode::Include);
  CHECK(with_eos.total < r.total);
  CHECK(with_eos.per_token.size() == r.per_token.size());
}

TEST_CASE("fixed-length sequence probabilities sum to one") {
  // 5 content types, capacity exactly 3.
  ModelConfig config;
  config.vocab_size = Vocab::kNumReserved + 5;
  config.layers = 1;
  config.heads = 2;
  config.hidden = 16;
  config.ffn = 32;
  config.max_len = 5;
  config.causal = true;
  Model model(config, 13);
  double total = 0.0;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      for (int c = 0; c < 5; ++c) {
        Sentence s;
        s.framing = Framing::Causal;
        s.tokens = {Vocab::kNumReserved + a, Vocab::kNumReserved + b,
                    Vocab::kNumReserved + c};
        total += std::exp(log_prob(model, s, EosMode::FixedLength).total);
      }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pll_no_mask is single-pass and ranks like pll") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s = encode(fix.vocab, "these quiet foxes hide .", Framing::Mlm);
  fix.model.reset_forward_passes();
  ScoreReport r = pll_no_mask(fix.model, s);
  CHECK(fix.model.forward_passes() == 1);
  CHECK(static_cast<int>(r.per_token.size()) == s.length());

  std::vector<double> masked, unmasked;
  for (const auto& line : fixtures::grammar_lines(200, 77)) {
    Sentence x = encode(fix.vocab, line, Framing::Mlm);
    masked.push_back(pll(fix.model, x, 8).total);
    unmasked.push_back(pll_no_mask(fix.model, x).total);
  }
  CHECK(kendall_tau(masked, unmasked) > 0.5);
}

TEST_CASE("uniform stub: pll, pll_no_mask and pppl close over V") {
  fixtures::Trained stub = uniform_stub();
  const int V = stub.model.config().vocab_size;
  Sentence s = encode(stub.vocab, "this dog sings .", Framing::Mlm);
  ScoreReport masked = pll(stub.model, s, 4);
  ScoreReport plain = pll_no_mask(stub.model, s);
  for (std::size_t i = 0; i < masked.per_token.size(); ++i) {
    CHECK(masked.per_token[i].log_prob ==
          doctest::Approx(-std::log(V)).epsilon(1e-12));
    CHECK(masked.per_token[i].log_prob ==
          doctest::Approx(plain.per_token[i].log_prob).epsilon(1e-12));
  }

  Corpus corpus = make_corpus(stub.vocab, fixtures::grammar_lines(8, 81),
                              Framing::Mlm);
  MaskedPllScorer scorer(stub.model, stub.vocab, 8);
  CorpusReport report = pppl(scorer, corpus);
  CHECK(report.pppl_token == doctest::Approx(V).epsilon(1e-9));
}

TEST_CASE("pppl hand fixture and recomputation invariant") {
  const auto& fix = fixtures::shared_mlm();
  ScoreReport fixed;
  fixed.per_token = {{1, 7, -std::log(2.0)},
                     {2, 8, -std::log(2.0)},
                     {3, 9, -std::log(2.0)}};
  fixed.total = -3.0 * std::log(2.0);
  fixed.token_count = 3;
  fixed.word_count = 3;
  FixedScorer scorer(fix.vocab, fixed);
  Corpus corpus = make_corpus(fix.vocab, {"this cat hides ."}, Framing::Mlm);
  CorpusReport r = pppl(scorer, corpus);
  CHECK(r.pppl_token == doctest::Approx(2.0).epsilon(1e-9));

  MaskedPllScorer real(fix.model, fix.vocab, 8);
  Corpus big = make_corpus(fix.vocab, fixtures::grammar_lines(20, 83),
                           Framing::Mlm);
  CorpusReport rr = pppl(real, big, Normalization::Words);
  double total = 0.0;
  for (const auto& sr : rr.sentences) total += sr.total;
  CHECK(rr.pppl_token ==
        doctest::Approx(std::exp(-total / rr.n_tok)).epsilon(1e-12));
  CHECK(rr.pppl_word ==
        doctest::Approx(std::exp(-total / rr.n_word)).epsilon(1e-12));
  CHECK(rr.pppl() == rr.pppl_word);
}

TEST_CASE("pppl contract errors") {
  const auto& fix = fixtures::shared_mlm();
  MaskedPllScorer scorer(fix.model, fix.vocab, 8);
  Corpus empty;
  CHECK_THROWS_AS(pppl(scorer, empty), DomainError);
}

TEST_CASE("word and character tokenizations disagree on pppl_token only") {
  std::vector<std::string> lines = fixtures::grammar_lines(60, 91);
  Vocab char_vocab = Vocab::build(lines, 1, Vocab::Mode::Char);
  Corpus char_corpus = make_corpus(char_vocab, {lines[0]}, Framing::Mlm);
  Corpus word_corpus = make_corpus(fixtures::shared_mlm().vocab, {lines[0]},
                                   Framing::Mlm);
  // Same raw text, same word counts, different token counts.
  CHECK(char_corpus.n_word == word_corpus.n_word);
  CHECK(char_corpus.n_tok != word_corpus.n_tok);
}

TEST_CASE("positionwise curve on identical sentences reproduces the scores") {
  const auto& fix = fixtures::shared_causal();
  std::vector<std::string> lines(5, "that brown owl sings .");
  Corpus corpus = make_corpus(fix.vocab, lines, Framing::Causal);
  CausalScorer scorer(fix.model, fix.vocab);
  std::vector<CurvePoint> curve = positionwise_curve(scorer, corpus, {});
  ScoreReport r = scorer.score(corpus.sentences[0]);
  REQUIRE(curve.size() == r.per_token.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].position == static_cast<int>(i) + 1);
    CHECK(curve[i].count == 5);
    CHECK(curve[i].mean_ce ==
          doctest::Approx(-r.per_token[i].log_prob).epsilon(1e-12));
  }
}

TEST_CASE("length filter controls curve support") {
  const auto& fix = fixtures::shared_mlm();
  Corpus corpus = make_corpus(fix.vocab, fixtures::grammar_lines(30, 93),
                              Framing::Mlm);
  MaskedPllScorer scorer(fix.model, fix.vocab, 8);
  std::vector<CurvePoint> c5 = positionwise_curve(scorer, corpus, 5);
  CHECK(c5.size() == 5);
  CHECK_THROWS_AS(positionwise_curve(scorer, corpus, 13), DomainError);
}

TEST_CASE("maskless scoring delegates to the regression head") {
  const auto& fix = fixtures::shared_mlm();
  Model with_head = fix.model;
  with_head.add_head();
  Sentence s = encode(fix.vocab, "this hen waits .", Framing::Mlm);
  CHECK(score_maskless(with_head, s) == 0.0);
  CHECK(score_maskless(with_head, s) == regress_sentence(with_head, s));
  CHECK_THROWS_AS(score_maskless(fix.model, s), CapabilityError);

  MasklessScorer scorer(with_head, fix.vocab);
  ScoreReport r = scorer.score(s);
  CHECK(r.total == 0.0);
  CHECK(r.per_token.empty());
}

TEST_CASE("parallel corpus scoring is order-stable") {
  const auto& fix = fixtures::shared_mlm();
  Corpus corpus = make_corpus(fix.vocab, fixtures::grammar_lines(24, 95),
                              Framing::Mlm);
  MaskedPllScorer scorer(fix.model, fix.vocab, 8);
  Pool p1(1), p4(4);
  CorpusReport serial = pppl(scorer, corpus, Normalization::Tokens, &p1);
  CorpusReport parallel = pppl(scorer, corpus, Normalization::Tokens, &p4);
  REQUIRE(serial.sentences.size() == parallel.sentences.size());
  for (std::size_t i = 0; i < serial.sentences.size(); ++i)
    CHECK(serial.sentences[i].total ==
          doctest::Approx(parallel.sentences[i].total).epsilon(1e-9));
  CHECK(serial.pppl_token ==
        doctest::Approx(parallel.pppl_token).epsilon(1e-9));
}
