#include "plscore/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "plscore/errors.hpp"

namespace plscore {

namespace {

// Stable log-softmax value of `target` within one logits row.
double row_log_prob(const Tensor& logits, std::int64_t row, int target) {
  const std::int64_t V = logits.cols();
  double mx = logits.at(row, 0);
  for (std::int64_t j = 1; j < V; ++j) mx = std::max(mx, logits.at(row, j));
  double z = 0.0;
  for (std::int64_t j = 0; j < V; ++j) z += std::exp(logits.at(row, j) - mx);
  return logits.at(row, target) - mx - std::log(z);
}

// Same, but normalized over an explicit support set.
double row_log_prob_over(const Tensor& logits, std::int64_t row, int target,
                         const std::vector<int>& support) {
  double mx = logits.at(row, support.front());
  for (int j : support) mx = std::max(mx, logits.at(row, j));
  double z = 0.0;
  for (int j : support) z += std::exp(logits.at(row, j) - mx);
  return logits.at(row, target) - mx - std::log(z);
}

// Non-reserved token types; the event space of the fixed-length audit.
std::vector<int> content_support(int vocab_size) {
  std::vector<int> s;
  for (int j = Vocab::kNumReserved; j < vocab_size; ++j) s.push_back(j);
  return s;
}

void check_mlm_input(const Model& model, const Sentence& sentence) {
  if (model.config().causal)
    throw CapabilityError("pll: model is causal, not an MLM");
  if (sentence.framing != Framing::Mlm)
    throw ContractError("pll: sentence must use mlm framing");
  if (sentence.length() > model.config().max_content_len())
    throw LengthError("pll: sentence length " +
                      std::to_string(sentence.length()) +
                      " exceeds model limit " +
                      std::to_string(model.config().max_content_len()));
}

ScoreReport finalize(const Sentence& sentence,
                     std::vector<TokenScore> per_token) {
  ScoreReport r;
  r.raw = sentence.raw;
  r.per_token = std::move(per_token);
  for (const auto& t : r.per_token) r.total += t.log_prob;
  r.token_count = sentence.length();
  r.word_count = count_words(sentence.raw);
  return r;
}

}  // namespace

double length_penalty(double alpha, int length) {
  if (length < 0)
    throw ContractError("length_penalty: negative length");
  if (alpha < 0.0)
    throw ContractError("length_penalty: alpha must be >= 0");
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

ScoreReport pll(const Model& model, const Sentence& sentence, int batch,
                const Pool* pool) {
  check_mlm_input(model, sentence);
  if (batch < 1) throw ContractError("pll: batch must be >= 1");
  const int L = sentence.length();
  std::vector<TokenScore> scores(static_cast<std::size_t>(L));
  const std::vector<int> framed = framed_ids(sentence);
  auto score_position = [&](std::size_t i) {
    int t = static_cast<int>(i) + 1;
    std::vector<int> copy = framed;
    int original = copy[static_cast<std::size_t>(t)];
    copy[static_cast<std::size_t>(t)] = Vocab::kMask;
    Tensor logits = model.forward_logits(copy);
    scores[i] = {t, original, row_log_prob(logits, t, original)};
  };
  // Evaluate masked copies `batch` at a time, order-stable by position.
  for (int start = 0; start < L; start += batch) {
    std::size_t n = static_cast<std::size_t>(std::min(batch, L - start));
    if (pool) {
      pool->parallel_for(n, [&](std::size_t k) {
        score_position(static_cast<std::size_t>(start) + k);
      });
    } else {
      for (std::size_t k = 0; k < n; ++k)
        score_position(static_cast<std::size_t>(start) + k);
    }
  }
  return finalize(sentence, std::move(scores));
}

ScoreReport log_prob(const Model& model, const Sentence& sentence,
                     EosMode eos) {
  if (!model.config().causal)
    throw CapabilityError("log_prob: model is not causal");
  if (sentence.framing != Framing::Causal)
    throw ContractError("log_prob: sentence must use causal framing");
  const int L = sentence.length();
  const int cap = model.config().max_content_len();
  if (L > cap)
    throw LengthError("log_prob: sentence length " + std::to_string(L) +
                      " exceeds model limit " + std::to_string(cap));
  // One pass over BOS w_1..w_L; row i predicts the token at i+1.
  std::vector<int> input;
  input.push_back(Vocab::kBos);
  input.insert(input.end(), sentence.tokens.begin(), sentence.tokens.end());
  Tensor logits = model.forward_logits(input);

  std::vector<int> support;
  if (eos == EosMode::FixedLength)
    support = content_support(model.config().vocab_size);

  std::vector<TokenScore> scores;
  for (int t = 1; t <= L; ++t) {
    int tok = sentence.tokens[static_cast<std::size_t>(t - 1)];
    if (eos == EosMode::FixedLength && Vocab::is_reserved(tok))
      throw ContractError(
          "log_prob: fixed-length mode requires in-vocabulary tokens");
    double lp = eos == EosMode::FixedLength
                    ? row_log_prob_over(logits, t - 1, tok, support)
                    : row_log_prob(logits, t - 1, tok);
    scores.push_back({t, tok, lp});
  }
  ScoreReport r = finalize(sentence, std::move(scores));
  if (eos != EosMode::Exclude) {
    double eos_lp;
    if (eos == EosMode::FixedLength) {
      if (L == cap) {
        eos_lp = 0.0;  // no capacity left; termination is forced
      } else {
        std::vector<int> with_eos = support;
        with_eos.push_back(Vocab::kEos);
        eos_lp = row_log_prob_over(logits, L, Vocab::kEos, with_eos);
      }
    } else {
      eos_lp = row_log_prob(logits, L, Vocab::kEos);
    }
    r.total += eos_lp;
  }
  return r;
}

ScoreReport pll_no_mask(const Model& model, const Sentence& sentence) {
  check_mlm_input(model, sentence);
  const std::vector<int> framed = framed_ids(sentence);
  Tensor logits = model.forward_logits(framed);
  std::vector<TokenScore> scores;
  for (int t = 1; t <= sentence.length(); ++t) {
    int tok = framed[static_cast<std::size_t>(t)];
    scores.push_back({t, tok, row_log_prob(logits, t, tok)});
  }
  return finalize(sentence, std::move(scores));
}

double score_maskless(const Model& model, const Sentence& sentence) {
  return regress_sentence(model, sentence);
}

ScoreReport MasklessScorer::score(const Sentence& s) const {
  ScoreReport r;
  r.raw = s.raw;
  r.total = score_maskless(*model_, s);
  r.token_count = s.length();
  r.word_count = count_words(s.raw);
  return r;
}

ScoreReport Scorer::score_text(const std::string& raw) const {
  return score(encode(vocab(), raw, framing(), lowercase()));
}

CorpusReport pppl(const Scorer& scorer, const Corpus& corpus,
                  Normalization norm, const Pool* pool) {
  if (corpus.sentences.empty()) throw DomainError("pppl: empty corpus");
  CorpusReport report;
  report.norm = norm;
  report.sentences.resize(corpus.sentences.size());
  auto score_one = [&](std::size_t i) {
    report.sentences[i] = scorer.score(corpus.sentences[i]);
  };
  if (pool)
    pool->parallel_for(report.sentences.size(), score_one);
  else
    for (std::size_t i = 0; i < report.sentences.size(); ++i) score_one(i);

  double total = 0.0;
  for (const auto& s : report.sentences) {
    total += s.total;
    report.n_tok += s.token_count;
    report.n_word += s.word_count;
  }
  if ((norm == Normalization::Tokens && report.n_tok == 0) ||
      (norm == Normalization::Words && report.n_word == 0))
    throw DomainError("pppl: normalization count is zero");
  if (report.n_tok > 0)
    report.pppl_token = std::exp(-total / static_cast<double>(report.n_tok));
  if (report.n_word > 0)
    report.pppl_word = std::exp(-total / static_cast<double>(report.n_word));
  return report;
}

std::vector<CurvePoint> positionwise_curve(const Scorer& scorer,
                                           const Corpus& corpus,
                                           std::optional<int> length_filter,
                                           const Pool* pool) {
  std::vector<const Sentence*> kept;
  for (const auto& s : corpus.sentences)
    if (!length_filter || s.length() == *length_filter) kept.push_back(&s);
  if (kept.empty())
    throw DomainError("positionwise_curve: no sentences after length filter");
  std::vector<ScoreReport> reports(kept.size());
  auto score_one = [&](std::size_t i) { reports[i] = scorer.score(*kept[i]); };
  if (pool)
    pool->parallel_for(kept.size(), score_one);
  else
    for (std::size_t i = 0; i < kept.size(); ++i) score_one(i);

  std::map<int, std::pair<double, long>> acc;  // position -> (sum ce, count)
  for (const auto& r : reports)
    for (const auto& t : r.per_token) {
      auto& a = acc[t.position];
      a.first += -t.log_prob;
      a.second += 1;
    }
  if (acc.empty())
    throw DomainError("positionwise_curve: scorer has no per-token output");
  std::vector<CurvePoint> curve;
  for (const auto& [pos, a] : acc)
    curve.push_back({pos, a.first / static_cast<double>(a.second), a.second});
  return curve;
}

}  // namespace plscore
