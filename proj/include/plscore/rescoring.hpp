#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "plscore/pool.hpp"
#include "plscore/scoring.hpp"

namespace plscore {

struct Hypothesis {
  std::string text;
  double f_score = 0.0;               // decoder log score, natural base
  std::optional<double> g_score;      // LM/MLM score, length-normalized
  std::optional<double> combined;
  std::optional<int> rank;            // 1-based rank after rescoring
};

struct NBestList {
  std::string id;
  std::string ref;
  std::vector<Hypothesis> hyps;  // decoder order
};

struct InterpolationWeights {
  double lambda = 0.0;   // weight on g
  double gamma = 1.0;    // MLM share within g
  double alpha_f = 0.0;  // length-penalty exponent for f
  double alpha_g = 0.0;  // length-penalty exponent for g sub-scores
  void validate() const;
};

struct WerCounts {
  long subs = 0;
  long ins = 0;
  long dels = 0;
  long ref_words = 0;
  double rate = 0.0;
  bool infinite = false;  // empty reference vs non-empty hypothesis
  long distance() const { return subs + ins + dels; }
};

enum class Metric { Wer, Bleu };

struct GridPoint {
  double lambda = 0.0;
  double gamma = 0.0;
  double metric = 0.0;
};

struct GridSearchResult {
  InterpolationWeights best;
  double dev_metric = 0.0;
  std::vector<GridPoint> table;
};

// JSONL, one utterance per line:
//   {"id": ..., "ref": ..., "hyps": [{"text": ..., "score": ...}, ...]}
// Rescored files additionally carry "g", "combined", "rank" per hypothesis.
std::vector<NBestList> load_nbest(const std::string& path);
void save_nbest(const std::vector<NBestList>& lists, const std::string& path);

// f / LP(alpha_f, len_f) + lambda * g / LP(alpha_g, len_g).
double combine(double f_score, double g_score,
               const InterpolationWeights& weights, int len_f, int len_g);

// Length-normalized sub-scores of one hypothesis, mixable for any gamma.
struct GScore {
  double mlm = 0.0;
  std::optional<double> lm;
};

struct GOptions {
  double alpha_g = 0.0;
  // Applied before g-scoring only, never to f or references.
  bool append_period = false;
};

double mix_g(const GScore& parts, double gamma);

using GFunction = std::function<double(const std::string&)>;

// Per-hypothesis g: (1 - gamma) log P_LM + gamma PLL, each sub-score
// normalized by its own tokenization length first. gamma < 1 needs `lm`.
GFunction make_g(const Scorer* mlm, const Scorer* lm, double gamma,
                 const GOptions& opts = {});

// Scores every hypothesis once; grid search reuses the cache.
using GCache = std::vector<std::vector<GScore>>;
GCache build_g_cache(const std::vector<NBestList>& lists, const Scorer* mlm,
                     const Scorer* lm, const GOptions& opts = {},
                     const Pool* pool = nullptr);

// Fills g/combined/rank. g values are taken as already length-normalized;
// ties in combined score keep decoder order.
void rescore(std::vector<NBestList>& lists, const GFunction& g,
             const InterpolationWeights& weights);
void rescore_cached(std::vector<NBestList>& lists, const GCache& cache,
                    const InterpolationWeights& weights);

// Index of the selected hypothesis: best combined score when present,
// decoder top-1 otherwise.
std::size_t top_index(const NBestList& list);

// Levenshtein alignment over whitespace words, uniform costs.
WerCounts wer(const std::string& reference, const std::string& hypothesis);

// multi-bleu convention: clipped n-gram precisions (1..max_n), geometric
// mean, brevity penalty, no smoothing; any zero precision gives 0.
double corpus_bleu(const std::vector<std::string>& references,
                   const std::vector<std::string>& hypotheses, int max_n = 4);

// Sentence BLEU with add-one smoothing on orders >= 2 (oracle use only).
double sentence_bleu(const std::string& reference,
                     const std::string& hypothesis, int max_n = 4);

// Corpus metric of the current top-1 selections.
double evaluate_metric(const std::vector<NBestList>& lists, Metric metric);

// Corpus metric of the per-utterance best hypothesis (lower bound for WER,
// upper bound for BLEU).
double oracle_metric(const std::vector<NBestList>& lists, Metric metric);

std::vector<double> grid_range(double lo, double hi, double step);

// Evaluates the metric at every (lambda, gamma); minimizes WER or
// maximizes BLEU; ties resolve to the largest lambda, then gamma.
GridSearchResult grid_search(std::vector<NBestList> dev, const GCache& cache,
                             Metric metric, const std::vector<double>& lambdas,
                             const std::vector<double>& gammas,
                             double alpha_f = 0.0, double alpha_g = 0.0);

}  // namespace plscore
