#include "plscore/rescoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "plscore/errors.hpp"

namespace plscore {

namespace {

using nlohmann::json;

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

double require_number(const json& j, const char* field, std::size_t line) {
  if (!j.contains(field) || !j.at(field).is_number())
    throw ParseError(std::string("nbest: missing or non-numeric \"") + field +
                         "\"",
                     static_cast<long>(line));
  return j.at(field).get<double>();
}

std::string require_string(const json& j, const char* field,
                           std::size_t line) {
  if (!j.contains(field) || !j.at(field).is_string())
    throw ParseError(
        std::string("nbest: missing or non-string \"") + field + "\"",
        static_cast<long>(line));
  return j.at(field).get<std::string>();
}

// Count of each n-gram order n in `words`.
std::map<std::vector<std::string>, long> ngram_counts(
    const std::vector<std::string>& words, int n) {
  std::map<std::vector<std::string>, long> counts;
  if (static_cast<int>(words.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i)
    ++counts[std::vector<std::string>(words.begin() + static_cast<long>(i),
                                      words.begin() + static_cast<long>(i) +
                                          n)];
  return counts;
}

struct BleuStats {
  std::vector<long> clipped;  // per order, 1..max_n
  std::vector<long> total;
  long ref_len = 0;
  long hyp_len = 0;

  explicit BleuStats(int max_n)
      : clipped(static_cast<std::size_t>(max_n), 0),
        total(static_cast<std::size_t>(max_n), 0) {}

  void add(const std::vector<std::string>& ref,
           const std::vector<std::string>& hyp) {
    ref_len += static_cast<long>(ref.size());
    hyp_len += static_cast<long>(hyp.size());
    for (std::size_t n = 0; n < clipped.size(); ++n) {
      auto rc = ngram_counts(ref, static_cast<int>(n) + 1);
      auto hc = ngram_counts(hyp, static_cast<int>(n) + 1);
      for (const auto& [gram, count] : hc) {
        total[n] += count;
        auto it = rc.find(gram);
        if (it != rc.end()) clipped[n] += std::min(count, it->second);
      }
    }
  }

  double score(bool smooth) const {
    if (hyp_len == 0) return 0.0;
    double log_prec = 0.0;
    for (std::size_t n = 0; n < clipped.size(); ++n) {
      double num = static_cast<double>(clipped[n]);
      double den = static_cast<double>(total[n]);
      if (smooth && n >= 1) {
        num += 1.0;
        den += 1.0;
      }
      if (num == 0.0 || den == 0.0) return 0.0;
      log_prec += std::log(num / den);
    }
    log_prec /= static_cast<double>(clipped.size());
    double bp = hyp_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) /
                                         static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_prec);
  }
};

}  // namespace

void InterpolationWeights::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw ContractError("weights: gamma must lie in [0, 1]");
  if (alpha_f < 0.0 || alpha_g < 0.0)
    throw ContractError("weights: length-penalty exponents must be >= 0");
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw ContractError("weights: lambda must be finite and >= 0");
}

std::vector<NBestList> load_nbest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("nbest: cannot open " + path);
  std::vector<NBestList> lists;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("nbest: invalid JSON: ") + e.what(),
                       static_cast<long>(lineno));
    }
    NBestList list;
    list.id = require_string(j, "id", lineno);
    if (!seen_ids.insert(list.id).second)
      throw ParseError("nbest: duplicate id \"" + list.id + "\"",
                       static_cast<long>(lineno));
    list.ref = require_string(j, "ref", lineno);
    if (!j.contains("hyps") || !j.at("hyps").is_array() ||
        j.at("hyps").empty())
      throw ParseError("nbest: \"hyps\" must be a non-empty array",
                       static_cast<long>(lineno));
    for (const auto& h : j.at("hyps")) {
      Hypothesis hyp;
      hyp.text = require_string(h, "text", lineno);
      hyp.f_score = require_number(h, "score", lineno);
      if (h.contains("g")) hyp.g_score = require_number(h, "g", lineno);
      if (h.contains("combined"))
        hyp.combined = require_number(h, "combined", lineno);
      if (h.contains("rank"))
        hyp.rank = static_cast<int>(require_number(h, "rank", lineno));
      list.hyps.push_back(std::move(hyp));
    }
    lists.push_back(std::move(list));
  }
  return lists;
}

void save_nbest(const std::vector<NBestList>& lists, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("nbest: cannot write " + path);
  for (const auto& list : lists) {
    json j;
    j["id"] = list.id;
    j["ref"] = list.ref;
    j["hyps"] = json::array();
    for (const auto& h : list.hyps) {
      json hj;
      hj["text"] = h.text;
      hj["score"] = h.f_score;
      if (h.g_score) hj["g"] = *h.g_score;
      if (h.combined) hj["combined"] = *h.combined;
      if (h.rank) hj["rank"] = *h.rank;
      j["hyps"].push_back(std::move(hj));
    }
    out << j.dump() << '\n';
  }
  if (!out) throw ParseError("nbest: write failed for " + path);
}

double combine(double f_score, double g_score,
               const InterpolationWeights& weights, int len_f, int len_g) {
  weights.validate();
  if (!std::isfinite(f_score) || !std::isfinite(g_score))
    throw ContractError("combine: scores must be finite");
  return f_score / length_penalty(weights.alpha_f, len_f) +
         weights.lambda * g_score / length_penalty(weights.alpha_g, len_g);
}

double mix_g(const GScore& parts, double gamma) {
  if (gamma >= 1.0) return parts.mlm;
  if (!parts.lm)
    throw CapabilityError("mix_g: gamma < 1 requires a causal sub-score");
  return (1.0 - gamma) * *parts.lm + gamma * parts.mlm;
}

namespace {

GScore g_parts(const std::string& text, const Scorer* mlm, const Scorer* lm,
               const GOptions& opts) {
  if (!mlm) throw ContractError("g: an MLM scorer is required");
  std::string prepared = opts.append_period ? append_period(text) : text;
  GScore parts;
  ScoreReport m = mlm->score_text(prepared);
  parts.mlm = m.total / length_penalty(opts.alpha_g, m.token_count);
  if (lm) {
    ScoreReport c = lm->score_text(prepared);
    parts.lm = c.total / length_penalty(opts.alpha_g, c.token_count);
  }
  return parts;
}

}  // namespace

GFunction make_g(const Scorer* mlm, const Scorer* lm, double gamma,
                 const GOptions& opts) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw ContractError("make_g: gamma must lie in [0, 1]");
  if (gamma < 1.0 && !lm)
    throw CapabilityError("make_g: gamma < 1 requires a causal scorer");
  return [mlm, lm, gamma, opts](const std::string& text) {
    return mix_g(g_parts(text, mlm, lm, opts), gamma);
  };
}

GCache build_g_cache(const std::vector<NBestList>& lists, const Scorer* mlm,
                     const Scorer* lm, const GOptions& opts,
                     const Pool* pool) {
  GCache cache(lists.size());
  std::vector<std::pair<std::size_t, std::size_t>> work;
  for (std::size_t i = 0; i < lists.size(); ++i) {
    cache[i].resize(lists[i].hyps.size());
    for (std::size_t h = 0; h < lists[i].hyps.size(); ++h)
      work.emplace_back(i, h);
  }
  auto score_one = [&](std::size_t k) {
    auto [i, h] = work[k];
    cache[i][h] = g_parts(lists[i].hyps[h].text, mlm, lm, opts);
  };
  if (pool)
    pool->parallel_for(work.size(), score_one);
  else
    for (std::size_t k = 0; k < work.size(); ++k) score_one(k);
  return cache;
}

namespace {

// Combined scores are already per-hypothesis; assign 1-based ranks with
// ties broken by decoder order.
void assign_ranks(NBestList& list) {
  std::vector<std::size_t> order(list.hyps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return *list.hyps[a].combined > *list.hyps[b].combined;
                   });
  for (std::size_t r = 0; r < order.size(); ++r)
    list.hyps[order[r]].rank = static_cast<int>(r) + 1;
}

void combine_list(NBestList& list, const InterpolationWeights& weights) {
  for (auto& h : list.hyps) {
    if (!h.g_score) throw ContractError("rescore: hypothesis lacks g score");
    int len_f = static_cast<int>(split_words(h.text).size());
    // g is length-normalized at scoring time, so no second penalty here.
    InterpolationWeights w = weights;
    w.alpha_g = 0.0;
    h.combined = combine(h.f_score, *h.g_score, w, len_f, 0);
  }
  assign_ranks(list);
}

}  // namespace

void rescore(std::vector<NBestList>& lists, const GFunction& g,
             const InterpolationWeights& weights) {
  weights.validate();
  for (auto& list : lists) {
    for (auto& h : list.hyps) h.g_score = g(h.text);
    combine_list(list, weights);
  }
}

void rescore_cached(std::vector<NBestList>& lists, const GCache& cache,
                    const InterpolationWeights& weights) {
  weights.validate();
  if (cache.size() != lists.size())
    throw ContractError("rescore: cache does not match the n-best lists");
  for (std::size_t i = 0; i < lists.size(); ++i) {
    if (cache[i].size() != lists[i].hyps.size())
      throw ContractError("rescore: cache does not match the n-best lists");
    for (std::size_t h = 0; h < lists[i].hyps.size(); ++h)
      lists[i].hyps[h].g_score = mix_g(cache[i][h], weights.gamma);
    combine_list(lists[i], weights);
  }
}

std::size_t top_index(const NBestList& list) {
  if (list.hyps.empty()) throw ContractError("top_index: empty n-best list");
  std::size_t best = 0;
  if (!list.hyps.front().combined) return 0;  // decoder top-1
  for (std::size_t h = 1; h < list.hyps.size(); ++h)
    if (list.hyps[h].combined &&
        *list.hyps[h].combined > *list.hyps[best].combined)
      best = h;
  return best;
}

WerCounts wer(const std::string& reference, const std::string& hypothesis) {
  const std::vector<std::string> ref = split_words(reference);
  const std::vector<std::string> hyp = split_words(hypothesis);
  WerCounts c;
  c.ref_words = static_cast<long>(ref.size());
  const std::size_t R = ref.size(), H = hyp.size();
  // Standard edit-distance table, then a backtrace that prefers matches
  // and substitutions over deletions over insertions.
  std::vector<std::vector<long>> d(R + 1, std::vector<long>(H + 1, 0));
  for (std::size_t i = 0; i <= R; ++i) d[i][0] = static_cast<long>(i);
  for (std::size_t j = 0; j <= H; ++j) d[0][j] = static_cast<long>(j);
  for (std::size_t i = 1; i <= R; ++i)
    for (std::size_t j = 1; j <= H; ++j) {
      long sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  std::size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.subs;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.dels;
      --i;
    } else {
      ++c.ins;
      --j;
    }
  }
  if (R == 0) {
    c.infinite = H > 0;
    c.rate = c.infinite ? std::numeric_limits<double>::infinity() : 0.0;
  } else {
    c.rate = static_cast<double>(c.distance()) / static_cast<double>(R);
  }
  return c;
}

double corpus_bleu(const std::vector<std::string>& references,
                   const std::vector<std::string>& hypotheses, int max_n) {
  if (references.size() != hypotheses.size())
    throw ContractError("bleu: references and hypotheses differ in length");
  if (max_n < 1) throw ContractError("bleu: max_n must be >= 1");
  BleuStats stats(max_n);
  for (std::size_t i = 0; i < references.size(); ++i)
    stats.add(split_words(references[i]), split_words(hypotheses[i]));
  return stats.score(/*smooth=*/false);
}

double sentence_bleu(const std::string& reference,
                     const std::string& hypothesis, int max_n) {
  if (max_n < 1) throw ContractError("bleu: max_n must be >= 1");
  BleuStats stats(max_n);
  stats.add(split_words(reference), split_words(hypothesis));
  return stats.score(/*smooth=*/true);
}

double evaluate_metric(const std::vector<NBestList>& lists, Metric metric) {
  if (lists.empty()) throw DomainError("evaluate_metric: no n-best lists");
  if (metric == Metric::Bleu) {
    std::vector<std::string> refs, tops;
    for (const auto& list : lists) {
      refs.push_back(list.ref);
      tops.push_back(list.hyps[top_index(list)].text);
    }
    return corpus_bleu(refs, tops);
  }
  long errors = 0, ref_words = 0;
  for (const auto& list : lists) {
    WerCounts c = wer(list.ref, list.hyps[top_index(list)].text);
    errors += c.distance();
    ref_words += c.ref_words;
  }
  if (ref_words == 0)
    return errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(errors) / static_cast<double>(ref_words);
}

double oracle_metric(const std::vector<NBestList>& lists, Metric metric) {
  if (lists.empty()) throw DomainError("oracle_metric: no n-best lists");
  if (metric == Metric::Wer) {
    long errors = 0, ref_words = 0;
    for (const auto& list : lists) {
      if (list.hyps.empty())
        throw ContractError("oracle_metric: empty n-best list");
      long best = -1, words = 0;
      for (const auto& h : list.hyps) {
        WerCounts c = wer(list.ref, h.text);
        words = c.ref_words;
        if (best < 0 || c.distance() < best) best = c.distance();
      }
      errors += best;
      ref_words += words;
    }
    if (ref_words == 0)
      return errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    return static_cast<double>(errors) / static_cast<double>(ref_words);
  }
  // Per-utterance selection needs a sentence-level surrogate; the corpus
  // score of the selected set is still the unsmoothed measure.
  std::vector<std::string> refs, picks;
  for (const auto& list : lists) {
    if (list.hyps.empty())
      throw ContractError("oracle_metric: empty n-best list");
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t h = 0; h < list.hyps.size(); ++h) {
      double s = sentence_bleu(list.ref, list.hyps[h].text);
      if (s > best_score) {
        best_score = s;
        best = h;
      }
    }
    refs.push_back(list.ref);
    picks.push_back(list.hyps[best].text);
  }
  return corpus_bleu(refs, picks);
}

std::vector<double> grid_range(double lo, double hi, double step) {
  if (step <= 0.0) throw ContractError("grid_range: step must be positive");
  if (hi < lo) throw ContractError("grid_range: empty range");
  std::vector<double> values;
  // Integer stepping keeps the endpoints exact for decimal increments.
  long n = std::lround((hi - lo) / step);
  for (long k = 0; k <= n; ++k) values.push_back(lo + step * static_cast<double>(k));
  if (!values.empty() && values.back() > hi + 1e-9) values.pop_back();
  return values;
}

GridSearchResult grid_search(std::vector<NBestList> dev, const GCache& cache,
                             Metric metric, const std::vector<double>& lambdas,
                             const std::vector<double>& gammas,
                             double alpha_f, double alpha_g) {
  if (dev.empty()) throw DomainError("grid_search: no n-best lists");
  if (lambdas.empty() || gammas.empty())
    throw ContractError("grid_search: empty grid");
  for (const auto& list : dev)
    if (list.ref.empty())
      throw ContractError("grid_search: utterance \"" + list.id +
                          "\" has no reference");
  GridSearchResult result;
  bool have_best = false;
  for (double lambda : lambdas) {
    for (double gamma : gammas) {
      InterpolationWeights w;
      w.lambda = lambda;
      w.gamma = gamma;
      w.alpha_f = alpha_f;
      w.alpha_g = alpha_g;
      rescore_cached(dev, cache, w);
      double value = evaluate_metric(dev, metric);
      result.table.push_back({lambda, gamma, value});
      bool better = metric == Metric::Wer ? value < result.dev_metric
                                          : value > result.dev_metric;
      // Ascending iteration plus >= acceptance lands ties on the largest
      // lambda, then the largest gamma.
      if (!have_best || better || value == result.dev_metric) {
        have_best = true;
        result.best = w;
        result.dev_metric = value;
      }
    }
  }
  return result;
}

}  // namespace plscore
