#include "plscore/acceptability.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "plscore/errors.hpp"
#include "plscore/rng.hpp"

namespace plscore {

namespace {

using nlohmann::json;

double normalized_total(const ScoreReport& r, double alpha) {
  if (alpha == 0.0) return r.total;
  return r.total / length_penalty(alpha, r.token_count);
}

}  // namespace

PairJudgment judge_pair_detail(const Scorer& scorer, const MinimalPair& pair,
                               const JudgeOptions& opts) {
  if (pair.good == pair.bad)
    throw ContractError("judge_pair: pair sentences are identical");
  PairJudgment j;
  ScoreReport good = scorer.score_text(pair.good);
  ScoreReport bad = scorer.score_text(pair.bad);
  j.good_score = normalized_total(good, opts.alpha);
  j.bad_score = normalized_total(bad, opts.alpha);
  j.correct = j.good_score > j.bad_score;
  return j;
}

bool judge_pair(const Scorer& scorer, const MinimalPair& pair,
                const JudgeOptions& opts) {
  return judge_pair_detail(scorer, pair, opts).correct;
}

JudgmentReport evaluate(const Scorer& scorer,
                        const std::vector<MinimalPair>& pairs,
                        const JudgeOptions& opts, const Pool* pool) {
  if (pairs.empty()) throw ContractError("evaluate: no pairs");
  JudgmentReport report;
  report.judgments.resize(pairs.size());
  std::vector<ScoreReport> good_reports(pairs.size());
  std::vector<ScoreReport> bad_reports(pairs.size());
  auto judge_one = [&](std::size_t i) {
    const MinimalPair& p = pairs[i];
    if (p.good == p.bad)
      throw ContractError("evaluate: pair sentences are identical");
    good_reports[i] = scorer.score_text(p.good);
    bad_reports[i] = scorer.score_text(p.bad);
    PairJudgment j;
    j.good_score = normalized_total(good_reports[i], opts.alpha);
    j.bad_score = normalized_total(bad_reports[i], opts.alpha);
    j.correct = j.good_score > j.bad_score;
    report.judgments[i] = j;
  };
  if (pool)
    pool->parallel_for(pairs.size(), judge_one);
  else
    for (std::size_t i = 0; i < pairs.size(); ++i) judge_one(i);

  double good_total = 0.0, bad_total = 0.0;
  long good_toks = 0, bad_toks = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CategoryStats& cat = report.categories[pairs[i].category];
    ++cat.total;
    ++report.total;
    if (report.judgments[i].correct) {
      ++cat.correct;
      ++report.correct;
    }
    good_total += good_reports[i].total;
    good_toks += good_reports[i].token_count;
    bad_total += bad_reports[i].total;
    bad_toks += bad_reports[i].token_count;
  }
  report.overall =
      static_cast<double>(report.correct) / static_cast<double>(report.total);
  if (good_toks == 0 || bad_toks == 0)
    throw DomainError("evaluate: a pair set has zero tokens");
  report.pppl_good = std::exp(-good_total / static_cast<double>(good_toks));
  report.pppl_bad = std::exp(-bad_total / static_cast<double>(bad_toks));
  report.ratio = report.pppl_bad / report.pppl_good;
  return report;
}

std::string report_to_json_string(const JudgmentReport& report) {
  json j;
  j["overall"] = report.overall;
  j["correct"] = report.correct;
  j["total"] = report.total;
  j["pppl_good"] = report.pppl_good;
  j["pppl_bad"] = report.pppl_bad;
  j["ratio"] = report.ratio;
  j["categories"] = json::object();
  for (const auto& [name, stats] : report.categories)
    j["categories"][name] = {{"correct", stats.correct},
                             {"total", stats.total},
                             {"accuracy", stats.accuracy()}};
  return j.dump(2);
}

std::vector<MinimalPair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("pairs: cannot open " + path);
  std::vector<MinimalPair> pairs;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("pairs: invalid JSON: ") + e.what(),
                       lineno);
    }
    MinimalPair p;
    p.category = j.value("category", std::string());
    auto field = [&](const char* primary, const char* alias) -> std::string {
      const char* name = j.contains(primary)   ? primary
                         : j.contains(alias)   ? alias
                                               : nullptr;
      if (!name || !j.at(name).is_string())
        throw ParseError(std::string("pairs: missing or non-string \"") +
                             primary + "\"",
                         lineno);
      return j.at(name).get<std::string>();
    };
    p.good = field("good", "sentence_good");
    p.bad = field("bad", "sentence_bad");
    if (p.good == p.bad)
      throw ParseError("pairs: good and bad sentences are identical", lineno);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_pairs(const std::vector<MinimalPair>& pairs,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("pairs: cannot write " + path);
  for (const auto& p : pairs) {
    json j;
    j["category"] = p.category;
    j["good"] = p.good;
    j["bad"] = p.bad;
    out << j.dump() << '\n';
  }
  if (!out) throw ParseError("pairs: write failed for " + path);
}

void GrammarSpec::validate() const {
  auto need_parallel = [](const std::vector<std::string>& sg,
                          const std::vector<std::string>& pl,
                          const char* what) {
    if (sg.empty() || sg.size() != pl.size())
      throw ConfigError(std::string("grammar: ") + what +
                        " lists must be parallel and non-empty");
    for (std::size_t i = 0; i < sg.size(); ++i)
      if (sg[i] == pl[i])
        throw ConfigError(std::string("grammar: ") + what + " form \"" +
                          sg[i] + "\" has no number contrast");
  };
  need_parallel(det_sg, det_pl, "determiner");
  need_parallel(noun_sg, noun_pl, "noun");
  need_parallel(verb_sg, verb_pl, "verb");
  std::set<std::string> all;
  auto disjoint = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      if (w.empty() || w.find(' ') != std::string::npos)
        throw ConfigError("grammar: word \"" + w + "\" is not a single token");
      if (!all.insert(w).second)
        throw ConfigError("grammar: word \"" + w +
                          "\" appears in more than one slot");
    }
  };
  disjoint(det_sg);
  disjoint(det_pl);
  disjoint(noun_sg);
  disjoint(noun_pl);
  disjoint(verb_sg);
  disjoint(verb_pl);
  disjoint(adjectives);
}

namespace {

struct Draw {
  std::string det, adj, noun, verb;
  std::string det_flip, verb_flip;
  bool has_adj = false;
};

// One grammatical sentence with its agreement-flipped alternatives.
// Number alternates with `index` so the generated sets stay balanced.
Draw draw_sentence(const GrammarSpec& spec, Rng& rng, int index) {
  bool plural = (index % 2) == 1;
  Draw d;
  int di = rng.uniform_int(0, static_cast<int>(spec.det_sg.size()) - 1);
  int ni = rng.uniform_int(0, static_cast<int>(spec.noun_sg.size()) - 1);
  int vi = rng.uniform_int(0, static_cast<int>(spec.verb_sg.size()) - 1);
  d.det = plural ? spec.det_pl[di] : spec.det_sg[di];
  d.det_flip = plural ? spec.det_sg[di] : spec.det_pl[di];
  d.noun = plural ? spec.noun_pl[ni] : spec.noun_sg[ni];
  d.verb = plural ? spec.verb_pl[vi] : spec.verb_sg[vi];
  d.verb_flip = plural ? spec.verb_sg[vi] : spec.verb_pl[vi];
  if (!spec.adjectives.empty() && rng.uniform() < 0.5) {
    d.has_adj = true;
    d.adj = spec.adjectives[rng.uniform_int(
        0, static_cast<int>(spec.adjectives.size()) - 1)];
  }
  return d;
}

std::string render(const Draw& d, const std::string& det,
                   const std::string& verb) {
  std::ostringstream out;
  out << det << ' ';
  if (d.has_adj) out << d.adj << ' ';
  out << d.noun << ' ' << verb << " .";
  return out.str();
}

}  // namespace

std::vector<MinimalPair> generate_pairs(const GrammarSpec& spec, int count,
                                        std::uint64_t seed) {
  spec.validate();
  if (count < 0) throw ContractError("generate_pairs: negative count");
  std::vector<MinimalPair> pairs;
  Rng rng = Rng(seed).split(0x9A125ULL);
  for (int i = 0; i < count; ++i) {
    Draw d = draw_sentence(spec, rng, i);
    MinimalPair p;
    p.good = render(d, d.det, d.verb);
    // Alternate the corrupted slot as well, so each category sees both
    // numbers equally often.
    if ((i / 2) % 2 == 0) {
      p.category = "determiner_noun_agreement";
      p.bad = render(d, d.det_flip, d.verb);
    } else {
      p.category = "subject_verb_agreement";
      p.bad = render(d, d.det, d.verb_flip);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<std::string> generate_sentences(const GrammarSpec& spec,
                                            int count, std::uint64_t seed) {
  spec.validate();
  if (count < 0) throw ContractError("generate_sentences: negative count");
  std::vector<std::string> lines;
  Rng rng = Rng(seed).split(0x5E27ULL);
  for (int i = 0; i < count; ++i) {
    Draw d = draw_sentence(spec, rng, i);
    lines.push_back(render(d, d.det, d.verb));
  }
  return lines;
}

GrammarSplit generate_split(const GrammarSpec& spec, int train_count,
                            int pair_count, std::uint64_t seed) {
  GrammarSplit split;
  split.pairs = generate_pairs(spec, pair_count, seed);
  std::set<std::string> held_out;
  for (const auto& p : split.pairs) {
    held_out.insert(p.good);
    held_out.insert(p.bad);
  }
  Rng rng = Rng(seed).split(0x7124ULL);
  int index = 0;
  int attempts = 0;
  const int limit = train_count * 50 + 1000;
  while (static_cast<int>(split.train.size()) < train_count) {
    if (++attempts > limit)
      throw ConfigError(
          "generate_split: grammar too small for a disjoint train set");
    Draw d = draw_sentence(spec, rng, index++);
    std::string line = render(d, d.det, d.verb);
    if (held_out.count(line)) continue;
    split.train.push_back(std::move(line));
  }
  return split;
}

}  // namespace plscore
