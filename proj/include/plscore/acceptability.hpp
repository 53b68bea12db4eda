#pragma once

#include <map>
#include <string>
#include <vector>

#include "plscore/pool.hpp"
#include "plscore/scoring.hpp"

namespace plscore {

struct MinimalPair {
  std::string category;
  std::string good;
  std::string bad;
};

struct PairJudgment {
  double good_score = 0.0;
  double bad_score = 0.0;
  bool correct = false;
};

struct CategoryStats {
  long correct = 0;
  long total = 0;
  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) /
                                  static_cast<double>(total);
  }
};

struct JudgmentReport {
  std::map<std::string, CategoryStats> categories;
  std::vector<PairJudgment> judgments;  // aligned with the input pairs
  long correct = 0;
  long total = 0;
  double overall = 0.0;
  double pppl_good = 0.0;  // token-normalized over the good set
  double pppl_bad = 0.0;
  double ratio = 0.0;  // pppl_bad / pppl_good
};

struct JudgeOptions {
  // Length-penalty exponent; 0 keeps raw totals, for pair sets whose
  // sentences differ meaningfully in length.
  double alpha = 0.0;
};

// Forced choice: the higher-scoring sentence wins; an exact tie counts
// as incorrect.
PairJudgment judge_pair_detail(const Scorer& scorer, const MinimalPair& pair,
                               const JudgeOptions& opts = {});
bool judge_pair(const Scorer& scorer, const MinimalPair& pair,
                const JudgeOptions& opts = {});

JudgmentReport evaluate(const Scorer& scorer,
                        const std::vector<MinimalPair>& pairs,
                        const JudgeOptions& opts = {},
                        const Pool* pool = nullptr);

std::string report_to_json_string(const JudgmentReport& report);

// JSONL: {"category": ..., "good": ..., "bad": ...}; the field names
// sentence_good/sentence_bad are accepted on load.
std::vector<MinimalPair> load_pairs(const std::string& path);
void save_pairs(const std::vector<MinimalPair>& pairs,
                const std::string& path);

// Tiny agreement language: determiner and verb must match the noun's
// number. Parallel lists pair each singular form with its plural.
struct GrammarSpec {
  std::vector<std::string> det_sg = {"this", "that"};
  std::vector<std::string> det_pl = {"these", "those"};
  std::vector<std::string> noun_sg = {"bird", "cat", "dog", "fox", "hen",
                                      "owl"};
  std::vector<std::string> noun_pl = {"birds", "cats", "dogs", "foxes",
                                      "hens", "owls"};
  std::vector<std::string> verb_sg = {"hides", "rests", "sings", "waits"};
  std::vector<std::string> verb_pl = {"hide", "rest", "sing", "wait"};
  std::vector<std::string> adjectives = {"brown", "grey", "quiet", "small",
                                         "young"};
  void validate() const;
};

// Deterministic pairs; each flips exactly one token of a grammatical
// sentence (determiner or verb), balanced between singular and plural
// contexts. Categories: determiner_noun_agreement, subject_verb_agreement.
std::vector<MinimalPair> generate_pairs(const GrammarSpec& spec, int count,
                                        std::uint64_t seed);

// Grammatical sentences only, for training corpora.
std::vector<std::string> generate_sentences(const GrammarSpec& spec,
                                            int count, std::uint64_t seed);

// Training lines plus evaluation pairs with no good sentence shared
// between the two.
struct GrammarSplit {
  std::vector<std::string> train;
  std::vector<MinimalPair> pairs;
};
GrammarSplit generate_split(const GrammarSpec& spec, int train_count,
                            int pair_count, std::uint64_t seed);

}  // namespace plscore
