#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plscore/acceptability.hpp"
#include "plscore/model.hpp"
#include "plscore/rescoring.hpp"
#include "plscore/text.hpp"

namespace fixtures {

using namespace plscore;

struct Trained {
  Model model;
  Vocab vocab;
};

// Sentences from the default agreement grammar; the workhorse corpus for
// model-level tests.
std::vector<std::string> grammar_lines(int count, std::uint64_t seed);

// A second, disjoint word list for adaptation tests.
GrammarSpec domain_b_spec();

// Small models trained once per process on the default grammar.
const Trained& shared_mlm();
const Trained& shared_causal();

// Same architecture and vocab as shared_mlm, random initialization.
Trained untrained_mlm(std::uint64_t seed = 999);

ModelConfig small_config(int vocab_size, bool causal);

// Noisy-channel n-best lists: every list contains the reference plus
// corrupted variants; decoder f-scores are noisy enough that the baseline
// top-1 is frequently wrong.
std::vector<NBestList> noisy_nbest(const std::vector<std::string>& refs,
                                   const Vocab& vocab, int n_hyps,
                                   std::uint64_t seed);

}  // namespace fixtures
