#include "support/fixtures.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "plscore/rng.hpp"

namespace fixtures {

std::vector<std::string> grammar_lines(int count, std::uint64_t seed) {
  return generate_sentences(GrammarSpec{}, count, seed);
}

GrammarSpec domain_b_spec() {
  GrammarSpec spec;
  spec.det_sg = {"each", "one"};
  spec.det_pl = {"all", "both"};
  spec.noun_sg = {"boat", "car", "kite", "plane", "train", "truck"};
  spec.noun_pl = {"boats", "cars", "kites", "planes", "trains", "trucks"};
  spec.verb_sg = {"drifts", "stops", "tilts", "turns"};
  spec.verb_pl = {"drift", "stop", "tilt", "turn"};
  spec.adjectives = {"blue", "fast", "old", "red", "slow"};
  return spec;
}

ModelConfig small_config(int vocab_size, bool causal) {
  ModelConfig config;
  config.vocab_size = vocab_size;
  config.layers = 2;
  config.heads = 2;
  config.hidden = 32;
  config.ffn = 64;
  config.max_len = 16;
  config.causal = causal;
  return config;
}

namespace {

Trained train_small(bool causal) {
  std::vector<std::string> lines = grammar_lines(400, 101);
  Vocab vocab = Vocab::build(lines, 1, Vocab::Mode::Word);
  Framing framing = causal ? Framing::Causal : Framing::Mlm;
  Corpus corpus = make_corpus(vocab, lines, framing);
  TrainSchedule schedule;
  schedule.steps = 400;
  schedule.batch_size = 8;
  schedule.lr = 2e-3;
  schedule.seed = 7;
  ModelConfig config = small_config(vocab.size(), causal);
  Model model = causal ? train_causal(corpus, config, schedule)
                       : train_mlm(corpus, config, schedule);
  return {std::move(model), std::move(vocab)};
}

}  // namespace

const Trained& shared_mlm() {
  static Trained t = train_small(false);
  return t;
}

const Trained& shared_causal() {
  static Trained t = train_small(true);
  return t;
}

Trained untrained_mlm(std::uint64_t seed) {
  const Trained& base = shared_mlm();
  Model model(small_config(base.vocab.size(), false), seed);
  return {std::move(model), base.vocab};
}

std::vector<NBestList> noisy_nbest(const std::vector<std::string>& refs,
                                   const Vocab& vocab, int n_hyps,
                                   std::uint64_t seed) {
  // Word pool for substitutions/insertions: all content types.
  std::vector<std::string> pool;
  for (int id = Vocab::kNumReserved; id < vocab.size(); ++id)
    pool.push_back(vocab.token(id));

  Rng rng = Rng(seed).split(0xBE57ULL);
  std::vector<NBestList> lists;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    NBestList list;
    list.id = "utt" + std::to_string(u);
    list.ref = refs[u];

    std::vector<std::string> words;
    {
      std::istringstream iss(refs[u]);
      std::string w;
      while (iss >> w) words.push_back(w);
    }

    std::set<std::string> seen;
    auto add_hyp = [&](const std::vector<std::string>& hw, int edits) {
      std::ostringstream text;
      for (std::size_t i = 0; i < hw.size(); ++i) {
        if (i) text << ' ';
        text << hw[i];
      }
      if (!seen.insert(text.str()).second) return;
      Hypothesis h;
      h.text = text.str();
      // Noisy decoder score: cleaner hypotheses trend higher, but the
      // noise often flips the order.
      h.f_score = -1.0 * edits + rng.normal(0.0, 1.4);
      list.hyps.push_back(std::move(h));
    };

    add_hyp(words, 0);
    int guard = 0;
    while (static_cast<int>(list.hyps.size()) < n_hyps && ++guard < 200) {
      std::vector<std::string> hw = words;
      int edits = 1 + (rng.uniform() < 0.35 ? 1 : 0);
      for (int e = 0; e < edits; ++e) {
        double kind = rng.uniform();
        int n = static_cast<int>(hw.size());
        if (kind < 0.6 || n <= 2) {
          int pos = rng.uniform_int(0, n - 1);
          hw[static_cast<std::size_t>(pos)] =
              pool[static_cast<std::size_t>(
                  rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        } else if (kind < 0.8) {
          int pos = rng.uniform_int(0, n - 1);
          hw.erase(hw.begin() + pos);
        } else {
          int pos = rng.uniform_int(0, n);
          hw.insert(hw.begin() + pos,
                    pool[static_cast<std::size_t>(rng.uniform_int(
                        0, static_cast<int>(pool.size()) - 1))]);
        }
      }
      add_hyp(hw, edits);
    }
    // Shuffle so the reference is not always first in decoder order.
    for (std::size_t i = list.hyps.size(); i > 1; --i)
      std::swap(list.hyps[i - 1],
                list.hyps[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<int>(i) - 1))]);
    lists.push_back(std::move(list));
  }
  return lists;
}

}  // namespace fixtures
