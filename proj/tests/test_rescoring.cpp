#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "plscore/errors.hpp"
#include "plscore/rescoring.hpp"
#include "support/fixtures.hpp"

using namespace plscore;

namespace {

NBestList make_list(std::string id, std::string ref,
                    std::vector<std::pair<std::string, double>> hyps) {
  NBestList list;
  list.id = std::move(id);
  list.ref = std::move(ref);
  for (auto& [text, f] : hyps) {
    Hypothesis h;
    h.text = std::move(text);
    h.f_score = f;
    list.hyps.push_back(std::move(h));
  }
  return list;
}

// A manual g cache: one mlm-slot value per hypothesis.
GCache cache_of(const std::vector<std::vector<double>>& values) {
  GCache cache;
  for (const auto& per_list : values) {
    cache.emplace_back();
    for (double v : per_list) cache.back().push_back(GScore{v, {}});
  }
  return cache;
}

class CountingScorer final : public Scorer {
 public:
  explicit CountingScorer(const Vocab& v) : vocab_(&v) {}
  ScoreReport score(const Sentence& s) const override {
    ++calls;
    ScoreReport r;
    r.raw = s.raw;
    r.total = -static_cast<double>(s.raw.size());
    r.token_count = s.length();
    return r;
  }
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return Framing::Mlm; }
  bool lowercase() const override { return false; }
  mutable std::atomic<long> calls{0};

 private:
  const Vocab* vocab_;
};

// Fixed-total scorer for mixing arithmetic.
class ConstScorer final : public Scorer {
 public:
  ConstScorer(const Vocab& v, double total, Framing f)
      : vocab_(&v), total_(total), framing_(f) {}
  ScoreReport score(const Sentence& s) const override {
    ScoreReport r;
    r.raw = s.raw;
    r.total = total_;
    r.token_count = s.length();
    return r;
  }
  const Vocab& vocab() const override { return *vocab_; }
  Framing framing() const override { return framing_; }
  bool lowercase() const override { return false; }

 private:
  const Vocab* vocab_;
  double total_;
  Framing framing_;
};

}  // namespace

TEST_CASE("nbest JSONL load, save and round trip") {
  std::string path = "nbest_io_test.jsonl";
  {
    std::ofstream out(path);
    out << R"({"id":"u1","ref":"a b","hyps":[{"text":"a b","score":-1.5},)"
        << R"({"text":"a c","score":-0.5}]})" << "\n";
  }
  std::vector<NBestList> lists = load_nbest(path);
  REQUIRE(lists.size() == 1);
  CHECK(lists[0].id == "u1");
  CHECK(lists[0].ref == "a b");
  REQUIRE(lists[0].hyps.size() == 2);
  CHECK(lists[0].hyps[1].f_score == doctest::Approx(-0.5));

  lists[0].hyps[0].g_score = -2.0;
  lists[0].hyps[0].combined = -3.5;
  lists[0].hyps[0].rank = 1;
  std::string path2 = "nbest_io_test2.jsonl";
  save_nbest(lists, path2);
  std::vector<NBestList> redo = load_nbest(path2);
  REQUIRE(redo.size() == 1);
  CHECK(redo[0].hyps[0].g_score == lists[0].hyps[0].g_score);
  CHECK(redo[0].hyps[0].combined == lists[0].hyps[0].combined);
  CHECK(redo[0].hyps[0].rank == lists[0].hyps[0].rank);
  CHECK(redo[0].hyps[1].g_score == std::nullopt);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("nbest schema violations carry line and field") {
  std::string path = "nbest_bad_test.jsonl";
  {
    std::ofstream out(path);
    out << R"({"id":"u1","ref":"a","hyps":[{"text":"a","score":-1}]})" << "\n";
    out << R"({"id":"u2","ref":"b","hyps":[{"text":"b"}]})" << "\n";
  }
  try {
    load_nbest(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("score") != std::string::npos);
    CHECK(e.line() == 2);
  }
  {
    std::ofstream out(path);
    out << R"({"id":"dup","ref":"a","hyps":[{"text":"a","score":-1}]})" << "\n";
    out << R"({"id":"dup","ref":"b","hyps":[{"text":"b","score":-1}]})" << "\n";
  }
  CHECK_THROWS_AS(load_nbest(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("combine arithmetic") {
  InterpolationWeights w;
  w.lambda = 0.0;
  CHECK(combine(-8.0, -2.0, w, 4, 4) == doctest::Approx(-8.0));
  w.lambda = 0.5;
  CHECK(combine(-8.0, -2.0, w, 4, 4) == doctest::Approx(-9.0));
  w.alpha_f = 1.0;
  CHECK(combine(-8.0, -2.0, w, 19, 4) == doctest::Approx(-8.0 / 4.0 - 1.0));
  CHECK_THROWS_AS(combine(std::nan(""), -2.0, w, 4, 4), ContractError);
  InterpolationWeights neg;
  neg.lambda = -1.0;
  CHECK_THROWS_AS(combine(-8.0, -2.0, neg, 4, 4), ContractError);
}

TEST_CASE("make_g mixes length-normalized sub-scores") {
  const Vocab& vocab = fixtures::shared_mlm().vocab;
  ConstScorer mlm(vocab, -1.006, Framing::Mlm);
  ConstScorer lm(vocab, -8.693, Framing::Causal);

  CHECK(make_g(&mlm, &lm, 1.0)("x") == doctest::Approx(-1.006));
  CHECK(make_g(&mlm, &lm, 0.0)("x") == doctest::Approx(-8.693));
  CHECK(make_g(&mlm, &lm, 0.5)("x") == doctest::Approx(-4.8495));
  CHECK(make_g(&mlm, nullptr, 1.0)("x") == doctest::Approx(-1.006));
  CHECK_THROWS_AS(make_g(&mlm, nullptr, 0.5), CapabilityError);
}

TEST_CASE("lambda zero keeps the decoder top-1") {
  std::vector<NBestList> lists{
      make_list("u1", "a b", {{"x y", -1.0}, {"a b", -2.0}}),
      make_list("u2", "c d", {{"c d", -0.3}, {"c e", -0.6}})};
  GCache cache = cache_of({{-9.0, -1.0}, {-5.0, -1.0}});
  InterpolationWeights w;
  w.lambda = 0.0;
  rescore_cached(lists, cache, w);
  CHECK(top_index(lists[0]) == 0);
  CHECK(top_index(lists[1]) == 0);
  CHECK(*lists[0].hyps[0].rank == 1);

  // Huge lambda hands the choice to g.
  w.lambda = 1e6;
  rescore_cached(lists, cache, w);
  CHECK(top_index(lists[0]) == 1);
  CHECK(top_index(lists[1]) == 1);
}

TEST_CASE("hand-computed three-way ranking with stable ties") {
  std::vector<NBestList> lists{make_list(
      "u1", "a", {{"h1", -1.0}, {"h2", -2.0}, {"h3", -3.0}})};
  GCache cache = cache_of({{-4.0, -2.0, -1.0}});
  InterpolationWeights w;
  w.lambda = 1.0;
  rescore_cached(lists, cache, w);
  // combined: h1 = -5, h2 = -4, h3 = -4; tie keeps decoder order (h2).
  CHECK(*lists[0].hyps[0].combined == doctest::Approx(-5.0));
  CHECK(*lists[0].hyps[1].combined == doctest::Approx(-4.0));
  CHECK(*lists[0].hyps[2].combined == doctest::Approx(-4.0));
  CHECK(*lists[0].hyps[1].rank == 1);
  CHECK(*lists[0].hyps[2].rank == 2);
  CHECK(*lists[0].hyps[0].rank == 3);
  CHECK(top_index(lists[0]) == 1);
}

TEST_CASE("adding a constant to g never changes the selection") {
  std::vector<NBestList> lists{
      make_list("u1", "a b", {{"a b", -2.0}, {"a c", -1.0}, {"b c", -4.0}}),
      make_list("u2", "d", {{"d", -1.0}, {"e", -0.9}})};
  GCache cache = cache_of({{-1.0, -3.0, -0.5}, {-2.0, -6.0}});
  InterpolationWeights w;
  w.lambda = 0.7;
  rescore_cached(lists, cache, w);
  std::vector<std::size_t> before{top_index(lists[0]), top_index(lists[1])};

  GCache shifted = cache;
  for (auto& per_list : shifted)
    for (auto& g : per_list) g.mlm += 7.3;
  rescore_cached(lists, shifted, w);
  CHECK(top_index(lists[0]) == before[0]);
  CHECK(top_index(lists[1]) == before[1]);
}

TEST_CASE("wer fixtures") {
  CHECK(wer("a b c", "a b c").rate == 0.0);
  WerCounts c = wer("a b c", "a x c d");
  CHECK(c.subs == 1);
  CHECK(c.ins == 1);
  CHECK(c.dels == 0);
  CHECK(c.ref_words == 3);
  CHECK(c.rate == doctest::Approx(2.0 / 3.0));

  WerCounts d = wer("a b", "");
  CHECK(d.dels == 2);
  CHECK(d.rate == doctest::Approx(1.0));

  WerCounts inf = wer("", "a");
  CHECK(inf.infinite);
  CHECK(std::isinf(inf.rate));
  CHECK_FALSE(wer("", "").infinite);

  // Distance symmetry: I and D swap roles.
  WerCounts ab = wer("a b c e", "a x c");
  WerCounts ba = wer("a x c", "a b c e");
  CHECK(ab.distance() == ba.distance());
  CHECK(ab.ins == ba.dels);
  CHECK(ab.dels == ba.ins);
}

TEST_CASE("bleu fixtures") {
  CHECK(corpus_bleu({"a b c d e"}, {"a b c d e"}) == doctest::Approx(100.0));
  CHECK(corpus_bleu({"a b c d e"}, {"a x c y e"}) == doctest::Approx(0.0));
  CHECK(corpus_bleu({"a b c d e"}, {"a b c d"}) ==
        doctest::Approx(77.88).epsilon(0.0002));
  CHECK_THROWS_AS(corpus_bleu({"a"}, {"a", "b"}), ContractError);

  // Smoothed sentence BLEU stays positive without 4-gram overlap.
  CHECK(sentence_bleu("a b c", "a c b") > 0.0);
  CHECK(sentence_bleu("a b c", "x y z") == doctest::Approx(0.0));
}

TEST_CASE("grid search returns the unique minimizer") {
  // utt1 picks its reference only for lambda > 0.47, utt2 only for
  // lambda < 0.53; 0.5 is the one grid point satisfying both.
  std::vector<NBestList> lists{
      make_list("u1", "good one", {{"bad one", 0.0}, {"good one", -1.0}}),
      make_list("u2", "fine two", {{"fine two", 1.0}, {"poor two", 0.0}})};
  GCache cache = cache_of({{0.0, 1.0 / 0.47}, {0.0, 1.0 / 0.53}});
  GridSearchResult r =
      grid_search(lists, cache, Metric::Wer,
                  {0.40, 0.45, 0.50, 0.55, 0.60}, {1.0});
  CHECK(r.best.lambda == doctest::Approx(0.50));
  CHECK(r.dev_metric == doctest::Approx(0.0));
  CHECK(r.table.size() == 5);
}

TEST_CASE("grid ties resolve to the largest lambda then gamma") {
  std::vector<NBestList> lists{
      make_list("u1", "a", {{"a", -1.0}, {"b", -2.0}})};
  GCache cache = cache_of({{0.0, 0.0}});
  for (auto& per_list : cache)
    for (auto& g : per_list) g.lm = 0.0;
  GridSearchResult r = grid_search(lists, cache, Metric::Wer,
                                   {0.0, 0.5, 1.0}, {0.0, 0.5, 1.0});
  CHECK(r.best.lambda == doctest::Approx(1.0));
  CHECK(r.best.gamma == doctest::Approx(1.0));
  CHECK(r.table.size() == 9);

  GridSearchResult single =
      grid_search(lists, cache, Metric::Wer, {0.25}, {1.0});
  CHECK(single.best.lambda == doctest::Approx(0.25));
  CHECK_THROWS_AS(grid_search(lists, cache, Metric::Wer, {}, {1.0}),
                  ContractError);
}

TEST_CASE("oracle bounds every grid point") {
  const auto& fix = fixtures::shared_mlm();
  std::vector<std::string> refs = fixtures::grammar_lines(12, 311);
  std::vector<NBestList> lists = fixtures::noisy_nbest(refs, fix.vocab, 5, 9);
  // The reference is always present, so the oracle is perfect.
  CHECK(oracle_metric(lists, Metric::Wer) == doctest::Approx(0.0));
  CHECK(oracle_metric(lists, Metric::Bleu) == doctest::Approx(100.0));

  CountingScorer g(fix.vocab);
  GCache cache = build_g_cache(lists, &g, nullptr);
  for (double lambda : {0.0, 0.5, 1.0}) {
    InterpolationWeights w;
    w.lambda = lambda;
    rescore_cached(lists, cache, w);
    CHECK(oracle_metric(lists, Metric::Wer) <=
          evaluate_metric(lists, Metric::Wer));
    CHECK(oracle_metric(lists, Metric::Bleu) >=
          evaluate_metric(lists, Metric::Bleu) - 1e-9);
  }
}

TEST_CASE("the g cache scores each hypothesis exactly once") {
  const auto& fix = fixtures::shared_mlm();
  std::vector<std::string> refs = fixtures::grammar_lines(6, 313);
  std::vector<NBestList> lists = fixtures::noisy_nbest(refs, fix.vocab, 4, 11);
  long total_hyps = 0;
  for (const auto& l : lists) total_hyps += static_cast<long>(l.hyps.size());

  CountingScorer g(fix.vocab);
  GCache cache = build_g_cache(lists, &g, nullptr);
  CHECK(g.calls.load() == total_hyps);
  grid_search(lists, cache, Metric::Wer, {0.0, 0.5, 1.0, 1.5},
              {1.0});
  CHECK(g.calls.load() == total_hyps);
}

TEST_CASE("grid_range hits decimal endpoints exactly") {
  std::vector<double> l = grid_range(0.0, 1.0, 0.05);
  REQUIRE(l.size() == 21);
  CHECK(l.front() == doctest::Approx(0.0));
  CHECK(l.back() == doctest::Approx(1.0));
  std::vector<double> g = grid_range(0.0, 1.0, 0.1);
  CHECK(g.size() == 11);
  CHECK_THROWS_AS(grid_range(1.0, 0.0, 0.1), ContractError);
  CHECK_THROWS_AS(grid_range(0.0, 1.0, 0.0), ContractError);
}
