#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "plscore/checkpoint.hpp"
#include "plscore/errors.hpp"
#include "plscore/model.hpp"
#include "plscore/rng.hpp"
#include "plscore/scoring.hpp"
#include "support/fixtures.hpp"

using namespace plscore;

namespace {

Sentence make_sentence(std::vector<int> ids, Framing framing) {
  Sentence s;
  s.tokens = std::move(ids);
  s.framing = framing;
  return s;
}

}  // namespace

TEST_CASE("full masking corrupts every content position") {
  TrainSchedule sched;
  sched.mask_rate = 1.0;
  sched.mask_split[0] = 1.0;
  sched.mask_split[1] = 0.0;
  sched.mask_split[2] = 0.0;
  Rng rng(1);
  Sentence s = make_sentence({7, 8, 9, 10}, Framing::Mlm);
  MaskedExample ex = apply_masking(s, sched, rng);
  CHECK(ex.targets.size() == 4);
  for (std::size_t t = 1; t <= 4; ++t) CHECK(ex.corrupted[t] == Vocab::kMask);
  CHECK(ex.corrupted.front() == Vocab::kCls);
  CHECK(ex.corrupted.back() == Vocab::kSep);
}

TEST_CASE("masking an empty sentence yields no targets") {
  TrainSchedule sched;
  Rng rng(1);
  MaskedExample ex = apply_masking(make_sentence({}, Framing::Mlm), sched, rng);
  CHECK(ex.targets.empty());
}

TEST_CASE("masking statistics track rate and split") {
  TrainSchedule sched;  // rate 0.15, split 0.8/0.1/0.1
  Rng rng(42);
  long tokens = 0, selected = 0, masked = 0;
  Sentence s = make_sentence({7, 8, 9, 10, 11, 12, 13, 14, 15, 16},
                             Framing::Mlm);
  for (int rep = 0; rep < 10000; ++rep) {
    MaskedExample ex = apply_masking(s, sched, rng);
    tokens += s.length();
    selected += static_cast<long>(ex.targets.size());
    for (const auto& [pos, orig] : ex.targets)
      if (ex.corrupted[static_cast<std::size_t>(pos)] == Vocab::kMask)
        ++masked;
    (void)masked;
  }
  double frac = static_cast<double>(selected) / static_cast<double>(tokens);
  CHECK(frac == doctest::Approx(0.15).epsilon(0.067));  // 0.15 +- 0.01
  double mask_share =
      static_cast<double>(masked) / static_cast<double>(selected);
  CHECK(mask_share == doctest::Approx(0.8).epsilon(0.025));  // 0.8 +- 0.02
}

TEST_CASE("steps zero returns the seed-initialized model") {
  std::vector<std::string> lines = fixtures::grammar_lines(20, 3);
  Vocab vocab = Vocab::build(lines, 1, Vocab::Mode::Word);
  Corpus corpus = make_corpus(vocab, lines, Framing::Mlm);
  ModelConfig config = fixtures::small_config(vocab.size(), false);
  TrainSchedule sched;
  sched.steps = 0;
  sched.seed = 5;
  Model trained = train_mlm(corpus, config, sched);
  Model fresh(config, 5);
  REQUIRE(trained.params().size() == fresh.params().size());
  for (std::size_t i = 0; i < fresh.params().size(); ++i)
    CHECK(trained.params()[i].t.data == fresh.params()[i].t.data);
}

TEST_CASE("training is deterministic for a fixed seed and reduces dev pppl") {
  std::vector<std::string> lines = fixtures::grammar_lines(120, 9);
  Vocab vocab = Vocab::build(lines, 1, Vocab::Mode::Word);
  Corpus corpus = make_corpus(vocab, lines, Framing::Mlm);
  ModelConfig config = fixtures::small_config(vocab.size(), false);
  TrainSchedule sched;
  sched.steps = 60;
  sched.batch_size = 8;
  sched.seed = 11;
  Model a = train_mlm(corpus, config, sched);
  Model b = train_mlm(corpus, config, sched);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(a.params()[i].t.data == b.params()[i].t.data);

  sched.steps = 0;
  Model initial = train_mlm(corpus, config, sched);
  CHECK(dev_pppl_token(a, corpus) < dev_pppl_token(initial, corpus));
}

TEST_CASE("causal model learns a deterministic bigram") {
  std::vector<std::string> lines(60, "a b");
  Vocab vocab = Vocab::build(lines, 1, Vocab::Mode::Word);
  Corpus corpus = make_corpus(vocab, lines, Framing::Causal);
  ModelConfig config = fixtures::small_config(vocab.size(), true);
  TrainSchedule sched;
  sched.steps = 150;
  sched.batch_size = 8;
  sched.lr = 3e-3;
  sched.seed = 2;
  Model model = train_causal(corpus, config, sched);
  Sentence s = encode(vocab, "a b", Framing::Causal);
  CHECK(conditional_log_prob(model, s, 2) > std::log(0.9));
}

TEST_CASE("conditional_log_prob contracts") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s = encode(fix.vocab, "this cat hides .", Framing::Mlm);
  CHECK_THROWS_AS(conditional_log_prob(fix.model, s, 0), ContractError);
  CHECK_THROWS_AS(conditional_log_prob(fix.model, s, 5), ContractError);
  for (int t = 1; t <= s.length(); ++t)
    CHECK(conditional_log_prob(fix.model, s, t) <= 0.0);
}

TEST_CASE("causal outputs ignore future tokens; MLM outputs use them") {
  const auto& causal = fixtures::shared_causal();
  Sentence a = encode(causal.vocab, "this cat hides .", Framing::Causal);
  Sentence b = encode(causal.vocab, "this cat rests .", Framing::Causal);
  CHECK(conditional_log_prob(causal.model, a, 2) ==
        conditional_log_prob(causal.model, b, 2));

  const auto& mlm = fixtures::shared_mlm();
  Sentence am = encode(mlm.vocab, "this cat hides .", Framing::Mlm);
  Sentence bm = encode(mlm.vocab, "this cat rest .", Framing::Mlm);
  CHECK(conditional_log_prob(mlm.model, am, 2) !=
        conditional_log_prob(mlm.model, bm, 2));
}

TEST_CASE("output rows are normalized distributions") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s = encode(fix.vocab, "these dogs rest .", Framing::Mlm);
  Tensor logits = fix.model.forward_logits(framed_ids(s));
  for (std::int64_t i = 0; i < logits.rows(); ++i) {
    double mx = logits.at(i, 0);
    for (std::int64_t j = 1; j < logits.cols(); ++j)
      mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::int64_t j = 0; j < logits.cols(); ++j)
      z += std::exp(logits.at(i, j) - mx);
    double total = 0.0;
    for (std::int64_t j = 0; j < logits.cols(); ++j)
      total += std::exp(logits.at(i, j) - mx) / z;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("divergent training reports the step") {
  std::vector<std::string> lines = fixtures::grammar_lines(40, 21);
  Vocab vocab = Vocab::build(lines, 1, Vocab::Mode::Word);
  Corpus corpus = make_corpus(vocab, lines, Framing::Mlm);
  ModelConfig config = fixtures::small_config(vocab.size(), false);
  TrainSchedule sched;
  sched.steps = 50;
  sched.lr = 1e200;
  sched.warmup_ratio = 0.0;
  sched.seed = 1;
  try {
    train_mlm(corpus, config, sched);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("adapt with patience zero returns the input parameters") {
  const auto& fix = fixtures::shared_mlm();
  std::vector<std::string> lines = fixtures::grammar_lines(30, 33);
  Corpus corpus = make_corpus(fix.vocab, lines, Framing::Mlm);
  TrainSchedule sched;
  sched.steps = 100;
  sched.patience = 0;
  sched.eval_interval = 10;
  sched.seed = 4;
  Model adapted = adapt(fix.model, corpus, corpus, sched);
  for (std::size_t i = 0; i < adapted.params().size(); ++i)
    CHECK(adapted.params()[i].t.data == fix.model.params()[i].t.data);
}

TEST_CASE("adapt never worsens dev pppl and rejects foreign vocab") {
  const auto& fix = fixtures::shared_mlm();
  std::vector<std::string> lines = fixtures::grammar_lines(60, 35);
  Corpus corpus = make_corpus(fix.vocab, lines, Framing::Mlm);
  TrainSchedule sched;
  sched.steps = 40;
  sched.eval_interval = 20;
  sched.patience = 5;
  sched.seed = 8;
  double before = dev_pppl_token(fix.model, corpus);
  Model adapted = adapt(fix.model, corpus, corpus, sched);
  CHECK(dev_pppl_token(adapted, corpus) <= before + 1e-9);

  Corpus bad = corpus;
  bad.sentences[0].tokens[0] = fix.model.config().vocab_size + 3;
  CHECK_THROWS_AS(adapt(fix.model, bad, corpus, sched), ContractError);
}

TEST_CASE("regression head lifecycle") {
  const auto& fix = fixtures::shared_mlm();
  Sentence s = encode(fix.vocab, "that owl sings .", Framing::Mlm);
  CHECK_THROWS_AS(regress_sentence(fix.model, s), CapabilityError);

  Model with_head = fix.model;
  with_head.add_head();
  CHECK(regress_sentence(with_head, s) == 0.0);
  CHECK(regress_sentence(with_head, s) == regress_sentence(with_head, s));
}

TEST_CASE("train_regressor fits a constant label") {
  const auto& fix = fixtures::shared_mlm();
  std::vector<std::string> lines = fixtures::grammar_lines(24, 55);
  std::vector<std::pair<Sentence, double>> labeled;
  for (const auto& l : lines)
    labeled.push_back({encode(fix.vocab, l, Framing::Mlm), -4.0});
  TrainSchedule sched;
  sched.steps = 120;
  sched.batch_size = 8;
  sched.lr = 2e-3;
  sched.seed = 3;
  Model student = train_regressor(fix.model, labeled, sched);
  double err = 0.0;
  for (const auto& [s, y] : labeled)
    err += std::abs(regress_sentence(student, s) - y);
  CHECK(err / static_cast<double>(labeled.size()) < 0.5);

  CHECK_THROWS_AS(train_regressor(fix.model, {}, sched), ContractError);
  std::vector<std::pair<Sentence, double>> nan_label{
      {labeled[0].first, std::nan("")}};
  CHECK_THROWS_AS(train_regressor(fix.model, nan_label, sched),
                  ContractError);
}

TEST_CASE("checkpoint round trip reproduces scores and bytes") {
  const auto& fix = fixtures::shared_mlm();
  std::string path = "ckpt_roundtrip_test.bin";
  save_checkpoint(fix.model, fix.vocab, path);
  auto [loaded, vocab] = load_checkpoint(path);
  CHECK(vocab.size() == fix.vocab.size());

  Sentence s = encode(vocab, "those hens wait .", Framing::Mlm);
  double orig = pll(fix.model, s, 4).total;
  double redo = pll(loaded, s, 4).total;
  CHECK(redo == doctest::Approx(orig).epsilon(1e-4));

  // Saving the loaded model again is byte-stable.
  std::string path2 = "ckpt_roundtrip_test2.bin";
  save_checkpoint(loaded, vocab, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // A flipped payload byte must fail the CRC.
  b1[b1.size() / 2] = static_cast<char>(b1[b1.size() / 2] ^ 0x40);
  std::ofstream out(path, std::ios::binary);
  out.write(b1.data(), static_cast<std::streamsize>(b1.size()));
  out.close();
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("head round trips through checkpoints") {
  const auto& fix = fixtures::shared_mlm();
  Model with_head = fix.model;
  with_head.add_head();
  std::string path = "ckpt_head_test.bin";
  save_checkpoint(with_head, fix.vocab, path);
  auto [loaded, vocab] = load_checkpoint(path);
  CHECK(loaded.has_head());
  Sentence s = encode(vocab, "this fox waits .", Framing::Mlm);
  CHECK(regress_sentence(loaded, s) == 0.0);
  std::remove(path.c_str());
}
