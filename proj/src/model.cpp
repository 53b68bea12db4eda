#include "plscore/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plscore/errors.hpp"

namespace plscore {

namespace {

constexpr double kMaskLogit = -1e9;

Tensor causal_mask(std::int64_t n) {
  Tensor m = Tensor::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) m.at(i, j) = kMaskLogit;
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size <= Vocab::kNumReserved)
    throw ConfigError("model: vocab_size must exceed the reserved block");
  if (layers < 1 || heads < 1 || hidden < 1 || ffn < 1)
    throw ConfigError("model: layers/heads/hidden/ffn must be positive");
  if (hidden % heads != 0)
    throw ConfigError("model: hidden dim must be divisible by heads");
  if (max_len < 3) throw ConfigError("model: max_len too small");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model: dropout must be in [0, 1)");
}

void TrainSchedule::validate() const {
  if (steps < 0) throw ConfigError("schedule: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("schedule: batch_size must be >= 1");
  if (lr <= 0.0) throw ConfigError("schedule: lr must be positive");
  if (mask_rate < 0.0 || mask_rate > 1.0)
    throw ConfigError("schedule: mask_rate must be in [0, 1]");
  double s = mask_split[0] + mask_split[1] + mask_split[2];
  if (std::abs(s - 1.0) > 1e-9)
    throw ConfigError("schedule: mask/random/keep split must sum to 1");
  if (eval_interval < 1) throw ConfigError("schedule: eval_interval must be >= 1");
  if (patience < 0) throw ConfigError("schedule: patience must be >= 0");
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(config),
      forward_count_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
  config_.validate();
  Rng rng = Rng(seed).split(0xC0DE);
  const int H = config_.hidden, F = config_.ffn, V = config_.vocab_size;
  auto init = [&](const std::string& name, std::vector<std::int64_t> shape,
                  double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    if (stddev > 0.0)
      for (auto& v : t.data) v = rng.normal(0.0, stddev);
    params_.push_back({name, std::move(t)});
  };
  const double sd = 0.02;
  init("tok_emb", {V, H}, sd);
  init("pos_emb", {config_.max_len, H}, sd);
  init("emb_ln.g", {H}, 0.0);
  init("emb_ln.b", {H}, 0.0);
  for (auto& v : param("emb_ln.g").data) v = 1.0;
  for (int l = 0; l < config_.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    init(p + "attn.wq", {H, H}, sd);
    init(p + "attn.bq", {H}, 0.0);
    init(p + "attn.wk", {H, H}, sd);
    init(p + "attn.bk", {H}, 0.0);
    init(p + "attn.wv", {H, H}, sd);
    init(p + "attn.bv", {H}, 0.0);
    init(p + "attn.wo", {H, H}, sd);
    init(p + "attn.bo", {H}, 0.0);
    init(p + "ln1.g", {H}, 0.0);
    init(p + "ln1.b", {H}, 0.0);
    for (auto& v : param(p + "ln1.g").data) v = 1.0;
    init(p + "ffn.w1", {H, F}, sd);
    init(p + "ffn.b1", {F}, 0.0);
    init(p + "ffn.w2", {F, H}, sd);
    init(p + "ffn.b2", {H}, 0.0);
    init(p + "ln2.g", {H}, 0.0);
    init(p + "ln2.b", {H}, 0.0);
    for (auto& v : param(p + "ln2.g").data) v = 1.0;
  }
  init("out.w", {H, V}, sd);
  init("out.b", {V}, 0.0);
}

int Model::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  throw ContractError("model: unknown parameter " + name);
}

Tensor& Model::param(const std::string& name) {
  return params_[static_cast<std::size_t>(param_index(name))].t;
}

const Tensor& Model::param(const std::string& name) const {
  return params_[static_cast<std::size_t>(param_index(name))].t;
}

void Model::add_head() {
  if (has_head_) return;
  params_.push_back({"head.w", Tensor::zeros({config_.hidden, 1})});
  params_.push_back({"head.b", Tensor::zeros({1})});
  has_head_ = true;
}

void Model::check_length(std::size_t framed_len) const {
  if (static_cast<int>(framed_len) > config_.max_len)
    throw LengthError("model: framed sequence length " +
                      std::to_string(framed_len) + " exceeds max length " +
                      std::to_string(config_.max_len));
}

std::vector<Var> Model::make_param_vars(Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.t, requires_grad));
  return vars;
}

Var Model::build_encodings(Tape& tape, const std::vector<Var>& pv,
                           const std::vector<int>& framed, bool train_mode,
                           Rng* dropout_rng) const {
  check_length(framed.size());
  if (framed.empty()) throw ContractError("model: empty input sequence");
  const int H = config_.hidden;
  const int heads = config_.heads;
  const int dh = H / heads;
  const auto L = static_cast<std::int64_t>(framed.size());
  const double rate = train_mode ? config_.dropout : 0.0;
  auto drop = [&](Var x) {
    return rate > 0.0 && dropout_rng ? dropout(tape, x, rate, *dropout_rng) : x;
  };
  auto idx = [&](const std::string& name) {
    return pv[static_cast<std::size_t>(param_index(name))];
  };

  std::vector<int> positions(framed.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = add(tape, gather_rows(tape, idx("tok_emb"), framed),
              gather_rows(tape, idx("pos_emb"), positions));
  x = layer_norm(tape, x, idx("emb_ln.g"), idx("emb_ln.b"));
  x = drop(x);

  Tensor mask;
  if (config_.causal) mask = causal_mask(L);

  for (int l = 0; l < config_.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    Var q = add_rowvec(tape, matmul(tape, x, idx(p + "attn.wq")),
                       idx(p + "attn.bq"));
    Var k = add_rowvec(tape, matmul(tape, x, idx(p + "attn.wk")),
                       idx(p + "attn.bk"));
    Var v = add_rowvec(tape, matmul(tape, x, idx(p + "attn.wv")),
                       idx(p + "attn.bv"));
    std::vector<Var> ctx;
    for (int h = 0; h < heads; ++h) {
      std::int64_t c0 = static_cast<std::int64_t>(h) * dh, c1 = c0 + dh;
      Var qh = slice_cols(tape, q, c0, c1);
      Var kh = slice_cols(tape, k, c0, c1);
      Var vh = slice_cols(tape, v, c0, c1);
      Var scores = scale(tape, matmul(tape, qh, transpose(tape, kh)),
                         1.0 / std::sqrt(static_cast<double>(dh)));
      if (config_.causal) scores = add_const(tape, scores, mask);
      Var attn = drop(softmax_rows(tape, scores));
      ctx.push_back(matmul(tape, attn, vh));
    }
    Var merged = concat_cols(tape, ctx);
    Var attn_out = add_rowvec(tape, matmul(tape, merged, idx(p + "attn.wo")),
                              idx(p + "attn.bo"));
    x = layer_norm(tape, add(tape, x, drop(attn_out)), idx(p + "ln1.g"),
                   idx(p + "ln1.b"));
    Var h1 = gelu(tape, add_rowvec(tape, matmul(tape, x, idx(p + "ffn.w1")),
                                   idx(p + "ffn.b1")));
    Var h2 = add_rowvec(tape, matmul(tape, h1, idx(p + "ffn.w2")),
                        idx(p + "ffn.b2"));
    x = layer_norm(tape, add(tape, x, drop(h2)), idx(p + "ln2.g"),
                   idx(p + "ln2.b"));
  }
  return x;
}

Var Model::build_logits(Tape& tape, const std::vector<Var>& pv,
                        const std::vector<int>& framed, bool train_mode,
                        Rng* dropout_rng) const {
  Var enc = build_encodings(tape, pv, framed, train_mode, dropout_rng);
  auto idx = [&](const std::string& name) {
    return pv[static_cast<std::size_t>(param_index(name))];
  };
  return add_rowvec(tape, matmul(tape, enc, idx("out.w")), idx("out.b"));
}

Var Model::build_regression(Tape& tape, const std::vector<Var>& pv,
                            const std::vector<int>& framed, bool train_mode,
                            Rng* dropout_rng) const {
  if (!has_head_)
    throw CapabilityError("model: no sentence-regression head present");
  Var enc = build_encodings(tape, pv, framed, train_mode, dropout_rng);
  Var first = slice_rows(tape, enc, 0, 1);
  auto idx = [&](const std::string& name) {
    return pv[static_cast<std::size_t>(param_index(name))];
  };
  return add_rowvec(tape, matmul(tape, first, idx("head.w")), idx("head.b"));
}

Tensor Model::forward_logits(const std::vector<int>& framed) const {
  Tape tape;
  auto pv = make_param_vars(tape, false);
  Var out = build_logits(tape, pv, framed, false, nullptr);
  forward_count_->fetch_add(1);
  return tape.value(out);
}

double Model::forward_regression(const std::vector<int>& framed) const {
  Tape tape;
  auto pv = make_param_vars(tape, false);
  Var out = build_regression(tape, pv, framed, false, nullptr);
  forward_count_->fetch_add(1);
  return tape.value(out).data[0];
}

// ---------------------------------------------------------------------------
// masking

MaskedExample apply_masking(const Sentence& sentence,
                            const TrainSchedule& schedule, Rng& rng) {
  if (sentence.framing != Framing::Mlm)
    throw ContractError("apply_masking: sentence must use mlm framing");
  MaskedExample ex;
  ex.corrupted = framed_ids(sentence);
  // content positions are 1..|W| ([CLS] at 0, [SEP] at the end)
  for (int t = 1; t <= sentence.length(); ++t) {
    if (rng.uniform() >= schedule.mask_rate) continue;
    int original = ex.corrupted[static_cast<std::size_t>(t)];
    ex.targets.emplace_back(t, original);
    double r = rng.uniform();
    if (r < schedule.mask_split[0]) {
      ex.corrupted[static_cast<std::size_t>(t)] = Vocab::kMask;
    } else if (r < schedule.mask_split[0] + schedule.mask_split[1]) {
      // uniform over non-reserved ids; vocab size comes from the caller's
      // model, so draw lazily against INT_MAX and fix up in the trainer
      ex.corrupted[static_cast<std::size_t>(t)] = -1;  // placeholder
    }
    // else: keep the original token
  }
  return ex;
}

namespace {

// Resolve random-replacement placeholders against a concrete vocab size.
void resolve_random_tokens(MaskedExample& ex, int vocab_size, Rng& rng) {
  for (auto& id : ex.corrupted)
    if (id == -1) id = rng.uniform_int(Vocab::kNumReserved, vocab_size - 1);
}

struct BatchExample {
  std::vector<int> input;
  std::vector<std::pair<int, int>> targets;  // (position, target id)
};

using ExampleMaker =
    std::function<BatchExample(const Sentence&, Rng&)>;

double clamp_warmup_lr(const TrainSchedule& s, long step) {
  long warmup = static_cast<long>(std::ceil(s.warmup_ratio *
                                            static_cast<double>(s.steps)));
  if (warmup > 0 && step <= warmup)
    return s.lr * static_cast<double>(step) / static_cast<double>(warmup);
  return s.lr;
}

// Shared optimization loop over per-sentence graphs. Deterministic: the
// sentence order, masks, and reduction order depend only on the seed.
void run_training(Model& model, const std::vector<const Sentence*>& sentences,
                  const TrainSchedule& schedule, const ExampleMaker& make,
                  const TrainLogger& log,
                  const std::function<bool(long)>& checkpoint_hook = {}) {
  if (sentences.empty()) throw ContractError("train: empty corpus");
  AdamState adam;
  Rng order_rng = Rng(schedule.seed).split(1);
  Rng mask_rng = Rng(schedule.seed).split(2);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force shuffle on first use

  double loss_accum = 0.0;
  long loss_terms = 0;
  for (long step = 1; step <= schedule.steps; ++step) {
    std::vector<Tensor> grad_accum;
    for (const auto& p : model.params())
      grad_accum.push_back(Tensor::zeros(p.t.shape));
    double batch_loss = 0.0;
    long batch_targets = 0;
    for (int b = 0; b < schedule.batch_size; ++b) {
      if (cursor >= order.size()) {
        // fresh epoch: reshuffle
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1],
                    order[static_cast<std::size_t>(
                        order_rng.uniform_int(0, static_cast<int>(i) - 1))]);
        cursor = 0;
      }
      const Sentence& s = *sentences[order[cursor++]];
      BatchExample ex = make(s, mask_rng);
      if (ex.targets.empty()) continue;
      Tape tape;
      auto pv = model.make_param_vars(tape, true);
      Rng drop_rng = Rng(schedule.seed).split(
          0xD0000000ULL + static_cast<std::uint64_t>(step) * 4096 +
          static_cast<std::uint64_t>(b));
      Var logits = model.build_logits(tape, pv, ex.input, true, &drop_rng);
      Var lsm = log_softmax(tape, logits, 1);
      Var picked = pick(tape, lsm, ex.targets);
      Var loss = scale(tape, sum(tape, picked), -1.0);
      double lv = tape.value(loss).data[0];
      if (!std::isfinite(lv))
        throw TrainError("training diverged (non-finite loss) at step " +
                         std::to_string(step));
      batch_loss += lv;
      batch_targets += static_cast<long>(ex.targets.size());
      tape.backward(loss);
      for (std::size_t i = 0; i < grad_accum.size(); ++i) {
        const Tensor& g = tape.grad(pv[i]);
        for (std::size_t k = 0; k < g.data.size(); ++k)
          grad_accum[i].data[k] += g.data[k];
      }
    }
    if (batch_targets > 0) {
      double inv = 1.0 / static_cast<double>(batch_targets);
      for (auto& g : grad_accum)
        for (auto& v : g.data) v *= inv;
      adam_step(model.params(), grad_accum, adam,
                clamp_warmup_lr(schedule, step));
      loss_accum += batch_loss / static_cast<double>(batch_targets);
      loss_terms += 1;
    }
    if (step % schedule.eval_interval == 0 || step == schedule.steps) {
      if (log && loss_terms > 0)
        log(step, loss_accum / static_cast<double>(loss_terms));
      loss_accum = 0.0;
      loss_terms = 0;
      if (checkpoint_hook && checkpoint_hook(step)) break;
    }
  }
}

std::vector<const Sentence*> sentence_ptrs(const Corpus& corpus) {
  std::vector<const Sentence*> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) out.push_back(&s);
  return out;
}

}  // namespace

Model train_mlm(const Corpus& corpus, const ModelConfig& config,
                const TrainSchedule& schedule, const TrainLogger& log) {
  if (config.causal)
    throw ContractError("train_mlm: config.causal must be false");
  schedule.validate();
  Model model(config, schedule.seed);
  if (schedule.steps == 0) return model;
  int vocab_size = config.vocab_size;
  auto make = [&, vocab_size](const Sentence& s, Rng& rng) {
    MaskedExample mex = apply_masking(s, schedule, rng);
    resolve_random_tokens(mex, vocab_size, rng);
    return BatchExample{std::move(mex.corrupted), std::move(mex.targets)};
  };
  run_training(model, sentence_ptrs(corpus), schedule, make, log);
  return model;
}

Model train_causal(const Corpus& corpus, const ModelConfig& config,
                   const TrainSchedule& schedule, const TrainLogger& log) {
  if (!config.causal)
    throw ContractError("train_causal: config.causal must be true");
  schedule.validate();
  Model model(config, schedule.seed);
  if (schedule.steps == 0) return model;
  auto make = [](const Sentence& s, Rng&) {
    std::vector<int> framed = framed_ids(s);  // BOS w1..wL EOS
    BatchExample ex;
    // input BOS..wL, position i predicts framed[i+1] (w1..EOS)
    ex.input.assign(framed.begin(), framed.end() - 1);
    for (std::size_t i = 0; i + 1 < framed.size(); ++i)
      ex.targets.emplace_back(static_cast<int>(i), framed[i + 1]);
    return ex;
  };
  run_training(model, sentence_ptrs(corpus), schedule, make, log);
  return model;
}

double dev_pppl_token(const Model& model, const Corpus& dev) {
  if (dev.n_tok == 0) throw DomainError("dev_pppl_token: empty corpus");
  double total = 0.0;
  for (const auto& s : dev.sentences)
    for (int t = 1; t <= s.length(); ++t)
      total += conditional_log_prob(model, s, t);
  return std::exp(-total / static_cast<double>(dev.n_tok));
}

Model adapt(const Model& model, const Corpus& corpus, const Corpus& dev,
            const TrainSchedule& schedule, const EvalLogger& log) {
  schedule.validate();
  if (model.config().causal)
    throw ContractError("adapt: only MLM models can be adapted");
  for (const auto& s : corpus.sentences)
    for (int id : s.tokens)
      if (id >= model.config().vocab_size)
        throw ContractError("adapt: corpus vocabulary exceeds model vocab");
  // Pack content tokens into chunks of concatenated sentences.
  std::vector<Sentence> chunks;
  {
    const int cap = model.config().max_content_len();
    Sentence cur;
    cur.framing = Framing::Mlm;
    for (const auto& s : corpus.sentences) {
      for (int id : s.tokens) {
        cur.tokens.push_back(id);
        if (static_cast<int>(cur.tokens.size()) == cap) {
          chunks.push_back(cur);
          cur.tokens.clear();
        }
      }
    }
    if (!cur.tokens.empty()) chunks.push_back(cur);
  }
  if (chunks.empty()) throw ContractError("adapt: empty corpus");

  Model work = model;
  std::vector<NamedTensor> best_params = work.params();
  double best = dev_pppl_token(work, dev);
  if (log) log(0, best);
  int since_improvement = 0;

  std::vector<const Sentence*> ptrs;
  for (const auto& c : chunks) ptrs.push_back(&c);
  int vocab_size = model.config().vocab_size;
  auto make = [&, vocab_size](const Sentence& s, Rng& rng) {
    MaskedExample mex = apply_masking(s, schedule, rng);
    resolve_random_tokens(mex, vocab_size, rng);
    return BatchExample{std::move(mex.corrupted), std::move(mex.targets)};
  };
  auto hook = [&](long step) {
    double pppl = dev_pppl_token(work, dev);
    if (log) log(step, pppl);
    if (pppl < best) {
      best = pppl;
      best_params = work.params();
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    return since_improvement >= schedule.patience;
  };
  run_training(work, ptrs, schedule, make, nullptr, hook);
  work.params() = std::move(best_params);
  return work;
}

double conditional_log_prob(const Model& model, const Sentence& sentence,
                            int t) {
  if (t < 1 || t > sentence.length())
    throw ContractError("conditional_log_prob: position out of range: " +
                        std::to_string(t));
  if (model.config().causal) {
    if (sentence.framing != Framing::Causal)
      throw ContractError("conditional_log_prob: causal framing required");
    // framed prefix BOS w_1..w_{t-1}; last row predicts w_t
    std::vector<int> prefix;
    prefix.push_back(Vocab::kBos);
    for (int i = 0; i < t - 1; ++i) prefix.push_back(sentence.tokens[i]);
    Tensor logits = model.forward_logits(prefix);
    Tape tape;
    Var row = tape.leaf(logits);
    Var lsm = log_softmax(tape, row, 1);
    return tape.value(lsm).at(static_cast<std::int64_t>(t - 1),
                              sentence.tokens[static_cast<std::size_t>(t - 1)]);
  }
  if (sentence.framing != Framing::Mlm)
    throw ContractError("conditional_log_prob: mlm framing required");
  std::vector<int> framed = framed_ids(sentence);
  int original = framed[static_cast<std::size_t>(t)];
  framed[static_cast<std::size_t>(t)] = Vocab::kMask;
  Tensor logits = model.forward_logits(framed);
  Tape tape;
  Var lsm = log_softmax(tape, tape.leaf(logits), 1);
  return tape.value(lsm).at(t, original);
}

double regress_sentence(const Model& model, const Sentence& sentence) {
  if (!model.has_head())
    throw CapabilityError("regress_sentence: model has no regression head");
  if (sentence.framing != Framing::Mlm)
    throw ContractError("regress_sentence: mlm framing required");
  std::vector<int> framed = framed_ids(sentence);
  for (int id : framed)
    if (id == Vocab::kMask)
      throw ContractError("regress_sentence: input must not contain [MASK]");
  return model.forward_regression(framed);
}

Model train_regressor(const Model& model,
                      const std::vector<std::pair<Sentence, double>>& labeled,
                      const TrainSchedule& schedule, const TrainLogger& log) {
  schedule.validate();
  if (labeled.empty())
    throw ContractError("train_regressor: empty label set");
  for (const auto& [s, y] : labeled)
    if (!std::isfinite(y))
      throw ContractError("train_regressor: labels must be finite");
  Model work = model;
  work.add_head();
  if (schedule.steps == 0) return work;

  AdamState adam;
  Rng order_rng = Rng(schedule.seed).split(11);
  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  double loss_accum = 0.0;
  long loss_terms = 0;
  for (long step = 1; step <= schedule.steps; ++step) {
    std::vector<Tensor> grad_accum;
    for (const auto& p : work.params())
      grad_accum.push_back(Tensor::zeros(p.t.shape));
    double batch_loss = 0.0;
    int used = 0;
    for (int b = 0; b < schedule.batch_size; ++b) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1],
                    order[static_cast<std::size_t>(
                        order_rng.uniform_int(0, static_cast<int>(i) - 1))]);
        cursor = 0;
      }
      const auto& [s, y] = labeled[order[cursor++]];
      Tape tape;
      auto pv = work.make_param_vars(tape, true);
      Var q = work.build_regression(tape, pv, framed_ids(s), true, nullptr);
      Var err = add_const(tape, q, Tensor::matrix({{-y}}));
      Var loss = sum(tape, hadamard(tape, err, err));
      double lv = tape.value(loss).data[0];
      if (!std::isfinite(lv))
        throw TrainError("regressor diverged at step " + std::to_string(step));
      batch_loss += lv;
      ++used;
      tape.backward(loss);
      for (std::size_t i = 0; i < grad_accum.size(); ++i) {
        const Tensor& g = tape.grad(pv[i]);
        for (std::size_t k = 0; k < g.data.size(); ++k)
          grad_accum[i].data[k] += g.data[k];
      }
    }
    double inv = 1.0 / static_cast<double>(used);
    for (auto& g : grad_accum)
      for (auto& v : g.data) v *= inv;
    adam_step(work.params(), grad_accum, adam, clamp_warmup_lr(schedule, step));
    loss_accum += batch_loss * inv;
    loss_terms += 1;
    if (log && (step % schedule.eval_interval == 0 || step == schedule.steps)) {
      log(step, loss_accum / static_cast<double>(loss_terms));
      loss_accum = 0.0;
      loss_terms = 0;
    }
  }
  return work;
}

}  // namespace plscore
