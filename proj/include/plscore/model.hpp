#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "plscore/autodiff.hpp"
#include "plscore/optim.hpp"
#include "plscore/rng.hpp"
#include "plscore/text.hpp"

namespace plscore {

struct ModelConfig {
  int vocab_size = 0;
  int layers = 2;
  int heads = 4;
  int hidden = 128;
  int ffn = 256;
  int max_len = 64;
  bool causal = false;
  double dropout = 0.0;
  bool lowercase = false;

  // Longest framed sentence the model accepts.
  int max_content_len() const { return max_len - 2; }
  void validate() const;
};

struct TrainSchedule {
  long steps = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  double warmup_ratio = 0.01;
  double mask_rate = 0.15;
  double mask_split[3] = {0.8, 0.1, 0.1};  // MASK / random token / keep
  std::uint64_t seed = 42;
  int patience = 3;       // early stopping, counted in evaluations
  long eval_interval = 100;
  void validate() const;
};

// Self-attentive LM: bidirectional when config.causal is false, strictly
// left-to-right otherwise. Immutable once trained; scoring entry points are
// const and safe to call from many threads.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedTensor>& params() { return params_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  bool has_head() const { return has_head_; }
  // Appends a zero-initialized sentence-regression head.
  void add_head();

  // Framed ids -> raw output logits [len, vocab]. Counts as one forward
  // pass. No dropout.
  Tensor forward_logits(const std::vector<int>& framed) const;
  // Scalar prediction of the regression head on the first position.
  double forward_regression(const std::vector<int>& framed) const;

  std::uint64_t forward_passes() const { return forward_count_->load(); }
  void reset_forward_passes() const { forward_count_->store(0); }

  // Training-side graph construction. param_vars must come from
  // make_param_vars on the same tape.
  std::vector<Var> make_param_vars(Tape& tape, bool requires_grad) const;
  Var build_logits(Tape& tape, const std::vector<Var>& param_vars,
                   const std::vector<int>& framed, bool train_mode,
                   Rng* dropout_rng) const;
  Var build_regression(Tape& tape, const std::vector<Var>& param_vars,
                       const std::vector<int>& framed, bool train_mode,
                       Rng* dropout_rng) const;

 private:
  Var build_encodings(Tape& tape, const std::vector<Var>& param_vars,
                      const std::vector<int>& framed, bool train_mode,
                      Rng* dropout_rng) const;
  int param_index(const std::string& name) const;
  void check_length(std::size_t framed_len) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  bool has_head_ = false;
  std::shared_ptr<std::atomic<std::uint64_t>> forward_count_;
};

// One dynamically-masked view of an MLM training sentence.
struct MaskedExample {
  std::vector<int> corrupted;                    // framed ids after corruption
  std::vector<std::pair<int, int>> targets;      // (framed position, original id)
};

// BERT-style corruption: ~mask_rate of content positions are selected; of
// those, mask_split decides MASK / random non-special token / unchanged.
MaskedExample apply_masking(const Sentence& sentence,
                            const TrainSchedule& schedule, Rng& rng);

using TrainLogger = std::function<void(long step, double loss)>;
using EvalLogger = std::function<void(long step, double dev_pppl)>;

Model train_mlm(const Corpus& corpus, const ModelConfig& config,
                const TrainSchedule& schedule, const TrainLogger& log = {});

Model train_causal(const Corpus& corpus, const ModelConfig& config,
                   const TrainSchedule& schedule, const TrainLogger& log = {});

// Continued MLM training on chunks of concatenated sentences; returns the
// parameters of the best dev-PPPL checkpoint.
Model adapt(const Model& model, const Corpus& corpus, const Corpus& dev,
            const TrainSchedule& schedule, const EvalLogger& log = {});

// log P(w_t | context) for 1-based t; masks position t for MLMs, feeds the
// framed prefix to causal models.
double conditional_log_prob(const Model& model, const Sentence& sentence,
                            int t);

// q(W) from the sentence-regression head; input carries no MASK tokens.
double regress_sentence(const Model& model, const Sentence& sentence);

// Finetunes the base model jointly with a (fresh, zero-init) regression
// head to minimize squared error against the given sentence labels.
Model train_regressor(const Model& model,
                      const std::vector<std::pair<Sentence, double>>& labeled,
                      const TrainSchedule& schedule,
                      const TrainLogger& log = {});

// Token-normalized pseudo-perplexity via per-position masking; used for
// adaptation early stopping.
double dev_pppl_token(const Model& model, const Corpus& dev);

}  // namespace plscore
