// plscore: train small masked/causal LMs and score sentences with them.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "plscore/acceptability.hpp"
#include "plscore/checkpoint.hpp"
#include "plscore/errors.hpp"
#include "plscore/model.hpp"
#include "plscore/rescoring.hpp"
#include "plscore/scoring.hpp"
#include "plscore/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace plscore;

// ---------------------------------------------------------------- config

// A JSON config file supplies values for any flag the command line leaves
// unset; explicit flags always win.
json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config file ") + path + ": " + e.what());
  }
}

template <typename T>
void cfg(const json& j, const char* key, T& var) {
  if (j.contains(key)) {
    try {
      var = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key \"") + key +
                        "\" has the wrong type");
    }
  }
}

// Applies the config value only when the flag is absent from argv.
template <typename T>
void cfg_absent(CLI::App* sub, const char* flag, const json& j,
                const char* key, T& var) {
  if (sub->count(flag) == 0) cfg(j, key, var);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_snapshot(const fs::path& out_dir, const json& resolved) {
  write_file(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string());
  return dir;
}

// ---------------------------------------------------------------- shared

struct Common {
  std::string config_path;
  std::string out = ".";
  std::uint64_t seed = 42;
  int workers = 0;  // 0 = logical cores

  Pool make_pool() const {
    return workers > 0 ? Pool(workers) : Pool::hardware();
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file; flags win");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--workers", c.workers, "worker threads (0 = cores)");
}

void resolve_common(CLI::App* sub, const json& file, Common& c) {
  cfg_absent(sub, "--out", file, "out", c.out);
  cfg_absent(sub, "--workers", file, "workers", c.workers);
  if (sub->count("--seed") == 0) {
    if (file.contains("seed")) {
      cfg(file, "seed", c.seed);
    } else if (const char* env = std::getenv("PLSCORE_SEED")) {
      c.seed = std::strtoull(env, nullptr, 10);
    }
  }
}

json common_json(const Common& c, const std::string& command) {
  return json{{"command", command},
              {"out", c.out},
              {"seed", c.seed},
              {"workers", c.workers}};
}

void require(const std::string& value, const char* flag) {
  if (value.empty())
    throw ConfigError(std::string("missing required option ") + flag);
}

std::unique_ptr<Scorer> make_scorer(const Model& model, const Vocab& vocab,
                                    const std::string& mode, int batch,
                                    const Pool* pool) {
  if (mode == "auto")
    return make_scorer(model, vocab,
                       model.config().causal ? "causal" : "pll", batch, pool);
  if (mode == "pll")
    return std::make_unique<MaskedPllScorer>(model, vocab, batch, pool);
  if (mode == "pll-sequential")
    return std::make_unique<MaskedPllScorer>(model, vocab, 1, nullptr);
  if (mode == "nomask")
    return std::make_unique<NoMaskPllScorer>(model, vocab);
  if (mode == "causal")
    return std::make_unique<CausalScorer>(model, vocab);
  if (mode == "maskless")
    return std::make_unique<MasklessScorer>(model, vocab);
  throw ConfigError("unknown scoring mode \"" + mode + "\"");
}

json report_json(const ScoreReport& r) {
  json per = json::array();
  for (const auto& t : r.per_token)
    per.push_back({{"position", t.position},
                   {"token_id", t.token_id},
                   {"log_prob", t.log_prob}});
  return json{{"text", r.raw},
              {"total", r.total},
              {"token_count", r.token_count},
              {"word_count", r.word_count},
              {"per_token", std::move(per)}};
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  Common common;
  std::string corpus, arch = "mlm", vocab_mode = "word", ckpt = "model.ckpt";
  int min_count = 1;
  bool lowercase = false;
  int layers = 2, heads = 4, hidden = 128, ffn = 256, max_len = 64;
  double dropout = 0.0;
  long steps = 1000;
  int batch = 16;
  double lr = 1e-3, warmup = 0.01, mask_rate = 0.15;
};

void add_train_flags(CLI::App* sub, TrainOpts& o) {
  add_common(sub, o.common);
  sub->add_option("--corpus", o.corpus, "training text, one sentence per line");
  sub->add_option("--arch", o.arch, "mlm or causal");
  sub->add_option("--vocab-mode", o.vocab_mode, "word or char");
  sub->add_option("--min-count", o.min_count);
  sub->add_option("--ckpt", o.ckpt, "checkpoint filename");
  sub->add_option("--layers", o.layers);
  sub->add_option("--heads", o.heads);
  sub->add_option("--hidden", o.hidden);
  sub->add_option("--ffn", o.ffn);
  sub->add_option("--max-len", o.max_len);
  sub->add_option("--dropout", o.dropout);
  sub->add_flag("--lowercase", o.lowercase);
  sub->add_option("--steps", o.steps);
  sub->add_option("--batch", o.batch);
  sub->add_option("--lr", o.lr);
  sub->add_option("--warmup", o.warmup);
  sub->add_option("--mask-rate", o.mask_rate);
}

void resolve_train(CLI::App* sub, const json& f, TrainOpts& o) {
  resolve_common(sub, f, o.common);
  cfg_absent(sub, "--corpus", f, "corpus", o.corpus);
  cfg_absent(sub, "--arch", f, "arch", o.arch);
  cfg_absent(sub, "--vocab-mode", f, "vocab-mode", o.vocab_mode);
  cfg_absent(sub, "--ckpt", f, "ckpt", o.ckpt);
  cfg_absent(sub, "--min-count", f, "min-count", o.min_count);
  cfg_absent(sub, "--lowercase", f, "lowercase", o.lowercase);
  cfg_absent(sub, "--layers", f, "layers", o.layers);
  cfg_absent(sub, "--heads", f, "heads", o.heads);
  cfg_absent(sub, "--hidden", f, "hidden", o.hidden);
  cfg_absent(sub, "--ffn", f, "ffn", o.ffn);
  cfg_absent(sub, "--max-len", f, "max-len", o.max_len);
  cfg_absent(sub, "--dropout", f, "dropout", o.dropout);
  cfg_absent(sub, "--steps", f, "steps", o.steps);
  cfg_absent(sub, "--batch", f, "batch", o.batch);
  cfg_absent(sub, "--lr", f, "lr", o.lr);
  cfg_absent(sub, "--warmup", f, "warmup", o.warmup);
  cfg_absent(sub, "--mask-rate", f, "mask-rate", o.mask_rate);
}

json train_json(const TrainOpts& o) {
  json j = common_json(o.common, "train");
  j["corpus"] = o.corpus;
  j["arch"] = o.arch;
  j["vocab-mode"] = o.vocab_mode;
  j["ckpt"] = o.ckpt;
  j["min-count"] = o.min_count;
  j["lowercase"] = o.lowercase;
  j["layers"] = o.layers;
  j["heads"] = o.heads;
  j["hidden"] = o.hidden;
  j["ffn"] = o.ffn;
  j["max-len"] = o.max_len;
  j["dropout"] = o.dropout;
  j["steps"] = o.steps;
  j["batch"] = o.batch;
  j["lr"] = o.lr;
  j["warmup"] = o.warmup;
  j["mask-rate"] = o.mask_rate;
  return j;
}

int cmd_train(const TrainOpts& o) {
  require(o.corpus, "--corpus");
  if (o.arch != "mlm" && o.arch != "causal")
    throw ConfigError("--arch must be mlm or causal");
  if (o.vocab_mode != "word" && o.vocab_mode != "char")
    throw ConfigError("--vocab-mode must be word or char");
  fs::path out = prepare_out_dir(o.common.out);

  std::vector<std::string> lines = load_lines(o.corpus);
  Vocab::Mode vm =
      o.vocab_mode == "char" ? Vocab::Mode::Char : Vocab::Mode::Word;
  Vocab vocab = Vocab::build(lines, o.min_count, vm);
  Framing framing = o.arch == "mlm" ? Framing::Mlm : Framing::Causal;
  Corpus corpus = make_corpus(vocab, lines, framing, o.lowercase);

  ModelConfig config;
  config.vocab_size = vocab.size();
  config.layers = o.layers;
  config.heads = o.heads;
  config.hidden = o.hidden;
  config.ffn = o.ffn;
  config.max_len = o.max_len;
  config.causal = o.arch == "causal";
  config.dropout = o.dropout;
  config.lowercase = o.lowercase;

  TrainSchedule schedule;
  schedule.steps = o.steps;
  schedule.batch_size = o.batch;
  schedule.lr = o.lr;
  schedule.warmup_ratio = o.warmup;
  schedule.mask_rate = o.mask_rate;
  schedule.seed = o.common.seed;

  std::ostringstream log;
  log << std::setprecision(10);
  auto logger = [&](long step, double loss) {
    log << step << '\t' << loss << '\n';
  };
  Model model = config.causal ? train_causal(corpus, config, schedule, logger)
                              : train_mlm(corpus, config, schedule, logger);
  save_checkpoint(model, vocab, (out / o.ckpt).string());
  write_file(out / "train_log.txt", log.str());
  write_snapshot(out, train_json(o));
  std::cout << "wrote " << (out / o.ckpt).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- score

struct ScoreOpts {
  Common common;
  std::string ckpt, input, text, mode = "auto";
  int batch = 16;
};

void add_score_flags(CLI::App* sub, ScoreOpts& o) {
  add_common(sub, o.common);
  sub->add_option("--ckpt", o.ckpt, "model checkpoint");
  sub->add_option("--input", o.input, "text file, one sentence per line");
  sub->add_option("--text", o.text, "single sentence");
  sub->add_option("--mode", o.mode,
                  "auto|pll|pll-sequential|nomask|causal|maskless");
  sub->add_option("--batch", o.batch, "masked copies per forward group");
}

void resolve_score(CLI::App* sub, const json& f, ScoreOpts& o) {
  resolve_common(sub, f, o.common);
  cfg_absent(sub, "--ckpt", f, "ckpt", o.ckpt);
  cfg_absent(sub, "--input", f, "input", o.input);
  cfg_absent(sub, "--text", f, "text", o.text);
  cfg_absent(sub, "--mode", f, "mode", o.mode);
  cfg_absent(sub, "--batch", f, "batch", o.batch);
}

json score_json(const ScoreOpts& o, const std::string& command) {
  json j = common_json(o.common, command);
  j["ckpt"] = o.ckpt;
  j["input"] = o.input;
  j["text"] = o.text;
  j["mode"] = o.mode;
  j["batch"] = o.batch;
  return j;
}

int cmd_score(const ScoreOpts& o) {
  require(o.ckpt, "--ckpt");
  if (o.input.empty() && o.text.empty())
    throw ConfigError("missing required option --input or --text");
  fs::path out = prepare_out_dir(o.common.out);
  auto [model, vocab] = load_checkpoint(o.ckpt);
  Pool pool = o.common.make_pool();
  auto scorer = make_scorer(model, vocab, o.mode, o.batch, &pool);

  json result;
  result["mode"] = o.mode;
  if (!o.text.empty()) {
    result["sentences"] =
        json::array({report_json(scorer->score_text(o.text))});
  } else {
    std::vector<std::string> kept;
    for (auto& l : load_lines(o.input))
      if (l.find_first_not_of(" \t\r") != std::string::npos)
        kept.push_back(l);
    if (kept.empty()) throw DomainError("score: input file has no sentences");
    std::vector<ScoreReport> reports(kept.size());
    pool.parallel_for(kept.size(), [&](std::size_t i) {
      reports[i] = scorer->score_text(kept[i]);
    });
    double total = 0.0;
    result["sentences"] = json::array();
    for (const auto& r : reports) {
      total += r.total;
      result["sentences"].push_back(report_json(r));
    }
    result["total"] = total;
  }
  write_file(out / "score.json", result.dump(2) + "\n");
  write_snapshot(out, score_json(o, "score"));
  std::cout << result["sentences"].size() << " sentence(s) scored\n";
  return 0;
}

// ---------------------------------------------------------------- ppl

struct PplOpts {
  ScoreOpts score;
  std::string norm = "tokens";
};

int cmd_ppl(const PplOpts& o) {
  require(o.score.ckpt, "--ckpt");
  require(o.score.input, "--input");
  if (o.norm != "tokens" && o.norm != "words")
    throw ConfigError("--norm must be tokens or words");
  fs::path out = prepare_out_dir(o.score.common.out);
  auto [model, vocab] = load_checkpoint(o.score.ckpt);
  Pool pool = o.score.common.make_pool();
  auto scorer = make_scorer(model, vocab, o.score.mode, o.score.batch, &pool);
  Corpus corpus = make_corpus(vocab, load_lines(o.score.input),
                              scorer->framing(), scorer->lowercase());
  if (corpus.sentences.empty())
    throw ConfigError("ppl: input file has no sentences");
  Normalization norm =
      o.norm == "words" ? Normalization::Words : Normalization::Tokens;
  CorpusReport report = pppl(*scorer, corpus, norm, &pool);
  json j;
  j["pppl"] = report.pppl();
  j["pppl_token"] = report.pppl_token;
  j["pppl_word"] = report.pppl_word;
  j["n_tok"] = report.n_tok;
  j["n_word"] = report.n_word;
  j["sentences"] = report.sentences.size();
  j["norm"] = o.norm;
  write_file(out / "ppl.json", j.dump(2) + "\n");
  json snap = score_json(o.score, "ppl");
  snap["norm"] = o.norm;
  write_snapshot(out, snap);
  std::cout << "pppl " << report.pppl() << '\n';
  return 0;
}

// ---------------------------------------------------------------- curve

struct CurveOpts {
  ScoreOpts score;
  int length = 0;  // 0 = no filter
};

int cmd_curve(const CurveOpts& o) {
  require(o.score.ckpt, "--ckpt");
  require(o.score.input, "--input");
  fs::path out = prepare_out_dir(o.score.common.out);
  auto [model, vocab] = load_checkpoint(o.score.ckpt);
  Pool pool = o.score.common.make_pool();
  auto scorer = make_scorer(model, vocab, o.score.mode, o.score.batch, &pool);
  Corpus corpus = make_corpus(vocab, load_lines(o.score.input),
                              scorer->framing(), scorer->lowercase());
  std::optional<int> filter;
  if (o.length > 0) filter = o.length;
  std::vector<CurvePoint> curve =
      positionwise_curve(*scorer, corpus, filter, &pool);
  std::ostringstream csv;
  csv << std::setprecision(10) << "position,mean_ce,count\n";
  for (const auto& p : curve)
    csv << p.position << ',' << p.mean_ce << ',' << p.count << '\n';
  write_file(out / "curve.csv", csv.str());
  json snap = score_json(o.score, "curve");
  snap["length"] = o.length;
  write_snapshot(out, snap);
  std::cout << curve.size() << " position(s)\n";
  return 0;
}

// ---------------------------------------------------------------- rescore

struct RescoreOpts {
  Common common;
  std::string ckpt, lm_ckpt, nbest, mode = "auto", metric = "wer";
  double lambda = 1.0, gamma = 1.0, alpha_f = 0.0, alpha_g = 0.0;
  int batch = 16;
  bool period = false;
};

void add_rescore_flags(CLI::App* sub, RescoreOpts& o) {
  add_common(sub, o.common);
  sub->add_option("--ckpt", o.ckpt, "MLM checkpoint for g");
  sub->add_option("--lm-ckpt", o.lm_ckpt, "causal checkpoint for gamma < 1");
  sub->add_option("--nbest", o.nbest, "n-best JSONL file");
  sub->add_option("--mode", o.mode, "scorer for --ckpt");
  sub->add_option("--metric", o.metric, "wer or bleu");
  sub->add_option("--batch", o.batch);
  sub->add_option("--alpha-f", o.alpha_f);
  sub->add_option("--alpha-g", o.alpha_g);
  sub->add_flag("--append-period", o.period,
                "append \" .\" before g-scoring");
}

void resolve_rescore(CLI::App* sub, const json& f, RescoreOpts& o) {
  resolve_common(sub, f, o.common);
  cfg_absent(sub, "--ckpt", f, "ckpt", o.ckpt);
  cfg_absent(sub, "--lm-ckpt", f, "lm-ckpt", o.lm_ckpt);
  cfg_absent(sub, "--nbest", f, "nbest", o.nbest);
  cfg_absent(sub, "--mode", f, "mode", o.mode);
  cfg_absent(sub, "--metric", f, "metric", o.metric);
  cfg_absent(sub, "--batch", f, "batch", o.batch);
  cfg_absent(sub, "--alpha-f", f, "alpha-f", o.alpha_f);
  cfg_absent(sub, "--alpha-g", f, "alpha-g", o.alpha_g);
  cfg_absent(sub, "--append-period", f, "append-period", o.period);
}

json rescore_json(const RescoreOpts& o, const std::string& command) {
  json j = common_json(o.common, command);
  j["ckpt"] = o.ckpt;
  j["lm-ckpt"] = o.lm_ckpt;
  j["nbest"] = o.nbest;
  j["mode"] = o.mode;
  j["metric"] = o.metric;
  j["lambda"] = o.lambda;
  j["gamma"] = o.gamma;
  j["alpha-f"] = o.alpha_f;
  j["alpha-g"] = o.alpha_g;
  j["batch"] = o.batch;
  j["append-period"] = o.period;
  return j;
}

Metric parse_metric(const std::string& name) {
  if (name == "wer") return Metric::Wer;
  if (name == "bleu") return Metric::Bleu;
  throw ConfigError("--metric must be wer or bleu");
}

struct GSetup {
  std::optional<std::pair<Model, Vocab>> mlm;
  std::optional<std::pair<Model, Vocab>> lm;
  std::unique_ptr<Scorer> mlm_scorer;
  std::unique_ptr<Scorer> lm_scorer;
};

GSetup load_g_scorers(const RescoreOpts& o, const Pool* pool) {
  GSetup s;
  s.mlm.emplace(load_checkpoint(o.ckpt));
  s.mlm_scorer =
      make_scorer(s.mlm->first, s.mlm->second, o.mode, o.batch, pool);
  if (!o.lm_ckpt.empty()) {
    s.lm.emplace(load_checkpoint(o.lm_ckpt));
    s.lm_scorer =
        make_scorer(s.lm->first, s.lm->second, "causal", o.batch, pool);
  }
  return s;
}

int cmd_rescore(const RescoreOpts& o) {
  require(o.ckpt, "--ckpt");
  require(o.nbest, "--nbest");
  Metric metric = parse_metric(o.metric);
  fs::path out = prepare_out_dir(o.common.out);
  Pool pool = o.common.make_pool();
  GSetup s = load_g_scorers(o, &pool);

  std::vector<NBestList> lists = load_nbest(o.nbest);
  double baseline = evaluate_metric(lists, metric);
  GOptions gopts;
  gopts.alpha_g = o.alpha_g;
  gopts.append_period = o.period;
  GCache cache = build_g_cache(lists, s.mlm_scorer.get(), s.lm_scorer.get(),
                               gopts, &pool);
  InterpolationWeights w;
  w.lambda = o.lambda;
  w.gamma = o.gamma;
  w.alpha_f = o.alpha_f;
  w.alpha_g = o.alpha_g;
  rescore_cached(lists, cache, w);
  double rescored = evaluate_metric(lists, metric);
  save_nbest(lists, (out / "rescored.jsonl").string());

  json summary;
  summary["metric"] = o.metric;
  summary["baseline"] = baseline;
  summary["rescored"] = rescored;
  summary["oracle"] = oracle_metric(lists, metric);
  summary["lambda"] = o.lambda;
  summary["gamma"] = o.gamma;
  write_file(out / "rescore_summary.json", summary.dump(2) + "\n");
  write_snapshot(out, rescore_json(o, "rescore"));
  std::cout << o.metric << ' ' << baseline << " -> " << rescored << '\n';
  return 0;
}

// ---------------------------------------------------------------- grid

struct GridOpts {
  RescoreOpts base;
  double lambda_min = 0.0, lambda_max = 2.0, lambda_step = 0.05;
  double gamma_min = 0.0, gamma_max = 1.0, gamma_step = 0.1;
};

void add_grid_flags(CLI::App* sub, GridOpts& o) {
  add_rescore_flags(sub, o.base);
  sub->add_option("--lambda-min", o.lambda_min);
  sub->add_option("--lambda-max", o.lambda_max);
  sub->add_option("--lambda-step", o.lambda_step);
  sub->add_option("--gamma-min", o.gamma_min);
  sub->add_option("--gamma-max", o.gamma_max);
  sub->add_option("--gamma-step", o.gamma_step);
}

void resolve_grid(CLI::App* sub, const json& f, GridOpts& o) {
  resolve_rescore(sub, f, o.base);
  cfg_absent(sub, "--lambda-min", f, "lambda-min", o.lambda_min);
  cfg_absent(sub, "--lambda-max", f, "lambda-max", o.lambda_max);
  cfg_absent(sub, "--lambda-step", f, "lambda-step", o.lambda_step);
  cfg_absent(sub, "--gamma-min", f, "gamma-min", o.gamma_min);
  cfg_absent(sub, "--gamma-max", f, "gamma-max", o.gamma_max);
  cfg_absent(sub, "--gamma-step", f, "gamma-step", o.gamma_step);
}

int cmd_grid(const GridOpts& o) {
  require(o.base.ckpt, "--ckpt");
  require(o.base.nbest, "--nbest");
  Metric metric = parse_metric(o.base.metric);
  fs::path out = prepare_out_dir(o.base.common.out);
  Pool pool = o.base.common.make_pool();
  GSetup s = load_g_scorers(o.base, &pool);

  std::vector<NBestList> lists = load_nbest(o.base.nbest);
  double gamma_lo = o.gamma_min, gamma_hi = o.gamma_max;
  if (o.base.lm_ckpt.empty() && gamma_lo < 1.0) {
    // gamma < 1 needs a causal LM; without one only the pure-PLL column
    // is searchable.
    gamma_lo = 1.0;
    gamma_hi = 1.0;
    std::cout << "no --lm-ckpt given; fixing gamma = 1\n";
  }
  GOptions gopts;
  gopts.alpha_g = o.base.alpha_g;
  gopts.append_period = o.base.period;
  GCache cache = build_g_cache(lists, s.mlm_scorer.get(), s.lm_scorer.get(),
                               gopts, &pool);
  GridSearchResult result =
      grid_search(lists, cache, metric,
                  grid_range(o.lambda_min, o.lambda_max, o.lambda_step),
                  grid_range(gamma_lo, gamma_hi, o.gamma_step),
                  o.base.alpha_f, o.base.alpha_g);

  std::ostringstream csv;
  csv << std::setprecision(10) << "lambda,gamma,metric\n";
  for (const auto& p : result.table)
    csv << p.lambda << ',' << p.gamma << ',' << p.metric << '\n';
  write_file(out / "grid.csv", csv.str());
  json best;
  best["lambda"] = result.best.lambda;
  best["gamma"] = result.best.gamma;
  best["metric"] = result.dev_metric;
  best["alpha_f"] = result.best.alpha_f;
  best["alpha_g"] = result.best.alpha_g;
  write_file(out / "grid_best.json", best.dump(2) + "\n");
  json snap = rescore_json(o.base, "grid");
  snap["lambda-min"] = o.lambda_min;
  snap["lambda-max"] = o.lambda_max;
  snap["lambda-step"] = o.lambda_step;
  snap["gamma-min"] = o.gamma_min;
  snap["gamma-max"] = o.gamma_max;
  snap["gamma-step"] = o.gamma_step;
  write_snapshot(out, snap);
  std::cout << "best lambda " << result.best.lambda << " gamma "
            << result.best.gamma << ' ' << o.base.metric << ' '
            << result.dev_metric << '\n';
  return 0;
}

// ---------------------------------------------------------------- judge

struct JudgeOpts {
  ScoreOpts score;
  std::string pairs;
  double alpha = 0.0;
};

int cmd_judge(const JudgeOpts& o) {
  require(o.score.ckpt, "--ckpt");
  require(o.pairs, "--pairs");
  fs::path out = prepare_out_dir(o.score.common.out);
  auto [model, vocab] = load_checkpoint(o.score.ckpt);
  Pool pool = o.score.common.make_pool();
  auto scorer = make_scorer(model, vocab, o.score.mode, o.score.batch, &pool);
  std::vector<MinimalPair> pairs = load_pairs(o.pairs);
  if (pairs.empty()) throw ConfigError("judge: pairs file is empty");
  JudgeOptions jopts;
  jopts.alpha = o.alpha;
  JudgmentReport report = evaluate(*scorer, pairs, jopts, &pool);
  write_file(out / "judgment.json", report_to_json_string(report) + "\n");
  json snap = score_json(o.score, "judge");
  snap["pairs"] = o.pairs;
  snap["alpha"] = o.alpha;
  write_snapshot(out, snap);
  std::cout << "accuracy " << report.overall << " ratio " << report.ratio
            << '\n';
  return 0;
}

// ---------------------------------------------------------------- adapt

struct AdaptOpts {
  Common common;
  std::string ckpt, corpus, dev, out_ckpt = "adapted.ckpt";
  long steps = 500;
  int batch = 16;
  double lr = 5e-4, warmup = 0.01, mask_rate = 0.15;
  int patience = 3;
  long eval_interval = 100;
};

void add_adapt_flags(CLI::App* sub, AdaptOpts& o) {
  add_common(sub, o.common);
  sub->add_option("--ckpt", o.ckpt, "input MLM checkpoint");
  sub->add_option("--corpus", o.corpus, "target-domain training text");
  sub->add_option("--dev", o.dev, "target-domain dev text");
  sub->add_option("--out-ckpt", o.out_ckpt);
  sub->add_option("--steps", o.steps);
  sub->add_option("--batch", o.batch);
  sub->add_option("--lr", o.lr);
  sub->add_option("--warmup", o.warmup);
  sub->add_option("--mask-rate", o.mask_rate);
  sub->add_option("--patience", o.patience);
  sub->add_option("--eval-interval", o.eval_interval);
}

void resolve_adapt(CLI::App* sub, const json& f, AdaptOpts& o) {
  resolve_common(sub, f, o.common);
  cfg_absent(sub, "--ckpt", f, "ckpt", o.ckpt);
  cfg_absent(sub, "--corpus", f, "corpus", o.corpus);
  cfg_absent(sub, "--dev", f, "dev", o.dev);
  cfg_absent(sub, "--out-ckpt", f, "out-ckpt", o.out_ckpt);
  cfg_absent(sub, "--steps", f, "steps", o.steps);
  cfg_absent(sub, "--batch", f, "batch", o.batch);
  cfg_absent(sub, "--lr", f, "lr", o.lr);
  cfg_absent(sub, "--warmup", f, "warmup", o.warmup);
  cfg_absent(sub, "--mask-rate", f, "mask-rate", o.mask_rate);
  cfg_absent(sub, "--patience", f, "patience", o.patience);
  cfg_absent(sub, "--eval-interval", f, "eval-interval", o.eval_interval);
}

int cmd_adapt(const AdaptOpts& o) {
  require(o.ckpt, "--ckpt");
  require(o.corpus, "--corpus");
  require(o.dev, "--dev");
  fs::path out = prepare_out_dir(o.common.out);
  auto [model, vocab] = load_checkpoint(o.ckpt);
  if (model.config().causal)
    throw ConfigError("adapt: checkpoint must hold an MLM");
  Corpus corpus = make_corpus(vocab, load_lines(o.corpus), Framing::Mlm,
                              model.config().lowercase);
  Corpus dev = make_corpus(vocab, load_lines(o.dev), Framing::Mlm,
                           model.config().lowercase);
  if (corpus.sentences.empty() || dev.sentences.empty())
    throw ConfigError("adapt: corpus and dev must be non-empty");

  TrainSchedule schedule;
  schedule.steps = o.steps;
  schedule.batch_size = o.batch;
  schedule.lr = o.lr;
  schedule.warmup_ratio = o.warmup;
  schedule.mask_rate = o.mask_rate;
  schedule.seed = o.common.seed;
  schedule.patience = o.patience;
  schedule.eval_interval = o.eval_interval;

  std::ostringstream log;
  log << std::setprecision(10);
  double first = 0.0, best = 0.0;
  bool any = false;
  auto logger = [&](long step, double dev_pppl) {
    log << step << '\t' << dev_pppl << '\n';
    if (!any) {
      first = dev_pppl;
      best = dev_pppl;
      any = true;
    }
    best = std::min(best, dev_pppl);
  };
  Model adapted = adapt(model, corpus, dev, schedule, logger);
  save_checkpoint(adapted, vocab, (out / o.out_ckpt).string());
  write_file(out / "adapt_log.txt", log.str());

  json summary;
  summary["first_dev_pppl"] = first;
  summary["best_dev_pppl"] = best;
  write_file(out / "adapt_summary.json", summary.dump(2) + "\n");
  json snap = common_json(o.common, "adapt");
  snap["ckpt"] = o.ckpt;
  snap["corpus"] = o.corpus;
  snap["dev"] = o.dev;
  snap["out-ckpt"] = o.out_ckpt;
  snap["steps"] = o.steps;
  snap["batch"] = o.batch;
  snap["lr"] = o.lr;
  snap["warmup"] = o.warmup;
  snap["mask-rate"] = o.mask_rate;
  snap["patience"] = o.patience;
  snap["eval-interval"] = o.eval_interval;
  write_snapshot(out, snap);
  std::cout << "dev pppl " << first << " -> " << best << '\n';
  return 0;
}

// ---------------------------------------------------------------- distill

struct DistillOpts {
  Common common;
  std::string ckpt, corpus, out_ckpt = "distilled.ckpt";
  long steps = 500;
  int batch = 16;
  double lr = 5e-4, warmup = 0.01;
  int pll_batch = 16;
};

void add_distill_flags(CLI::App* sub, DistillOpts& o) {
  add_common(sub, o.common);
  sub->add_option("--ckpt", o.ckpt, "teacher MLM checkpoint");
  sub->add_option("--corpus", o.corpus, "distillation text");
  sub->add_option("--out-ckpt", o.out_ckpt);
  sub->add_option("--steps", o.steps);
  sub->add_option("--batch", o.batch);
  sub->add_option("--lr", o.lr);
  sub->add_option("--warmup", o.warmup);
  sub->add_option("--pll-batch", o.pll_batch);
}

void resolve_distill(CLI::App* sub, const json& f, DistillOpts& o) {
  resolve_common(sub, f, o.common);
  cfg_absent(sub, "--ckpt", f, "ckpt", o.ckpt);
  cfg_absent(sub, "--corpus", f, "corpus", o.corpus);
  cfg_absent(sub, "--out-ckpt", f, "out-ckpt", o.out_ckpt);
  cfg_absent(sub, "--steps", f, "steps", o.steps);
  cfg_absent(sub, "--batch", f, "batch", o.batch);
  cfg_absent(sub, "--lr", f, "lr", o.lr);
  cfg_absent(sub, "--warmup", f, "warmup", o.warmup);
  cfg_absent(sub, "--pll-batch", f, "pll-batch", o.pll_batch);
}

int cmd_distill(const DistillOpts& o) {
  require(o.ckpt, "--ckpt");
  require(o.corpus, "--corpus");
  fs::path out = prepare_out_dir(o.common.out);
  auto [model, vocab] = load_checkpoint(o.ckpt);
  if (model.config().causal)
    throw ConfigError("distill: checkpoint must hold an MLM");
  Corpus corpus = make_corpus(vocab, load_lines(o.corpus), Framing::Mlm,
                              model.config().lowercase);
  if (corpus.sentences.empty())
    throw ConfigError("distill: corpus has no sentences");
  Pool pool = o.common.make_pool();

  // Teacher targets: true PLLs of the training sentences.
  std::vector<std::pair<Sentence, double>> labeled(corpus.sentences.size());
  pool.parallel_for(corpus.sentences.size(), [&](std::size_t i) {
    const Sentence& s = corpus.sentences[i];
    labeled[i] = {s, pll(model, s, o.pll_batch).total};
  });

  TrainSchedule schedule;
  schedule.steps = o.steps;
  schedule.batch_size = o.batch;
  schedule.lr = o.lr;
  schedule.warmup_ratio = o.warmup;
  schedule.seed = o.common.seed;

  std::ostringstream log;
  log << std::setprecision(10);
  auto logger = [&](long step, double loss) {
    log << step << '\t' << loss << '\n';
  };
  Model student = train_regressor(model, labeled, schedule, logger);
  save_checkpoint(student, vocab, (out / o.out_ckpt).string());
  write_file(out / "distill_log.txt", log.str());
  json snap = common_json(o.common, "distill");
  snap["ckpt"] = o.ckpt;
  snap["corpus"] = o.corpus;
  snap["out-ckpt"] = o.out_ckpt;
  snap["steps"] = o.steps;
  snap["batch"] = o.batch;
  snap["lr"] = o.lr;
  snap["warmup"] = o.warmup;
  snap["pll-batch"] = o.pll_batch;
  write_snapshot(out, snap);
  std::cout << "wrote " << (out / o.out_ckpt).string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- gen-pairs

struct GenPairsOpts {
  Common common;
  int count = 200;
  int train_count = 0;
};

int cmd_gen_pairs(const GenPairsOpts& o) {
  fs::path out = prepare_out_dir(o.common.out);
  GrammarSpec spec;
  if (o.train_count > 0) {
    GrammarSplit split =
        generate_split(spec, o.train_count, o.count, o.common.seed);
    save_pairs(split.pairs, (out / "pairs.jsonl").string());
    std::ostringstream text;
    for (const auto& line : split.train) text << line << '\n';
    write_file(out / "train.txt", text.str());
  } else {
    save_pairs(generate_pairs(spec, o.count, o.common.seed),
               (out / "pairs.jsonl").string());
  }
  json snap = common_json(o.common, "gen-pairs");
  snap["count"] = o.count;
  snap["train-count"] = o.train_count;
  write_snapshot(out, snap);
  std::cout << o.count << " pair(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked and causal LM sentence scoring toolkit"};
  app.require_subcommand(1);

  TrainOpts train_o;
  ScoreOpts score_o;
  PplOpts ppl_o;
  CurveOpts curve_o;
  RescoreOpts rescore_o;
  GridOpts grid_o;
  JudgeOpts judge_o;
  AdaptOpts adapt_o;
  DistillOpts distill_o;
  GenPairsOpts gen_o;

  auto* train_cmd = app.add_subcommand("train", "train an MLM or causal LM");
  add_train_flags(train_cmd, train_o);

  auto* score_cmd = app.add_subcommand("score", "score sentences");
  add_score_flags(score_cmd, score_o);

  auto* ppl_cmd = app.add_subcommand("ppl", "corpus pseudo-perplexity");
  add_score_flags(ppl_cmd, ppl_o.score);
  ppl_cmd->add_option("--norm", ppl_o.norm, "tokens or words");

  auto* curve_cmd = app.add_subcommand("curve", "positionwise cross-entropy");
  add_score_flags(curve_cmd, curve_o.score);
  curve_cmd->add_option("--length", curve_o.length,
                        "keep only sentences of this token length");

  auto* rescore_cmd = app.add_subcommand("rescore", "rescore an n-best file");
  add_rescore_flags(rescore_cmd, rescore_o);
  rescore_cmd->add_option("--lambda", rescore_o.lambda);
  rescore_cmd->add_option("--gamma", rescore_o.gamma);

  auto* grid_cmd = app.add_subcommand("grid", "grid-search lambda and gamma");
  add_grid_flags(grid_cmd, grid_o);

  auto* judge_cmd = app.add_subcommand("judge", "forced-choice minimal pairs");
  add_score_flags(judge_cmd, judge_o.score);
  judge_cmd->add_option("--pairs", judge_o.pairs, "pairs JSONL file");
  judge_cmd->add_option("--alpha", judge_o.alpha, "length-penalty exponent");

  auto* adapt_cmd = app.add_subcommand("adapt", "domain-adapt an MLM");
  add_adapt_flags(adapt_cmd, adapt_o);

  auto* distill_cmd =
      app.add_subcommand("distill", "train the maskless regression head");
  add_distill_flags(distill_cmd, distill_o);

  auto* gen_cmd =
      app.add_subcommand("gen-pairs", "generate synthetic minimal pairs");
  add_common(gen_cmd, gen_o.common);
  gen_cmd->add_option("--count", gen_o.count, "number of pairs");
  gen_cmd->add_option("--train-count", gen_o.train_count,
                      "also emit a disjoint training corpus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    std::string config_path;
    if (sub->count("--config"))
      config_path = sub->get_option("--config")->as<std::string>();
    json file = config_path.empty() ? json::object()
                                    : load_config_file(config_path);
    if (!file.is_object())
      throw ConfigError("config file must hold a JSON object");

    if (sub == train_cmd) {
      resolve_train(train_cmd, file, train_o);
      return cmd_train(train_o);
    }
    if (sub == score_cmd) {
      resolve_score(score_cmd, file, score_o);
      return cmd_score(score_o);
    }
    if (sub == ppl_cmd) {
      resolve_score(ppl_cmd, file, ppl_o.score);
      cfg_absent(ppl_cmd, "--norm", file, "norm", ppl_o.norm);
      return cmd_ppl(ppl_o);
    }
    if (sub == curve_cmd) {
      resolve_score(curve_cmd, file, curve_o.score);
      cfg_absent(curve_cmd, "--length", file, "length", curve_o.length);
      return cmd_curve(curve_o);
    }
    if (sub == rescore_cmd) {
      resolve_rescore(rescore_cmd, file, rescore_o);
      cfg_absent(rescore_cmd, "--lambda", file, "lambda", rescore_o.lambda);
      cfg_absent(rescore_cmd, "--gamma", file, "gamma", rescore_o.gamma);
      return cmd_rescore(rescore_o);
    }
    if (sub == grid_cmd) {
      resolve_grid(grid_cmd, file, grid_o);
      return cmd_grid(grid_o);
    }
    if (sub == judge_cmd) {
      resolve_score(judge_cmd, file, judge_o.score);
      cfg_absent(judge_cmd, "--pairs", file, "pairs", judge_o.pairs);
      cfg_absent(judge_cmd, "--alpha", file, "alpha", judge_o.alpha);
      return cmd_judge(judge_o);
    }
    if (sub == adapt_cmd) {
      resolve_adapt(adapt_cmd, file, adapt_o);
      return cmd_adapt(adapt_o);
    }
    if (sub == distill_cmd) {
      resolve_distill(distill_cmd, file, distill_o);
      return cmd_distill(distill_o);
    }
    if (sub == gen_cmd) {
      resolve_common(gen_cmd, file, gen_o.common);
      cfg_absent(gen_cmd, "--count", file, "count", gen_o.count);
      cfg_absent(gen_cmd, "--train-count", file, "train-count",
                 gen_o.train_count);
      return cmd_gen_pairs(gen_o);
    }
    throw ConfigError("no subcommand given");
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
