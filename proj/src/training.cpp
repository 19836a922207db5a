#include "c2f/training.hpp"

#include "c2f/answer.hpp"
#include "c2f/checkpoint.hpp"
#include "c2f/summary.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace c2f {

Var pipeline_objective(Bound& b, const PreparedExample& ex, const RunConfig& cfg) {
  if (!ex.gold) throw std::invalid_argument("pipeline objective: example has no gold sentence label");
  const int gold = *ex.gold;
  const SelectionDistribution dist = score_sentences(b, ex);
  const HardSummary s = assemble_hard_summary(ex, {gold});
  Var answer = decode_loglik(b, encode_hard(b, ex.query, s.tokens, cfg.process_pads), ex.answer);
  return ad::add(ad::pick(dist.log_probs, gold), answer);
}

ReinforceTerms reinforce_terms(Bound& b, const PreparedExample& ex, const RunConfig& cfg,
                               const SelectionDistribution& dist, std::vector<int> sampled) {
  if (sampled.empty()) throw std::invalid_argument("reinforce: empty sample");
  const HardSummary s = assemble_hard_summary(ex, sampled);
  ReinforceTerms t;
  t.reward = decode_loglik(b, encode_hard(b, ex.query, s.tokens, cfg.process_pads), ex.answer);

  // log P(i_1, ..., i_K) = sum_k [log p_{i_k} - log sum_{j not yet drawn} p_j]
  std::vector<char> drawn(static_cast<std::size_t>(dist.size()), 0);
  Var lp = ad::pick(dist.log_probs, sampled.front());
  drawn[static_cast<std::size_t>(sampled.front())] = 1;
  for (std::size_t k = 1; k < sampled.size(); ++k) {
    std::vector<Eigen::Index> remaining;
    for (int l = 0; l < dist.size(); ++l) {
      if (!drawn[static_cast<std::size_t>(l)]) remaining.push_back(l);
    }
    lp = ad::add(lp, ad::sub(ad::pick(dist.log_probs, sampled[k]), ad::logsumexp_subset(dist.log_probs, remaining)));
    drawn[static_cast<std::size_t>(sampled[k])] = 1;
  }
  t.sample_log_prob = lp;
  t.sampled = std::move(sampled);
  return t;
}

ReinforceTerms reinforce_sample(Bound& b, const PreparedExample& ex, const RunConfig& cfg, Rng& rng) {
  const SelectionDistribution dist = score_sentences(b, ex);
  const auto probs = dist.values();
  return reinforce_terms(b, ex, cfg, dist, sample_without_replacement(probs, cfg.k, rng));
}

Var reinforce_surrogate(const ReinforceTerms& terms, double baseline) {
  const double advantage = terms.reward.scalar() - baseline;
  return ad::add(terms.reward, ad::scale(terms.sample_log_prob, advantage));
}

Var soft_objective(Bound& b, const PreparedExample& ex, const RunConfig&) {
  const SelectionDistribution dist = score_sentences(b, ex);
  Var blended = soft_blend(dist.probs, ex, b.embedding);
  return decode_loglik(b, encode_soft(b, ex.query, blended), ex.answer);
}

Var base_objective(Bound& b, const FlatExample& ex) {
  return decode_loglik(b, encode_flat(b, ex.query, ex.document), ex.answer);
}

// ---------------------------------------------------------------------------

namespace {

ad::AdamConfig adam_config(const RunConfig& cfg) {
  ad::AdamConfig a;
  a.learning_rate = cfg.learning_rate;
  a.clip_norm = cfg.clip_norm;
  return a;
}

constexpr double kBaselineRate = 0.1;

}  // namespace

Trainer::Trainer(Model& model, const RunConfig& cfg)
    : model_(model),
      cfg_(cfg),
      opt_(adam_config(cfg)),
      curriculum_(named_stream(cfg.seed, "curriculum")),
      sampling_(named_stream(cfg.seed, "sampling")) {}

bool Trainer::use_distant(int epoch) {
  const double p = std::pow(cfg_.decay, static_cast<double>(epoch));
  return uniform01(curriculum_) < p;
}

StepReport Trainer::accumulate_method(const PreparedExample& ex, Method method, int epoch, double weight) {
  Tape tape;
  Bound b(tape, model_);
  StepReport r;
  switch (method) {
    case Method::pipeline: {
      Var j = pipeline_objective(b, ex, cfg_);
      r.distant = true;
      r.objective = j.scalar();
      tape.backward(j, -weight);
      break;
    }
    case Method::reinforce: {
      if (use_distant(epoch)) return accumulate_method(ex, Method::pipeline, epoch, weight);
      ReinforceTerms t = reinforce_sample(b, ex, cfg_, sampling_);
      r.reward = t.reward.scalar();
      r.objective = r.reward;
      r.sampled = t.sampled;
      double base = 0;
      if (cfg_.baseline == RewardBaseline::mean) {
        base = baseline_seen_ ? baseline_ : r.reward;
        baseline_ = baseline_seen_ ? (1 - kBaselineRate) * baseline_ + kBaselineRate * r.reward : r.reward;
        baseline_seen_ = true;
      }
      tape.backward(reinforce_surrogate(t, base), -weight);
      break;
    }
    case Method::soft: {
      Var j = soft_objective(b, ex, cfg_);
      r.objective = j.scalar();
      tape.backward(j, -weight);
      break;
    }
    case Method::base:
      throw std::invalid_argument("the base method trains on flat examples");
  }
  return r;
}

StepReport Trainer::accumulate(const PreparedExample& ex, int epoch, double weight) {
  return accumulate_method(ex, cfg_.method, epoch, weight);
}

StepReport Trainer::accumulate(const FlatExample& ex, double weight) {
  Tape tape;
  Bound b(tape, model_);
  Var j = base_objective(b, ex);
  StepReport r;
  r.objective = j.scalar();
  tape.backward(j, -weight);
  return r;
}

StepReport Trainer::finish_step(StepReport r) {
  const ad::StepResult s = opt_.step(model_.params);
  r.grad_norm = s.grad_norm;
  r.skipped = s.skipped;
  return r;
}

StepReport Trainer::pipeline_step(const PreparedExample& ex) {
  model_.params.zero_grad();
  return finish_step(accumulate_method(ex, Method::pipeline, 0, 1.0));
}

StepReport Trainer::reinforce_step(const PreparedExample& ex, int epoch) {
  model_.params.zero_grad();
  return finish_step(accumulate_method(ex, Method::reinforce, epoch, 1.0));
}

StepReport Trainer::soft_step(const PreparedExample& ex) {
  model_.params.zero_grad();
  return finish_step(accumulate_method(ex, Method::soft, 0, 1.0));
}

StepReport Trainer::base_step(const FlatExample& ex) {
  model_.params.zero_grad();
  return finish_step(accumulate(ex, 1.0));
}

BatchReport Trainer::train_batch(std::span<const PreparedExample* const> batch, int epoch) {
  BatchReport r;
  if (batch.empty()) return r;
  model_.params.zero_grad();
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const PreparedExample* ex : batch) {
    const StepReport s = accumulate(*ex, epoch, w);
    ++r.examples;
    r.distant_steps += s.distant ? 1 : 0;
    r.objective_sum += s.objective;
  }
  const ad::StepResult s = opt_.step(model_.params);
  r.grad_norm = s.grad_norm;
  r.skipped = s.skipped;
  return r;
}

BatchReport Trainer::train_batch(std::span<const FlatExample* const> batch) {
  BatchReport r;
  if (batch.empty()) return r;
  model_.params.zero_grad();
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const FlatExample* ex : batch) {
    r.objective_sum += accumulate(*ex, w).objective;
    ++r.examples;
  }
  const ad::StepResult s = opt_.step(model_.params);
  r.grad_norm = s.grad_norm;
  r.skipped = s.skipped;
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void put_optional(std::ostream& out, const std::optional<double>& v) {
  if (!v) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  out << buf;
}

}  // namespace

void write_metrics_header(std::ostream& out) { out << "epoch,split,answer_acc,sent_acc,objective\n"; }

void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << ',' << m.split << ',';
  put_optional(out, m.answer_acc);
  out << ',';
  put_optional(out, m.sent_acc);
  out << ',';
  put_optional(out, m.objective);
  out << '\n';
}

Model clone_model(const Model& model) {
  Model m = Model::zeros(model.shape);
  for (std::size_t i = 0; i < model.params.size(); ++i) m.params[i].value = model.params[i].value;
  return m;
}

TrainingResult run_training(const TrainingData& data, const RunConfig& cfg, const TrainingOptions& opts) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.dev.empty()) throw DataError("dev split is empty");
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  Vocabulary vocab = build_vocab(data.train, cfg.vocab_size, cfg.placeholders, cfg.min_count);
  Model model = Model::create(ModelShape::from(cfg, vocab.size()), cfg.seed, cfg.init_scale);
  const bool flat = cfg.method == Method::base;

  std::vector<PreparedExample> train, dev;
  std::vector<FlatExample> train_flat, dev_flat;
  if (flat) {
    train_flat = prepare_all_flat(data.train, vocab, cfg.base_tokens);
    dev_flat = prepare_all_flat(data.dev, vocab, cfg.base_tokens);
  } else {
    train = prepare_all(data.train, vocab, cfg.prepare_config());
    dev = prepare_all(data.dev, vocab, cfg.prepare_config());
  }
  const std::size_t n = flat ? train_flat.size() : train.size();

  const bool write = !opts.out_dir.empty();
  std::ofstream metrics_out;
  if (write) {
    std::filesystem::create_directories(opts.out_dir);
    nlohmann::json run = {{"config", cfg.to_json()},
                          {"config_hash", cfg.hash_hex()},
                          {"vocab_hash", hex64(vocab.hash())},
                          {"vocab_size", vocab.size()},
                          {"seed", cfg.seed},
                          {"streams", {"init", "shuffle", "curriculum", "sampling"}},
                          {"train_examples", data.train.size()},
                          {"dev_examples", data.dev.size()}};
    std::ofstream(opts.out_dir + "/run.json") << run.dump(2) << '\n';
    metrics_out.open(opts.out_dir + "/metrics.csv", std::ios::trunc);
    if (!metrics_out) throw std::runtime_error("cannot write " + opts.out_dir + "/metrics.csv");
    write_metrics_header(metrics_out);
  }

  TrainingResult result;
  auto evaluate_split = [&](bool on_train) {
    if (flat) return evaluate_flat(model, on_train ? train_flat : dev_flat, vocab, cfg);
    return evaluate(model, on_train ? train : dev, vocab, cfg);
  };
  bool stop = false;
  auto record = [&](const EpochMetrics& m) {
    result.metrics.push_back(m);
    if (opts.stop && opts.stop(m)) stop = true;
    if (write) {
      write_metrics_row(metrics_out, m);
      metrics_out.flush();
    }
  };
  auto checkpoint = [&](int epoch, const EvalReport& dev_report, const char* name) {
    if (!write) return;
    nlohmann::json extra = {{"epoch", epoch}, {"dev", dev_report.to_json()}};
    save_checkpoint(opts.out_dir + "/" + name, model, vocab, cfg, extra);
  };
  auto end_epoch = [&](int epoch, std::optional<double> objective) {
    EpochMetrics tm{epoch, "train", std::nullopt, std::nullopt, objective};
    if (cfg.eval_train) {
      const EvalReport tr = evaluate_split(true);
      tm.answer_acc = tr.answer_accuracy();
      tm.sent_acc = tr.sentences.accuracy();
    }
    record(tm);
    const EvalReport dr = evaluate_split(false);
    record({epoch, "dev", dr.answer_accuracy(), dr.sentences.accuracy(), dr.mean_gold_loglik});
    result.final_dev_answer_acc = dr.answer_accuracy();
    result.final_dev_sent_acc = dr.sentences.accuracy();
    checkpoint(epoch, dr, ("epoch-" + std::to_string(epoch) + ".ckpt").c_str());
    if (epoch == 0 || dr.answer_accuracy() > result.best_dev_answer_acc) {
      result.best_epoch = epoch;
      result.best_dev_answer_acc = dr.answer_accuracy();
      checkpoint(epoch, dr, "best.ckpt");
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d dev answer_acc %.4f sent_acc %s", epoch, dr.answer_accuracy(),
                  dr.sentences.accuracy() ? std::to_string(*dr.sentences.accuracy()).c_str() : "n/a");
    log(buf);
  };

  end_epoch(0, std::nullopt);

  Trainer trainer(model, cfg);
  Rng shuffle = named_stream(cfg.seed, "shuffle");
  std::vector<std::size_t> order(n);
  const auto B = static_cast<std::size_t>(std::max(1, cfg.batch_size));
  for (int epoch = 1; !stop && epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_in_place(order.begin(), order.end(), shuffle);
    double objective = 0;
    long distant = 0;
    for (std::size_t start = 0; start < n; start += B) {
      const std::size_t end = std::min(n, start + B);
      BatchReport r;
      if (flat) {
        std::vector<const FlatExample*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&train_flat[order[i]]);
        r = trainer.train_batch(std::span<const FlatExample* const>(batch));
      } else {
        std::vector<const PreparedExample*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
        r = trainer.train_batch(std::span<const PreparedExample* const>(batch), epoch);
      }
      objective += r.objective_sum;
      distant += r.distant_steps;
      if (r.skipped) log("epoch " + std::to_string(epoch) + ": skipped a non-finite gradient step");
    }
    result.distant_fraction.push_back(static_cast<double>(distant) / static_cast<double>(n));
    end_epoch(epoch, objective / static_cast<double>(n));
  }

  result.vocab = std::move(vocab);
  result.model = std::move(model);
  return result;
}

}  // namespace c2f
