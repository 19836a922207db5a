// c2f: data generation, training, evaluation, single-example answering,
// throughput benchmarking and dataset statistics.
#include "c2f/benchmark.hpp"
#include "c2f/checkpoint.hpp"
#include "c2f/config.hpp"
#include "c2f/evaluation.hpp"
#include "c2f/synthetic.hpp"
#include "c2f/text.hpp"
#include "c2f/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

/// Flags shared by every subcommand that builds a RunConfig.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  void add(CLI::App* cmd) {
    cmd->add_option("--config", file, "Config file (JSON object or key=value lines)");
    cmd->add_option("--set", sets, "Override one key, e.g. --set model.hidden=64")->take_all();
  }
};

/// file < environment < flags.
c2f::RunConfig merged_config(const ConfigFlags& flags, const std::vector<std::pair<std::string, std::string>>& extra,
                             const c2f::RunConfig* base = nullptr) {
  c2f::RunConfig cfg = base != nullptr ? *base : c2f::RunConfig{};
  if (!flags.file.empty()) cfg.merge_file(flags.file);
  cfg.merge_environment();
  for (const auto& [k, v] : extra) cfg.set_string(k, v);
  for (const auto& s : flags.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw c2f::ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set_string(s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void write_lines(const std::vector<c2f::SyntheticExample>& data, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw c2f::DataError("cannot write " + path.string());
  for (const auto& ex : data) out << c2f::synthetic_to_json_line(ex) << '\n';
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  c2f::GeneratorConfig gen;
  std::string out_dir = "data";
  std::string positions = "uniform";
};

int run_gen(GenArgs& a) {
  a.gen.positions = c2f::parse_position_distribution(a.positions);
  a.gen.validate();
  auto splits = c2f::split_corpus(c2f::generate_corpus(a.gen));
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  write_lines(splits.train, dir / "train.jsonl");
  write_lines(splits.dev, dir / "dev.jsonl");
  write_lines(splits.test, dir / "test.jsonl");
  const json gen = a.gen.to_json();
  const json meta = {{"generator", gen},
                     {"config_hash", c2f::hex64(c2f::fnv1a(gen.dump()))},
                     {"train", splits.train.size()},
                     {"dev", splits.dev.size()},
                     {"test", splits.test.size()}};
  std::ofstream(dir / "generator.json") << meta.dump(2) << '\n';
  std::cout << meta.dump() << '\n';
  return 0;
}

struct TrainArgs {
  ConfigFlags config;
  std::string train_path, dev_path, out_dir = "run";
  std::optional<std::string> method, selector;
  std::optional<int> k, epochs;
  std::optional<double> decay;
  std::optional<std::uint64_t> seed;
  bool title_append = false;
  bool quiet = false;
};

int run_train(TrainArgs& a) {
  std::vector<std::pair<std::string, std::string>> extra;
  if (a.method) {
    extra.emplace_back("train.method", *a.method);
    extra.emplace_back("summary.mode", *a.method == "soft" ? "soft" : "hard");
  }
  if (a.selector) extra.emplace_back("selector.kind", *a.selector);
  if (a.k) extra.emplace_back("summary.k", std::to_string(*a.k));
  if (a.epochs) extra.emplace_back("train.epochs", std::to_string(*a.epochs));
  if (a.decay) extra.emplace_back("train.decay", std::to_string(*a.decay));
  if (a.seed) extra.emplace_back("train.seed", std::to_string(*a.seed));
  if (a.title_append) extra.emplace_back("limits.title_append", "true");
  const c2f::RunConfig cfg = merged_config(a.config, extra);

  c2f::TrainingData data{c2f::read_jsonl(a.train_path), c2f::read_jsonl(a.dev_path)};
  c2f::TrainingOptions opts;
  opts.out_dir = a.out_dir;
  if (!a.quiet) opts.log = [](const std::string& s) { std::cerr << s << '\n'; };
  const auto result = c2f::run_training(data, cfg, opts);
  std::cout << json{{"out_dir", a.out_dir},
                    {"config_hash", cfg.hash_hex()},
                    {"best_epoch", result.best_epoch},
                    {"best_dev_answer_acc", result.best_dev_answer_acc},
                    {"final_dev_answer_acc", result.final_dev_answer_acc}}
                   .dump()
            << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint, split, baseline = "none", out;
  bool predictions = false;
};

int run_evaluate(EvalArgs& a) {
  auto ck = c2f::load_checkpoint(a.checkpoint);
  const c2f::Baseline kind = c2f::parse_eval_baseline(a.baseline);
  const auto raw = c2f::read_jsonl(a.split);
  const bool flat_model = ck.config.method == c2f::Method::base;
  if ((kind == c2f::Baseline::base) != flat_model) {
    throw UsageError(flat_model ? "a base-reader checkpoint is evaluated with --baseline base"
                                : "--baseline base needs a checkpoint trained with --method base");
  }
  const auto report = c2f::run_baseline(kind, ck.model, raw, ck.vocab, ck.config);
  json j = report.to_json();
  j["config_hash"] = ck.config.hash_hex();
  j["vocab_hash"] = c2f::hex64(ck.vocab.hash());
  j["split"] = a.split;
  if (a.predictions) {
    json preds = json::array();
    for (const auto& p : report.predictions) {
      preds.push_back({{"sentence", p.sentence}, {"probability", p.probability}, {"answer", p.answer.surface}});
    }
    j["predictions"] = preds;
  }
  if (!a.out.empty()) std::ofstream(a.out) << j.dump(2) << '\n';
  std::cout << j.dump() << '\n';
  return 0;
}

struct AnswerArgs {
  std::string checkpoint, query, document, answer = "?";
};

int run_answer(AnswerArgs& a) {
  auto ck = c2f::load_checkpoint(a.checkpoint);
  c2f::RawExample raw;
  if (!a.query.empty()) {
    raw.query = a.query;
    raw.document = c2f::split_sentences(a.document);
    raw.answer = a.answer;
  } else {
    std::string line;
    while (std::getline(std::cin, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
    }
    if (line.empty()) throw c2f::DataError("answer: no example on stdin");
    raw = c2f::parse_example_line(line, 1);
  }
  json out;
  if (ck.config.method == c2f::Method::base) {
    const auto ex = c2f::prepare_flat(raw, ck.vocab, ck.config.base_tokens);
    const auto p = c2f::predict_flat(ck.model, ex, ck.vocab, ck.config);
    out = {{"sentence", nullptr}, {"probability", nullptr}, {"answer", p.answer.surface}};
  } else {
    const auto ex = c2f::prepare_example(raw, ck.vocab, ck.config.prepare_config());
    const auto p = c2f::predict(ck.model, ex, ck.vocab, ck.config);
    out = {{"sentence", p.sentence}, {"probability", p.probability}, {"answer", p.answer.surface}};
  }
  std::cout << out.dump() << '\n';
  return 0;
}

struct BenchArgs {
  ConfigFlags config;
  std::string checkpoint, batch_sizes = "1,16,64", ks = "1,2", out;
  int docs = 64;
  std::uint64_t seed = 7;
  std::optional<int> repetitions;
};

int run_benchmark(BenchArgs& a) {
  std::vector<std::pair<std::string, std::string>> extra;
  if (a.repetitions) extra.emplace_back("bench.repetitions", std::to_string(*a.repetitions));
  const auto docs = c2f::benchmark_documents(a.docs, a.seed);
  c2f::BenchOptions opts;
  opts.batch_sizes = parse_int_list(a.batch_sizes);
  opts.ks = parse_int_list(a.ks);

  std::optional<c2f::Checkpoint> ck;
  c2f::RunConfig cfg;
  c2f::Vocabulary vocab;
  c2f::Model model;
  if (!a.checkpoint.empty()) {
    ck = c2f::load_checkpoint(a.checkpoint);
    cfg = merged_config(a.config, extra, &ck->config);
    ck->config = cfg;
    vocab = ck->vocab;
    model = std::move(ck->model);
  } else {
    cfg = merged_config(a.config, extra);
    vocab = c2f::build_vocab(docs, cfg.vocab_size, cfg.placeholders, cfg.min_count);
    model = c2f::Model::create(c2f::ModelShape::from(cfg, vocab.size()), cfg.seed, cfg.init_scale);
  }
  opts.repetitions = cfg.repetitions;
  const auto rows = c2f::benchmark_encoding(model, docs, vocab, cfg, opts);
  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw c2f::DataError("cannot write " + a.out);
    c2f::write_bench_csv(out, rows);
    std::ofstream(a.out + ".json") << json{{"config", cfg.to_json()}, {"config_hash", cfg.hash_hex()},
                                           {"documents", a.docs}, {"seed", a.seed}}
                                          .dump(2)
                                   << '\n';
  }
  c2f::write_bench_csv(std::cout, rows);
  return 0;
}

struct StatsArgs {
  ConfigFlags config;
  std::vector<std::string> data;
  bool title_append = false;
};

int run_stats(StatsArgs& a) {
  std::vector<std::pair<std::string, std::string>> extra;
  if (a.title_append) extra.emplace_back("limits.title_append", "true");
  const c2f::RunConfig cfg = merged_config(a.config, extra);
  std::vector<c2f::RawExample> all;
  json per_file = json::object();
  std::vector<std::vector<c2f::RawExample>> files;
  for (const auto& path : a.data) {
    files.push_back(c2f::read_jsonl(path));
    all.insert(all.end(), files.back().begin(), files.back().end());
  }
  const auto vocab = c2f::build_vocab(files.front(), cfg.vocab_size, cfg.placeholders, cfg.min_count);
  for (std::size_t i = 0; i < files.size(); ++i) {
    per_file[a.data[i]] = c2f::dataset_stats(files[i], vocab, cfg.prepare_config()).to_json();
  }
  json out = {{"files", per_file},
              {"config_hash", cfg.hash_hex()},
              {"vocab_source", a.data.front()},
              {"vocab_size", vocab.size()}};
  if (files.size() > 1) out["all"] = c2f::dataset_stats(all, vocab, cfg.prepare_config()).to_json();
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coarse-to-fine question answering over long documents"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic train/dev/test corpus");
  g->add_option("--n", gen.gen.examples, "Number of examples")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.gen.seed, "Generator seed");
  g->add_option("--out-dir", gen.out_dir, "Output directory");
  g->add_option("--positions", gen.positions, "Evidence position distribution")
      ->check(CLI::IsMember({"first-heavy", "uniform", "tail-heavy"}));
  g->add_option("--min-sentences", gen.gen.min_sentences);
  g->add_option("--max-sentences", gen.gen.max_sentences);
  g->add_option("--distractor-rate", gen.gen.distractor_rate);
  g->add_option("--missing-evidence-rate", gen.gen.missing_evidence_rate);
  g->add_option("--fact-rate", gen.gen.fact_rate);
  g->add_option("--other-entity-rate", gen.gen.other_entity_rate);
  g->add_option("--filler-min-words", gen.gen.filler_min_words);
  g->add_option("--filler-max-words", gen.gen.filler_max_words);
  g->add_flag("--natural", gen.gen.natural, "Question-style queries");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  train.config.add(t);
  t->add_option("--train", train.train_path, "Training JSONL")->required();
  t->add_option("--dev", train.dev_path, "Dev JSONL")->required();
  t->add_option("--out-dir", train.out_dir, "Checkpoints and metrics");
  t->add_option("--method", train.method)->check(CLI::IsMember({"pipeline", "reinforce", "soft", "base"}));
  t->add_option("--selector", train.selector)->check(CLI::IsMember({"bow", "chunk", "cnn"}));
  t->add_option("--k", train.k, "Sentences per hard summary");
  t->add_option("--decay", train.decay, "Curriculum decay r");
  t->add_option("--epochs", train.epochs);
  t->add_option("--seed", train.seed);
  t->add_flag("--title-append", train.title_append, "Append the first 5 document tokens to every sentence");
  t->add_flag("--quiet", train.quiet);

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--split", ev.split, "JSONL file")->required();
  e->add_option("--baseline", ev.baseline)->check(CLI::IsMember({"none", "first", "oracle", "base"}));
  e->add_option("--out", ev.out, "Also write the report here");
  e->add_flag("--predictions", ev.predictions, "Include per-example predictions");

  AnswerArgs ans;
  auto* an = app.add_subcommand("answer", "Answer one example (JSONL line on stdin, or flags)");
  an->add_option("--checkpoint", ans.checkpoint)->required();
  an->add_option("--query", ans.query);
  an->add_option("--document", ans.document, "Document text, split on sentence-final punctuation");

  BenchArgs bench;
  auto* b = app.add_subcommand("benchmark", "Document-encoding throughput");
  bench.config.add(b);
  b->add_option("--checkpoint", bench.checkpoint, "Model to time (default: freshly initialized)");
  b->add_option("--batch-sizes", bench.batch_sizes);
  b->add_option("--k", bench.ks);
  b->add_option("--docs", bench.docs)->check(CLI::PositiveNumber);
  b->add_option("--seed", bench.seed, "Document generator seed");
  b->add_option("--repetitions", bench.repetitions);
  b->add_option("--out", bench.out, "CSV output");

  StatsArgs stats;
  auto* s = app.add_subcommand("stats", "Answer-match statistics of JSONL files");
  stats.config.add(s);
  s->add_option("--data", stats.data, "JSONL files; the vocabulary is built on the first")->required();
  s->add_flag("--title-append", stats.title_append);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << "error: usage: " << one_line(err.what()) << '\n' << app.help();
    return 2;
  }

  try {
    if (g->parsed()) return run_gen(gen);
    if (t->parsed()) return run_train(train);
    if (e->parsed()) return run_evaluate(ev);
    if (an->parsed()) return run_answer(ans);
    if (b->parsed()) return run_benchmark(bench);
    if (s->parsed()) return run_stats(stats);
  } catch (const c2f::ConfigError& err) {
    std::cerr << "error: config: " << one_line(err.what()) << '\n' << app.help();
    return 2;
  } catch (const UsageError& err) {
    std::cerr << "error: usage: " << one_line(err.what()) << '\n';
    return 2;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: invalid: " << one_line(err.what()) << '\n';
    return 2;
  } catch (const c2f::DataError& err) {
    std::cerr << "error: data: " << one_line(err.what()) << '\n';
    return 1;
  } catch (const c2f::CheckpointError& err) {
    std::cerr << "error: checkpoint: " << one_line(err.what()) << '\n';
    return 1;
  } catch (const c2f::BenchmarkError& err) {
    std::cerr << "error: benchmark: " << one_line(err.what()) << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: runtime: " << one_line(err.what()) << '\n';
    return 1;
  }
  return 2;
}
