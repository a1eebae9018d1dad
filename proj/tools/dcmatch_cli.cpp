// dcmatch: command-line front end for labeling, data generation, training,
// evaluation, prediction and consistency analysis.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dcmatch/dcmatch.hpp"

namespace fs = std::filesystem;
using namespace dcmatch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Invalid invocation or configuration; mapped to exit code 1.
struct ConfigError : Error {
  using Error::Error;
};

struct RunConfig {
  std::optional<std::string> data, gazetteer, pos_lexicon, vocab, checkpoint, baseline_checkpoint, out;
  std::optional<std::string> text_a, text_b;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kDcMatch;
  int num_classes = 2;
  int min_freq = 1;
  TrainConfig train;
  EncoderConfig encoder;
  synthetic::Config synthetic;
  std::vector<std::string> problems;  // found while reading config and flags; reported with command checks
};

// ---------------------------------------------------------------------------
// Config file

class ConfigReader {
 public:
  explicit ConfigReader(std::vector<std::string>& problems) : problems_(problems) {}

  template <class T>
  void read(const json& obj, const std::string& key, T& target, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
      target = obj.at(key).get<T>();
    } catch (const json::exception&) {
      problems_.push_back(where + key + ": wrong type");
    }
  }

  template <class T>
  void read(const json& obj, const std::string& key, std::optional<T>& target, const std::string& where) {
    if (!obj.contains(key)) return;
    T v{};
    read(obj, key, v, where);
    target = v;
  }

  void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) problems_.push_back("unknown key '" + where + it.key() + "'");
    }
  }

  bool section(const json& obj, const std::string& key) {
    if (!obj.contains(key)) return false;
    if (!obj.at(key).is_object()) {
      problems_.push_back(key + ": must be an object");
      return false;
    }
    return true;
  }

 private:
  std::vector<std::string>& problems_;
};

void apply_config_file(const fs::path& path, RunConfig& rc, std::vector<std::string>& problems) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must contain a JSON object");

  ConfigReader r(problems);
  r.reject_unknown(j, {"data", "gazetteer", "pos_lexicon", "vocab", "checkpoint", "baseline_checkpoint", "out", "seed",
                       "mode", "num_classes", "min_freq", "train", "encoder", "synthetic"},
                   "");
  r.read(j, "data", rc.data, "");
  r.read(j, "gazetteer", rc.gazetteer, "");
  r.read(j, "pos_lexicon", rc.pos_lexicon, "");
  r.read(j, "vocab", rc.vocab, "");
  r.read(j, "checkpoint", rc.checkpoint, "");
  r.read(j, "baseline_checkpoint", rc.baseline_checkpoint, "");
  r.read(j, "out", rc.out, "");
  r.read(j, "seed", rc.seed, "");
  r.read(j, "num_classes", rc.num_classes, "");
  r.read(j, "min_freq", rc.min_freq, "");
  if (j.contains("mode")) {
    std::string m;
    r.read(j, "mode", m, "");
    try {
      rc.mode = parse_train_mode(m);
    } catch (const Error& e) {
      problems.push_back(e.what());
    }
  }

  if (r.section(j, "train")) {
    const auto& t = j.at("train");
    r.reject_unknown(t, {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "batch_size", "max_steps",
                         "eval_interval", "top_k", "threads", "loss_weights"},
                     "train.");
    r.read(t, "learning_rate", rc.train.optimizer.learning_rate, "train.");
    r.read(t, "beta1", rc.train.optimizer.beta1, "train.");
    r.read(t, "beta2", rc.train.optimizer.beta2, "train.");
    r.read(t, "epsilon", rc.train.optimizer.epsilon, "train.");
    r.read(t, "weight_decay", rc.train.optimizer.weight_decay, "train.");
    r.read(t, "batch_size", rc.train.batch_size, "train.");
    r.read(t, "max_steps", rc.train.max_steps, "train.");
    r.read(t, "eval_interval", rc.train.eval_interval, "train.");
    r.read(t, "top_k", rc.train.top_k, "train.");
    r.read(t, "threads", rc.train.threads, "train.");
    if (t.contains("loss_weights")) {
      const auto& w = t.at("loss_weights");
      if (!w.is_object()) {
        problems.push_back("train.loss_weights: must be an object");
      } else {
        r.reject_unknown(w, {"sm", "ds", "dc"}, "train.loss_weights.");
        r.read(w, "sm", rc.train.weights.sm, "train.loss_weights.");
        r.read(w, "ds", rc.train.weights.ds, "train.loss_weights.");
        r.read(w, "dc", rc.train.weights.dc, "train.loss_weights.");
      }
    }
  }
  if (r.section(j, "encoder")) {
    const auto& e = j.at("encoder");
    r.reject_unknown(e, {"hidden", "layers", "heads", "ff", "max_len", "dropout"}, "encoder.");
    r.read(e, "hidden", rc.encoder.hidden, "encoder.");
    r.read(e, "layers", rc.encoder.layers, "encoder.");
    r.read(e, "heads", rc.encoder.heads, "encoder.");
    r.read(e, "ff", rc.encoder.ff, "encoder.");
    r.read(e, "max_len", rc.encoder.max_len, "encoder.");
    r.read(e, "dropout", rc.encoder.dropout, "encoder.");
  }
  if (r.section(j, "synthetic")) {
    const auto& s = j.at("synthetic");
    r.reject_unknown(s, {"train_size", "dev_size", "test_size", "near_miss_rate", "label_mixture"}, "synthetic.");
    r.read(s, "train_size", rc.synthetic.train_size, "synthetic.");
    r.read(s, "dev_size", rc.synthetic.dev_size, "synthetic.");
    r.read(s, "test_size", rc.synthetic.test_size, "synthetic.");
    r.read(s, "near_miss_rate", rc.synthetic.near_miss_rate, "synthetic.");
    r.read(s, "label_mixture", rc.synthetic.label_mixture, "synthetic.");
  }
}

// Runs `check` and records its message instead of stopping at the first failure.
template <class F>
void collect(std::vector<std::string>& problems, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string header = "invalid training config:\n  - ";
    if (msg.rfind(header, 0) == 0) {
      std::size_t pos = header.size();
      for (;;) {
        const auto next = msg.find("\n  - ", pos);
        problems.push_back(msg.substr(pos, next - pos));
        if (next == std::string::npos) break;
        pos = next + 5;
      }
    } else {
      problems.push_back(msg);
    }
  }
}

void require(std::vector<std::string>& problems, const std::optional<std::string>& v, const char* flag) {
  if (!v || v->empty()) problems.push_back(std::string("missing required ") + flag);
}

[[noreturn]] void fail_config(const std::vector<std::string>& problems) {
  std::string msg = "configuration has " + std::to_string(problems.size()) + " problem(s):";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// Shared helpers

PosLexicon load_lexicon(const std::optional<std::string>& path) { return path ? PosLexicon::load(*path) : PosLexicon{}; }

fs::path vocab_path_for(const RunConfig& rc) {
  if (rc.vocab) return *rc.vocab;
  return fs::path(*rc.checkpoint).parent_path() / "vocab.json";
}

struct LoadedModel {
  Checkpoint checkpoint;
  Vocab vocab;
};

LoadedModel load_model(const RunConfig& rc, const std::string& checkpoint) {
  LoadedModel m{load_checkpoint(checkpoint), Vocab::load(vocab_path_for(rc))};
  require_vocab_match(m.checkpoint.params, m.vocab);
  return m;
}

json distribution_json(const MatchDistribution& d) { return json(std::vector<double>(d.probs().begin(), d.probs().end())); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_json_lines(const fs::path& path, const std::vector<json>& rows) {
  io::write_atomically(path, [&](std::ostream& out) {
    for (const auto& r : rows) out << r.dump() << '\n';
  });
}

// ---------------------------------------------------------------------------
// Commands

int cmd_label(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.data, "--data");
  require(problems, rc.gazetteer, "--gazetteer");
  require(problems, rc.out, "--out");
  if (!problems.empty()) fail_config(problems);

  const auto scheme = LabelScheme::with_classes(rc.num_classes);
  const auto gaz = Gazetteer::load(*rc.gazetteer);
  const auto pos = load_lexicon(rc.pos_lexicon);
  if (gaz.empty()) std::cerr << "warning: gazetteer " << *rc.gazetteer << " is empty; no keywords will be tagged\n";
  if (!rc.pos_lexicon) std::cerr << "warning: no POS lexicon given; every token counts as a function word, so no keywords will be tagged\n";
  auto pairs = load_dataset(*rc.data, scheme);
  for (auto& p : pairs) p = attach_keywords(p, gaz, pos);
  save_dataset(*rc.out, pairs);
  std::cout << corpus_stats(pairs, scheme).to_json().dump(2) << '\n';
  return kExitOk;
}

int cmd_stats(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.data, "--data");
  if (!problems.empty()) fail_config(problems);
  const auto scheme = LabelScheme::with_classes(rc.num_classes);
  const auto pairs = load_dataset(*rc.data, scheme);
  const auto text = corpus_stats(pairs, scheme).to_json().dump(2) + "\n";
  if (rc.out) io::write_text_atomically(*rc.out, text);
  std::cout << text;
  return kExitOk;
}

int cmd_generate(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.out, "--out");
  auto cfg = rc.synthetic;
  cfg.num_classes = rc.num_classes;
  cfg.seed = rc.seed;
  collect(problems, [&] { cfg.validate(); });
  if (!problems.empty()) fail_config(problems);

  const fs::path dir = *rc.out;
  ensure_dir(dir);
  const auto corpus = synthetic::generate(cfg);
  save_dataset(dir / "train.jsonl", corpus.train);
  save_dataset(dir / "dev.jsonl", corpus.dev);
  save_dataset(dir / "test.jsonl", corpus.test);
  std::string gaz;
  for (const auto& t : synthetic::World::gazetteer_terms()) gaz += t + "\n";
  io::write_text_atomically(dir / "gazetteer.txt", gaz);
  std::string lex;
  for (const auto& [w, t] : synthetic::World::pos_lexicon()) lex += w + "\t" + t + "\n";
  io::write_text_atomically(dir / "pos_lexicon.tsv", lex);
  std::cout << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
            << " pairs to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.data, "--data");
  require(problems, rc.out, "--out");
  auto tc = rc.train;
  tc.mode = rc.mode;
  tc.seed = rc.seed;
  collect(problems, [&] { tc.validate(); });
  auto ec = rc.encoder;
  ec.seed = rc.seed;
  ec.vocab_size = Vocab::kNumReserved;  // placeholder until the vocabulary exists
  collect(problems, [&] { ec.validate(); });
  if (rc.min_freq < 1) problems.push_back("min_freq must be >= 1");
  if (!problems.empty()) fail_config(problems);

  const auto scheme = LabelScheme::with_classes(rc.num_classes);
  const fs::path data = *rc.data;
  const auto train_set = load_dataset(data / "train.jsonl", scheme);
  const auto dev_set = load_dataset(data / "dev.jsonl", scheme);
  std::vector<SentencePair> test_set;
  if (fs::exists(data / "test.jsonl")) test_set = load_dataset(data / "test.jsonl", scheme);

  const auto vocab = build_vocab(train_set, rc.min_freq);
  ec.vocab_size = vocab.size();
  auto init = init_params(ec, scheme);
  init.vocab_hash = vocab.hash();

  const fs::path out = *rc.out;
  ensure_dir(out);
  std::vector<json> log_rows;
  TrainHooks hooks;
  hooks.on_eval = [&](const TrainLogEntry& e) {
    log_rows.push_back(e.to_json());
    std::cerr << "step " << e.step << "  l_sm " << e.l_sm << "  dev_acc " << e.dev_accuracy << '\n';
  };
  const auto result = train(tc, init, vocab, {train_set, dev_set, test_set}, hooks);

  save_checkpoint(out / "checkpoint.bin", result.best, scheme);
  vocab.save(out / "vocab.json");
  write_json_lines(out / "train_log.jsonl", log_rows);
  json report = {{"mode", to_string(tc.mode)}, {"seed", tc.seed}, {"steps", tc.max_steps}};
  json top = json::array();
  for (const auto& t : result.top) {
    json row = {{"step", t.step}, {"dev", t.dev.to_json()}};
    if (t.test) row["test"] = t.test->to_json();
    top.push_back(row);
  }
  report["top_checkpoints"] = top;
  report["mean_test_accuracy"] = result.mean_test_accuracy ? json(*result.mean_test_accuracy) : json(nullptr);
  report["mean_test_macro_f1"] = result.mean_test_macro_f1 ? json(*result.mean_test_macro_f1) : json(nullptr);
  io::write_text_atomically(out / "report.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.checkpoint, "--checkpoint");
  require(problems, rc.data, "--data");
  if (!problems.empty()) fail_config(problems);
  const auto model = load_model(rc, *rc.checkpoint);
  const auto data = load_dataset(*rc.data, model.checkpoint.scheme);
  const auto text = evaluate(model.checkpoint.params, model.vocab, data).to_json().dump(2) + "\n";
  if (rc.out) io::write_text_atomically(*rc.out, text);
  std::cout << text;
  return kExitOk;
}

int cmd_predict(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.checkpoint, "--checkpoint");
  const bool inline_pair = rc.text_a || rc.text_b;
  if (inline_pair && !(rc.text_a && rc.text_b)) problems.push_back("--text-a and --text-b must be given together");
  if (!inline_pair && !rc.data) problems.push_back("missing required --data (or --text-a/--text-b)");
  if (!problems.empty()) fail_config(problems);

  const auto model = load_model(rc, *rc.checkpoint);
  std::vector<std::pair<std::string, std::string>> inputs;
  if (inline_pair) {
    inputs.emplace_back(*rc.text_a, *rc.text_b);
  } else {
    long lineno = 0;
    for (const auto& line : io::read_lines(*rc.data)) {
      ++lineno;
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      try {
        const auto j = json::parse(line);
        inputs.emplace_back(j.at("text_a").get<std::string>(), j.at("text_b").get<std::string>());
      } catch (const json::exception& e) {
        throw ParseError(*rc.data, lineno, e.what());
      }
    }
  }
  std::vector<json> rows;
  const auto& names = model.checkpoint.scheme.class_names;
  for (const auto& [a, b] : inputs) {
    const auto p = predict(model.checkpoint.params, model.vocab, a, b);
    json row = {{"text_a", a}, {"text_b", b}, {"label", p.label}, {"probs", distribution_json(p.probs)}};
    if (!names.empty()) row["class_name"] = names[static_cast<std::size_t>(p.label)];
    rows.push_back(row);
  }
  if (rc.out) write_json_lines(*rc.out, rows);
  for (const auto& r : rows) std::cout << r.dump() << '\n';
  return kExitOk;
}

int cmd_analyze(const RunConfig& rc) {
  auto problems = rc.problems;
  require(problems, rc.checkpoint, "--checkpoint");
  require(problems, rc.data, "--data");
  require(problems, rc.out, "--out");
  if (!problems.empty()) fail_config(problems);

  const auto model = load_model(rc, *rc.checkpoint);
  const auto data = load_dataset(*rc.data, model.checkpoint.scheme);
  const auto report = analyze_consistency(model.checkpoint.params, model.vocab, data);
  std::optional<Checkpoint> baseline;
  if (rc.baseline_checkpoint) {
    baseline = load_checkpoint(*rc.baseline_checkpoint);
    require_vocab_match(baseline->params, model.vocab);
  }

  const fs::path out = *rc.out;
  ensure_dir(out);
  io::write_text_atomically(out / "consistency.json", report.to_json().dump(2) + "\n");
  // Per-example breakdown: baseline ("plm"), trained model ("dc"), keyword-only
  // and intent-only sub-predictions.
  std::vector<json> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& e = report.examples[i];
    json row = {{"text_a", data[i].text_a},
                {"text_b", data[i].text_b},
                {"gold", data[i].label},
                {"plm", nullptr},
                {"dc", e.p.argmax()},
                {"kw", e.p_keyword.argmax()},
                {"in", e.p_intent.argmax()},
                {"q", e.q.argmax()},
                {"p", distribution_json(e.p)},
                {"p_keyword", distribution_json(e.p_keyword)},
                {"p_intent", distribution_json(e.p_intent)},
                {"q_dist", distribution_json(e.q)},
                {"score", e.score}};
    if (baseline) row["plm"] = predict(baseline->params, model.vocab, data[i].text_a, data[i].text_b).label;
    rows.push_back(row);
  }
  write_json_lines(out / "cases.jsonl", rows);
  std::cout << json({{"n_examples", report.scores.size()}, {"mean", report.mean}, {"median", report.median}}).dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-conquer sentence pair matching toolkit"};
  app.require_subcommand(1);

  RunConfig flags;
  std::optional<std::string> config_path;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_classes;

  struct Spec {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const std::vector<Spec> specs{
      {"label", "Attach distant keyword tags to a dataset", cmd_label},
      {"stats", "Keyword statistics of a tagged dataset", cmd_stats},
      {"generate", "Generate a synthetic corpus with gazetteer and POS lexicon", cmd_generate},
      {"train", "Train a model (baseline or dc_match)", cmd_train},
      {"evaluate", "Accuracy and macro-F1 of a checkpoint on a dataset", cmd_evaluate},
      {"predict", "Predict match classes for sentence pairs", cmd_predict},
      {"analyze", "Per-example consistency between global and combined predictions", cmd_analyze},
  };
  std::vector<CLI::App*> subs;
  for (const auto& s : specs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "JSON config file (flags override it)");
    sub->add_option("--data", flags.data, "Dataset file or directory");
    sub->add_option("--out", flags.out, "Output file or directory");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--num-classes", num_classes, "Number of match classes");
    const std::string n = s.name;
    if (n == "label") {
      sub->add_option("--gazetteer", flags.gazetteer, "Gazetteer, one term per line");
      sub->add_option("--pos-lexicon", flags.pos_lexicon, "word<TAB>TAG lexicon");
    }
    if (n == "train") sub->add_option("--mode", mode, "baseline or dc_match");
    if (n == "evaluate" || n == "predict" || n == "analyze") {
      sub->add_option("--checkpoint", flags.checkpoint, "Checkpoint file");
      sub->add_option("--vocab", flags.vocab, "Vocabulary file (default: vocab.json next to the checkpoint)");
    }
    if (n == "predict") {
      sub->add_option("--text-a", flags.text_a, "First sentence");
      sub->add_option("--text-b", flags.text_b, "Second sentence");
    }
    if (n == "analyze") sub->add_option("--baseline-checkpoint", flags.baseline_checkpoint, "Baseline checkpoint for the plm column");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig rc;
    auto& problems = rc.problems;
    if (config_path) apply_config_file(*config_path, rc, problems);
    // flags win over the config file
    for (auto field : {&RunConfig::data, &RunConfig::gazetteer, &RunConfig::pos_lexicon, &RunConfig::vocab,
                        &RunConfig::checkpoint, &RunConfig::baseline_checkpoint, &RunConfig::out, &RunConfig::text_a,
                        &RunConfig::text_b})
      if (flags.*field) rc.*field = flags.*field;
    if (seed) rc.seed = *seed;
    if (num_classes) rc.num_classes = *num_classes;
    if (mode) collect(problems, [&] { rc.mode = parse_train_mode(*mode); });
    if (rc.num_classes < 2) problems.push_back("num_classes must be >= 2");

    for (std::size_t i = 0; i < specs.size(); ++i)
      if (subs[i]->parsed()) return specs[i].run(rc);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
