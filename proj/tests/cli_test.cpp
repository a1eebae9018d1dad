#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcmatch/dcmatch.hpp"

using namespace dcmatch;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(DCMATCH_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Shared workspace: a tiny generated corpus plus one baseline and one
// dc_match model trained on it.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "dcmatch_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write(dir / "config.json", R"({
      "seed": 3,
      "num_classes": 2,
      "synthetic": {"train_size": 120, "dev_size": 30, "test_size": 30},
      "encoder": {"hidden": 16, "layers": 1, "heads": 2, "ff": 32, "max_len": 32, "dropout": 0.0},
      "train": {"batch_size": 8, "max_steps": 12, "eval_interval": 4, "learning_rate": 0.001}
    })");
    ASSERT_EQ(cli("generate --config " + q(dir / "config.json") + " --out " + q(dir / "data")).code, 0);
    for (const char* mode : {"baseline", "dc_match"}) {
      const auto r = cli(std::string("train --config ") + q(dir / "config.json") + " --data " + q(dir / "data") +
                         " --mode " + mode + " --out " + q(dir / mode));
      ASSERT_EQ(r.code, 0) << r.out;
    }
  }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, GenerateWritesSplitsAndResources) {
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "gazetteer.txt", "pos_lexicon.tsv"})
    EXPECT_TRUE(fs::exists(dir / "data" / f)) << f;
  const auto train = load_dataset(dir / "data" / "train.jsonl", LabelScheme::with_classes(2));
  EXPECT_EQ(train.size(), 120u);
  EXPECT_TRUE(train.front().has_keywords());
}

TEST_F(Cli, TrainWritesArtifacts) {
  for (const char* mode : {"baseline", "dc_match"}) {
    const auto out = dir / mode;
    for (const char* f : {"checkpoint.bin", "vocab.json", "train_log.jsonl", "report.json"})
      EXPECT_TRUE(fs::exists(out / f)) << mode << "/" << f;
    const auto report = json::parse(slurp(out / "report.json"));
    EXPECT_EQ(report.at("mode"), mode);
    EXPECT_EQ(report.at("top_checkpoints").size(), 3u);
    EXPECT_TRUE(report.at("mean_test_accuracy").is_number());
    const auto log = io::read_lines(out / "train_log.jsonl");
    ASSERT_EQ(log.size(), 3u);
    const auto first = json::parse(log.front());
    EXPECT_EQ(first.contains("l_dc"), std::string(mode) == "dc_match");
  }
}

TEST_F(Cli, LabelRecoversGeneratedSpansAndIsIdempotent) {
  const auto d = dir / "data";
  const std::string res = " --gazetteer " + q(d / "gazetteer.txt") + " --pos-lexicon " + q(d / "pos_lexicon.tsv");
  auto r = cli("label --data " + q(d / "dev.jsonl") + res + " --out " + q(dir / "relabeled.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("bleu_match"), std::string::npos);
  EXPECT_EQ(slurp(dir / "relabeled.jsonl"), slurp(d / "dev.jsonl"));
  r = cli("label --data " + q(dir / "relabeled.jsonl") + res + " --out " + q(dir / "relabeled2.jsonl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp(dir / "relabeled2.jsonl"), slurp(dir / "relabeled.jsonl"));
}

TEST_F(Cli, LabelWithEmptyGazetteerWarns) {
  write(dir / "empty_gaz.txt", "");
  const auto r = cli("label --data " + q(dir / "data" / "dev.jsonl") + " --gazetteer " + q(dir / "empty_gaz.txt") +
                     " --pos-lexicon " + q(dir / "data" / "pos_lexicon.tsv") + " --out " + q(dir / "nokw.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("warning"), std::string::npos);
  for (const auto& p : load_dataset(dir / "nokw.jsonl", LabelScheme::with_classes(2))) {
    EXPECT_TRUE(p.keywords_a->empty());
    EXPECT_TRUE(p.keywords_b->empty());
  }
}

TEST_F(Cli, StatsPrintsJson) {
  const auto r = cli("stats --data " + q(dir / "data" / "dev.jsonl") + " --out " + q(dir / "stats.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(slurp(dir / "stats.json"));
  EXPECT_GT(j.at("avg_keywords_per_pair").get<double>(), 0.0);
}

TEST_F(Cli, EvaluateMatchesLibrary) {
  const auto r = cli("evaluate --checkpoint " + q(dir / "dc_match" / "checkpoint.bin") + " --data " +
                     q(dir / "data" / "test.jsonl") + " --out " + q(dir / "eval.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(slurp(dir / "eval.json"));
  const auto ck = load_checkpoint(dir / "dc_match" / "checkpoint.bin");
  const auto vocab = Vocab::load(dir / "dc_match" / "vocab.json");
  const auto test = load_dataset(dir / "data" / "test.jsonl", LabelScheme::with_classes(2));
  EXPECT_DOUBLE_EQ(j.at("accuracy").get<double>(), evaluate(ck.params, vocab, test).accuracy);
  EXPECT_EQ(j.at("n_examples"), 30);
}

TEST_F(Cli, PredictInlineAndFile) {
  auto r = cli("predict --checkpoint " + q(dir / "baseline" / "checkpoint.bin") +
               " --text-a 'how do i buy a plant cell' --text-b 'where can i purchase a plant cell'");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("probs").size(), 2u);
  EXPECT_TRUE(j.contains("class_name"));

  r = cli("predict --checkpoint " + q(dir / "baseline" / "checkpoint.bin") + " --data " + q(dir / "data" / "dev.jsonl") +
          " --out " + q(dir / "preds.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(io::read_lines(dir / "preds.jsonl").size(), 30u);
}

TEST_F(Cli, AnalyzeWritesConsistencyAndCases) {
  const auto r = cli("analyze --checkpoint " + q(dir / "dc_match" / "checkpoint.bin") + " --baseline-checkpoint " +
                     q(dir / "baseline" / "checkpoint.bin") + " --data " + q(dir / "data" / "test.jsonl") + " --out " +
                     q(dir / "analysis"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = json::parse(slurp(dir / "analysis" / "consistency.json"));
  EXPECT_TRUE(report.contains("mean"));
  const auto rows = io::read_lines(dir / "analysis" / "cases.jsonl");
  ASSERT_EQ(rows.size(), 30u);
  const auto row = json::parse(rows.front());
  for (const char* k : {"plm", "dc", "kw", "in", "q", "score"}) EXPECT_TRUE(row.contains(k)) << k;
  EXPECT_TRUE(row.at("plm").is_number_integer());
}

TEST_F(Cli, ConfigProblemsAreListedTogether) {
  write(dir / "bad.json", R"({"seeed": 1, "train": {"batch_size": 0, "lr": 1}, "encoder": {"hidden": "x"}})");
  const auto r = cli("train --config " + q(dir / "bad.json") + " --data " + q(dir / "data") + " --out " + q(dir / "x"));
  EXPECT_EQ(r.code, 1);
  for (const char* needle : {"seeed", "train.lr", "encoder.hidden", "batch_size"})
    EXPECT_NE(r.out.find(needle), std::string::npos) << needle << "\n" << r.out;
  EXPECT_FALSE(fs::exists(dir / "x"));
}

TEST_F(Cli, FlagsOverrideConfig) {
  write(dir / "mode.json", R"({"mode": "nonsense"})");
  auto r = cli("train --config " + q(dir / "mode.json") + " --data " + q(dir / "data") + " --out " + q(dir / "y"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("nonsense"), std::string::npos);
  r = cli("stats --config " + q(dir / "config.json") + " --num-classes 3 --data " + q(dir / "data" / "dev.jsonl"));
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("evaluate --data x.jsonl").code, 1);  // missing --checkpoint
  EXPECT_EQ(cli("--help").code, 0);
  const auto missing = cli("stats --data " + q(dir / "absent.jsonl"));
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.out.find("absent.jsonl"), std::string::npos);
  write(dir / "broken.jsonl", "{\"text_a\":\"a\",\"text_b\":\"b\",\"label\":1}\nnot json\n");
  const auto broken = cli("stats --data " + q(dir / "broken.jsonl"));
  EXPECT_EQ(broken.code, 2);
  EXPECT_NE(broken.out.find(":2:"), std::string::npos) << broken.out;
}

TEST_F(Cli, VocabularyMismatchIsRuntimeError) {
  // a vocabulary from a different model must be refused
  fs::create_directories(dir / "mixed");
  fs::copy_file(dir / "dc_match" / "checkpoint.bin", dir / "mixed" / "checkpoint.bin", fs::copy_options::overwrite_existing);
  Vocab other;
  other.add("unrelated");
  other.save(dir / "mixed" / "vocab.json");
  const auto r = cli("predict --checkpoint " + q(dir / "mixed" / "checkpoint.bin") + " --text-a a --text-b b");
  EXPECT_EQ(r.code, 2);
}
