#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dcmatch/checkpoint.hpp"
#include "dcmatch/trainer.hpp"
#include "oracles.hpp"

using namespace dcmatch;
namespace fs = std::filesystem;

namespace {

struct Tiny {
  Vocab vocab;
  ModelParams params;
  std::vector<SentencePair> pairs;
};

Tiny tiny_model(std::uint64_t seed, int num_classes = 3, double embedding_scale = 10.0) {
  Tiny t;
  t.pairs = {
      {"how do i buy a plant cell", "where can i purchase an animal cell", 0, std::vector<Span>{{5, 7}}, std::vector<Span>{{5, 7}}},
      {"fix my solar panel", "repair the solar panel", num_classes - 1, std::vector<Span>{{2, 4}}, std::vector<Span>{{2, 4}}},
      {"rent a bank", "bank", 1, std::vector<Span>{{2, 3}}, std::vector<Span>{{0, 1}}},
  };
  t.vocab = build_vocab(t.pairs, 1);
  EncoderConfig cfg;
  cfg.vocab_size = t.vocab.size();
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ff = 16;
  cfg.max_len = 24;
  cfg.dropout = 0.0;
  cfg.seed = seed;
  t.params = init_params(cfg, LabelScheme::with_classes(num_classes));
  t.params.vocab_hash = t.vocab.hash();
  // Larger embeddings than the training init: with tiny layer-norm inputs the
  // finite-difference truncation error would swamp the comparison.
  t.params.for_each([&](const std::string& name, Mat& m, ParamKind) {
    if (name.find("embedding") != std::string::npos) m *= embedding_scale;
  });
  return t;
}

double objective_value(const ModelParams& p, const EncodedPair& enc, TrainMode mode, const LossWeights& w) {
  return example_objective(p, enc, mode, w, Mode::kEval, nullptr, nullptr).loss.total;
}

}  // namespace

TEST(Encoder, ConfigValidation) {
  EncoderConfig c;
  c.vocab_size = 10;
  c.hidden = 6;
  c.heads = 4;
  EXPECT_THROW(c.validate(), Error);
  c.heads = 3;
  EXPECT_NO_THROW(c.validate());
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c.dropout = 0.1;
  c.vocab_size = 2;
  EXPECT_THROW(c.validate(), Error);
  EncoderConfig back = EncoderConfig::from_json(EncoderConfig{.vocab_size = 9}.to_json());
  EXPECT_EQ(back.vocab_size, 9);
}

TEST(Encoder, ShapesAndParameterCount) {
  auto t = tiny_model(1);
  const int H = 8, F = 16, V = t.vocab.size(), K = 3, T = 24;
  const long per_layer = 4 * H + 4 * H * H + 4 * H + H * F + F + F * H + H;
  EXPECT_EQ(t.params.parameter_count(), V * H + T * H + per_layer + 2 * H + K * H + H);
  const auto enc = encode_pair(t.pairs[0], t.vocab, 24);
  const auto out = encode(t.params, enc);
  EXPECT_EQ(out.h_cls.size(), H);
  EXPECT_EQ(out.states.rows(), std::count(enc.attn_mask.begin(), enc.attn_mask.end(), 1));
  EXPECT_EQ(out.positions.front(), 0);
}

TEST(Encoder, PaddingDoesNotChangeOutputs) {
  auto t = tiny_model(2);
  const auto short_enc = encode_pair(t.pairs[2], t.vocab, 10);
  const auto long_enc = encode_pair(t.pairs[2], t.vocab, 24);
  const auto a = encode(t.params, short_enc);
  const auto b = encode(t.params, long_enc);
  EXPECT_LT((a.states - b.states).cwiseAbs().maxCoeff(), 1e-15);
  // ids under PAD never enter the computation
  auto poked = long_enc;
  poked.ids.back() = 7;
  EXPECT_LT((encode(t.params, poked).h_cls - b.h_cls).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Encoder, DropoutOnlyInTrainMode) {
  auto t = tiny_model(3, 2, 1.0);
  t.params.config.dropout = 0.3;
  const auto enc = encode_pair(t.pairs[0], t.vocab, 24);
  const auto e1 = encode(t.params, enc, Mode::kEval);
  const auto e2 = encode(t.params, enc, Mode::kEval);
  EXPECT_EQ((e1.h_cls - e2.h_cls).cwiseAbs().maxCoeff(), 0.0);
  std::mt19937_64 r1(5), r2(5);
  const auto t1 = encode(t.params, enc, Mode::kTrain, &r1);
  const auto t2 = encode(t.params, enc, Mode::kTrain, &r2);
  EXPECT_EQ((t1.h_cls - t2.h_cls).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT((t1.h_cls - e1.h_cls).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(encode(t.params, enc, Mode::kTrain, nullptr), Error);
}

TEST(Encoder, RejectsBadInput) {
  auto t = tiny_model(4);
  auto enc = encode_pair(t.pairs[0], t.vocab, 24);
  enc.ids[1] = t.vocab.size();
  EXPECT_THROW(encode(t.params, enc), Error);
  const auto too_long = encode_pair(t.pairs[0], t.vocab, 30);
  EXPECT_THROW(encode(t.params, too_long), Error);
}

TEST(Encoder, GroupPoolMatchesNaiveMeans) {
  auto t = tiny_model(5);
  const auto enc = encode_pair(t.pairs[0], t.vocab, 24);
  const auto out = encode(t.params, enc);
  const auto pool = group_pool(out, enc);
  RowVec kw = RowVec::Zero(8), in = RowVec::Zero(8);
  int nk = 0, ni = 0;
  for (std::size_t r = 0; r < out.positions.size(); ++r) {
    const auto tag = enc.tags[static_cast<std::size_t>(out.positions[r])];
    if (tag == GroupTag::kKeyword) kw += out.states.row(static_cast<Eigen::Index>(r)), ++nk;
    if (tag == GroupTag::kIntent) in += out.states.row(static_cast<Eigen::Index>(r)), ++ni;
  }
  EXPECT_EQ(pool.keyword_count, 4);
  EXPECT_EQ(nk, 4);
  EXPECT_LT((pool.keyword - kw / nk).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((pool.intent - in / ni).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE(pool.complete());
  const auto plain = encode_text_pair("a b", "c", t.vocab, 24);
  EXPECT_FALSE(group_pool(encode(t.params, plain), plain).complete());
}

TEST(Gradients, EachLossMatchesFiniteDifferences) {
  auto t = tiny_model(6);
  const auto enc = encode_pair(t.pairs[0], t.vocab, 24);
  for (const LossWeights w : {LossWeights{1, 0, 0}, LossWeights{0, 1, 0}, LossWeights{0, 0, 1}, LossWeights{1, 1, 1}}) {
    auto g = t.params.zeros_like();
    example_objective(t.params, enc, TrainMode::kDcMatch, w, Mode::kEval, nullptr, &g);
    const auto check = oracle::check_gradients(t.params, g, [&](const ModelParams& p) {
      return objective_value(p, enc, TrainMode::kDcMatch, w);
    });
    EXPECT_LE(check.worst_relative, 1e-4) << "weights " << w.sm << "," << w.ds << "," << w.dc << " at " << check.worst_name;
  }
}

TEST(Gradients, LinearInTheLossAndZeroForUnusedParams) {
  auto t = tiny_model(7);
  const auto enc = encode_pair(t.pairs[1], t.vocab, 24);
  auto g1 = t.params.zeros_like();
  auto g2 = t.params.zeros_like();
  example_objective(t.params, enc, TrainMode::kBaseline, {}, Mode::kEval, nullptr, &g1, 1.0);
  example_objective(t.params, enc, TrainMode::kBaseline, {}, Mode::kEval, nullptr, &g2, 2.0);
  std::vector<const Mat*> a, b;
  g1.for_each([&](const std::string&, const Mat& m, ParamKind) { a.push_back(&m); });
  g2.for_each([&](const std::string&, const Mat& m, ParamKind) { b.push_back(&m); });
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((2.0 * *a[i] - *b[i]).cwiseAbs().maxCoeff(), 1e-12);
  // the keyword probe only feeds L_ds, and unseen tokens never get gradient
  EXPECT_EQ(g1.keyword_probe.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g1.token_embedding.row(Vocab::kMask).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(g1.token_embedding.row(t.vocab.id("solar")).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, DropoutPathMatchesFiniteDifferences) {
  auto t = tiny_model(8);
  t.params.config.dropout = 0.25;
  const auto enc = encode_pair(t.pairs[2], t.vocab, 24);
  auto g = t.params.zeros_like();
  std::mt19937_64 rng(42);
  example_objective(t.params, enc, TrainMode::kDcMatch, {}, Mode::kTrain, &rng, &g);
  const auto check = oracle::check_gradients(t.params, g, [&](const ModelParams& p) {
    std::mt19937_64 same(42);
    return example_objective(p, enc, TrainMode::kDcMatch, {}, Mode::kTrain, &same, nullptr).loss.total;
  });
  EXPECT_LE(check.worst_relative, 1e-4) << check.worst_name;
}

TEST(Checkpoint, RoundTripIsExact) {
  auto t = tiny_model(9);
  const auto dir = fs::temp_directory_path() / "dcmatch_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(dir / "m.bin", t.params, LabelScheme::with_classes(3));
  const auto back = load_checkpoint(dir / "m.bin");
  EXPECT_EQ(back.params.vocab_hash, t.params.vocab_hash);
  EXPECT_EQ(back.scheme.num_classes, 3);
  std::vector<const Mat*> a, b;
  t.params.for_each([&](const std::string&, const Mat& m, ParamKind) { a.push_back(&m); });
  back.params.for_each([&](const std::string&, const Mat& m, ParamKind) { b.push_back(&m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(*a[i] == *b[i]);
  EXPECT_FALSE(fs::exists(dir / "m.bin.tmp"));
}

TEST(Checkpoint, RejectsDamagedFiles) {
  auto t = tiny_model(10);
  const auto dir = fs::temp_directory_path() / "dcmatch_ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(dir / "m.bin", t.params, LabelScheme::with_classes(3));
  const auto size = fs::file_size(dir / "m.bin");
  fs::copy_file(dir / "m.bin", dir / "short.bin");
  fs::resize_file(dir / "short.bin", size - 8);
  EXPECT_THROW(load_checkpoint(dir / "short.bin"), Error);
  fs::copy_file(dir / "m.bin", dir / "long.bin");
  {
    std::ofstream(dir / "long.bin", std::ios::app | std::ios::binary) << "x";
  }
  EXPECT_THROW(load_checkpoint(dir / "long.bin"), Error);
  {
    std::ofstream(dir / "text.bin") << "{\"format\":\"other\"}\n";
  }
  EXPECT_THROW(load_checkpoint(dir / "text.bin"), Error);
  EXPECT_THROW(load_checkpoint(dir / "absent.bin"), Error);
}
