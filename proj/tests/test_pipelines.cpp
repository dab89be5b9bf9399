#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "textseg/pipelines.hpp"
#include "textseg/tensor_ops.hpp"

using namespace textseg;
using testutil::expect_error;

namespace {

struct SmallSetup {
  std::vector<LabelMap> labels;
  std::vector<Volume> volumes;
  std::vector<CorpusRecord> corpus;
  Lexicon lex = Lexicon::defaults();
  HashedEncoder encoder;

  SmallSetup() {
    for (std::uint64_t s = 1; s <= 3; ++s) {
      auto ph = generate_phantom(default_phantom_spec(s));
      labels.push_back(std::move(ph.labels));
      volumes.push_back(std::move(ph.volume));
    }
    PromptCorpusConfig pc;
    pc.n_train = 60;
    pc.n_val = 0;
    pc.relation_probability = 0.4;
    pc.seed = 2;
    corpus = generate_prompt_corpus(labels, pc, lex);
  }

  TrainRunConfig config(int epochs) const {
    TrainRunConfig cfg;
    cfg.epochs = epochs;
    cfg.iterations_per_epoch = 8;
    cfg.patch = {16, 16, 16};
    cfg.seed = 4;
    return cfg;
  }
};

LogitOracleConfig oracle_cfg() {
  LogitOracleConfig oc;
  oc.scale = 8.0;
  oc.noise_sigma = 0.25;
  return oc;
}

}  // namespace

TEST_CASE("train run config text") {
  TrainRunConfig cfg;
  cfg.epochs = 7;
  cfg.lr = 1.5e-3;
  cfg.patch = {24, 32, 16};
  cfg.prior.d_max = 5.5;
  const auto back = TrainRunConfig::parse(cfg.serialize());
  CHECK(back.serialize() == cfg.serialize());
  CHECK(back.hash() == cfg.hash());
  CHECK(cfg.hash() != TrainRunConfig{}.hash());
  CHECK(cfg.hash().size() == 8);
  expect_error(ErrorCode::ConfigInvalid, [] { TrainRunConfig::parse("epochs: 3\nlearning_rate: 0.1\n"); });
  TrainRunConfig bad;
  bad.lr = 0.0;
  expect_error(ErrorCode::ConfigInvalid, [&] { bad.validate(); });
}

TEST_CASE("training") {
  const SmallSetup s;
  OracleLogitSource src(oracle_cfg(), 14, true);

  SUBCASE("zero epochs returns the initialization") {
    const auto r = train_fusion(s.labels, src, s.corpus, s.encoder, s.config(0));
    CHECK(r.checkpoint.params == init_fusion(14, mix_seed(4, 1)));
    CHECK(r.log.size() == 1);
    CHECK(r.log[0] == train_log_header());
  }

  SUBCASE("seeded reruns are bit-identical") {
    const auto a = train_fusion(s.labels, src, s.corpus, s.encoder, s.config(2));
    const auto b = train_fusion(s.labels, src, s.corpus, s.encoder, s.config(2));
    CHECK(a.checkpoint.params == b.checkpoint.params);
    CHECK(a.checkpoint.optimizer.m == b.checkpoint.optimizer.m);
    CHECK(a.log == b.log);
    CHECK(a.log.size() == 1 + 2 * 8);
    CHECK(a.checkpoint.epoch == 2);
    CHECK(a.checkpoint.optimizer.step == 16);
    CHECK(a.checkpoint.config_hash == s.config(2).hash());
    auto other = s.config(2);
    other.seed = 5;
    CHECK_FALSE(train_fusion(s.labels, src, s.corpus, s.encoder, other).checkpoint.params == a.checkpoint.params);
  }

  SUBCASE("loss falls and the schedule anneals") {
    auto cfg = s.config(6);
    const auto r = train_fusion(s.labels, src, s.corpus, s.encoder, cfg);
    REQUIRE(r.epochs.size() == 6);
    CHECK(r.epochs.back().mean.total < r.epochs.front().mean.total);
    CHECK(r.epochs.front().lr == cfg.lr);
    for (std::size_t e = 1; e < r.epochs.size(); ++e) CHECK(r.epochs[e].lr < r.epochs[e - 1].lr);
    for (const auto& line : r.log) CHECK(std::count(line.begin(), line.end(), '\t') == 8);
  }

  SUBCASE("fixed logits source") {
    std::vector<LogitTensor> fixed;
    for (const auto& l : s.labels) fixed.push_back(oracle_logits(l, oracle_cfg()));
    FixedLogitSource fsrc(fixed);
    const auto r = train_fusion(s.labels, fsrc, s.corpus, s.encoder, s.config(1));
    CHECK(std::isfinite(r.epochs[0].mean.total));
  }

  SUBCASE("corpus naming an organ no volume holds") {
    auto corpus = s.corpus;
    CorpusRecord rec;
    rec.text = "segment the pancreas";
    rec.parsed = parse_prompt(rec.text, s.lex);
    corpus.push_back(rec);
    expect_error(ErrorCode::CorpusMisaligned, [&] { train_fusion(s.labels, src, corpus, s.encoder, s.config(1)); });
  }
}

TEST_CASE("inference") {
  const auto ph = generate_phantom(default_phantom_spec(9));
  const auto lex = Lexicon::defaults();
  const HashedEncoder enc;
  auto oc = oracle_cfg();
  oc.suppressed_classes = {6};
  const auto visual = oracle_logits(ph.labels, oc);
  const auto vis_mask = argmax_channels(visual);
  InferenceConfig cfg;

  SUBCASE("alpha = beta = 0 reproduces the visual argmax") {
    auto p = init_fusion(14, 3);
    p.alpha = 0.0;
    p.beta = 0.0;
    const auto r = infer(visual, "the region around the spleen that belongs to the liver", lex, enc, p, nullptr, cfg);
    CHECK(r.mask.data == vis_mask.data);
    CHECK_FALSE(r.fallback_visual_only);
    CHECK(r.relations_used == std::vector<Relation>{{1, 6}});
  }

  SUBCASE("prompts without organs fall back to visual-only") {
    const auto p = init_fusion(14, 3);
    for (const char* prompt : {"", "please segment"}) {
      const auto r = infer(visual, prompt, lex, enc, p, nullptr, cfg);
      CHECK(r.fallback_visual_only);
      CHECK(r.mask.data == vis_mask.data);
    }
  }

  SUBCASE("a large liver bias recovers the suppressed liver") {
    auto p = FusionParams::zeros(14);
    p.b2[6] = 4.0;
    p.alpha = 1.0;
    const auto r = infer(visual, "segment the liver", lex, enc, p, nullptr, cfg);
    CHECK(r.alpha_bias[6] == 4.0);
    CHECK(binarize(r.mask, 6).bits == binarize(ph.labels, 6).bits);
  }

  SUBCASE("restrict keeps only prompted organs") {
    auto p = FusionParams::zeros(14);
    cfg.restrict_to_prompt = true;
    const auto r = infer(oracle_logits(ph.labels, oracle_cfg()), "segment the spleen", lex, enc, p, nullptr, cfg);
    for (std::size_t v = 0; v < r.mask.data.size(); ++v) CHECK((r.mask.data[v] == 0 || r.mask.data[v] == 1));
    CHECK(binarize(r.mask, 1).count() > 0);
  }

  SUBCASE("an identity refinement head changes nothing") {
    const auto p = init_fusion(14, 3);
    const auto head = init_refine(14, 1);
    cfg.patch = {32, 32, 32};
    const auto a = infer(visual, "segment the liver", lex, enc, p, nullptr, cfg);
    const auto b = infer(visual, "segment the liver", lex, enc, p, &head, cfg);
    CHECK(a.mask.data == b.mask.data);
  }

  SUBCASE("inference from raw intensities") {
    auto p = FusionParams::zeros(14);
    const auto model = intensity_model_from_spec(default_phantom_spec(9));
    cfg.patch = {32, 32, 32};
    const auto r = infer_volume(ph.volume, model, "segment the liver", lex, enc, p, nullptr, cfg);
    const auto vis = visual_logits_from_volume(ph.volume, model, cfg);
    CHECK(r.mask.data == argmax_channels(vis).data);
    CHECK(dsc(binarize(r.mask, 6), binarize(ph.labels, 6)) > 0.8);
  }
}
