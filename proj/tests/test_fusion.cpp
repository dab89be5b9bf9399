#include <cmath>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "textseg/fusion.hpp"
#include "textseg/kvfile.hpp"

using namespace textseg;
using doctest::Approx;
using testutil::expect_error;

TEST_CASE("init_fusion") {
  const auto a = init_fusion(14, 42), b = init_fusion(14, 42);
  CHECK(a == b);
  CHECK_FALSE(a == init_fusion(14, 43));
  CHECK(a.W1.size() == 768 * 256);
  CHECK(a.W2.size() == 256 * 14);
  CHECK(a.alpha == 0.1);
  CHECK(a.beta == 0.1);
  for (double v : a.b2) CHECK(v == 0.0);
  for (double v : a.b1) CHECK(v == 0.0);
  const double limit1 = std::sqrt(6.0 / (768.0 + 256.0));
  for (double v : a.W1) CHECK(std::abs(v) <= limit1);

  Rng rng(1);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = init_fusion(14, seed);
    for (double v : class_bias(p, gradcheck::random_unit(rng, 768))) worst = std::max(worst, std::abs(v));
  }
  CHECK(worst < 1.0);
}

TEST_CASE("class_bias") {
  const auto z = FusionParams::zeros(14);
  for (double v : class_bias(z, std::vector<double>(768, 0.3))) CHECK(v == 0.0);

  auto p = FusionParams::zeros(4, 8, 5);
  for (auto& w : p.W2) w = 1.7;
  p.b2 = {0.5, -1.0, 2.0, 0.25};
  CHECK(class_bias(p, std::vector<double>(8, 1.0)) == p.b2);

  auto hand = FusionParams::zeros(2, 2, 1);
  hand.W1 = {1.0, 0.0};
  hand.b1 = {-0.5};
  hand.W2 = {2.0, -1.0};
  CHECK(class_bias(hand, std::vector<double>{1.0, 0.0}) == std::vector<double>{1.0, -0.5});

  expect_error(ErrorCode::ShapeMismatch, [&] { class_bias(hand, std::vector<double>{1.0}); });
}

TEST_CASE("fuse_logits") {
  Rng rng(8);
  const auto vis = testutil::random_logits(rng, 14, {3, 3, 3});
  const std::vector<double> bias(14, 0.8);
  LogitTensor prior(14, {3, 3, 3}, {}, 0.5);
  CHECK(fuse_logits(vis, bias, 0.0, 0.0, &prior).data == vis.data);

  std::vector<double> first(14, 0.0);
  first[0] = 1.0;
  const auto shifted = fuse_logits(vis, first, 2.0, 0.0, nullptr);
  for (std::size_t v = 0; v < 27; ++v) {
    CHECK(shifted.at(0, v) == vis.at(0, v) + 2.0);
    for (int c = 1; c < 14; ++c) CHECK(shifted.at(c, v) == vis.at(c, v));
  }

  CHECK(argmax_channels(fuse_logits(vis, bias, 1.3, 0.0, nullptr)).data == argmax_channels(vis).data);

  LogitTensor pr(14, {3, 3, 3});
  pr.at(6, 4) = 0.5;
  const auto with_prior = fuse_logits(vis, std::vector<double>(14, 0.0), 0.0, 2.0, &pr);
  CHECK(with_prior.at(6, 4) == vis.at(6, 4) + 1.0);
  CHECK(with_prior.at(6, 5) == vis.at(6, 5));
}

TEST_CASE("fusion gradients match central differences") {
  Rng rng(1234);
  for (int classes : {3, 14}) {
    for (int patch = 0; patch < 3; ++patch) {
      const auto w = gradcheck::fusion_patch(rng, classes, {6, 6, 6}, 16);
      CAPTURE(classes);
      CAPTURE(w.where);
      CHECK(w.error < 1e-4);
    }
  }
}

TEST_CASE("alpha gradient on a 2-class 2^3 case") {
  auto p = FusionParams::zeros(2, 4, 3);
  p.W1 = {0.5, -0.2, 0.1, 0.3, 0.4, -0.6, 0.2, 0.1, 0.0, -0.3, 0.2, 0.5};
  p.b1 = {0.1, 0.0, -0.1};
  p.W2 = {1.0, -0.5, 0.3, 0.7, -0.4, 0.2};
  p.b2 = {0.2, -0.1};
  p.alpha = 0.7;
  p.beta = 0.0;
  const std::vector<double> t{0.5, 0.5, 0.5, 0.5};
  LogitTensor vis(2, {2, 2, 2});
  LabelMap gt({2, 2, 2}, {});
  for (std::size_t v = 0; v < 8; ++v) {
    vis.at(0, v) = 0.1 * double(v);
    vis.at(1, v) = -0.05 * double(v) + 0.2;
    gt.data[v] = v % 3 == 0 ? 1 : 0;
  }
  FusionTargets targets;
  targets.labels = &gt;
  const LossConfig cfg;
  const auto step = fusion_backward(t, vis, nullptr, targets, cfg, p);

  // Recompose d/dalpha from the fused-logit gradient: sum_c b_c sum_v dL/dF.
  const auto b = class_bias(p, t);
  auto fused_loss = [&](const LogitTensor& f) {
    const auto probs = softmax_channels(f);
    return dice_ce(probs, one_hot(gt, 2), cfg);
  };
  auto fused = fuse_logits(vis, b, p.alpha, 0.0, nullptr);
  double recomposed = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (std::size_t v = 0; v < 8; ++v) {
      const double dF = oracle::central_diff([&] { return fused_loss(fused); }, fused.at(c, v), 1e-6);
      recomposed += b[static_cast<std::size_t>(c)] * dF;
    }
  }
  const double numeric =
      oracle::central_diff([&] { return fusion_loss(t, vis, nullptr, targets, cfg, p).total; }, p.alpha, 1e-6);
  CHECK(step.grads.alpha == Approx(numeric).epsilon(1e-7));
  CHECK(step.grads.alpha == Approx(recomposed).epsilon(1e-7));
}

TEST_CASE("fusion loss is reproducible bit for bit") {
  Rng rng(77);
  const auto p = init_fusion(14, 3);
  const auto t = gradcheck::random_unit(rng, 768);
  const auto vis = testutil::random_logits(rng, 14, {4, 4, 4});
  const auto gt = testutil::random_labels(rng, 14, {4, 4, 4});
  FusionTargets targets;
  targets.labels = &gt;
  const auto a = fusion_loss(t, vis, nullptr, targets, LossConfig{}, p);
  const auto b = fusion_backward(t, vis, nullptr, targets, LossConfig{}, p).loss;
  CHECK(a.total == b.total);
  CHECK(std::isfinite(a.total));
}

TEST_CASE("fusion checkpoints") {
  testutil::TempDir dir("ckpt");
  FusionCheckpoint ck;
  ck.params = init_fusion(14, 9);
  ck.epoch = 4;
  ck.config_hash = "abcd1234";
  ck.optimizer = AdamWState::for_sizes(ck.params.sizes());
  ck.optimizer.step = 17;
  for (auto& m : ck.optimizer.m)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 1e-3 * double(i % 7);
  for (auto& v : ck.optimizer.v)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1e-6 * double(i % 5);
  save_checkpoint(ck, dir.file("f.ckpt"));

  const auto back = load_checkpoint(dir.file("f.ckpt"), 14, "abcd1234");
  CHECK(back.params == ck.params);
  CHECK(back.epoch == 4);
  CHECK(back.optimizer.step == 17);
  CHECK(back.optimizer.m == ck.optimizer.m);
  CHECK(back.optimizer.v == ck.optimizer.v);

  expect_error(ErrorCode::ShapeMismatch, [&] { load_checkpoint(dir.file("f.ckpt"), 5); });
  expect_error(ErrorCode::ConfigMismatch, [&] { load_checkpoint(dir.file("f.ckpt"), 14, "ffffffff"); });

  auto bytes = read_file(dir.file("f.ckpt"));
  write_file(dir.file("f.ckpt"), bytes.substr(0, bytes.size() / 2));
  expect_error(ErrorCode::BadChecksum, [&] { load_checkpoint(dir.file("f.ckpt")); });
  bytes[100] ^= 1;
  write_file(dir.file("f.ckpt"), bytes);
  expect_error(ErrorCode::BadChecksum, [&] { load_checkpoint(dir.file("f.ckpt")); });
}
