#include <algorithm>
#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "textseg/phantom.hpp"
#include "textseg/tensor_ops.hpp"

using namespace textseg;
using doctest::Approx;
using testutil::expect_error;

namespace {

PhantomSpec empty_spec() {
  PhantomSpec s;
  s.dims = {8, 8, 8};
  s.spacing = {1.0, 1.0, 1.0};
  return s;
}

}  // namespace

TEST_CASE("phantom generation") {
  SUBCASE("no organs gives an all-background map") {
    const auto ph = generate_phantom(empty_spec());
    for (auto v : ph.labels.data) CHECK(v == 0);
  }
  SUBCASE("sphere volume matches the analytic volume") {
    PhantomSpec s;
    s.dims = {64, 64, 64};
    s.spacing = {1.0, 1.0, 1.0};
    const double r = 20.0;
    s.organs.push_back({6, {32.0, 32.0, 32.0}, {r, r, r}, 60.0, 5.0});
    const auto ph = generate_phantom(s);
    const auto n = static_cast<double>(binarize(ph.labels, 6).count());
    const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
    CHECK(std::abs(n - analytic) / analytic < 0.05);
  }
  SUBCASE("seeded generation is reproducible") {
    const auto a = generate_phantom(default_phantom_spec(5)), b = generate_phantom(default_phantom_spec(5));
    CHECK(a.volume.data == b.volume.data);
    CHECK(a.labels.data == b.labels.data);
    CHECK(generate_phantom(default_phantom_spec(6)).labels.data != a.labels.data);
  }
  SUBCASE("default layout holds the five organs") {
    const auto ph = generate_phantom(default_phantom_spec(1));
    CHECK(ph.labels.dims == Dims{48, 48, 48});
    for (int c : {1, 2, 3, 6, 7}) CHECK(binarize(ph.labels, c).count() > 50);
    for (int c : {4, 5, 8, 9, 10, 11, 12, 13}) CHECK(binarize(ph.labels, c).count() == 0);
  }
  SUBCASE("invalid specs") {
    auto s = empty_spec();
    s.organs.push_back({14, {1, 1, 1}, {1, 1, 1}, 0, 1});
    expect_error(ErrorCode::ConfigInvalid, [&] { s.validate(); });
    s.organs[0] = {3, {1, 1, 1}, {0, 1, 1}, 0, 1};
    expect_error(ErrorCode::ConfigInvalid, [&] { s.validate(); });
  }
}

TEST_CASE("phantom spec text round-trip") {
  const auto s = default_phantom_spec(12);
  const auto back = parse_phantom_spec(serialize_phantom_spec(s));
  CHECK(serialize_phantom_spec(back) == serialize_phantom_spec(s));
  CHECK(generate_phantom(back).labels.data == generate_phantom(s).labels.data);
}

TEST_CASE("logit oracle") {
  const auto labels = generate_phantom(default_phantom_spec(2)).labels;
  SUBCASE("noise-free oracle argmaxes to the labels") {
    LogitOracleConfig cfg;
    cfg.noise_sigma = 0.0;
    CHECK(argmax_channels(oracle_logits(labels, cfg)).data == labels.data);
  }
  SUBCASE("suppressed liver turns into background") {
    LogitOracleConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.suppressed_classes = {6};
    const auto logits = oracle_logits(labels, cfg);
    const auto am = argmax_channels(logits);
    for (std::size_t v = 0; v < labels.data.size(); ++v) {
      CHECK(am.data[v] == (labels.data[v] == 6 ? 0 : labels.data[v]));
      if (labels.data[v] == 6) {
        CHECK(logits.at(0, v) == cfg.scale);
        CHECK(logits.at(6, v) == cfg.scale - cfg.suppression_margin);
      }
    }
  }
  SUBCASE("forced confusion") {
    LogitOracleConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.confusion_pairs = {{1, 2, 1.0}};
    const auto am = argmax_channels(oracle_logits(labels, cfg));
    for (std::size_t v = 0; v < labels.data.size(); ++v) {
      if (labels.data[v] == 1) CHECK(am.data[v] == 2);
    }
  }
  SUBCASE("noise is seeded") {
    LogitOracleConfig cfg;
    cfg.seed = 3;
    CHECK(oracle_logits(labels, cfg).data == oracle_logits(labels, cfg).data);
  }
}

TEST_CASE("patch sampling") {
  LabelMap one({10, 10, 10}, {1.0, 1.0, 1.0});
  one.at(7, 2, 9) = 6;
  SUBCASE("positive patches contain the only foreground voxel") {
    PatchSamplerConfig cfg;
    cfg.patch = {4, 4, 4};
    cfg.pos_fraction = 1.0;
    cfg.samples_per_volume = 200;
    for (const auto& o : sample_patch_offsets(one, cfg)) {
      CHECK(o[0] <= 7);
      CHECK(o[0] + 4 > 7);
      CHECK(o[1] <= 2);
      CHECK(o[1] + 4 > 2);
      CHECK(o[2] <= 9);
      CHECK(o[2] + 4 > 9);
    }
  }
  SUBCASE("negative patches are uniform over origins") {
    LabelMap strip({10, 4, 4}, {1.0, 1.0, 1.0});
    strip.at(0, 0, 0) = 1;
    PatchSamplerConfig cfg;
    cfg.patch = {4, 4, 4};
    cfg.pos_fraction = 0.0;
    cfg.samples_per_volume = 10000;
    cfg.seed = 17;
    std::vector<double> bins(7, 0.0);
    for (const auto& o : sample_patch_offsets(strip, cfg)) {
      REQUIRE(o[0] < 7);
      CHECK(o[1] == 0);
      CHECK(o[2] == 0);
      bins[o[0]] += 1.0;
    }
    const double expected = 10000.0 / 7.0;
    double chi2 = 0.0;
    for (double b : bins) chi2 += (b - expected) * (b - expected) / expected;
    CHECK(chi2 < 16.812);  // chi-square, 6 dof, p = 0.01
  }
  SUBCASE("seeded reruns and errors") {
    PatchSamplerConfig cfg;
    cfg.patch = {4, 4, 4};
    cfg.seed = 8;
    CHECK(sample_patch_offsets(one, cfg) == sample_patch_offsets(one, cfg));
    Volume vol(one.dims, one.spacing, 1.0);
    const auto patches = sample_patches(vol, one, cfg);
    CHECK(patches.size() == cfg.samples_per_volume);
    CHECK(patches[0].labels.dims == Dims{4, 4, 4});
    cfg.pos_fraction = 1.0;
    expect_error(ErrorCode::NoForeground,
                 [&] { sample_patch_offsets(LabelMap({10, 10, 10}, {1.0, 1.0, 1.0}), cfg); });
  }
}

TEST_CASE("augmentation") {
  const auto ph = generate_phantom(default_phantom_spec(4));
  SUBCASE("double flip is the identity") {
    AugmentOps ops;
    ops.flip = {true, false, true};
    const auto once = apply_augment(ph.volume, ph.labels, ops);
    const auto twice = apply_augment(once.first, once.second, ops);
    CHECK(twice.first.data == ph.volume.data);
    CHECK(twice.second.data == ph.labels.data);
  }
  SUBCASE("rotation permutes voxels") {
    AugmentOps ops;
    ops.rot_axes = {0, 2};
    ops.rot_k = 1;
    const auto r = apply_augment(ph.volume, ph.labels, ops);
    auto a = ph.labels.data, b = r.second.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(r.second.data != ph.labels.data);
    ops.rot_k = 4;
    CHECK(apply_augment(ph.volume, ph.labels, ops).second.data == ph.labels.data);
  }
  SUBCASE("rotation on a non-cubic grid swaps extents and spacing") {
    LabelMap l({2, 3, 4}, {2.0, 1.0, 0.5});
    for (std::size_t i = 0; i < l.data.size(); ++i) l.data[i] = static_cast<std::uint8_t>(i);
    Volume v(l.dims, l.spacing);
    AugmentOps ops;
    ops.rot_axes = {1, 2};
    ops.rot_k = 1;
    const auto r = apply_augment(v, l, ops);
    CHECK(r.second.dims == Dims{2, 4, 3});
    CHECK(r.second.spacing == Spacing{2.0, 0.5, 1.0});
    AugmentOps back = ops;
    back.rot_k = 3;
    CHECK(apply_augment(r.first, r.second, back).second.data == l.data);
  }
  SUBCASE("intensity factor") {
    Volume v({2, 2, 2}, {1.0, 1.0, 1.0}, 0.5);
    AugmentOps ops;
    ops.intensity_factor = 1.1;
    const auto r = apply_augment(v, LabelMap(v.dims, v.spacing), ops);
    for (double x : r.first.data) CHECK(x == Approx(0.55).epsilon(1e-15));
  }
  SUBCASE("drawn augmentations are seeded") {
    AugmentConfig cfg;
    const auto a = augment(ph.volume, ph.labels, cfg, 5), b = augment(ph.volume, ph.labels, cfg, 5);
    CHECK(a.first.data == b.first.data);
    CHECK(a.second.data == b.second.data);
    const auto ops = draw_augment(cfg, 5);
    CHECK(ops.intensity_factor >= 0.9);
    CHECK(ops.intensity_factor <= 1.1);
  }
}

TEST_CASE("intensity normalization") {
  Volume v({1, 1, 4}, {1.0, 1.0, 1.0});
  v.data = {-175.0, 250.0, 37.5, -1000.0};
  const auto n = normalize_intensity(v);
  CHECK(n.data[0] == 0.0);
  CHECK(n.data[1] == 1.0);
  CHECK(n.data[2] == 0.5);
  CHECK(n.data[3] == 0.0);
}

TEST_CASE("intensity model") {
  testutil::TempDir dir("im");
  const auto spec = default_phantom_spec(3);
  const auto model = intensity_model_from_spec(spec);
  CHECK(model.classes() == 14);
  save_intensity_model(model, dir.file("m.txt"));
  const auto back = load_intensity_model(dir.file("m.txt"));
  CHECK(back.mean == model.mean);
  CHECK(back.sigma == model.sigma);

  // Organ intensities separate well enough for the classifier to find
  // kidneys (bright) against background on a noise-free phantom.
  auto quiet = spec;
  for (auto& o : quiet.organs) o.intensity_sigma = 0.0;
  quiet.background_sigma = 0.0;
  const auto ph = generate_phantom(quiet);
  const auto am = argmax_channels(intensity_logits(normalize_intensity(ph.volume), model));
  std::size_t agree = 0;
  for (std::size_t v = 0; v < am.data.size(); ++v) agree += am.data[v] == ph.labels.data[v];
  CHECK(double(agree) / double(am.data.size()) > 0.99);
}
