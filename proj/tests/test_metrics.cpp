#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "textseg/metrics.hpp"
#include "textseg/pipelines.hpp"
#include "textseg/volume_io.hpp"

using namespace textseg;
using doctest::Approx;
using testutil::expect_error;

namespace {

BinaryMask line_mask(std::initializer_list<int> bits) {
  BinaryMask m({1, 1, bits.size()}, {1.0, 1.0, 1.0});
  std::size_t i = 0;
  for (int b : bits) m.bits[i++] = static_cast<std::uint8_t>(b);
  return m;
}

}  // namespace

TEST_CASE("dsc and iou") {
  const auto a = line_mask({1, 1, 0, 0});
  CHECK(dsc(a, a) == 1.0);
  CHECK(dsc(a, line_mask({0, 1, 1, 0})) == 0.5);
  CHECK(iou(a, line_mask({0, 1, 1, 0})) == Approx(1.0 / 3.0));
  const auto empty = line_mask({0, 0, 0, 0});
  CHECK(dsc(empty, empty) == 1.0);
  CHECK(iou(empty, empty) == 1.0);
  CHECK(dsc(a, empty) == 0.0);
  CHECK(miou({0.5, 1.0}) == 0.75);
}

TEST_CASE("precision, recall, F-beta") {
  const auto p = line_mask({1, 1, 1, 0});
  const auto g = line_mask({0, 1, 1, 1});
  const auto pr = precision_recall_fbeta(p, g, 1.0);
  CHECK(pr.precision == Approx(2.0 / 3.0));
  CHECK(pr.recall == Approx(2.0 / 3.0));
  CHECK(pr.f_beta == Approx(2.0 / 3.0));
  const auto f2 = precision_recall_fbeta(line_mask({1, 0, 0, 0}), line_mask({1, 1, 0, 0}), 2.0);
  CHECK(f2.f_beta == Approx(5.0 * 1.0 * 0.5 / (4.0 * 1.0 + 0.5)));
  const auto none = precision_recall_fbeta(line_mask({0, 0, 0, 0}), line_mask({0, 0, 0, 0}), 1.0);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f_beta == 0.0);
}

TEST_CASE("percentile rule") {
  CHECK(percentile_linear({5.0}, 0.95) == 5.0);
  CHECK(percentile_linear({0.0, 10.0}, 0.95) == Approx(9.5));
  CHECK(percentile_linear({4.0, 1.0, 3.0, 2.0}, 0.5) == Approx(2.5));
}

TEST_CASE("hd95 spot values") {
  BinaryMask a({1, 1, 8}, {1.0, 1.0, 1.0}), b({1, 1, 8}, {1.0, 1.0, 1.0});
  a.bits[1] = 1;
  CHECK(hd95(a, a).value() == 0.0);
  b.bits[4] = 1;
  CHECK(hd95(a, b).value() == 3.0);

  const Dims d{12, 12, 12};
  BinaryMask g(d, {2.0, 1.0, 1.0}), p(d, {2.0, 1.0, 1.0});
  for (std::size_t z = 2; z < 9; ++z)
    for (std::size_t y = 2; y < 10; ++y)
      for (std::size_t x = 2; x < 10; ++x) {
        g.bits[d.index(z, y, x)] = 1;
        p.bits[d.index(z + 1, y, x)] = 1;
      }
  CHECK(hd95(p, g).value() == 2.0);
  CHECK(oracle::hd95(p, g).value() == 2.0);

  const BinaryMask empty(d, {2.0, 1.0, 1.0});
  CHECK(hd95(empty, empty).value() == 0.0);
  CHECK_FALSE(hd95(p, empty).has_value());
  CHECK_FALSE(rvd(p, empty).has_value());
}

TEST_CASE("metrics equal brute-force recomputation on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const Dims d{1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12)};
    const Spacing sp{0.5 + rng.uniform() * 2.0, 0.5 + rng.uniform() * 2.0, 0.5 + rng.uniform() * 2.0};
    const auto p = testutil::random_mask(rng, d, sp, 0.3 * rng.uniform());
    const auto g = testutil::random_mask(rng, d, sp, 0.3 * rng.uniform());
    CAPTURE(trial);
    CHECK(std::abs(dsc(p, g) - oracle::dsc(p, g)) <= 1e-9);
    CHECK(std::abs(iou(p, g) - oracle::iou(p, g)) <= 1e-9);
    const auto h = hd95(p, g), ho = oracle::hd95(p, g);
    REQUIRE(h.has_value() == ho.has_value());
    if (h) CHECK(std::abs(*h - *ho) <= 1e-9);
    const auto r = rvd(p, g), ro = oracle::rvd(p, g);
    REQUIRE(r.has_value() == ro.has_value());
    if (r) CHECK(std::abs(*r - *ro) <= 1e-9);
  }
}

TEST_CASE("label map evaluation") {
  const Dims d{6, 6, 6};
  LabelMap gt(d, {1.0, 1.0, 1.0});
  for (std::size_t z = 0; z < 3; ++z)
    for (std::size_t y = 0; y < 6; ++y) gt.at(z, y, 1) = 6;
  for (std::size_t z = 3; z < 6; ++z)
    for (std::size_t y = 0; y < 3; ++y) gt.at(z, y, 4) = 1;

  SUBCASE("self comparison") {
    const auto r = evaluate_labelmaps(gt, gt);
    REQUIRE(r.per_organ.size() == 2);
    for (const auto& [id, m] : r.per_organ) {
      CHECK(m.dsc == 1.0);
      CHECK(m.iou == 1.0);
      CHECK(m.hd95.value() == 0.0);
      CHECK(m.rvd.value() == 0.0);
    }
    CHECK(r.undefined_organs.size() == 11);
    CHECK(r.averages.dsc == 1.0);
  }

  SUBCASE("two-organ case against per-op calls") {
    LabelMap pred = gt;
    pred.at(0, 0, 1) = 0;
    pred.at(0, 0, 2) = 6;
    pred.at(5, 5, 5) = 1;
    pred.at(3, 0, 4) = 7;
    const auto r = evaluate_labelmaps(pred, gt);
    REQUIRE(r.per_organ.count(7) == 1);
    double sum = 0.0;
    for (int c : {1, 6, 7}) {
      const auto pm = binarize(pred, c), gm = binarize(gt, c);
      const auto& m = r.per_organ.at(c);
      CHECK(m.dsc == Approx(oracle::dsc(pm, gm)).epsilon(1e-12));
      CHECK(m.iou == Approx(oracle::iou(pm, gm)).epsilon(1e-12));
      CHECK(m.precision == Approx(precision_recall_fbeta(pm, gm, 1.0).precision));
      CHECK(m.f2 == Approx(precision_recall_fbeta(pm, gm, 2.0).f_beta));
      sum += m.dsc;
    }
    CHECK(r.averages.dsc == Approx(sum / 3.0));
    CHECK_FALSE(r.per_organ.at(7).hd95.has_value());
    CHECK(r.hd95_undefined == 1);
    CHECK(r.rvd_undefined == 1);
  }

  SUBCASE("mismatched dims") {
    LabelMap other({6, 6, 5}, {1.0, 1.0, 1.0});
    expect_error(ErrorCode::DimMismatch, [&] { evaluate_labelmaps(other, gt); });
  }

  SUBCASE("report text") {
    const auto lex = Lexicon::defaults();
    const auto table = format_report_table(evaluate_labelmaps(gt, gt), lex);
    CHECK(table.find("Organ") == 0);
    CHECK(table.find("HD95") != std::string::npos);
    CHECK(table.find("Liver") != std::string::npos);
    CHECK(table.find("Average (per organ)") != std::string::npos);
    const auto kv = format_report_kv(evaluate_labelmaps(gt, gt), lex);
    CHECK(kv.find("class6.dsc:1\n") != std::string::npos);
    CHECK(kv.find("average.miou:1\n") != std::string::npos);
  }
}

TEST_CASE("directory evaluation") {
  testutil::TempDir dir("eval");
  std::filesystem::create_directories(dir.path / "pred");
  std::filesystem::create_directories(dir.path / "gt");
  const auto lex = Lexicon::defaults();
  const Dims d{4, 4, 4};
  LabelMap g1(d, {1.0, 1.0, 1.0}), g2(d, {1.0, 1.0, 1.0});
  for (std::size_t v = 0; v < 20; ++v) g1.data[v] = 6;
  for (std::size_t v = 10; v < 40; ++v) g2.data[v] = 6;
  LabelMap p1 = g1, p2 = g2;
  for (std::size_t v = 15; v < 25; ++v) p1.data[v] = 6;
  for (std::size_t v = 10; v < 20; ++v) p2.data[v] = 0;
  save_labels(g1, dir.file("gt/a.vol"));
  save_labels(g2, dir.file("gt/b.vol"));

  SUBCASE("perfect predictions") {
    save_labels(g1, dir.file("pred/a.vol"));
    save_labels(g2, dir.file("pred/b.vol"));
    const auto r = evaluate_run(dir.file("pred"), dir.file("gt"), dir.file("out"), 14, lex);
    CHECK(r.per_organ.at(6).dsc == 1.0);
    CHECK(std::filesystem::exists(dir.file("out/aggregate.report.txt")));
    CHECK(std::filesystem::exists(dir.file("out/a.report.kv")));
  }
  SUBCASE("single volume equals direct evaluation") {
    save_labels(p1, dir.file("pred/a.vol"));
    const auto r = evaluate_run(dir.file("pred"), dir.file("gt"), dir.file("out"), 14, lex);
    CHECK(r.per_organ.at(6).dsc == evaluate_labelmaps(p1, g1).per_organ.at(6).dsc);
  }
  SUBCASE("two-volume aggregate is the mean") {
    save_labels(p1, dir.file("pred/a.vol"));
    save_labels(p2, dir.file("pred/b.vol"));
    const auto r = evaluate_run(dir.file("pred"), dir.file("gt"), dir.file("out"), 14, lex);
    const double d1 = 2.0 * 20.0 / (25.0 + 20.0), d2 = 2.0 * 20.0 / (20.0 + 30.0);
    CHECK(r.per_organ.at(6).dsc == Approx((d1 + d2) / 2.0).epsilon(1e-14));
    const double i1 = 20.0 / 25.0, i2 = 20.0 / 30.0;
    CHECK(r.per_organ.at(6).iou == Approx((i1 + i2) / 2.0).epsilon(1e-14));
  }
  SUBCASE("missing ground truth") {
    save_labels(p1, dir.file("pred/zzz.vol"));
    expect_error(ErrorCode::MissingPair,
                 [&] { evaluate_run(dir.file("pred"), dir.file("gt"), dir.file("out"), 14, lex); });
  }
}
