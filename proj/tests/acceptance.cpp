// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>
#include <unistd.h>

#include "curated_prompts.hpp"
#include "generators.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/metrics.hpp"
#include "textseg/pipelines.hpp"
#include "textseg/spatial_prior.hpp"
#include "textseg/tensor_ops.hpp"
#include "textseg/volume_io.hpp"

using namespace textseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// Criterion 1.
Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  gradcheck::Worst fusion, refine;
  for (int c : {3, 14}) {
    for (int patch = 0; patch < 20; ++patch) {
      fusion.merge(gradcheck::fusion_patch(rng, c, {6, 6, 6}, 24));
      refine.merge(gradcheck::refine_patch(rng, c, {6, 6, 6}, 24, patch % 2 == 0 ? 0.0 : 0.1));
    }
  }
  const double secs = seconds_since(t0);
  const double worst = std::max(fusion.error, refine.error);
  return {worst < 1e-4 && secs < 120.0,
          "max rel err fusion " + fmt("%.2e", fusion.error) + " at " + fusion.where + ", refine " +
              fmt("%.2e", refine.error) + " at " + refine.where + "; " + std::to_string(fusion.checked + refine.checked) +
              " entries over 40+40 patches (" + std::to_string(refine.kink_steps) +
              " refine entries re-stepped at h=1e-7 across a relu kink) in " + fmt("%.1f", secs) + " s"};
}

// Criterion 2.
Outcome edt_exactness() {
  Rng rng(77);
  int exact = 0;
  for (int i = 0; i < 50; ++i) {
    const Dims d{1 + rng.below(16), 1 + rng.below(16), 1 + rng.below(16)};
    const Spacing sp = i % 2 == 0 ? Spacing{1.0, 1.0, 1.0}
                                  : Spacing{rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0)};
    auto m = testutil::random_mask(rng, d, sp, rng.uniform(0.005, 0.3));
    if (m.empty()) m.bits[rng.below(d.voxels())] = 1;
    exact += squared_edt(m).values == oracle::brute_sq_edt(m) ? 1 : 0;
  }
  return {exact == 50, std::to_string(exact) + "/50 masks bit-identical (25 unit, 25 anisotropic spacing)"};
}

// Criterion 3.
Outcome metric_oracles() {
  Rng rng(4242);
  double worst = 0.0;
  int definedness_mismatch = 0;
  for (int i = 0; i < 50; ++i) {
    const Dims d{1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12)};
    const Spacing sp{rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5)};
    const auto p = testutil::random_mask(rng, d, sp, rng.uniform(0.0, 0.4));
    const auto g = testutil::random_mask(rng, d, sp, rng.uniform(0.0, 0.4));
    worst = std::max(worst, std::abs(dsc(p, g) - oracle::dsc(p, g)));
    worst = std::max(worst, std::abs(iou(p, g) - oracle::iou(p, g)));
    const auto h = hd95(p, g), ho = oracle::hd95(p, g);
    if (h.has_value() != ho.has_value()) ++definedness_mismatch;
    else if (h) worst = std::max(worst, std::abs(*h - *ho));
    const auto r = rvd(p, g), ro = oracle::rvd(p, g);
    if (r.has_value() != ro.has_value()) ++definedness_mismatch;
    else if (r) worst = std::max(worst, std::abs(*r - *ro));
  }
  return {worst <= 1e-9 && definedness_mismatch == 0,
          "50 pairs, max |diff| " + fmt("%.2e", worst) + ", definedness mismatches " +
              std::to_string(definedness_mismatch)};
}

// Criterion 4.
Outcome fusion_identity() {
  const auto lex = Lexicon::defaults();
  const HashedEncoder enc;
  auto p = init_fusion(14, 99);
  p.alpha = 0.0;
  p.beta = 0.0;
  const std::vector<std::string> prompts{"segment the liver and spleenic organ",
                                         "the region around the kidney that belongs to the liver",
                                         "the stomach near the spleen", "right kidney"};
  int identical = 0;
  for (int i = 0; i < 10; ++i) {
    const auto ph = generate_phantom(default_phantom_spec(500 + static_cast<std::uint64_t>(i)));
    LogitOracleConfig oc;
    oc.noise_sigma = 1.0;
    oc.seed = static_cast<std::uint64_t>(i);
    oc.suppressed_classes = {i % 2 == 0 ? 6 : 1};
    const auto visual = oracle_logits(ph.labels, oc);
    const auto r = infer(visual, prompts[static_cast<std::size_t>(i) % prompts.size()], lex, enc, p, nullptr, {});
    identical += r.mask.data == argmax_channels(visual).data ? 1 : 0;
  }
  return {identical == 10, std::to_string(identical) + "/10 phantoms bit-identical to visual argmax"};
}

struct Canonical {
  TrainResult train;
  std::string checkpoint_bytes;
  std::string log_text;
  std::vector<std::string> mask_bytes;
  std::map<int, std::vector<double>> prompted_fused, prompted_visual, other_fused, other_visual;
  int text_aligned = 0;
  std::size_t val_prompts = 0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

/// The desk-scale suppression experiment: 8 training and 4 held-out
/// phantoms, 650 training and 130 validation prompts, the suppression oracle
/// (scale 8, noise 0.25, margin 2) and the default training hyperparameters.
Canonical run_canonical(const fs::path& scratch) {
  const auto t0 = Clock::now();
  Canonical out;
  std::vector<LabelMap> train, val;
  for (std::uint64_t s = 1; s <= 8; ++s) train.push_back(generate_phantom(default_phantom_spec(s)).labels);
  for (std::uint64_t s = 101; s <= 104; ++s) val.push_back(generate_phantom(default_phantom_spec(s)).labels);

  const auto lex = Lexicon::defaults();
  PromptCorpusConfig tc;
  tc.n_train = 650;
  tc.n_val = 0;
  tc.seed = 11;
  const auto corpus = generate_prompt_corpus(train, tc, lex);
  PromptCorpusConfig vc;
  vc.n_train = 0;
  vc.n_val = 130;
  vc.seed = 12;
  const auto held_out = generate_prompt_corpus(val, vc, lex);

  LogitOracleConfig oc;
  oc.scale = 8.0;
  oc.noise_sigma = 0.25;
  oc.suppression_margin = 2.0;
  const OracleLogitSource source(oc, 14, true);
  const HashedEncoder enc;
  TrainRunConfig cfg;  // lr 2e-3, wd 1e-4, 20 epochs, lambda_text = lambda_rel = 0.2
  cfg.seed = 5;
  out.train = train_fusion(train, source, corpus, enc, cfg);
  out.train_seconds = seconds_since(t0);

  fs::create_directories(scratch);
  save_checkpoint(out.train.checkpoint, (scratch / "fusion.ckpt").string());
  out.checkpoint_bytes = read_file((scratch / "fusion.ckpt").string()) + read_file((scratch / "fusion.ckpt.hdr").string());
  for (const auto& line : out.train.log) out.log_text += line + "\n";

  const auto& params = out.train.checkpoint.params;
  out.val_prompts = held_out.size();
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const auto& rec = held_out[i];
    const auto& gt = val[rec.source];
    LogitOracleConfig o = oc;
    o.seed = 9000 + i;
    o.suppressed_classes = rec.parsed.organs();
    const auto visual = oracle_logits(gt, o);
    const auto vis_mask = argmax_channels(visual);
    const auto res = infer(visual, rec.text, lex, enc, params, nullptr, {});
    const auto mask_path = (scratch / ("mask_" + std::to_string(i) + ".vol")).string();
    save_labels(res.mask, mask_path);
    out.mask_bytes.push_back(read_file(mask_path));

    const auto b = class_bias(params, enc.embed(rec.text));
    bool aligned = true;
    for (int c = 1; c < 14; ++c) {
      const bool on = 1.0 / (1.0 + std::exp(-b[static_cast<std::size_t>(c)])) > 0.5;
      if (on != (rec.parsed.presence[static_cast<std::size_t>(c)] != 0)) aligned = false;
    }
    out.text_aligned += aligned ? 1 : 0;

    for (int c : {1, 2, 3, 6, 7}) {
      const auto g = binarize(gt, c);
      const double fused = dsc(binarize(res.mask, c), g), vis = dsc(binarize(vis_mask, c), g);
      if (rec.parsed.presence[static_cast<std::size_t>(c)]) {
        out.prompted_fused[c].push_back(fused);
        out.prompted_visual[c].push_back(vis);
      } else {
        out.other_fused[c].push_back(fused);
        out.other_visual[c].push_back(vis);
      }
    }
  }
  out.total_seconds = seconds_since(t0);
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double pooled_mean(const std::map<int, std::vector<double>>& m) {
  std::vector<double> all;
  for (const auto& [c, v] : m) all.insert(all.end(), v.begin(), v.end());
  return mean(all);
}

// Criterion 5.
Outcome recovery(const Canonical& run) {
  const double vis = pooled_mean(run.prompted_visual), fused = pooled_mean(run.prompted_fused);
  double worst_shift = 0.0;
  for (const auto& [c, v] : run.other_fused) {
    worst_shift = std::max(worst_shift, std::abs(mean(v) - mean(run.other_visual.at(c))));
  }
  std::string per_organ;
  for (const auto& [c, v] : run.prompted_fused) per_organ += " c" + std::to_string(c) + "=" + fmt("%.4f", mean(v));
  const auto& ep = run.train.epochs;
  const bool loss_fell = ep.back().mean.total < ep.front().mean.total;
  const bool ok = vis < 0.05 && fused >= 0.8 && worst_shift <= 0.02 && run.total_seconds < 900.0 && loss_fell;
  return {ok, "suppressed visual-only Dice " + fmt("%.4f", vis) + ", prompted fused Dice " + fmt("%.4f", fused) +
                  " (" + per_organ.substr(1) + "), non-prompted max |shift| " + fmt("%.4f", worst_shift) +
                  ", total loss " + fmt("%.4f", ep.front().mean.total) + " -> " + fmt("%.4f", ep.back().mean.total) +
                  ", wall " + fmt("%.1f", run.total_seconds) + " s"};
}

// Criterion 6.
Outcome text_alignment(const Canonical& run) {
  const double frac = double(run.text_aligned) / double(run.val_prompts);
  return {run.val_prompts == 130 && frac >= 0.95,
          std::to_string(run.text_aligned) + "/" + std::to_string(run.val_prompts) + " held-out prompts fully aligned"};
}

// Criterion 7.
Outcome relation_priors(const Canonical& run) {
  const bool spots = relation_prior_value(0.0, 3.0) == 1.0 && relation_prior_value(2.0, 3.0) == 0.5 &&
                     relation_prior_value(4.0, 3.0) == 0.0 && relation_prior_value(9.0, 3.0) == 0.0;
  const auto& ep = run.train.epochs;
  const bool had_relations = ep.front().rel_iterations > 0 && ep.back().rel_iterations > 0;
  const bool fell = had_relations && ep.back().rel_mean < ep.front().rel_mean;
  return {spots && fell, std::string("spot values ") + (spots ? "exact" : "WRONG") + ", relation loss epoch 1 " +
                             fmt("%.4f", ep.front().rel_mean) + " -> epoch " + std::to_string(ep.size()) + " " +
                             fmt("%.4f", ep.back().rel_mean) + " (" + std::to_string(ep.front().rel_iterations) +
                             " and " + std::to_string(ep.back().rel_iterations) + " relation iterations)"};
}

// Criterion 8.
Outcome determinism(const Canonical& a, const Canonical& b) {
  const bool ckpt = a.checkpoint_bytes == b.checkpoint_bytes;
  const bool log = a.log_text == b.log_text;
  const bool masks = a.mask_bytes == b.mask_bytes;
  return {ckpt && log && masks, std::string("checkpoint ") + (ckpt ? "identical" : "DIFFERS") + ", log " +
                                    (log ? "identical" : "DIFFERS") + ", " + std::to_string(a.mask_bytes.size()) +
                                    " masks " + (masks ? "identical" : "DIFFER")};
}

// Criterion 9.
Outcome parser_fidelity() {
  const auto lex = Lexicon::defaults();
  std::size_t ok = 0;
  const auto& set = testutil::curated_prompts();
  for (const auto& c : set) {
    const auto p = parse_prompt(c.text, lex);
    ok += (p.organs() == c.organs && p.relations == c.relations) ? 1 : 0;
  }
  return {ok == set.size(), std::to_string(ok) + "/" + std::to_string(set.size()) + " curated prompts parsed exactly"};
}

}  // namespace

int main() {
  const auto scratch = fs::temp_directory_path() / ("textseg_acceptance_" + std::to_string(::getpid()));
  int failures = 0;
  auto report = [&](int n, const Outcome& o) {
    std::printf("criterion %d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, gradients());
  report(2, edt_exactness());
  report(3, metric_oracles());
  report(4, fusion_identity());
  const auto first = run_canonical(scratch / "run1");
  const auto second = run_canonical(scratch / "run2");
  report(5, recovery(first));
  report(6, text_alignment(first));
  report(7, relation_priors(first));
  report(8, determinism(first, second));
  report(9, parser_fidelity());
  fs::remove_all(scratch);

  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
