#include "textseg/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/rng.hpp"
#include "textseg/tensor_ops.hpp"
#include "textseg/volume_io.hpp"

namespace textseg {

void TrainRunConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::ConfigInvalid, "epochs must be >= 0");
  if (iterations_per_epoch < 1) throw Error(ErrorCode::ConfigInvalid, "iterations_per_epoch must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::ConfigInvalid, "lr must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "weight_decay must be >= 0");
  if (epochs > 0) ScheduleConfig{lr, min_lr, epochs, cycles}.validate();
  if (patch.d == 0 || patch.h == 0 || patch.w == 0) throw Error(ErrorCode::ConfigInvalid, "patch dims must be > 0");
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "pos_fraction not in [0, 1]");
  if (num_classes < 2) throw Error(ErrorCode::ConfigInvalid, "num_classes must be >= 2");
  loss.validate();
  prior.validate();
}

std::string TrainRunConfig::serialize() const {
  KeyValueFile kv;
  kv.add("epochs", std::to_string(epochs));
  kv.add("iterations_per_epoch", std::to_string(iterations_per_epoch));
  kv.add("lr", format_double(lr));
  kv.add("min_lr", format_double(min_lr));
  kv.add("cycles", std::to_string(cycles));
  kv.add("weight_decay", format_double(weight_decay));
  kv.add("epsilon", format_double(loss.epsilon));
  kv.add("gamma", format_double(loss.gamma));
  kv.add("lambda_text", format_double(loss.lambda_text));
  kv.add("lambda_rel", format_double(loss.lambda_rel));
  kv.add("prob_clamp", format_double(loss.prob_clamp));
  kv.add("seed", std::to_string(seed));
  kv.add("patch", std::to_string(patch.d) + "," + std::to_string(patch.h) + "," + std::to_string(patch.w));
  kv.add("pos_fraction", format_double(pos_fraction));
  kv.add("num_classes", std::to_string(num_classes));
  kv.add("d_max", format_double(prior.d_max));
  kv.add("dilate_anchor", prior.dilate_anchor ? "1" : "0");
  kv.add("dilation_radius", format_double(prior.dilation_radius));
  kv.add("restrict_to_prompt", restrict_to_prompt ? "1" : "0");
  return kv.serialize(':');
}

std::string TrainRunConfig::hash() const {
  const auto text = serialize();
  return hex32(crc32_of({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

TrainRunConfig TrainRunConfig::parse(std::string_view text) {
  const auto kv = KeyValueFile::parse(text, ':');
  TrainRunConfig c;
  static const std::set<std::string> known{"epochs",       "iterations_per_epoch", "lr",          "min_lr",
                                           "cycles",       "weight_decay",         "epsilon",     "gamma",
                                           "lambda_text",  "lambda_rel",           "prob_clamp",  "seed",
                                           "patch",        "pos_fraction",         "num_classes", "d_max",
                                           "dilate_anchor", "dilation_radius",     "restrict_to_prompt"};
  for (const auto& [k, v] : kv.entries()) {
    if (!known.count(k)) throw Error(ErrorCode::ConfigInvalid, "unknown training config key '" + k + "'");
  }
  auto geti = [&](const char* k, auto& dst) {
    if (kv.has(k)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(kv.get_int(k));
  };
  auto getd = [&](const char* k, double& dst) {
    if (kv.has(k)) dst = kv.get_double(k);
  };
  geti("epochs", c.epochs);
  geti("iterations_per_epoch", c.iterations_per_epoch);
  getd("lr", c.lr);
  getd("min_lr", c.min_lr);
  geti("cycles", c.cycles);
  getd("weight_decay", c.weight_decay);
  getd("epsilon", c.loss.epsilon);
  getd("gamma", c.loss.gamma);
  getd("lambda_text", c.loss.lambda_text);
  getd("lambda_rel", c.loss.lambda_rel);
  getd("prob_clamp", c.loss.prob_clamp);
  geti("seed", c.seed);
  if (kv.has("patch")) {
    const auto p = kv.get_doubles("patch");
    if (p.size() != 3) throw Error(ErrorCode::ConfigInvalid, "patch needs 3 values");
    c.patch = {static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]), static_cast<std::size_t>(p[2])};
  }
  getd("pos_fraction", c.pos_fraction);
  geti("num_classes", c.num_classes);
  getd("d_max", c.prior.d_max);
  if (kv.has("dilate_anchor")) c.prior.dilate_anchor = kv.get_int("dilate_anchor") != 0;
  getd("dilation_radius", c.prior.dilation_radius);
  if (kv.has("restrict_to_prompt")) c.restrict_to_prompt = kv.get_int("restrict_to_prompt") != 0;
  c.validate();
  return c;
}

TrainRunConfig TrainRunConfig::load(const std::string& path) { return parse(read_file(path)); }

LogitTensor OracleLogitSource::logits(std::size_t, const LabelMap& labels, std::array<std::size_t, 3>,
                                      const ParsedPrompt& prompt, std::uint64_t seed) const {
  LogitOracleConfig cfg = cfg_;
  cfg.seed = seed;
  if (suppress_prompted_) {
    for (int c : prompt.organs()) cfg.suppressed_classes.push_back(c);
  }
  return oracle_logits(labels, cfg, classes_);
}

LogitTensor FixedLogitSource::logits(std::size_t volume_index, const LabelMap& labels,
                                     std::array<std::size_t, 3> offset, const ParsedPrompt&, std::uint64_t) const {
  if (volume_index >= logits_.size()) throw Error(ErrorCode::IndexOutOfRange, "no logits for volume index");
  return crop(logits_[volume_index], offset, labels.dims);
}

std::uint32_t FixedLogitSource::checksum() const {
  std::vector<std::uint8_t> bytes;
  for (const auto& t : logits_) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    bytes.insert(bytes.end(), p, p + t.data.size() * sizeof(double));
  }
  return crc32_of(bytes);
}

std::string train_log_header() { return "epoch\titer\tlr\tdice\tce\tseg\ttext\trel\ttotal"; }

std::string format_train_log_line(int epoch, int iteration, double lr, const LossBreakdown& l) {
  std::string s = std::to_string(epoch) + "\t" + std::to_string(iteration);
  for (double v : {lr, l.dice, l.ce, l.seg, l.text, l.rel, l.total}) s += "\t" + format_double(v);
  return s;
}

namespace {

std::set<int> organs_in(const LabelMap& labels) {
  std::array<bool, 256> seen{};
  for (auto v : labels.data) seen[v] = true;
  std::set<int> out;
  for (int c = 1; c < 256; ++c) {
    if (seen[static_cast<std::size_t>(c)]) out.insert(c);
  }
  return out;
}

/// Organs a prompt needs in a volume: everything it mentions plus relation anchors.
std::set<int> required_organs(const ParsedPrompt& p) {
  auto organs = p.organs();
  std::set<int> out(organs.begin(), organs.end());
  for (const auto& r : p.relations) out.insert(r.anchor);
  return out;
}

bool contains_all(const std::set<int>& have, const std::set<int>& need) {
  return std::includes(have.begin(), have.end(), need.begin(), need.end());
}

std::uint32_t crc_doubles(const std::vector<TextEmbedding>& rows) {
  std::vector<std::uint8_t> bytes;
  for (const auto& r : rows) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.data());
    bytes.insert(bytes.end(), p, p + r.size() * sizeof(double));
  }
  return crc32_of(bytes);
}

std::uint32_t crc_labels(const std::vector<LabelMap>& maps) {
  std::vector<std::uint8_t> bytes;
  for (const auto& m : maps) bytes.insert(bytes.end(), m.data.begin(), m.data.end());
  return crc32_of(bytes);
}

std::string relation_key(std::size_t vol, const std::vector<Relation>& rels) {
  std::string k = std::to_string(vol);
  for (const auto& r : rels) k += ";" + std::to_string(r.anchor) + "-" + std::to_string(r.target);
  return k;
}

LogitTensor single_channel(const std::vector<double>& field, Dims dims, Spacing sp) {
  LogitTensor t(1, dims, sp);
  t.data = field;
  return t;
}

}  // namespace

TrainResult train_fusion(const std::vector<LabelMap>& volumes, const LogitSource& source,
                         const std::vector<CorpusRecord>& corpus, const TextEncoder& encoder,
                         const TrainRunConfig& cfg) {
  cfg.validate();
  if (volumes.empty()) throw Error(ErrorCode::EmptyInput, "no training volumes");
  if (corpus.empty()) throw Error(ErrorCode::EmptyInput, "empty prompt corpus");
  const int C = cfg.num_classes;
  for (const auto& v : volumes) v.validate(C);

  std::vector<std::set<int>> volume_organs;
  for (const auto& v : volumes) volume_organs.push_back(organs_in(v));
  std::vector<std::set<int>> needs;
  std::vector<std::set<int>> mentioned;
  std::vector<std::vector<std::size_t>> pool(volumes.size());
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    if (corpus[r].parsed.presence.size() != static_cast<std::size_t>(C)) {
      throw Error(ErrorCode::CorpusMisaligned, "prompt " + std::to_string(r) + " has a presence vector of wrong length");
    }
    needs.push_back(required_organs(corpus[r].parsed));
    const auto organs = corpus[r].parsed.organs();
    mentioned.emplace_back(organs.begin(), organs.end());
    bool fits = false;
    for (std::size_t v = 0; v < volumes.size(); ++v) {
      if (contains_all(volume_organs[v], needs.back())) {
        pool[v].push_back(r);
        fits = true;
      }
    }
    if (!fits) {
      throw Error(ErrorCode::CorpusMisaligned,
                  "prompt " + std::to_string(r) + " ('" + corpus[r].text + "') names an organ no volume contains");
    }
  }
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    if (pool[v].empty()) throw Error(ErrorCode::CorpusMisaligned, "volume " + std::to_string(v) + " has no prompt");
  }

  std::vector<TextEmbedding> embeddings;
  embeddings.reserve(corpus.size());
  for (const auto& rec : corpus) embeddings.push_back(encoder.embed(rec.text));
  const std::uint32_t emb_crc = crc_doubles(embeddings);
  const std::uint32_t label_crc = crc_labels(volumes);
  const std::uint32_t source_crc = source.checksum();

  TrainResult res;
  FusionParams params = init_fusion(C, mix_seed(cfg.seed, 1), encoder.dim());
  AdamWState opt = AdamWState::for_sizes(params.sizes());
  res.log.push_back(train_log_header());
  const Dims pdims{cfg.patch.d, cfg.patch.h, cfg.patch.w};
  std::map<std::string, PriorAssembly> prior_cache;
  std::uint64_t global = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, ScheduleConfig{cfg.lr, cfg.min_lr, cfg.epochs, cfg.cycles});
    EpochSummary summary;
    summary.lr = lr;
    for (int it = 0; it < cfg.iterations_per_epoch; ++it, ++global) {
      const std::uint64_t it_seed = mix_seed(cfg.seed, 1000 + global);
      Rng rng(it_seed);
      const std::size_t vol = rng.below(volumes.size());
      PatchSamplerConfig ps{cfg.patch, cfg.pos_fraction, 1, mix_seed(it_seed, 1)};
      const auto offset = sample_patch_offsets(volumes[vol], ps).front();
      const LabelMap patch_labels = crop(volumes[vol], offset, pdims);

      const auto patch_organs = organs_in(patch_labels);
      std::vector<std::size_t> fitting;
      for (auto r : pool[vol]) {
        if (contains_all(patch_organs, mentioned[r])) fitting.push_back(r);
      }
      const auto& candidates = fitting.empty() ? pool[vol] : fitting;
      const std::size_t rec_idx = candidates[rng.below(candidates.size())];
      const auto& rec = corpus[rec_idx];

      const LogitTensor visual = source.logits(vol, patch_labels, offset, rec.parsed, mix_seed(it_seed, 2));

      FusionTargets targets;
      targets.labels = &patch_labels;
      targets.presence = rec.parsed.presence;
      LogitTensor prior;
      const LogitTensor* prior_ptr = nullptr;
      if (!rec.parsed.relations.empty()) {
        const auto key = relation_key(vol, rec.parsed.relations);
        auto found = prior_cache.find(key);
        if (found == prior_cache.end()) {
          found = prior_cache
                      .emplace(key, assemble_prior_from_labels(rec.parsed.relations, volumes[vol], C, cfg.prior))
                      .first;
        }
        prior = crop(found->second.prior, offset, pdims);
        prior_ptr = &prior;
        for (const auto& region : found->second.regions) {
          const auto cropped = crop(single_channel(region.field, volumes[vol].dims, volumes[vol].spacing), offset, pdims);
          targets.relations.push_back({region.target, cropped.data});
        }
      }

      const auto step = fusion_backward(embeddings[rec_idx], visual, prior_ptr, targets, cfg.loss, params);
      adamw_step(params.tensors(), step.grads.tensors(), opt, lr, cfg.weight_decay);

      res.log.push_back(format_train_log_line(epoch + 1, it + 1, lr, step.loss));
      auto& m = summary.mean;
      m.dice += step.loss.dice;
      m.ce += step.loss.ce;
      m.seg += step.loss.seg;
      m.text += step.loss.text;
      m.rel += step.loss.rel;
      m.total += step.loss.total;
      bool has_region = false;
      for (const auto& r : targets.relations) {
        has_region = has_region || std::any_of(r.field.begin(), r.field.end(), [](double f) { return f > 0.0; });
      }
      if (has_region) {
        summary.rel_mean += step.loss.rel;
        ++summary.rel_iterations;
      }
    }
    const double n = cfg.iterations_per_epoch;
    auto& m = summary.mean;
    m.dice /= n;
    m.ce /= n;
    m.seg /= n;
    m.text /= n;
    m.rel /= n;
    m.total /= n;
    if (summary.rel_iterations) summary.rel_mean /= static_cast<double>(summary.rel_iterations);
    res.epochs.push_back(summary);
  }

  if (crc_doubles(embeddings) != emb_crc || crc_labels(volumes) != label_crc || source.checksum() != source_crc) {
    throw std::logic_error("frozen inputs changed during fusion training");
  }
  res.checkpoint.params = std::move(params);
  res.checkpoint.epoch = static_cast<std::uint64_t>(cfg.epochs);
  res.checkpoint.optimizer = std::move(opt);
  res.checkpoint.config_hash = cfg.hash();
  return res;
}

namespace {

LogitTensor apply_refine(const LogitTensor& visual, const RefineParams& refine, const InferenceConfig& cfg) {
  if (refine.channels != visual.channels) throw Error(ErrorCode::ShapeMismatch, "refinement head channel count differs");
  return sliding_window_apply(visual, cfg.patch, cfg.overlap, [&](const LogitTensor& patch) {
    return refine_forward(patch, refine, RefineMode::Eval, 0).output;
  });
}

}  // namespace

InferenceResult infer(const LogitTensor& visual_in, std::string_view prompt, const Lexicon& lex,
                      const TextEncoder& encoder, const FusionParams& fusion, const RefineParams* refine,
                      const InferenceConfig& cfg) {
  visual_in.validate();
  fusion.validate();
  const int C = visual_in.channels;
  if (fusion.classes != C) {
    throw Error(ErrorCode::ShapeMismatch, "fusion checkpoint has C=" + std::to_string(fusion.classes) +
                                              ", visual logits have " + std::to_string(C) + " channels");
  }
  if (encoder.dim() != fusion.embed_dim) throw Error(ErrorCode::ShapeMismatch, "encoder dim differs from checkpoint");
  const LogitTensor visual = refine ? apply_refine(visual_in, *refine, cfg) : visual_in;

  InferenceResult res;
  const ParsedPrompt parsed = parse_prompt(prompt, lex, C);
  res.presence_used = parsed.presence;
  res.alpha_bias.assign(static_cast<std::size_t>(C), 0.0);
  if (!parsed.any_organ()) {
    res.fallback_visual_only = true;
    res.mask = argmax_channels(visual);
    return res;
  }

  const auto bias = class_bias(fusion, encoder.embed(prompt));
  for (int c = 0; c < C; ++c) res.alpha_bias[static_cast<std::size_t>(c)] = fusion.alpha * bias[static_cast<std::size_t>(c)];

  PriorAssembly prior;
  const LogitTensor* prior_ptr = nullptr;
  if (!parsed.relations.empty()) {
    const LabelMap anchors = argmax_channels(visual);
    prior = assemble_prior_from_labels(parsed.relations, anchors, C, cfg.prior);
    for (const auto& r : parsed.relations) {
      const bool skipped = std::any_of(prior.skipped.begin(), prior.skipped.end(),
                                       [&](const Relation& s) { return s.anchor == r.anchor && s.target == r.target; });
      if (!skipped) res.relations_used.push_back(r);
    }
    if (!prior.regions.empty()) prior_ptr = &prior.prior;
  }

  // Softmax is monotone per voxel, so the argmax is taken on the fused logits.
  res.mask = argmax_channels(fuse_logits(visual, bias, fusion.alpha, fusion.beta, prior_ptr));
  if (cfg.restrict_to_prompt) {
    for (auto& v : res.mask.data) {
      if (!parsed.presence[v]) v = 0;
    }
  }
  return res;
}

LogitTensor visual_logits_from_volume(const Volume& raw, const IntensityModel& model, const InferenceConfig& cfg) {
  raw.validate();
  const Volume norm = normalize_intensity(raw);
  return sliding_window_apply(norm, cfg.patch, cfg.overlap,
                              [&](const Volume& patch) { return intensity_logits(patch, model); });
}

InferenceResult infer_volume(const Volume& raw, const IntensityModel& model, std::string_view prompt,
                             const Lexicon& lex, const TextEncoder& encoder, const FusionParams& fusion,
                             const RefineParams* refine, const InferenceConfig& cfg) {
  return infer(visual_logits_from_volume(raw, model, cfg), prompt, lex, encoder, fusion, refine, cfg);
}

MetricsReport evaluate_run(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_dir,
                           int num_classes, const Lexicon& lex) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pred_dir)) throw Error(ErrorCode::Io, "not a directory: " + pred_dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vol") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw Error(ErrorCode::EmptyInput, "no .vol predictions in " + pred_dir);
  fs::create_directories(out_dir);
  std::vector<MetricsReport> reports;
  for (const auto& name : names) {
    const fs::path gt = fs::path(gt_dir) / name;
    if (!fs::exists(gt)) throw Error(ErrorCode::MissingPair, "no ground truth for " + name + " in " + gt_dir);
    const auto pred = load_labels((fs::path(pred_dir) / name).string());
    const auto truth = load_labels(gt.string());
    auto report = evaluate_labelmaps(pred, truth, num_classes);
    const std::string stem = fs::path(name).stem().string();
    write_file((fs::path(out_dir) / (stem + ".report.txt")).string(), format_report_table(report, lex));
    write_file((fs::path(out_dir) / (stem + ".report.kv")).string(), format_report_kv(report, lex));
    reports.push_back(std::move(report));
  }
  auto agg = aggregate_reports(reports);
  write_file((fs::path(out_dir) / "aggregate.report.txt").string(), format_report_table(agg, lex));
  write_file((fs::path(out_dir) / "aggregate.report.kv").string(), format_report_kv(agg, lex));
  return agg;
}

}  // namespace textseg
