#include "textseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/pipelines.hpp"
#include "textseg/rng.hpp"
#include "textseg/service.hpp"
#include "textseg/tensor_ops.hpp"
#include "textseg/volume_io.hpp"

namespace textseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> vol_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vol") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw Error(ErrorCode::EmptyInput, "no .vol files in " + dir);
  return names;
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

Lexicon lexicon_from(const std::string& path) { return path.empty() ? Lexicon::defaults() : Lexicon::load(path); }

std::unique_ptr<TextEncoder> encoder_from(const std::string& table) {
  if (table.empty()) return std::make_unique<HashedEncoder>();
  return std::make_unique<LookupEncoder>(EmbeddingTable::load(table));
}

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> out;
  if (trim(text).empty()) return out;
  for (const auto& p : split(text, ',')) out.push_back(static_cast<int>(parse_int(trim(p))));
  return out;
}

std::string checkpoint_hash(const std::string& path) {
  const auto bytes = read_file(path);
  return hex32(crc32_of({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()}));
}

json inference_json(const InferenceResult& r, const Lexicon& lex, int classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (auto v : r.mask.data) ++counts[v];
  json rels = json::array();
  for (const auto& rel : r.relations_used) rels.push_back({{"anchor", rel.anchor}, {"target", rel.target}});
  json organs = json::array();
  for (int c = 1; c < classes; ++c) {
    if (r.presence_used[static_cast<std::size_t>(c)]) organs.push_back(lex.name(c));
  }
  return json{{"organs", organs},
              {"presence", r.presence_used},
              {"relations", rels},
              {"alpha_bias", r.alpha_bias},
              {"counts", counts},
              {"fallback_visual_only", r.fallback_visual_only}};
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-guided 3D segmentation fusion engine", "textseg"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int classes = kDefaultClasses;
  std::string lexicon_path;
  std::string embeddings_path;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate phantom volumes, labels and oracle logits");
  std::string gen_out;
  int gen_count = 4;
  std::string gen_spec;
  double gen_scale = 4.0, gen_noise = 0.5, gen_margin = 2.0;
  std::string gen_suppress;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of phantoms")->check(CLI::PositiveNumber);
  gen->add_option("--spec", gen_spec, "Phantom spec file (default: built-in jittered layout)");
  gen->add_option("--oracle-scale", gen_scale, "Oracle logit scale");
  gen->add_option("--noise", gen_noise, "Oracle noise sigma");
  gen->add_option("--margin", gen_margin, "Suppression margin");
  gen->add_option("--suppress", gen_suppress, "Comma-separated classes hidden from the oracle logits");
  gen->add_option("--seed", seed, "Random seed");

  // gen-prompts
  auto* gp = app.add_subcommand("gen-prompts", "Generate a prompt corpus aligned with label maps");
  std::string gp_labels, gp_out, gp_val_out;
  std::size_t gp_train = 650, gp_val = 130;
  double gp_rel = 0.2;
  gp->add_option("--labels", gp_labels, "Directory of label maps")->required();
  gp->add_option("--out", gp_out, "Training corpus file")->required();
  gp->add_option("--val-out", gp_val_out, "Validation corpus file (default: <out>.val)");
  gp->add_option("--n-train", gp_train, "Training prompts");
  gp->add_option("--n-val", gp_val, "Validation prompts");
  gp->add_option("--relation-prob", gp_rel, "Probability of a relation clause");
  gp->add_option("--seed", seed, "Random seed");
  gp->add_option("--lexicon", lexicon_path, "Lexicon file");

  // train-fusion
  auto* tf = app.add_subcommand("train-fusion", "Train the text-to-class bias head and fusion weights");
  std::string tf_labels, tf_corpus, tf_out, tf_log, tf_config, tf_logits;
  std::optional<int> tf_epochs, tf_iters;
  double tf_scale = 4.0, tf_noise = 0.5, tf_margin = 2.0;
  bool tf_no_suppress = false;
  std::optional<std::uint64_t> tf_seed;
  tf->add_option("--labels", tf_labels, "Directory of training label maps")->required();
  tf->add_option("--corpus", tf_corpus, "Training corpus file")->required();
  tf->add_option("--out", tf_out, "Checkpoint path")->required();
  tf->add_option("--log", tf_log, "Training log path (default: <out>.log)");
  tf->add_option("--config", tf_config, "Training config file");
  tf->add_option("--logits", tf_logits, "Directory of fixed visual logits (default: suppression oracle)");
  tf->add_option("--epochs", tf_epochs, "Epochs");
  tf->add_option("--iterations", tf_iters, "Iterations per epoch");
  tf->add_option("--oracle-scale", tf_scale, "Oracle logit scale");
  tf->add_option("--noise", tf_noise, "Oracle noise sigma");
  tf->add_option("--margin", tf_margin, "Suppression margin");
  tf->add_flag("--no-suppress", tf_no_suppress, "Do not hide prompted organs from the oracle");
  tf->add_option("--seed", tf_seed, "Random seed (overrides the config)");
  tf->add_option("--embeddings", embeddings_path, "Embedding table (default: hashed encoder)");

  // finetune-rh
  auto* rh = app.add_subcommand("finetune-rh", "Fine-tune the residual refinement head");
  std::string rh_logits, rh_labels, rh_out;
  RefineTrainConfig rh_cfg;
  rh->add_option("--logits", rh_logits, "Directory of visual logits")->required();
  rh->add_option("--labels", rh_labels, "Directory of label maps")->required();
  rh->add_option("--out", rh_out, "Checkpoint path")->required();
  rh->add_option("--epochs", rh_cfg.epochs, "Epochs");
  rh->add_option("--cycles", rh_cfg.cycles, "Cosine cycles");
  rh->add_option("--lr", rh_cfg.lr, "Learning rate");
  rh->add_option("--wd", rh_cfg.weight_decay, "Weight decay");
  rh->add_option("--dropout", rh_cfg.dropout_rate, "Dropout rate");
  rh->add_option("--seed", seed, "Random seed");

  // infer
  auto* inf = app.add_subcommand("infer", "Prompt-conditioned segmentation of one volume");
  std::string inf_logits, inf_volume, inf_model, inf_prompt, inf_fusion, inf_refine, inf_out;
  bool inf_restrict = false;
  InferenceConfig inf_cfg;
  std::size_t inf_patch = 96;
  inf->add_option("--logits", inf_logits, "Visual logits file");
  inf->add_option("--volume", inf_volume, "Raw intensity volume file");
  inf->add_option("--intensity-model", inf_model, "Intensity model for --volume");
  inf->add_option("--prompt", inf_prompt, "Text prompt")->required();
  inf->add_option("--fusion", inf_fusion, "Fusion checkpoint")->required();
  inf->add_option("--refine", inf_refine, "Refinement head checkpoint");
  inf->add_option("--out", inf_out, "Output mask path")->required();
  inf->add_flag("--restrict", inf_restrict, "Map organs the prompt does not mention to background");
  inf->add_option("--patch", inf_patch, "Sliding-window patch edge")->check(CLI::PositiveNumber);
  inf->add_option("--overlap", inf_cfg.overlap, "Sliding-window overlap")->check(CLI::Range(0.0, 0.99));
  inf->add_option("--lexicon", lexicon_path, "Lexicon file");
  inf->add_option("--embeddings", embeddings_path, "Embedding table");
  inf->add_option("--seed", seed, "Unused; accepted for uniformity");
  auto* logits_opt = inf->get_option("--logits");
  auto* volume_opt = inf->get_option("--volume");
  logits_opt->excludes(volume_opt);

  // eval
  auto* ev = app.add_subcommand("eval", "Compute segmentation metrics");
  std::string ev_pred, ev_gt, ev_pred_dir, ev_gt_dir, ev_out, ev_format = "table";
  ev->add_option("--pred", ev_pred, "Predicted label map");
  ev->add_option("--gt", ev_gt, "Ground-truth label map");
  ev->add_option("--pred-dir", ev_pred_dir, "Directory of predictions");
  ev->add_option("--gt-dir", ev_gt_dir, "Directory of ground truth");
  ev->add_option("--out", ev_out, "Report directory");
  ev->add_option("--format", ev_format, "Report printed to stdout")->check(CLI::IsMember({"table", "kv"}));
  ev->add_option("--classes", classes, "Number of classes");
  ev->add_option("--lexicon", lexicon_path, "Lexicon file");

  // parse-prompt
  auto* pp = app.add_subcommand("parse-prompt", "Show how a prompt is parsed");
  std::string pp_prompt;
  pp->add_option("--prompt", pp_prompt, "Text prompt")->required();
  pp->add_option("--lexicon", lexicon_path, "Lexicon file");
  pp->add_option("--classes", classes, "Number of classes");

  // serve
  auto* sv = app.add_subcommand("serve", "Serve the HTTP API for the prompt console");
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1", sv_fusion, sv_refine, sv_volumes, sv_logits, sv_model;
  sv->add_option("--port", sv_port, "Port (PORT env var overrides)");
  sv->add_option("--host", sv_host, "Bind address");
  sv->add_option("--fusion", sv_fusion, "Fusion checkpoint")->required();
  sv->add_option("--refine", sv_refine, "Refinement head checkpoint");
  sv->add_option("--volumes", sv_volumes, "Directory of raw volumes");
  sv->add_option("--logits", sv_logits, "Directory of visual logits, matched to volumes by file name");
  sv->add_option("--intensity-model", sv_model, "Intensity model for volumes without logits");
  sv->add_option("--lexicon", lexicon_path, "Lexicon file");
  sv->add_option("--embeddings", embeddings_path, "Embedding table");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  auto usage = [&](const std::string& msg, CLI::App* sub) {
    err << "error: " << msg << "\n\n" << sub->help();
    return 1;
  };

  try {
    if (*gen) {
      fs::create_directories(join_path(gen_out, "volumes"));
      fs::create_directories(join_path(gen_out, "labels"));
      fs::create_directories(join_path(gen_out, "logits"));
      fs::create_directories(join_path(gen_out, "specs"));
      LogitOracleConfig oc;
      oc.scale = gen_scale;
      oc.noise_sigma = gen_noise;
      oc.suppression_margin = gen_margin;
      oc.suppressed_classes = parse_id_list(gen_suppress);
      std::optional<PhantomSpec> base;
      if (!gen_spec.empty()) base = load_phantom_spec(gen_spec);
      PhantomSpec first;
      for (int i = 0; i < gen_count; ++i) {
        PhantomSpec spec = base ? *base : default_phantom_spec(mix_seed(seed, static_cast<std::uint64_t>(i)));
        spec.seed = mix_seed(seed, 100000 + static_cast<std::uint64_t>(i));
        if (i == 0) first = spec;
        const auto ph = generate_phantom(spec);
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%03d", i);
        save_volume(ph.volume, join_path(gen_out, std::string("volumes/") + name + ".vol"));
        save_labels(ph.labels, join_path(gen_out, std::string("labels/") + name + ".vol"));
        oc.seed = mix_seed(seed, 200000 + static_cast<std::uint64_t>(i));
        save_logits(oracle_logits(ph.labels, oc), join_path(gen_out, std::string("logits/") + name + ".vol"));
        write_file(join_path(gen_out, std::string("specs/") + name + ".spec"), serialize_phantom_spec(spec));
      }
      save_intensity_model(intensity_model_from_spec(first), join_path(gen_out, "intensity_model.txt"));
      out << "wrote " << gen_count << " phantoms to " << gen_out << "\n";
      return 0;
    }

    if (*gp) {
      const auto lex = lexicon_from(lexicon_path);
      std::vector<LabelMap> labels;
      for (const auto& n : vol_files(gp_labels)) labels.push_back(load_labels(join_path(gp_labels, n)));
      PromptCorpusConfig pc;
      pc.n_train = gp_train;
      pc.n_val = gp_val;
      pc.relation_probability = gp_rel;
      pc.seed = seed;
      const auto records = generate_prompt_corpus(labels, pc, lex);
      const std::vector<CorpusRecord> train(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(gp_train));
      const std::vector<CorpusRecord> val(records.begin() + static_cast<std::ptrdiff_t>(gp_train), records.end());
      save_corpus(train, gp_out);
      save_corpus(val, gp_val_out.empty() ? gp_out + ".val" : gp_val_out);
      out << "wrote " << train.size() << " training and " << val.size() << " validation prompts\n";
      return 0;
    }

    if (*tf) {
      TrainRunConfig cfg = tf_config.empty() ? TrainRunConfig{} : TrainRunConfig::load(tf_config);
      if (tf_seed) cfg.seed = *tf_seed;
      if (tf_epochs) cfg.epochs = *tf_epochs;
      if (tf_iters) cfg.iterations_per_epoch = *tf_iters;
      cfg.validate();
      const auto names = vol_files(tf_labels);
      std::vector<LabelMap> labels;
      for (const auto& n : names) labels.push_back(load_labels(join_path(tf_labels, n)));
      const auto corpus = load_corpus(tf_corpus, cfg.num_classes);
      std::unique_ptr<LogitSource> source;
      if (!tf_logits.empty()) {
        std::vector<LogitTensor> logits;
        for (const auto& n : names) logits.push_back(load_logits(join_path(tf_logits, n)));
        source = std::make_unique<FixedLogitSource>(std::move(logits));
      } else {
        LogitOracleConfig oc;
        oc.scale = tf_scale;
        oc.noise_sigma = tf_noise;
        oc.suppression_margin = tf_margin;
        source = std::make_unique<OracleLogitSource>(oc, cfg.num_classes, !tf_no_suppress);
      }
      const auto encoder = encoder_from(embeddings_path);
      const auto res = train_fusion(labels, *source, corpus, *encoder, cfg);
      save_checkpoint(res.checkpoint, tf_out);
      std::string log;
      for (const auto& line : res.log) log += line + "\n";
      write_file(tf_log.empty() ? tf_out + ".log" : tf_log, log);
      for (std::size_t e = 0; e < res.epochs.size(); ++e) {
        out << "epoch " << e + 1 << " lr " << format_double(res.epochs[e].lr) << " total "
            << format_double(res.epochs[e].mean.total) << "\n";
      }
      out << "alpha " << format_double(res.checkpoint.params.alpha) << " beta "
          << format_double(res.checkpoint.params.beta) << "\n";
      return 0;
    }

    if (*rh) {
      rh_cfg.seed = seed;
      std::vector<LogitTensor> logits;
      std::vector<LabelMap> labels;
      for (const auto& n : vol_files(rh_logits)) {
        const auto gt = join_path(rh_labels, n);
        if (!fs::exists(gt)) throw Error(ErrorCode::MissingPair, "no label map for " + n);
        logits.push_back(load_logits(join_path(rh_logits, n)));
        labels.push_back(load_labels(gt));
      }
      std::vector<RefineSample> samples;
      for (std::size_t i = 0; i < logits.size(); ++i) samples.push_back({&logits[i], &labels[i]});
      const auto res = finetune_refinement(samples, rh_cfg);
      save_refine(res.params, res.optimizer, rh_out);
      for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
        out << "epoch " << e + 1 << " dice_focal " << format_double(res.epoch_loss[e]) << "\n";
      }
      return 0;
    }

    if (*inf) {
      if (inf_logits.empty() == inf_volume.empty()) return usage("exactly one of --logits or --volume is required", inf);
      const auto lex = lexicon_from(lexicon_path);
      const auto encoder = encoder_from(embeddings_path);
      const auto ckpt = load_checkpoint(inf_fusion);
      std::optional<RefineParams> refine;
      if (!inf_refine.empty()) refine = load_refine(inf_refine, ckpt.params.classes);
      inf_cfg.restrict_to_prompt = inf_restrict;
      inf_cfg.patch = {inf_patch, inf_patch, inf_patch};
      InferenceResult res;
      if (!inf_logits.empty()) {
        res = infer(load_logits(inf_logits), inf_prompt, lex, *encoder, ckpt.params, refine ? &*refine : nullptr,
                    inf_cfg);
      } else {
        const auto model = inf_model.empty() ? intensity_model_from_spec(default_phantom_spec(0, false),
                                                                         ckpt.params.classes)
                                             : load_intensity_model(inf_model);
        res = infer_volume(load_volume(inf_volume), model, inf_prompt, lex, *encoder, ckpt.params,
                           refine ? &*refine : nullptr, inf_cfg);
      }
      save_labels(res.mask, inf_out);
      auto j = inference_json(res, lex, ckpt.params.classes);
      j["mask"] = inf_out;
      out << j.dump(2) << "\n";
      return 0;
    }

    if (*ev) {
      const auto lex = lexicon_from(lexicon_path);
      const bool single = !ev_pred.empty() || !ev_gt.empty();
      const bool dirs = !ev_pred_dir.empty() || !ev_gt_dir.empty();
      if (single == dirs) return usage("give either --pred/--gt or --pred-dir/--gt-dir", ev);
      if (single) {
        if (ev_pred.empty() || ev_gt.empty()) return usage("--pred and --gt go together", ev);
        const auto report = evaluate_labelmaps(load_labels(ev_pred), load_labels(ev_gt), classes);
        out << (ev_format == "kv" ? format_report_kv(report, lex) : format_report_table(report, lex));
        if (!ev_out.empty()) {
          fs::create_directories(ev_out);
          write_file(join_path(ev_out, "report.txt"), format_report_table(report, lex));
          write_file(join_path(ev_out, "report.kv"), format_report_kv(report, lex));
        }
      } else {
        if (ev_pred_dir.empty() || ev_gt_dir.empty()) return usage("--pred-dir and --gt-dir go together", ev);
        const auto report =
            evaluate_run(ev_pred_dir, ev_gt_dir, ev_out.empty() ? ev_pred_dir + "/reports" : ev_out, classes, lex);
        out << (ev_format == "kv" ? format_report_kv(report, lex) : format_report_table(report, lex));
      }
      return 0;
    }

    if (*pp) {
      const auto lex = lexicon_from(lexicon_path);
      const auto parsed = parse_prompt(pp_prompt, lex, classes);
      json organs = json::array();
      for (int c : parsed.organs()) organs.push_back({{"id", c}, {"name", lex.name(c)}});
      json rels = json::array();
      for (const auto& r : parsed.relations) {
        rels.push_back({{"anchor", r.anchor}, {"anchor_name", lex.name(r.anchor)}, {"target", r.target},
                        {"target_name", lex.name(r.target)}});
      }
      out << json{{"prompt", parsed.raw_text}, {"presence", parsed.presence}, {"organs", organs}, {"relations", rels}}
                 .dump(2)
          << "\n";
      return 0;
    }

    if (*sv) {
      if (sv_volumes.empty() && sv_logits.empty()) return usage("register volumes with --volumes or --logits", sv);
      if (const char* env = std::getenv("PORT")) sv_port = static_cast<int>(parse_int(env));
      const auto ckpt = load_checkpoint(sv_fusion);
      std::optional<RefineParams> refine;
      if (!sv_refine.empty()) refine = load_refine(sv_refine, ckpt.params.classes);
      InferenceConfig cfg;
      SegmentationService service(ckpt.params, refine, checkpoint_hash(sv_fusion), lexicon_from(lexicon_path),
                                  encoder_from(embeddings_path), cfg);
      const auto model = sv_model.empty()
                             ? intensity_model_from_spec(default_phantom_spec(0, false), ckpt.params.classes)
                             : load_intensity_model(sv_model);
      const auto names = vol_files(sv_volumes.empty() ? sv_logits : sv_volumes);
      for (const auto& n : names) {
        RegisteredVolume rv;
        rv.id = fs::path(n).stem().string();
        if (!sv_volumes.empty()) rv.volume = load_volume(join_path(sv_volumes, n));
        if (!sv_logits.empty() && fs::exists(join_path(sv_logits, n))) {
          rv.visual = load_logits(join_path(sv_logits, n));
        } else {
          rv.visual = visual_logits_from_volume(*rv.volume, model, cfg);
        }
        service.add_volume(std::move(rv));
      }
      out << "serving " << names.size() << " volumes on http://" << sv_host << ":" << sv_port << std::endl;
      http_serve(service, sv_host, sv_port);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace textseg
