#include "simclr/cli/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

namespace simclr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_root;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Config file (key = value lines in [sections])");
  cmd->add_option("--set", c.overrides, "Override one key, section.key=value (repeatable)");
  cmd->add_option("--run-root", c.run_root, "Parent directory of run directories (default $SIMCLR_RUN_ROOT or ./runs)");
}

RunConfig load_config(const Common& c, const fs::path& fallback = {}) {
  RunConfig config;
  if (!c.config_path.empty()) {
    config = parse_config(read_text(c.config_path));
  } else if (!fallback.empty() && fs::exists(fallback)) {
    config = parse_config(read_text(fallback));
  }
  for (const auto& o : c.overrides) apply_override(config, o);
  config.validate();
  return config;
}

fs::path run_root(const Common& c) { return c.run_root.empty() ? default_run_root() : fs::path(c.run_root); }

void emit(std::ostream& out, const json& event) { out << event.dump() << '\n' << std::flush; }

/// Writes config.ini and metadata.json, runs `body`, then leaves a COMPLETE
/// or ERROR marker.
int run_in_dir(const fs::path& dir, const RunConfig& config, const std::string& command, std::ostream& out,
               std::ostream& err, const std::function<void(const fs::path&)>& body) {
  write_text_atomic(dir / "config.ini", to_text(config));
  write_text_atomic(dir / "metadata.json", run_metadata(config, command).dump(2) + "\n");
  fs::remove(dir / "ERROR");
  emit(out, {{"event", "start"}, {"command", command}, {"run_dir", dir.string()}});
  try {
    body(dir);
  } catch (const std::exception& e) {
    write_text_atomic(dir / "ERROR", std::string(e.what()) + "\n");
    emit(out, {{"event", "error"}, {"message", e.what()}});
    err << command << ": " << e.what() << '\n';
    return kExitFailure;
  }
  write_text_atomic(dir / "COMPLETE", "");
  emit(out, {{"event", "done"}, {"run_dir", dir.string()}});
  return kExitOk;
}

int new_run(const Common& c, const RunConfig& config, const std::string& command, std::ostream& out,
            std::ostream& err, const std::function<void(const fs::path&)>& body) {
  const auto dir = make_run_dir(run_root(c), command, config_digest(config));
  return run_in_dir(dir, config, command, out, err, body);
}

Corpus corpus_for(const RunConfig& config) {
  auto corpus = load_corpus(config.data);
  corpus.train.validate();
  corpus.test.validate();
  return corpus;
}

train::TrainConfig train_config_for(const RunConfig& config, const Corpus& corpus) {
  auto t = config.resolved_train();
  t.policy.fill = augment::channel_means(corpus.train.images);
  return t;
}

template <typename Fn>
auto with_precision(Precision p, Fn&& fn) {
  return p == Precision::f32 ? fn(float{}) : fn(double{});
}

Precision archive_precision(const tg::TensorArchive& ar) {
  for (const auto& [name, entry] : ar.entries()) {
    if (name.rfind("param/", 0) == 0) return entry.dtype == tg::DType::f32 ? Precision::f32 : Precision::f64;
  }
  throw FormatError("checkpoint holds no parameters");
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

// pretrain -------------------------------------------------------------------

template <typename S>
void pretrain_body(const fs::path& dir, const RunConfig& config, bool resume, std::ostream& out) {
  const auto corpus = corpus_for(config);
  train::RunFiles files;
  files.checkpoint = dir / "checkpoint.bin";
  files.metrics = dir / "metrics.csv";
  files.config_digest = config_digest(config);
  files.resume = resume;
  const auto on_epoch = [&](std::int64_t epoch, std::span<const train::StepMetrics> rows) {
    double loss = 0, acc = 0;
    for (const auto& r : rows) {
      loss += r.loss;
      acc += r.contrastive_acc;
    }
    const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
    emit(out, {{"event", "epoch"},
               {"epoch", epoch},
               {"steps", rows.size()},
               {"loss", loss / n},
               {"contrastive_acc", acc / n},
               {"lr", rows.empty() ? 0.0 : rows.back().lr}});
  };
  const auto r = train::run_pretraining<S>(train_config_for(config, corpus), corpus.train, files, on_epoch);
  const auto& m = r.metrics;
  write_json(dir / "summary.json", {{"epochs", r.trainer->epoch()},
                                    {"steps", r.trainer->step()},
                                    {"final_loss", m.empty() ? 0.0 : m.back().loss},
                                    {"final_contrastive_acc", m.empty() ? 0.0 : m.back().contrastive_acc}});
}

int cmd_pretrain(const Common& c, const std::string& resume_dir, std::ostream& out, std::ostream& err) {
  if (!resume_dir.empty()) {
    if (!c.config_path.empty() || !c.overrides.empty()) {
      err << "pretrain: --resume takes the config stored in the run directory\n";
      return kExitUsage;
    }
    const fs::path dir = resume_dir;
    if (!fs::exists(dir / "config.ini") || !fs::exists(dir / "checkpoint.bin")) {
      err << "pretrain: " << dir.string() << " holds no resumable run\n";
      return kExitFailure;
    }
    const auto config = parse_config(read_text(dir / "config.ini"));
    config.validate();
    return run_in_dir(dir, config, "pretrain", out, err, [&](const fs::path& d) {
      with_precision(config.precision, [&](auto s) { pretrain_body<decltype(s)>(d, config, true, out); });
    });
  }
  const auto config = load_config(c);
  return new_run(c, config, "pretrain", out, err, [&](const fs::path& d) {
    with_precision(config.precision, [&](auto s) { pretrain_body<decltype(s)>(d, config, false, out); });
  });
}

// checkpoint-based evaluation -----------------------------------------------------

struct Source {
  std::string checkpoint;
  std::string run;

  fs::path checkpoint_path() const { return checkpoint.empty() ? fs::path(run) / "checkpoint.bin" : fs::path(checkpoint); }
  fs::path fallback_config() const { return run.empty() ? fs::path() : fs::path(run) / "config.ini"; }
};

void add_source(CLI::App* cmd, Source& s) {
  auto* ck = cmd->add_option("--checkpoint", s.checkpoint, "Checkpoint file");
  auto* run = cmd->add_option("--run", s.run, "Pretraining run directory (checkpoint and config)");
  ck->excludes(run);
  run->excludes(ck);
}

json accuracy_json(const eval::LinearEvalResult& r) {
  return {{"train_accuracy", r.train_accuracy}, {"test_accuracy", r.test_accuracy}};
}

template <typename S>
void linear_body(const fs::path& dir, const RunConfig& config, const tg::TensorArchive& ar,
                 const std::string& representation, bool baselines, std::ostream& out) {
  const auto corpus = corpus_for(config);
  auto model = eval::model_from_archive<S>(ar);
  json results;
  const auto run = [&](eval::Representation rep) {
    const auto r = eval::linear_eval(*model, corpus.train, corpus.test, config.eval.linear, rep);
    results[eval::to_string(rep)] = accuracy_json(r);
    emit(out, {{"event", "linear_eval"}, {"representation", eval::to_string(rep)}, {"test_accuracy", r.test_accuracy}});
  };
  if (representation == "h" || representation == "both") run(eval::Representation::h);
  if (representation == "z" || representation == "both") run(eval::Representation::z);
  if (baselines) {
    const auto [enc, head] = train::get_architecture(ar);
    const auto rnd =
        eval::random_encoder_linear_eval<S>(enc, corpus.train, corpus.test, config.eval.linear, config.train.seed);
    results["random_encoder"] = accuracy_json(rnd);
    const auto pix = eval::linear_eval(eval::pixel_features(corpus.train.images), corpus.train.labels,
                                       eval::pixel_features(corpus.test.images), corpus.test.labels,
                                       corpus.train.classes, config.eval.linear);
    results["pixels"] = accuracy_json(pix);
    emit(out, {{"event", "baselines"},
               {"random_encoder", rnd.test_accuracy},
               {"pixels", pix.test_accuracy}});
  }
  const auto& head = model->head();
  if (head.config().kind == model::HeadKind::linear && head.output_dim() == model->encoder().representation_dim()) {
    const auto& w = head.parameters().front().tensor;
    const auto spectrum = eval::projection_spectrum(w.matrix(w.dim(0), w.dim(1)).template cast<double>());
    std::string csv = "index,squared_eigenvalue\n";
    for (std::size_t i = 0; i < spectrum.size(); ++i) csv += std::to_string(i) + "," + format_double(spectrum[i]) + "\n";
    write_text_atomic(dir / "spectrum.csv", csv);
  }
  write_json(dir / "results.json", results);
}

int cmd_linear(const Common& c, const Source& src, const std::string& representation, bool baselines,
               std::ostream& out, std::ostream& err) {
  if (representation != "h" && representation != "z" && representation != "both") {
    err << "linear-eval: --representation must be h, z or both\n";
    return kExitUsage;
  }
  const auto config = load_config(c, src.fallback_config());
  const auto ar = tg::TensorArchive::load(src.checkpoint_path());
  return new_run(c, config, "linear-eval", out, err, [&](const fs::path& d) {
    with_precision(archive_precision(ar),
                   [&](auto s) { linear_body<decltype(s)>(d, config, ar, representation, baselines, out); });
  });
}

int cmd_fine_tune(const Common& c, const Source& src, std::ostream& out, std::ostream& err) {
  const auto config = load_config(c, src.fallback_config());
  const auto ar = tg::TensorArchive::load(src.checkpoint_path());
  return new_run(c, config, "fine-tune", out, err, [&](const fs::path& d) {
    const auto corpus = corpus_for(config);
    const auto r = with_precision(archive_precision(ar), [&](auto s) {
      return eval::fine_tune<decltype(s)>(ar, corpus.train, corpus.test, config.eval.label_fraction,
                                          config.eval.fine_tune);
    });
    emit(out, {{"event", "fine_tune"}, {"label_fraction", config.eval.label_fraction}, {"test_accuracy", r.test_accuracy}});
    write_json(d / "results.json", {{"label_fraction", config.eval.label_fraction},
                                    {"epochs", config.eval.fine_tune.resolved_epochs(config.eval.label_fraction)},
                                    {"test_accuracy", r.test_accuracy}});
  });
}

json report_json(const eval::ProbeReport& r) {
  return {{"accuracy", r.accuracy}, {"baseline", r.baseline}, {"per_class", r.per_class}};
}

template <typename S>
void probe_body(const fs::path& dir, const RunConfig& config, const tg::TensorArchive& ar,
                const std::vector<eval::ProbeKind>& kinds, std::ostream& out) {
  const auto corpus = corpus_for(config);
  auto model = eval::model_from_archive<S>(ar);
  const auto& pc = config.eval.probe;
  json results;
  for (auto kind : kinds) {
    const auto pair = eval::transform_probe(*model, corpus.train.images, corpus.test.images, kind, pc);
    auto test_cfg = pc;
    test_cfg.seed = pc.seed ^ 0x7e57ull;
    const auto tr = eval::make_probe_dataset(corpus.train.images, kind, pc);
    const auto te = eval::make_probe_dataset(corpus.test.images, kind, test_cfg);
    const auto control = eval::shuffled_label_control(eval::extract_features(model->encoder(), tr.images), tr.labels,
                                                      eval::extract_features(model->encoder(), te.images), te.labels,
                                                      tr.classes, pc);
    const auto name = eval::to_string(kind);
    results[name] = {{"h", report_json(pair.h)}, {"g(h)", report_json(pair.z)}, {"shuffled_control", report_json(control)}};
    emit(out, {{"event", "probe"},
               {"kind", name},
               {"h", pair.h.accuracy},
               {"g(h)", pair.z.accuracy},
               {"baseline", pair.h.baseline},
               {"shuffled_control", control.accuracy}});
  }
  write_json(dir / "results.json", results);
}

int cmd_probe(const Common& c, const Source& src, const std::string& kind, std::ostream& out, std::ostream& err) {
  std::vector<eval::ProbeKind> kinds;
  if (kind == "all") {
    kinds = {eval::ProbeKind::color_vs_gray, eval::ProbeKind::rotation, eval::ProbeKind::corruption,
             eval::ProbeKind::sobel};
  } else {
    try {
      kinds = {eval::parse_probe_kind(kind)};
    } catch (const ContractError& e) {
      err << "probe: " << e.what() << '\n';
      return kExitUsage;
    }
  }
  const auto config = load_config(c, src.fallback_config());
  const auto ar = tg::TensorArchive::load(src.checkpoint_path());
  return new_run(c, config, "probe", out, err, [&](const fs::path& d) {
    with_precision(archive_precision(ar), [&](auto s) { probe_body<decltype(s)>(d, config, ar, kinds, out); });
  });
}

// ablations ------------------------------------------------------------------

template <typename S>
void ablate_body(const fs::path& dir, const RunConfig& config, bool grid, bool sweep, std::ostream& out) {
  const auto corpus = corpus_for(config);
  const auto base = train_config_for(config, corpus);
  const auto score_contrastive = [&](augment::AugmentationPolicy policy) {
    auto t = base;
    policy.fill = base.policy.fill;
    t.policy = std::move(policy);
    auto trainer = eval::pretrain<S>(t, corpus.train);
    return eval::linear_eval(trainer->model(), corpus.train, corpus.test, config.eval.linear).test_accuracy;
  };
  if (grid) {
    const auto result = eval::augmentation_grid(
        config.eval.grid_transforms,
        [&](const augment::AugmentationPolicy& p) {
          const double acc = score_contrastive(p);
          emit(out, {{"event", "grid_cell"}, {"test_accuracy", acc}});
          return acc;
        },
        config.augment.strength, config.augment.seed);
    write_text_atomic(dir / "grid.csv", grid_csv(result));
    for (const auto& e : result.errors) emit(out, {{"event", "grid_error"}, {"message", e}});
  }
  if (sweep) {
    const auto rows = eval::color_strength_sweep(config.eval.color_strengths, [&](train::TrainMode mode, double s) {
      const auto policy = augment::crop_color_policy(s, config.augment.seed);
      if (mode == train::TrainMode::contrastive) return score_contrastive(policy);
      auto t = base;
      t.mode = mode;
      t.policy = policy;
      t.policy.fill = base.policy.fill;
      auto trainer = eval::pretrain<S>(t, corpus.train);
      return eval::supervised_accuracy(*trainer, corpus.test);
    });
    std::string csv = "strength,contrastive,supervised\n";
    for (const auto& r : rows) {
      csv += format_double(r.strength) + "," + format_double(r.contrastive) + "," + format_double(r.supervised) + "\n";
      emit(out, {{"event", "color_strength"},
                 {"strength", r.strength},
                 {"contrastive", r.contrastive},
                 {"supervised", r.supervised}});
    }
    write_text_atomic(dir / "color_sweep.csv", csv);
  }
}

int cmd_ablate(const Common& c, bool color_sweep, bool skip_grid, std::ostream& out, std::ostream& err) {
  if (skip_grid && !color_sweep) {
    err << "ablate-augment: nothing to do with --no-grid and no --color-sweep\n";
    return kExitUsage;
  }
  const auto config = load_config(c);
  return new_run(c, config, "ablate-augment", out, err, [&](const fs::path& d) {
    with_precision(config.precision, [&](auto s) { ablate_body<decltype(s)>(d, config, !skip_grid, color_sweep, out); });
  });
}

int cmd_preview(const Common& c, Index count, int scale, int bins, Index pairs, std::ostream& out, std::ostream& err) {
  if (count < 1 || scale < 1 || bins < 1 || pairs < 1) {
    err << "augment-preview: --count, --scale, --bins and --pairs must be positive\n";
    return kExitUsage;
  }
  const auto config = load_config(c);
  return new_run(c, config, "augment-preview", out, err, [&](const fs::path& d) {
    const auto corpus = corpus_for(config);
    auto policy = config.augment.build();
    policy.fill = augment::channel_means(corpus.train.images);
    const Index n = std::min(count, corpus.train.size());
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    const auto originals = corpus.train.images.select(idx);
    const auto [v1, v2] = augment::make_view_pair(originals, policy, 0);
    for (Index i = 0; i < n; ++i) {
      const auto stem = std::to_string(i);
      write_png(d / ("original_" + stem + ".png"), originals.get(i), scale);
      write_png(d / ("view1_" + stem + ".png"), v1.get(i), scale);
      write_png(d / ("view2_" + stem + ".png"), v2.get(i), scale);
    }
    const auto stats = eval::crop_histogram_stats(corpus.train.images, pairs, bins, config.augment.seed);
    write_json(d / "histograms.json", {{"bins", bins},
                                       {"pairs", stats.pairs},
                                       {"same_image_chi_square", stats.same_image},
                                       {"different_image_chi_square", stats.different_image}});
    emit(out, {{"event", "preview"},
               {"images", n},
               {"same_image_chi_square", stats.same_image},
               {"different_image_chi_square", stats.different_image}});
  });
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive visual representation learning on a desk-scale budget", "simclr"};
  app.require_subcommand(1);

  Common pre_c, lin_c, ft_c, probe_c, abl_c, prev_c, print_c;
  Source lin_s, ft_s, probe_s;

  auto* pre = app.add_subcommand("pretrain", "Contrastive (or supervised) pretraining");
  add_common(pre, pre_c);
  std::string resume;
  pre->add_option("--resume", resume, "Continue an interrupted run directory");

  auto* lin = app.add_subcommand("linear-eval", "Linear classifier on frozen features");
  add_common(lin, lin_c);
  add_source(lin, lin_s);
  std::string representation = "h";
  bool baselines = false;
  lin->add_option("--representation", representation, "h, z or both");
  lin->add_flag("--baselines", baselines, "Also evaluate a random encoder and raw pixels");

  auto* ft = app.add_subcommand("fine-tune", "Fine-tune on a labeled fraction");
  add_common(ft, ft_c);
  add_source(ft, ft_s);

  auto* probe = app.add_subcommand("probe", "Transformation-prediction probes on h and g(h)");
  add_common(probe, probe_c);
  add_source(probe, probe_s);
  std::string kind = "all";
  probe->add_option("--kind", kind, "color_vs_gray, rotation, corruption, sobel or all");

  auto* abl = app.add_subcommand("ablate-augment", "Pairwise augmentation grid and color-strength sweep");
  add_common(abl, abl_c);
  bool color_sweep = false, no_grid = false;
  abl->add_flag("--color-sweep", color_sweep, "Also sweep color-distortion strength");
  abl->add_flag("--no-grid", no_grid, "Skip the pairwise grid");

  auto* prev = app.add_subcommand("augment-preview", "Write augmented view pairs as PNG files");
  add_common(prev, prev_c);
  Index count = 8, pairs = 256;
  int scale = 4, bins = 16;
  prev->add_option("--count", count, "Images to preview");
  prev->add_option("--scale", scale, "Pixel repetition factor");
  prev->add_option("--bins", bins, "Histogram bins");
  prev->add_option("--pairs", pairs, "Crop pairs for the histogram statistics");

  auto* print = app.add_subcommand("print-config", "Print the resolved configuration");
  add_common(print, print_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pre_c, resume, out, err);
    if (lin->parsed()) {
      if (lin_s.checkpoint.empty() && lin_s.run.empty()) throw ConfigError("linear-eval needs --checkpoint or --run");
      return cmd_linear(lin_c, lin_s, representation, baselines, out, err);
    }
    if (ft->parsed()) {
      if (ft_s.checkpoint.empty() && ft_s.run.empty()) throw ConfigError("fine-tune needs --checkpoint or --run");
      return cmd_fine_tune(ft_c, ft_s, out, err);
    }
    if (probe->parsed()) {
      if (probe_s.checkpoint.empty() && probe_s.run.empty()) throw ConfigError("probe needs --checkpoint or --run");
      return cmd_probe(probe_c, probe_s, kind, out, err);
    }
    if (abl->parsed()) return cmd_ablate(abl_c, color_sweep, no_grid, out, err);
    if (prev->parsed()) return cmd_preview(prev_c, count, scale, bins, pairs, out, err);
    if (print->parsed()) {
      out << to_text(load_config(print_c));
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace simclr::cli
