// sorec: synth / preprocess / train / eval / gradcheck / baseline / layers.
//
// Exit codes: 0 success, 1 data or runtime error, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sorec/baseline.hpp"
#include "sorec/dataset_io.hpp"
#include "sorec/manifest.hpp"
#include "sorec/report.hpp"
#include "sorec/snapshot.hpp"
#include "sorec/train_eval.hpp"

namespace fs = std::filesystem;
using namespace sorec;

namespace {

constexpr int kOk = 0, kDataError = 1, kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- option bundles ----

struct ModelOptions {
  std::string arch = "appearance";
  std::string scale = "desk";
  std::string agg = "all";
  int tau = -1;  // -1: keep the spec's value
  std::string aff_image = "flow";
};

struct ModelRecord {
  ModelOptions opt;
  std::uint64_t seed = 1;
  std::size_t crop_side = 64;
};

void add_model_flags(CLI::App& cmd, ModelOptions& m) {
  cmd.add_option("--arch", m.arch, "appearance | tm | st | fusion spec such as \"GTM_SML(RL5_3:app,RL5_3:aff,RL6)\"")
      ->capture_default_str();
  cmd.add_option("--scale", m.scale, "network scale")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  cmd.add_option("--agg", m.agg, "frame aggregation for temporal graphs")
      ->check(CLI::IsMember({"last", "all"}))
      ->capture_default_str();
  cmd.add_option("--tau", m.tau, "affordance delay for GST_LA (overrides the spec)")->check(CLI::NonNegativeNumber);
  cmd.add_option("--aff-image", m.aff_image, "affordance input of single-image graphs")
      ->check(CLI::IsMember({"flow", "hand"}))
      ->capture_default_str();
}

ScaleConfig scale_config(const std::string& s) { return s == "full" ? ScaleConfig::full() : ScaleConfig::desk(); }

Aggregation aggregation(const ModelOptions& m) {
  return m.agg == "last" ? Aggregation::LastFrame : Aggregation::AllFrames;
}

AffordanceImage aff_image(const ModelOptions& m) {
  return m.aff_image == "hand" ? AffordanceImage::HandMap : AffordanceImage::FlowTemplate;
}

NetworkGraph build_graph(const ModelOptions& m, std::uint64_t seed) {
  const ScaleConfig sc = scale_config(m.scale);
  if (m.arch == "appearance") return build_appearance_cnn(sc, seed);
  if (m.arch == "tm") return build_tm_cnn(sc, seed);
  if (m.arch == "st") return build_st_cnn_lstm(sc, seed);
  FusionSpec spec = parse_arch_spec(m.arch);  // ArchSpecError -> usage error
  if (m.tau >= 0) {
    if (spec.ft != FusionType::LA) throw UsageError("--tau applies only to GST_LA architectures");
    spec.delay_tau = m.tau;
  }
  spec.aggregation = aggregation(m);
  return build_fused(spec, sc, seed);
}

nlohmann::json record_json(const ModelRecord& r) {
  return {{"arch", r.opt.arch},  {"scale", r.opt.scale},         {"agg", r.opt.agg},
          {"tau", r.opt.tau},    {"aff_image", r.opt.aff_image}, {"seed", r.seed},
          {"crop_side", r.crop_side}};
}

ModelRecord read_record(const fs::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw DataError("no model.json in " + dir.string());
  try {
    const auto j = nlohmann::json::parse(is);
    ModelRecord r;
    r.opt.arch = j.at("arch");
    r.opt.scale = j.at("scale");
    r.opt.agg = j.at("agg");
    r.opt.tau = j.at("tau");
    r.opt.aff_image = j.at("aff_image");
    r.seed = j.at("seed");
    r.crop_side = j.at("crop_side");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed model.json in " + dir.string() + ": " + e.what());
  }
}

void save_model(const fs::path& dir, NetworkGraph& g, const ModelRecord& r) {
  fs::create_directories(dir);
  std::vector<NamedTensor> named;
  for (const auto& [name, t] : g.parameters()) named.emplace_back(name, *t);
  save_snapshot(named, (dir / "model.smtc").string());
  std::ofstream((dir / "model.json")) << record_json(r).dump(2) << '\n';
}

NetworkGraph load_model(const fs::path& dir, ModelRecord& r) {
  r = read_record(dir);
  NetworkGraph g = build_graph(r.opt, r.seed);
  const auto named = load_snapshot((dir / "model.smtc").string());
  auto params = g.parameters();
  if (named.size() != params.size())
    throw DataError("checkpoint " + dir.string() + " holds " + std::to_string(named.size()) + " tensors, graph needs " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (named[i].first != params[i].first || named[i].second.shape() != params[i].second->shape())
      throw DataError("checkpoint tensor '" + named[i].first + "' does not match graph parameter '" +
                      params[i].first + "'");
    *params[i].second = named[i].second;
  }
  return g;
}

SplitRatios parse_ratios(const std::string& s) {
  SplitRatios r;
  char c1 = 0, c2 = 0;
  std::istringstream is(s);
  if (!(is >> r.train >> c1 >> r.val >> c2 >> r.test) || c1 != ',' || c2 != ',' || !(is >> std::ws).eof())
    throw UsageError("--ratios expects three comma-separated fractions, got '" + s + "'");
  try {
    r.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--ratios: ") + e.what());
  }
  return r;
}

struct Splits {
  std::vector<ClipStreams> train, val, test;
};

Splits split_streams(const std::vector<ClipStreams>& clips, const SplitRatios& r, std::uint64_t seed) {
  std::vector<int> subjects;
  for (const auto& c : clips) subjects.push_back(c.subject);
  const SplitAssignment a = split_by_subject(subjects, r, seed);
  if (a.degenerate) std::clog << "warning: a single subject; all clips go to the training part\n";
  Splits s;
  for (const auto& c : clips) switch (a.part_of(c.subject)) {
      case SplitAssignment::Part::Train: s.train.push_back(c); break;
      case SplitAssignment::Part::Val: s.val.push_back(c); break;
      case SplitAssignment::Part::Test: s.test.push_back(c); break;
      case SplitAssignment::Part::None: break;
    }
  return s;
}

void log_config(CLI::App& root, CLI::App& cmd, const std::string& out_dir, bool print = true) {
  // root options plus this subcommand's section only
  std::istringstream all(root.config_to_str(true, false));
  std::string text = "# " + cmd.get_name() + "\n", line;
  while (std::getline(all, line)) {
    const auto dot = line.find('.'), eq = line.find('=');
    if (dot == std::string::npos || dot > eq || line.compare(0, dot, cmd.get_name()) == 0) text += line + "\n";
  }
  if (print) std::clog << "resolved config:\n" << text;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / ("resolved_" + cmd.get_name() + ".toml")) << text;
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sensorimotor object recognition toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "layered TOML/INI config; flags override it");
  std::string out_root = "sorec_out";
  app.add_option("--out-root", out_root, "default output root")->envname("SOREC_OUT_ROOT")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "render a synthetic RGB-D corpus and its manifest");
  std::string synth_out;
  int subjects = 4;
  std::size_t per_combo = 1;
  std::uint64_t synth_seed = 1;
  std::string synth_ratios = "0.25,0.25,0.5";
  synth->add_option("--out", synth_out, "corpus directory (default <out-root>/corpus)");
  synth->add_option("--subjects", subjects, "number of subjects")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--per-combo", per_combo, "clips per valid object/affordance pair per subject")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--ratios", synth_ratios, "train,val,test subject fractions for split.json")
      ->capture_default_str();

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "run the front-end on every manifest clip");
  std::string prep_manifest, prep_out;
  std::size_t prep_crop = 72;
  prep->add_option("--manifest", prep_manifest, "manifest.jsonl")->required();
  prep->add_option("--out", prep_out, "stream directory (default <out-root>/streams)");
  prep->add_option("--crop", prep_crop, "center crop side in pixels")->check(CLI::PositiveNumber)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a network on preprocessed streams");
  ModelOptions tr_model;
  TrainConfig tr_cfg;
  std::string tr_data, tr_out, tr_ratios = "0.25,0.25,0.5";
  tr->add_option("--data", tr_data, "stream directory written by preprocess")->required();
  tr->add_option("--out", tr_out, "model directory (default <out-root>/model)");
  add_model_flags(*tr, tr_model);
  tr->add_option("--seed", tr_cfg.seed, "initialization, split and shuffling seed")->capture_default_str();
  tr->add_option("--epochs", tr_cfg.epochs, "epochs")->capture_default_str();
  tr->add_option("--lr", tr_cfg.lr, "initial learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--momentum", tr_cfg.momentum, "SGD momentum")->capture_default_str();
  tr->add_option("--patience", tr_cfg.plateau_patience, "plateau patience in epochs")->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size, "mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--crop", tr_cfg.crop_side, "network input side")->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--ratios", tr_ratios, "train,val,test subject fractions")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a trained model on the test subjects");
  std::string ev_model, ev_data, ev_out, ev_ratios = "0.25,0.25,0.5", ev_agg;
  std::uint64_t ev_split_seed = 0;
  ev->add_option("--model", ev_model, "model directory written by train")->required();
  ev->add_option("--data", ev_data, "stream directory")->required();
  ev->add_option("--out", ev_out, "report directory (default: the model directory)");
  ev->add_option("--agg", ev_agg, "override the model's aggregation")->check(CLI::IsMember({"last", "all"}));
  ev->add_option("--split-seed", ev_split_seed, "split seed (default: the model's seed)");
  ev->add_option("--ratios", ev_ratios, "train,val,test subject fractions")->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "compare reverse-mode gradients with finite differences");
  std::vector<std::string> gc_arch;
  std::string gc_scale = "desk";
  double gc_tol = 1e-3;
  std::size_t gc_dirs = 1, gc_frames = 20;
  std::uint64_t gc_seed = 1;
  bool gc_faulty = false;
  gc->add_option("--arch", gc_arch, "architectures (default: the ten reference families)");
  gc->add_option("--scale", gc_scale, "network scale")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  gc->add_option("--tol", gc_tol, "maximum relative error")->capture_default_str();
  gc->add_option("--directions", gc_dirs, "random directions per tensor (0 = every coordinate)")->capture_default_str();
  gc->add_option("--frames", gc_frames, "sequence length for temporal graphs")->check(CLI::PositiveNumber)
      ->capture_default_str();
  gc->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gc->add_flag("--faulty-relu", gc_faulty, "debug: corrupt the ReLU backward rule");

  // baseline
  auto* bl = app.add_subcommand("baseline", "probabilistic fusion baselines over two trained streams");
  std::string bl_method, bl_app, bl_aff, bl_data, bl_out, bl_ratios = "0.25,0.25,0.5";
  std::uint64_t bl_seed = 1;
  bl->add_option("--method", bl_method, "product | bayes | svm")->required();
  bl->add_option("--app", bl_app, "appearance model directory")->required();
  bl->add_option("--aff", bl_aff, "affordance model directory (tm or st)")->required();
  bl->add_option("--data", bl_data, "stream directory")->required();
  bl->add_option("--out", bl_out, "report directory (default <out-root>/baseline)");
  bl->add_option("--seed", bl_seed, "split and SVM seed")->capture_default_str();
  bl->add_option("--ratios", bl_ratios, "train,val,test subject fractions")->capture_default_str();

  // layers
  auto* ly = app.add_subcommand("layers", "print the layer wiring of an architecture");
  ModelOptions ly_model;
  add_model_flags(*ly, ly_model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (synth->parsed()) {
      const SplitRatios ratios = parse_ratios(synth_ratios);
      const std::string out = synth_out.empty() ? (fs::path(out_root) / "corpus").string() : synth_out;
      log_config(app, *synth, out);
      const auto clips = synth_generate(out, subjects, per_combo, SynthConfig{}, synth_seed);
      std::vector<int> ids;
      for (const auto& c : clips) ids.push_back(c.subject);
      const SplitAssignment a = split_by_subject(ids, ratios, synth_seed);
      std::ofstream(fs::path(out) / "split.json")
          << nlohmann::json{{"train", a.train}, {"val", a.val}, {"test", a.test}}.dump() << '\n';
      std::printf("synth: %zu clips in %s (%.1f s)\n", clips.size(), out.c_str(), seconds_since(t0));
      return kOk;
    }

    if (prep->parsed()) {
      const std::string out = prep_out.empty() ? (fs::path(out_root) / "streams").string() : prep_out;
      log_config(app, *prep, "");
      const auto clips = load_manifest(prep_manifest);
      if (clips.empty()) {
        std::printf("preprocess: empty manifest, nothing written\n");
        return kOk;
      }
      SynthConfig sc;
      sc.crop_side = prep_crop;
      const FrontendConfig fe = sc.frontend();
      std::vector<ClipStreams> streams;
      for (const auto& c : clips) {
        std::vector<RgbdFrame> frames;
        try {
          frames = load_clip_frames(c);
        } catch (const ImageIoError& e) {
          throw DataError("clip '" + c.id + "': " + e.what());
        }
        streams.push_back({c.id, c.subject, c.object, c.affordance, run_pipeline(frames, fe)});
      }
      write_streams(out, streams);
      fs::create_directories(out);
      log_config(app, *prep, out, false);
      std::printf("preprocess: %zu clips -> %s (%.1f s)\n", streams.size(), out.c_str(), seconds_since(t0));
      return kOk;
    }

    if (tr->parsed()) {
      const SplitRatios ratios = parse_ratios(tr_ratios);
      const std::string out = tr_out.empty() ? (fs::path(out_root) / "model").string() : tr_out;
      NetworkGraph g = build_graph(tr_model, tr_cfg.seed);
      tr_cfg.validate();
      log_config(app, *tr, out);
      const auto clips = read_streams(tr_data, g.temporal);
      const Splits sp = split_streams(clips, ratios, tr_cfg.seed);
      const auto strain = make_samples(sp.train, g, aff_image(tr_model));
      const auto sval = make_samples(sp.val, g, aff_image(tr_model));
      std::printf("train: %s, %zu parameters, %zu/%zu train/val clips\n", g.description.c_str(), g.parameter_count(),
                  strain.size(), sval.size());
      std::ofstream curve(fs::path(out) / "curve.jsonl");
      const TrainResult r = train(g, strain, sval, tr_cfg, [&](const EpochRecord& e) {
        curve << to_json(e).dump() << '\n' << std::flush;
        std::printf("epoch %3zu  train %.5f  val %.5f  lr %.3g  (%.0f s)\n", e.epoch, e.train_loss, e.val_loss, e.lr,
                    seconds_since(t0));
        std::fflush(stdout);
      });
      save_model(out, g, ModelRecord{tr_model, tr_cfg.seed, tr_cfg.crop_side});
      std::printf("train: best epoch %zu, val loss %.5f; model in %s\n", r.best_epoch, r.best_val_loss, out.c_str());
      return kOk;
    }

    if (ev->parsed()) {
      const SplitRatios ratios = parse_ratios(ev_ratios);
      ModelRecord rec;
      NetworkGraph g = load_model(ev_model, rec);
      if (!ev_agg.empty()) rec.opt.agg = ev_agg;
      const std::string out = ev_out.empty() ? ev_model : ev_out;
      log_config(app, *ev, out);
      const auto clips = read_streams(ev_data, g.temporal);
      const Splits sp = split_streams(clips, ratios, ev->count("--split-seed") ? ev_split_seed : rec.seed);
      const auto test = make_samples(sp.test, g, aff_image(rec.opt));
      const EvalReport rep = evaluate(g, test, aggregation(rec.opt), rec.crop_side, g.description);
      append_jsonl((fs::path(out) / "report.jsonl").string(), to_json(rep));
      write_confusion_png((fs::path(out) / "confusion.png").string(), rep);
      std::printf("eval: %s accuracy %.4f on %zu test clips\n", g.description.c_str(), rep.accuracy, rep.total);
      return kOk;
    }

    if (gc->parsed()) {
      const ScaleConfig sc = scale_config(gc_scale);
      if (gc_arch.empty())
        gc_arch = {"appearance",
                   "tm",
                   "st",
                   "GTM_LS(FC6)",
                   "GTM_LS(RL5_3,tail=1c2f)",
                   "GTM_SSL(RL5_3:app,RL5_3:aff)",
                   "GTM_SML(RL5_3:app,RL5_3:aff,RL6)",
                   "GST_LS()",
                   "GST_LA(tau=2)",
                   "GST_SSL()"};
      log_config(app, *gc, "");
      bool all_ok = true;
      for (const auto& arch : gc_arch) {
        ModelOptions m;
        m.arch = arch;
        m.scale = gc_scale;
        NetworkGraph g = build_graph(m, gc_seed);
        std::mt19937_64 rng(gc_seed + 17);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const std::size_t T = g.temporal ? gc_frames : 1;
        GraphInput in;
        auto img = [&] {
          Tensor t({sc.input_channels, sc.input_side, sc.input_side});
          for (double& v : t.data()) v = u(rng);
          return t;
        };
        for (std::size_t t = 0; t < T; ++t) {
          if (g.uses_slot(0)) in.app.push_back(img());
          if (g.uses_slot(1)) in.aff.push_back(img());
        }
        const std::size_t target = 1;
        ForwardOptions fo;
        fo.faulty_relu_backward = gc_faulty;
        GradCheckOptions opt;
        opt.directions_per_tensor = gc_dirs;
        opt.seed = gc_seed;
        const auto t1 = std::chrono::steady_clock::now();
        const GradCheckReport rep = grad_check(
            [&](Tape& tape) { return sequence_loss(forward(tape, g, in, fo), target); }, g.parameters(), gc_tol, opt);
        std::printf("%-36s %s  max rel err %.3e  (%.1f s)\n", arch.c_str(), rep.passed ? "PASS" : "FAIL",
                    rep.max_rel_error, seconds_since(t1));
        for (const auto& e : rep.entries)
          std::printf("    %-28s %.3e%s\n", e.name.c_str(), e.max_rel_error,
                      e.kinked ? "  (probe still crosses a kink)" : e.kink_retries ? "  (step reduced at a kink)" : "");
        all_ok = all_ok && rep.passed;
      }
      return all_ok ? kOk : kDataError;
    }

    if (bl->parsed()) {
      BaselineMethod method;
      if (bl_method == "product") method = BaselineMethod::Product;
      else if (bl_method == "bayes") method = BaselineMethod::Bayes;
      else if (bl_method == "svm") method = BaselineMethod::Svm;
      else throw UsageError("--method must be product, bayes or svm, got '" + bl_method + "'");
      const SplitRatios ratios = parse_ratios(bl_ratios);
      const std::string out = bl_out.empty() ? (fs::path(out_root) / "baseline").string() : bl_out;
      ModelRecord ra, rf;
      NetworkGraph app_g = load_model(bl_app, ra), aff_g = load_model(bl_aff, rf);
      if (app_g.class_count != kObjectClasses || aff_g.class_count != kAffordanceClasses)
        throw UsageError("--app must be an object model and --aff an affordance model (tm or st)");
      log_config(app, *bl, out);
      const auto clips = read_streams(bl_data, aff_g.temporal);
      const Splits sp = split_streams(clips, ratios, bl_seed);
      SvmOptions svm;
      svm.seed = bl_seed;
      const EvalReport rep =
          run_baseline(method, app_g, aff_g, sp.train, sp.test, ra.crop_side, aggregation(rf.opt), svm);
      append_jsonl((fs::path(out) / "report.jsonl").string(), to_json(rep));
      write_confusion_png((fs::path(out) / ("confusion_" + bl_method + ".png")).string(), rep);
      std::printf("baseline %s: accuracy %.4f on %zu test clips\n", bl_method.c_str(), rep.accuracy, rep.total);
      return kOk;
    }

    if (ly->parsed()) {
      NetworkGraph g = build_graph(ly_model, 1);
      std::cout << render_layers(g) << g.parameter_count() << " parameters\n";
      return kOk;
    }
  } catch (const ArchSpecError& e) {
    std::cerr << "error: " << e.what() << " (offset " << e.offset() << ")\n";
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}
