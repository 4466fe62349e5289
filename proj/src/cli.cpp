#include "t4v/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "t4v/analysis.hpp"
#include "t4v/classifier.hpp"
#include "t4v/datastore.hpp"
#include "t4v/headnet.hpp"
#include "t4v/protocols.hpp"
#include "t4v/tensor_io.hpp"
#include "t4v/trainer.hpp"

namespace t4v::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr const char* kModule = "cli";

// Random streams derived from --seed, one per consumer.
enum Stream : std::uint64_t { kClassifierStream = 1, kProtocolStream = 2 };

struct Globals {
  std::uint64_t seed = 0;
  std::string manifest;
  std::string out;
};

struct HeadFlags {
  std::string kind = "tap";
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t kernel = 3;
};

struct TrainFlags {
  std::string preset = "full";
  std::string config_file;
  std::string objective;
  std::size_t epochs = 0, warmup = 0, batch = 0, shards = 0;
  double lr = 0, min_lr = 0, wd = 0, label_fraction = 0, temperature = 0, jitter = 0, classifier_lr_scale = 0;
  std::vector<CLI::Option*> options;

  bool given(const char* name) const {
    for (auto* o : options)
      if (o->get_name() == name) return o->count() > 0;
    return false;
  }
};

void add_head_flags(CLI::App* app, HeadFlags& h) {
  app->add_option("--head", h.kind, "tap | t1d | ttrans")->capture_default_str();
  app->add_option("--layers", h.layers, "ttrans encoder layers")->capture_default_str();
  app->add_option("--heads", h.heads, "ttrans attention heads")->capture_default_str();
  app->add_option("--kernel", h.kernel, "t1d temporal kernel (odd)")->capture_default_str();
}

void add_train_flags(CLI::App* app, TrainFlags& t) {
  app->add_option("--preset", t.preset, "full | desk")->capture_default_str();
  t.options = {
      app->add_option("--config", t.config_file, "JSON training config"),
      app->add_option("--objective", t.objective, "frozen-ce | learnable-ce | contrastive-gathered | contrastive-local"),
      app->add_option("--epochs", t.epochs),
      app->add_option("--warmup", t.warmup, "warm-up epochs"),
      app->add_option("--batch", t.batch),
      app->add_option("--shards", t.shards, "contrastive gather shards"),
      app->add_option("--lr", t.lr),
      app->add_option("--min-lr", t.min_lr),
      app->add_option("--wd", t.wd, "weight decay"),
      app->add_option("--label-fraction", t.label_fraction),
      app->add_option("--temperature", t.temperature, "CE logit multiplier"),
      app->add_option("--jitter", t.jitter, "feature noise std"),
      app->add_option("--classifier-lr-scale", t.classifier_lr_scale),
  };
}

HeadSpec head_spec(const HeadFlags& h, const FeatureStore& store) {
  HeadSpec spec;
  spec.kind = parse_head_kind(h.kind);
  spec.frames = store.frames;
  spec.dim = store.dim;
  spec.layers = h.layers;
  spec.heads = h.heads;
  spec.kernel = h.kernel;
  spec.validate();
  return spec;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, kModule, path.string() + ": " + e.what());
  }
}

// Precedence: flag > config file > preset.
TrainConfig train_config(const TrainFlags& t, std::uint64_t seed, InitKind kind) {
  if (t.preset != "full" && t.preset != "desk") fail(Errc::usage, kModule, "unknown preset '" + t.preset + "'");
  TrainConfig c = t.preset == "desk" ? desk_config() : TrainConfig{};
  if (!t.config_file.empty()) {
    ojson base = c.to_json();
    base.update(ojson::parse(read_json(t.config_file).dump()));
    c = TrainConfig::from_json(nlohmann::json::parse(base.dump()));
  }
  if (kind == InitKind::LearnableBaseline) c.objective = Objective::LearnableCE;
  if (t.given("--objective")) c.objective = parse_objective(t.objective);
  if (t.given("--epochs")) c.epochs = t.epochs;
  if (t.given("--warmup")) c.warmup_epochs = t.warmup;
  if (t.given("--batch")) c.batch_size = t.batch;
  if (t.given("--shards")) c.shards = t.shards;
  if (t.given("--lr")) c.base_lr = t.lr;
  if (t.given("--min-lr")) c.min_lr = t.min_lr;
  if (t.given("--wd")) c.weight_decay = t.wd;
  if (t.given("--label-fraction")) c.label_fraction = t.label_fraction;
  if (t.given("--temperature")) c.temperature = t.temperature;
  if (t.given("--jitter")) c.feature_jitter = t.jitter;
  if (t.given("--classifier-lr-scale")) c.classifier_lr_scale = t.classifier_lr_scale;
  c.seed = seed;
  c.validate();
  return c;
}

Manifest require_manifest(const Globals& g) {
  if (g.manifest.empty()) fail(Errc::usage, kModule, "--manifest is required");
  return load_manifest(g.manifest);
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) fail(Errc::usage, kModule, "--out is required");
  fs::create_directories(g.out);
  return g.out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(Errc::io, kModule, "cannot write " + path.string());
}

void write_report(const Globals& g, const ojson& report, std::ostream& out) {
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    write_file(fs::path(g.out) / "report.json", report.dump(2) + "\n");
  }
  out << report.dump(2) << "\n";
}

ClassifierMatrix make_classifier(InitKind kind, const Manifest& m, const FeatureStore& train, std::uint64_t seed,
                                 std::size_t lda_cap) {
  Rng rng = Rng(seed).fork(kClassifierStream);
  const auto d = static_cast<Eigen::Index>(train.dim);
  const auto c = static_cast<Eigen::Index>(m.class_names.size());
  ClassifierMatrix w;
  switch (kind) {
    case InitKind::RandomNormal: w = build_random_normal(d, c, rng); break;
    case InitKind::RandomOrthogonal: w = build_random_orthogonal(d, c, rng); break;
    case InitKind::LDA: w = build_lda(train, lda_cap); break;
    case InitKind::Textual: w = build_textual(load_text_embeddings(m), m.class_names); break;
    case InitKind::LearnableBaseline: w = build_learnable_baseline(d, c, rng); break;
  }
  w.class_names = m.class_names;
  return w;
}

std::string head_digest(const HeadParams& head) {
  std::vector<Matrix> values;
  for (const auto& t : head.tensors) values.push_back(t.value);
  return tensor_digest(values);
}

// Trains and, unless `dir` is empty, writes the run artifacts into it.
TrainResult train_and_save(const FeatureStore& train, const FeatureStore* eval_store, const ClassifierMatrix& w,
                           const HeadSpec& spec, const TrainConfig& config, const fs::path& dir) {
  TrainResult r = run(train, w, spec, config, {eval_store});
  if (dir.empty()) return r;
  fs::create_directories(dir);
  write_file(dir / "run.jsonl", r.log.to_jsonl());
  write_file(dir / "config.json", config.to_json().dump(2) + "\n");
  save_head(spec, r.head, dir / "head.ckpt");
  save_classifier(r.classifier, dir / "classifier");
  return r;
}

ojson run_summary(const TrainResult& r) {
  ojson j;
  j["initial_loss"] = r.log.initial_loss;
  j["final_loss"] = r.log.epochs.empty() ? r.log.initial_loss : r.log.epochs.back().train_loss;
  j["epochs"] = r.log.epochs.size();
  j["classifier_digest_before"] = r.log.classifier_digest_before;
  j["classifier_digest_after"] = r.log.classifier_digest_after;
  j["head_digest"] = head_digest(r.head);
  j["logit_scale"] = r.logit_scale.scale();
  j["notes"] = r.log.notes;
  return j;
}

std::pair<HeadSpec, HeadParams> tap_head(const FeatureStore& store) {
  HeadSpec spec;
  spec.kind = HeadKind::TAP;
  spec.frames = store.frames;
  spec.dim = store.dim;
  return {spec, HeadParams{}};
}

void check_class_names(const ClassifierMatrix& w, const FeatureStore& store) {
  if (w.class_names != store.class_names) {
    fail(Errc::manifest, kModule, "classifier class names differ from the manifest class list");
  }
}

void inspect_path(const fs::path& path, const Globals& g, std::ostream& out) {
  ojson report;
  report["path"] = path.generic_string();
  if (fs::is_directory(path) || path.extension() == ".json") {
    const Manifest m = load_manifest(path);
    report["kind"] = "manifest";
    report["name"] = m.name;
    report["classes"] = m.class_names.size();
    for (const auto& [key, rel] : {std::pair{"train", m.train}, {"test", m.test}, {"text_embeddings", m.text_embeddings}}) {
      if (rel.empty()) continue;
      const FeatureStore s = read_store(m.resolve(rel));
      report[key] = {{"n", s.size()}, {"frames", s.frames}, {"dim", s.dim}};
    }
    write_report(g, report, out);
    return;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, kModule, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  report["sha256"] = sha256_hex(bytes);
  if (magic == "T4V1") {
    const FeatureStore s = decode_store(bytes);
    report["kind"] = "feature-store";
    report["n"] = s.size();
    report["frames"] = s.frames;
    report["dim"] = s.dim;
    report["classes"] = s.num_classes();
    std::ostringstream crc;
    crc << "0x" << std::hex << std::setw(8) << std::setfill('0')
        << (static_cast<std::uint32_t>(bytes[bytes.size() - 4]) | static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
            static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 | static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
    report["crc32"] = crc.str();
  } else if (magic == "T4VC") {
    const auto tensors = decode_tensors(bytes);
    report["kind"] = "checkpoint";
    ojson list = ojson::array();
    for (const auto& t : tensors) {
      list.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"digest", tensor_digest(t.value)}});
    }
    report["tensors"] = list;
  } else {
    fail(Errc::format, kModule, path.string() + ": unrecognised file (magic '" + magic + "')");
  }
  write_report(g, report, out);
}

}  // namespace

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::usage:
    case Errc::dimension:
    case Errc::spec:
      return kUsage;
    case Errc::numeric:
    case Errc::not_positive_definite:
    case Errc::normalization:
      return kNumeric;
    default:
      return kData;
  }
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frozen-classifier transfer learning on pre-extracted video features", "t4v"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--manifest", g.manifest, "dataset manifest (file or directory)");
  app.add_option("--out", g.out, "output directory");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic correlated-prototype dataset");
  std::size_t classes = 8, groups = 2;
  SyntheticSpec sspec;
  synth->add_option("--classes", classes)->capture_default_str();
  synth->add_option("--groups", groups)->capture_default_str();
  synth->add_option("--rho-in", sspec.rho_in)->capture_default_str();
  synth->add_option("--rho-out", sspec.rho_out)->capture_default_str();
  synth->add_option("--train-per-class", sspec.train_per_class)->capture_default_str();
  synth->add_option("--test-per-class", sspec.test_per_class)->capture_default_str();
  synth->add_option("--noise", sspec.noise_std)->capture_default_str();
  synth->add_option("--frames", sspec.frames)->capture_default_str();
  synth->add_option("--dim", sspec.dim)->capture_default_str();
  synth->add_option("--misalignment", sspec.misalignment)->capture_default_str();

  // build-classifier
  auto* build = app.add_subcommand("build-classifier", "build a classifier matrix");
  std::string kind_name = "textual";
  Eigen::Index bd = 0, bc = 0;
  std::size_t lda_cap = kDefaultLdaPerClassCap;
  build->add_option("--kind", kind_name, "normal | orthogonal | lda | textual | learnable")->capture_default_str();
  build->add_option("--d", bd, "embedding width (random kinds without a manifest)");
  build->add_option("--c", bc, "class count (random kinds without a manifest)");
  build->add_option("--lda-cap", lda_cap, "LDA samples per class")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train a temporal head against a classifier");
  HeadFlags head_flags;
  TrainFlags train_flags;
  std::string classifier_kind = "textual";
  std::string classifier_file;
  add_head_flags(train, head_flags);
  add_train_flags(train, train_flags);
  train->add_option("--classifier", classifier_kind, "classifier kind")->capture_default_str();
  train->add_option("--classifier-file", classifier_file, "saved classifier stem; overrides --classifier");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a trained run (general protocol)");
  std::string run_dir;
  std::string split_name = "test";
  eval->add_option("--run", run_dir, "run directory written by train")->required();
  eval->add_option("--split", split_name, "train | test")->capture_default_str();

  // zeroshot
  auto* zs = app.add_subcommand("zeroshot", "zero-shot evaluation with the manifest's text embeddings");
  std::string zs_mode = "half";
  std::size_t repeats = 10;
  std::optional<std::size_t> subset_size;
  std::string zs_run;
  zs->add_option("--mode", zs_mode, "half | full")->capture_default_str();
  zs->add_option("--repeats", repeats)->capture_default_str();
  zs->add_option("--subset-size", subset_size, "classes per repeat (default: manifest, else half)");
  zs->add_option("--run", zs_run, "run directory with head.ckpt (default: temporal average pooling)");

  // fewshot
  auto* fewshot = app.add_subcommand("fewshot", "K-shot all-way training and evaluation");
  std::string shots = "1";
  HeadFlags fs_head;
  TrainFlags fs_train;
  std::string fs_classifier = "textual";
  fewshot->add_option("--shots", shots, "K, or 'all'")->capture_default_str();
  fewshot->add_option("--classifier", fs_classifier)->capture_default_str();
  add_head_flags(fewshot, fs_head);
  add_train_flags(fewshot, fs_train);

  // corr
  auto* corr = app.add_subcommand("corr", "inter-class correlation map and convergence curves");
  std::string corr_kind = "textual";
  std::string corr_file;
  double clip_lo = -1.0, clip_hi = 1.0;
  std::vector<std::string> runs;
  corr->add_option("--kind", corr_kind)->capture_default_str();
  corr->add_option("--classifier-file", corr_file, "saved classifier stem");
  corr->add_option("--clip-lo", clip_lo)->capture_default_str();
  corr->add_option("--clip-hi", clip_hi)->capture_default_str();
  corr->add_option("--runs", runs, "run directories for a convergence CSV");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "print header, shape and digest of a toolkit file");
  std::string inspect_target;
  inspect->add_option("path", inspect_target)->required();

  std::vector<const char*> argv{"t4v"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) {
      const fs::path dir = require_out(g);
      if (groups < 1 || classes < groups) fail(Errc::usage, kModule, "need 1 <= groups <= classes");
      sspec.groups.assign(groups, classes / groups);
      for (std::size_t i = 0; i < classes % groups; ++i) ++sspec.groups[i];
      sspec.seed = g.seed;
      const SyntheticData data = generate_synthetic(sspec);
      write_store(data.train, dir / "train.t4v");
      write_store(data.test, dir / "test.t4v");
      FeatureStore text;
      text.frames = 1;
      text.dim = sspec.dim;
      text.payload = data.prototypes;
      quantize_to_f32(text.payload);
      for (std::uint32_t k = 0; k < classes; ++k) text.labels.push_back(k);
      text.class_names = data.train.class_names;
      write_store(text, dir / "text.t4v");
      Manifest m;
      m.name = "synthetic";
      m.class_names = data.train.class_names;
      m.train = "train.t4v";
      m.test = "test.t4v";
      m.text_embeddings = "text.t4v";
      m.zero_shot_classes = classes / 2;
      std::ostringstream notes;
      notes << "rho_in=" << sspec.rho_in << " rho_out=" << sspec.rho_out << " noise=" << sspec.noise_std
            << " misalignment=" << sspec.misalignment << " seed=" << g.seed;
      m.notes = notes.str();
      save_manifest(m, dir / "manifest.json");
      out << "wrote " << (dir / "manifest.json").string() << " (" << classes << " classes, " << data.train.size()
          << " train, " << data.test.size() << " test)\n";
      return kOk;
    }

    if (build->parsed()) {
      const InitKind kind = parse_init_kind(kind_name);
      ClassifierMatrix w;
      if (!g.manifest.empty()) {
        const Manifest m = load_manifest(g.manifest);
        w = make_classifier(kind, m, load_split(m, Split::Train), g.seed, lda_cap);
      } else {
        if (kind == InitKind::LDA || kind == InitKind::Textual) {
          fail(Errc::usage, kModule, std::string(to_string(kind)) + " classifier needs --manifest");
        }
        Rng rng = Rng(g.seed).fork(kClassifierStream);
        if (kind == InitKind::RandomNormal) w = build_random_normal(bd, bc, rng);
        else if (kind == InitKind::RandomOrthogonal) w = build_random_orthogonal(bd, bc, rng);
        else w = build_learnable_baseline(bd, bc, rng);
      }
      ojson report;
      report["init_kind"] = std::string(to_string(w.init_kind));
      report["classes"] = w.classes();
      report["dim"] = w.dim();
      report["frozen"] = w.frozen;
      report["digest"] = w.digest();
      report["notes"] = w.notes;
      if (!g.out.empty()) save_classifier(w, require_out(g) / "classifier");
      write_report(g, report, out);
      return kOk;
    }

    if (train->parsed()) {
      const Manifest m = require_manifest(g);
      const fs::path dir = require_out(g);
      const FeatureStore train_store = load_split(m, Split::Train);
      std::optional<FeatureStore> test_store;
      if (!m.test.empty()) test_store = load_split(m, Split::Test);
      const ClassifierMatrix w = classifier_file.empty()
                                     ? make_classifier(parse_init_kind(classifier_kind), m, train_store, g.seed, lda_cap)
                                     : load_classifier(classifier_file);
      check_class_names(w, train_store);
      const HeadSpec spec = head_spec(head_flags, train_store);
      const TrainConfig config = train_config(train_flags, g.seed, w.init_kind);
      const TrainResult r = train_and_save(train_store, test_store ? &*test_store : nullptr, w, spec, config, dir);
      ojson report = run_summary(r);
      if (test_store) report["test"] = evaluate(*test_store, spec, r.head, r.classifier, config.cosine_logits).to_json();
      write_report(g, report, out);
      return kOk;
    }

    if (eval->parsed()) {
      const Manifest m = require_manifest(g);
      if (split_name != "train" && split_name != "test") fail(Errc::usage, kModule, "--split must be train or test");
      const FeatureStore store = load_split(m, split_name == "train" ? Split::Train : Split::Test);
      const auto [spec, head] = load_head(fs::path(run_dir) / "head.ckpt");
      const ClassifierMatrix w = load_classifier(fs::path(run_dir) / "classifier");
      check_class_names(w, store);
      bool cosine = false;
      if (const fs::path cfg = fs::path(run_dir) / "config.json"; fs::exists(cfg)) {
        std::ifstream in(cfg);
        cosine = TrainConfig::from_json(nlohmann::json::parse(in)).cosine_logits;
      }
      const EvalReport report = evaluate(store, spec, head, w, cosine);
      if (report.map_excluded_classes > 0) {
        err << "warning: " << report.map_excluded_classes << " classes without positives excluded from mAP\n";
      }
      if (!g.out.empty()) write_file(require_out(g) / "per_class.csv", report.per_class_csv());
      write_report(g, report.to_json(), out);
      return kOk;
    }

    if (zs->parsed()) {
      const Manifest m = require_manifest(g);
      if (zs_mode != "half" && zs_mode != "full") fail(Errc::usage, kModule, "--mode must be half or full");
      const FeatureStore target = load_split(m, Split::Test);
      const ClassifierMatrix text_w = build_textual(load_text_embeddings(m), m.class_names);
      auto [spec, head] = zs_run.empty() ? tap_head(target) : load_head(fs::path(zs_run) / "head.ckpt");
      ZeroShotOptions options;
      options.half = zs_mode == "half";
      options.repeats = repeats;
      options.subset_size = subset_size ? subset_size : m.zero_shot_classes;
      options.exclude_classes = m.exclude_classes;
      Rng rng = Rng(g.seed).fork(kProtocolStream);
      write_report(g, zero_shot(target, text_w, spec, head, rng, options).to_json(), out);
      return kOk;
    }

    if (fewshot->parsed()) {
      const Manifest m = require_manifest(g);
      const FeatureStore train_store = load_split(m, Split::Train);
      const FeatureStore test_store = load_split(m, Split::Test);
      std::optional<std::size_t> k;
      if (shots != "all") {
        try {
          k = std::stoul(shots);
        } catch (const std::exception&) {
          fail(Errc::usage, kModule, "--shots must be a count or 'all'");
        }
      }
      const ClassifierMatrix w = make_classifier(parse_init_kind(fs_classifier), m, train_store, g.seed, lda_cap);
      const HeadSpec spec = head_spec(fs_head, train_store);
      ojson report;
      report["shots"] = shots;
      if (k && *k == 0) {
        Rng init = Rng(g.seed).fork(1);
        ZeroShotOptions options;
        options.half = false;
        Rng rng = Rng(g.seed).fork(kProtocolStream);
        report["evaluation"] = zero_shot(test_store, w, spec, init_params(spec, init), rng, options).to_json();
        write_report(g, report, out);
        return kOk;
      }
      TrainConfig config = train_config(fs_train, g.seed, w.init_kind);
      config.shots = k;
      const fs::path dir = g.out.empty() ? fs::path{} : require_out(g);
      const TrainResult r = train_and_save(train_store, nullptr, w, spec, config, dir);
      EvalReport eval_report = evaluate(test_store, spec, r.head, r.classifier, config.cosine_logits);
      eval_report.protocol = Protocol::FewShot;
      report["run"] = run_summary(r);
      report["evaluation"] = eval_report.to_json();
      write_report(g, report, out);
      return kOk;
    }

    if (corr->parsed()) {
      const fs::path dir = require_out(g);
      ClassifierMatrix w;
      if (!corr_file.empty()) {
        w = load_classifier(corr_file);
      } else {
        const Manifest m = require_manifest(g);
        w = make_classifier(parse_init_kind(corr_kind), m, load_split(m, Split::Train), g.seed, lda_cap);
      }
      const auto files = export_map(correlation_map(w), clip_lo, clip_hi, dir / "corr");
      ojson report;
      report["map_csv"] = files.csv.generic_string();
      report["map_ppm"] = files.ppm.generic_string();
      if (!runs.empty()) {
        std::vector<RunLog> logs;
        for (const auto& r : runs) {
          std::ifstream in(fs::path(r) / "run.jsonl");
          if (!in) fail(Errc::io, kModule, "cannot open " + (fs::path(r) / "run.jsonl").string());
          RunLog log;
          std::string line;
          while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            if (j.at("record") == "epoch") {
              log.epochs.push_back({j.at("epoch").get<std::size_t>(), j.at("train_loss").get<double>(),
                                    j.at("train_accuracy").get<double>(), j.at("lr").get<double>(), 0.0});
            }
          }
          logs.push_back(std::move(log));
        }
        std::vector<std::string> names;
        for (const auto& r : runs) names.push_back(fs::path(r).filename().string());
        convergence_curves(logs, dir / "convergence.csv", names);
        report["convergence_csv"] = (dir / "convergence.csv").generic_string();
      }
      write_report(g, report, out);
      return kOk;
    }

    if (inspect->parsed()) {
      inspect_path(inspect_target, g, out);
      return kOk;
    }
  } catch (const Error& e) {
    err << "t4v: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "t4v: json: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "t4v: io: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace t4v::cli
