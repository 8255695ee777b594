#include "msnmt/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "msnmt/checkpoint.hpp"
#include "msnmt/config.hpp"
#include "msnmt/decoding.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/evaluation.hpp"
#include "msnmt/grad_probe.hpp"
#include "msnmt/synthetic.hpp"
#include "msnmt/training.hpp"

namespace msnmt {

namespace {

// Keeps empty lines, which stand for empty hypotheses.
std::vector<Sentence> read_sentences(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(split_tokens(line));
  return out;
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ContractError(what + " is not set");
  if (!fs::exists(path)) throw LookupError(what + " not found: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write " + path.string());
  out << text;
}

bool zeros(const std::string& features) { return features.empty() || features == "zeros"; }

struct Shared {
  std::vector<std::string> args;
  std::ostream* out;
  std::ostream* err;
};

RunManifest begin_manifest(const Shared& s, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.arguments = s.args;
  return m;
}

// ---- train

struct TrainOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string policy;
  std::string features;
  std::string out;
};

RunConfig resolve_config(const TrainOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  c.apply_env([](const char* name) -> const char* { return std::getenv(name); });
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.set_seed(*o.seed);
  if (!o.policy.empty()) c.set_policy(o.policy);
  if (!o.features.empty()) c.data.features = o.features;
  c.model.train_policy = c.train.policy.to_string();
  return c;
}

std::vector<SentencePair> load_split(const fs::path& src, const fs::path& tgt, const fs::path& images,
                                     bool need_images, const DataConfig& d, const std::string& name) {
  require_file(src, "data." + name + "_source");
  require_file(tgt, "data." + name + "_target");
  auto pairs = load_parallel_corpus(src, tgt, d.max_length);
  if (need_images) {
    require_file(images, "data." + name + "_images");
    attach_image_ids(pairs, images);
  }
  return pairs;
}

int cmd_train(const Shared& s, const TrainOptions& o) {
  RunConfig cfg = resolve_config(o);
  const bool real = !zeros(cfg.data.features);
  if (real && !cfg.model.multimodal) {
    throw ContractError("a text-only model cannot train on image features; set data.features = zeros");
  }
  const DataConfig& d = cfg.data;
  const auto train_pairs = load_split(d.train_source, d.train_target, d.train_images, real, d, "train");
  const auto dev_pairs = load_split(d.dev_source, d.dev_target, d.dev_images, real, d, "dev");

  std::vector<Sentence> corpus;
  for (const auto& p : train_pairs) {
    corpus.push_back(p.source);
    corpus.push_back(p.target);
  }
  const Vocab vocab = Vocab::build(corpus, d.vocab_cap);
  cfg.model.vocab_size = vocab.size();
  FeatureStore store;
  if (real) {
    require_file(d.features, "data.features");
    store = load_image_features(d.features);
    cfg.model.image_dim = store.dim();
    cfg.model.image_count = store.vectors_per_image();
  }
  cfg.validate();
  cfg.model.validate();

  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  const fs::path ckpt = out_dir / "model.ckpt";
  RunManifest m = begin_manifest(s, "train");
  m.config = cfg.to_ini();
  m.seed = cfg.train.seed;
  m.checkpoint = ckpt.string();
  for (const fs::path& p : {d.train_source, d.train_target, d.train_images, d.dev_source, d.dev_target,
                            d.dev_images}) {
    if (!p.empty() && fs::exists(p)) m.fingerprint(p);
  }
  if (real) m.fingerprint(d.features);
  m.save(out_dir / "manifest.json");

  const auto train = encode_pairs(train_pairs, vocab);
  const auto dev_examples = encode_pairs(dev_pairs, vocab);
  std::vector<Sentence> dev_refs;
  for (const auto& p : dev_pairs) dev_refs.push_back(p.target);
  const DevSet dev{dev_examples, dev_refs, &vocab};

  std::string stage = cfg.model.multimodal ? "pretrain" : "snmt";
  bool started = false;
  auto progress = [&](const EpochRecord& r) {
    // Epoch numbers restart when the fine-tuning stage begins.
    if (r.epoch == 1 && started) stage = "finetune";
    started = true;
    *s.err << stage << " epoch " << r.epoch << " loss " << r.loss << " dev_bleu " << r.dev_bleu << '\n';
  };

  Model<float> model(cfg.model);
  std::string report;
  double best = 0.0;
  if (!cfg.model.multimodal) {
    const auto r = train_stage(model, train, dev, cfg.train,
                               FeatureSource::zeros(cfg.model.image_count, cfg.model.image_dim), progress);
    report = r.to_json_lines("snmt");
    best = r.best_bleu;
  } else {
    PipelineConfig p = cfg.pipeline();
    // Without features only the zero-feature stage can run.
    if (!real) p.skip_finetune = true;
    const auto r = train_msnmt_pipeline(model, train, dev, store, p, progress);
    report = r.pretrain.to_json_lines("pretrain");
    best = r.pretrain.best_bleu;
    if (r.finetune) {
      report += r.finetune->to_json_lines("finetune");
      best = r.finetune->best_bleu;
    }
  }
  save_checkpoint_bundle(model, vocab, ckpt);
  write_text(out_dir / "report.jsonl", report);
  *s.out << "checkpoint " << ckpt.string() << " best_dev_bleu " << best << '\n';
  return 0;
}

// ---- translate

struct TranslateOptions {
  std::string checkpoint, source, images, features = "zeros", policy, precision = "standard", out;
};

std::vector<Example> source_examples(const std::vector<Sentence>& sources, const Vocab& vocab,
                                     const std::vector<std::string>& image_ids) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Example e;
    e.source = vocab.encode(sources[i]);
    if (!image_ids.empty()) e.image_id = image_ids[i];
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> read_image_ids(const fs::path& path, std::size_t expected) {
  std::vector<std::string> ids;
  for (const auto& s : read_sentences(path)) ids.push_back(s.empty() ? "" : s.front());
  if (ids.size() != expected) {
    throw ContractError("image id file has " + std::to_string(ids.size()) + " lines, expected " +
                        std::to_string(expected));
  }
  return ids;
}

int cmd_translate(const Shared& s, const TranslateOptions& o) {
  if (o.precision != "standard" && o.precision != "wide") {
    throw ContractError("--precision must be standard or wide");
  }
  require_file(o.checkpoint, "checkpoint");
  require_file(o.source, "source file");
  const Model<float> model = load_checkpoint(o.checkpoint);
  const fs::path vocab_path = vocab_path_for(o.checkpoint);
  const Vocab vocab = Vocab::load(vocab_path);
  const bool real = !zeros(o.features);
  if (real && !model.config().multimodal) {
    throw ContractError("checkpoint is text-only but image features were given");
  }
  const Policy policy = o.policy.empty() ? Policy::parse(model.config().train_policy) : Policy::parse(o.policy);
  if (policy_mismatch(model.config(), policy)) {
    *s.err << "warning: decoding with " << policy.to_string() << " but the model was trained with "
           << model.config().train_policy << '\n';
  }
  const auto sources = read_sentences(o.source);
  std::vector<std::string> image_ids;
  FeatureStore store;
  if (real) {
    require_file(o.images, "image id file");
    require_file(o.features, "feature file");
    image_ids = read_image_ids(o.images, sources.size());
    store = load_image_features(o.features);
  }

  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  RunManifest m = begin_manifest(s, "translate");
  m.config = model.config().to_text();
  m.seed = model.config().seed;
  m.checkpoint = o.checkpoint;
  m.fingerprint(o.checkpoint);
  m.fingerprint(vocab_path);
  m.fingerprint(o.source);
  if (real) {
    m.fingerprint(o.images);
    m.fingerprint(o.features);
  }
  m.save(out_dir / "manifest.json");

  const auto examples = source_examples(sources, vocab, image_ids);
  const FeatureSource features = real ? FeatureSource::real(store)
                                      : FeatureSource::zeros(model.config().image_count, model.config().image_dim);
  std::vector<Hypothesis> hyps;
  if (o.precision == "standard") {
    hyps = translate_corpus(model, examples, policy, features);
  } else {
    const Model<double> wide = model.converted<double>();
    for (const auto& e : examples) {
      std::optional<std::span<const double>> image;
      std::vector<double> block;
      if (model.config().multimodal) {
        const auto f = features.lookup(e.image_id);
        block.assign(f.begin(), f.end());
        image = std::span<const double>(block);
      }
      hyps.push_back(translate(wide, e.source, image, policy, max_decode_length(e.source.size())));
    }
  }
  write_hypotheses(hyps, vocab, out_dir / "hyp.txt");
  write_traces(hyps, out_dir / "trace.txt");
  *s.out << "translated " << hyps.size() << " sentences with " << policy.to_string() << '\n';
  return 0;
}

// ---- evaluate

struct EvaluateOptions {
  std::string hyp, ref, trace, compare, label, system = "msnmt", out;
  std::vector<std::string> average, plot;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 1;
};

std::vector<PlotRow> plot_rows(std::span<const Report> reports) {
  std::vector<PlotRow> rows;
  for (const Report& r : reports) {
    std::map<std::string, std::string> v;
    for (const auto& [section, entries] : r.sections())
      for (const auto& [key, value] : entries) v[section + "." + key] = value;
    if (!v.count("run.k") || !v.count("bleu.score")) continue;
    auto it = std::find_if(rows.begin(), rows.end(), [&](const PlotRow& p) { return p.k == v["run.k"]; });
    if (it == rows.end()) {
      rows.push_back({v["run.k"]});
      it = rows.end() - 1;
    }
    const double b = std::stod(v["bleu.score"]);
    const double al = v.count("latency.al") ? std::stod(v["latency.al"]) : 0.0;
    if (v["run.system"] == "snmt") {
      it->bleu_snmt = b;
      it->al_snmt = al;
    } else {
      it->bleu_msnmt = b;
      it->al_msnmt = al;
    }
  }
  return rows;
}

int cmd_evaluate(const Shared& s, const EvaluateOptions& o) {
  const fs::path out_dir = o.out;
  RunManifest m = begin_manifest(s, "evaluate");
  m.seed = o.seed;

  if (!o.average.empty() || !o.plot.empty()) {
    if (!o.hyp.empty()) throw ContractError("--hyp cannot be combined with --average or --plot");
    std::vector<Report> reports;
    for (const auto& p : o.average.empty() ? o.plot : o.average) {
      require_file(p, "report");
      m.fingerprint(p);
      reports.push_back(Report::load(p));
    }
    fs::create_directories(out_dir);
    m.save(out_dir / "manifest.json");
    if (!o.average.empty()) {
      const Report avg = average_reports(reports);
      avg.save(out_dir / "report.ini");
      const std::vector<Report> one{avg};
      write_plot_csv(plot_rows(one), out_dir / "plot.csv");
      *s.out << avg.str();
    } else {
      write_plot_csv(plot_rows(reports), out_dir / "plot.csv");
      *s.out << "wrote " << (out_dir / "plot.csv").string() << '\n';
    }
    return 0;
  }

  require_file(o.hyp, "hypothesis file");
  require_file(o.ref, "reference file");
  const auto hyps = read_sentences(o.hyp);
  const auto refs = read_sentences(o.ref);
  if (hyps.size() != refs.size()) {
    throw ContractError("hypothesis file has " + std::to_string(hyps.size()) + " lines but reference has " +
                        std::to_string(refs.size()));
  }
  std::vector<DecodeTrace> traces;
  if (!o.trace.empty()) {
    require_file(o.trace, "trace file");
    traces = load_traces(o.trace);
    if (traces.size() != hyps.size()) throw ContractError("trace file and hypothesis file differ in length");
  }
  std::vector<Sentence> other;
  if (!o.compare.empty()) {
    require_file(o.compare, "comparison file");
    other = read_sentences(o.compare);
    if (other.size() != refs.size()) throw ContractError("comparison file and reference file differ in length");
  }
  for (const std::string& p : {o.hyp, o.ref, o.trace, o.compare}) {
    if (!p.empty()) m.fingerprint(p);
  }
  fs::create_directories(out_dir);
  m.save(out_dir / "manifest.json");

  Report report;
  report.add("run", "system", o.system);
  if (!o.label.empty()) report.add("run", "k", o.label);
  const BleuScore b = bleu(hyps, refs);
  report.add("bleu", "score", b.score);
  for (int n = 0; n < 4; ++n) report.add("bleu", "precision_" + std::to_string(n + 1), b.precisions[n]);
  report.add("bleu", "brevity_penalty", b.brevity_penalty);
  report.add("bleu", "hyp_length", static_cast<double>(b.hyp_length));
  report.add("bleu", "ref_length", static_cast<double>(b.ref_length));
  if (!traces.empty()) {
    // Lagging is undefined for an empty output; such sentences are left out and counted.
    std::vector<DecodeTrace> usable;
    for (const auto& t : traces)
      if (t.target_length() > 0) usable.push_back(t);
    const double al = usable.empty() ? 0.0 : average_lagging(usable).mean;
    report.add("latency", "al", al);
    report.add("latency", "sentences", static_cast<double>(usable.size()));
    report.add("latency", "skipped_empty", static_cast<double>(traces.size() - usable.size()));
  }
  if (!other.empty()) {
    const auto sig = bootstrap_significance(hyps, other, refs, o.resamples, o.alpha, o.seed);
    report.add("significance", "compare", o.compare);
    report.add("significance", "difference", sig.difference);
    report.add("significance", "p_value", sig.p_value);
    report.add("significance", "alpha", o.alpha);
    report.add("significance", "resamples", static_cast<double>(sig.resamples));
    report.add("significance", "significant", sig.significant ? "true" : "false");
  }
  report.save(out_dir / "report.ini");
  const std::vector<Report> one{report};
  write_plot_csv(plot_rows(one), out_dir / "plot.csv");
  *s.out << report.str();
  return 0;
}

// ---- adversarial

struct AdversarialOptions {
  std::string checkpoint, source, ref, images, features, policy, out;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 1;
};

int cmd_adversarial(const Shared& s, const AdversarialOptions& o) {
  require_file(o.checkpoint, "checkpoint");
  require_file(o.source, "source file");
  require_file(o.ref, "reference file");
  require_file(o.images, "image id file");
  if (zeros(o.features)) throw ContractError("adversarial evaluation needs a feature file");
  require_file(o.features, "feature file");
  const Model<float> model = load_checkpoint(o.checkpoint);
  if (!model.config().multimodal) throw ContractError("adversarial evaluation needs a multimodal checkpoint");
  const Vocab vocab = Vocab::load(vocab_path_for(o.checkpoint));
  const Policy policy = o.policy.empty() ? Policy::parse(model.config().train_policy) : Policy::parse(o.policy);
  if (policy_mismatch(model.config(), policy)) {
    *s.err << "warning: decoding with " << policy.to_string() << " but the model was trained with "
           << model.config().train_policy << '\n';
  }
  const auto sources = read_sentences(o.source);
  const auto refs = read_sentences(o.ref);
  if (refs.size() != sources.size()) throw ContractError("source and reference files differ in length");
  const auto ids = read_image_ids(o.images, sources.size());
  const FeatureStore store = load_image_features(o.features);

  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  RunManifest m = begin_manifest(s, "adversarial");
  m.config = model.config().to_text();
  m.seed = o.seed;
  m.checkpoint = o.checkpoint;
  for (const std::string& p : {o.checkpoint, o.source, o.ref, o.images, o.features}) m.fingerprint(p);
  m.save(out_dir / "manifest.json");

  const auto examples = source_examples(sources, vocab, ids);
  const auto r = adversarial_eval(model, examples, refs, vocab, store, policy, o.resamples, o.alpha, o.seed);
  Report report;
  report.add("run", "k", policy.to_string());
  report.add("adversarial", "congruent_bleu", r.congruent.score);
  report.add("adversarial", "incongruent_bleu", r.incongruent.score);
  report.add("adversarial", "difference", r.significance.difference);
  report.add("adversarial", "p_value", r.significance.p_value);
  report.add("adversarial", "alpha", o.alpha);
  report.add("adversarial", "significant", r.significance.significant ? "true" : "false");
  std::string notes;
  for (const auto& n : r.pairing.notes) notes += (notes.empty() ? "" : "; ") + n;
  report.add("pairing", "rule", "reverse order");
  report.add("pairing", "notes", notes.empty() ? "none" : notes);
  report.save(out_dir / "adversarial.ini");
  std::ostringstream pairing;
  for (std::size_t i = 0; i < r.pairing.image_for.size(); ++i) {
    pairing << (i + 1) << '\t' << (r.pairing.image_for[i] + 1) << '\n';
  }
  for (const auto& n : r.pairing.notes) pairing << "# " << n << '\n';
  write_text(out_dir / "pairing.tsv", pairing.str());
  *s.out << report.str();
  return 0;
}

// ---- analyze-entities

struct EntityOptions {
  std::string source, target, annotations, ks = "1,3,5,7", out;
  std::vector<std::string> hyps;  // LABEL:K=PATH
};

int cmd_analyze_entities(const Shared& s, const EntityOptions& o) {
  require_file(o.source, "source file");
  require_file(o.target, "target file");
  require_file(o.annotations, "annotation file");
  const auto pairs = load_parallel_corpus(o.source, o.target);
  const auto anns = load_entity_annotations(o.annotations);

  std::vector<std::size_t> ks;
  std::stringstream ss(o.ks);
  for (std::string item; std::getline(ss, item, ',');) {
    const Policy p = Policy::parse(item);
    if (p.is_full()) throw ContractError("entity analysis needs a finite k");
    ks.push_back(p.k());
  }
  struct HypSpec {
    std::string label;
    std::size_t k;
    fs::path path;
  };
  std::vector<HypSpec> specs;
  for (const auto& h : o.hyps) {
    const auto colon = h.find(':'), eq = h.find('=');
    if (colon == std::string::npos || eq == std::string::npos || eq < colon) {
      throw ContractError("--hyp expects LABEL:K=PATH, got '" + h + "'");
    }
    const Policy p = Policy::parse(h.substr(colon + 1, eq - colon - 1));
    if (p.is_full()) throw ContractError("--hyp needs a finite k in '" + h + "'");
    specs.push_back({h.substr(0, colon), p.k(), h.substr(eq + 1)});
    require_file(specs.back().path, "hypothesis file");
  }

  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  RunManifest m = begin_manifest(s, "analyze-entities");
  for (const std::string& p : {o.source, o.target, o.annotations}) m.fingerprint(p);
  for (const auto& h : specs) m.fingerprint(h.path);
  m.save(out_dir / "manifest.json");

  std::vector<EntityRow> rows;
  for (std::size_t k : ks) {
    const auto countable = count_total_entities(anns, pairs, k);
    EntityRow row{k, countable.size(), {}};
    for (const auto& h : specs) {
      if (h.k != k) continue;
      const auto hyp = read_sentences(h.path);
      if (hyp.size() != pairs.size()) throw ContractError("hypothesis file " + h.path.string() + " is misaligned");
      row.correct[h.label] = count_correct_entities(hyp, countable);
    }
    rows.push_back(std::move(row));
  }
  // Every label gets a column, even where a k has no file.
  for (auto& row : rows)
    for (const auto& h : specs) (void)row.correct.try_emplace(h.label);
  std::vector<EntityRow> shown = rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& [label, count] : rows[i].correct) {
      const bool have = std::any_of(specs.begin(), specs.end(),
                                    [&](const HypSpec& h) { return h.label == label && h.k == rows[i].k; });
      if (!have) shown[i].correct.erase(label);
    }
  }
  const std::string table = format_entity_table(shown);
  write_text(out_dir / "entities.tsv", table);
  *s.out << table;
  return 0;
}

// ---- synth-data

struct SynthOptions {
  SyntheticSpec spec;
  std::string order = "sov";
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_synth_data(const Shared& s, SynthOptions o) {
  if (o.order == "sov") o.spec.order = WordOrder::SOV;
  else if (o.order == "svo") o.spec.order = WordOrder::SVO;
  else throw ContractError("--order must be sov or svo");
  const auto data = generate_synthetic_dataset(o.spec, o.seed);
  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  RunManifest m = begin_manifest(s, "synth-data");
  m.seed = o.seed;
  m.save(out_dir / "manifest.json");
  write_synthetic_dataset(data, out_dir);
  *s.out << "wrote " << data.train.pairs.size() << '/' << data.dev.pairs.size() << '/' << data.test.pairs.size()
         << " train/dev/test pairs to " << out_dir.string() << '\n';
  return 0;
}

// ---- grad-check

struct GradOptions {
  GradProbeSpec spec;
  std::string precision = "wide";
  std::string out;
};

int cmd_grad_check(const Shared& s, const GradOptions& o) {
  if (o.precision == "standard") {
    throw ContractError(
        "grad-check refuses standard precision: 32-bit central differences are dominated by rounding "
        "noise at any step size that keeps truncation error below the 1e-4 threshold; use --precision wide");
  }
  if (o.precision != "wide") throw ContractError("--precision must be standard or wide");
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    RunManifest m = begin_manifest(s, "grad-check");
    m.seed = o.spec.seed;
    m.save(fs::path(o.out) / "manifest.json");
  }
  const auto r = run_grad_probe(o.spec);
  std::ostringstream line;
  line.precision(6);
  line << "max relative error " << std::scientific << r.check.max_relative_error << " over "
       << r.check.coordinates << " coordinates (worst: " << r.worst_param << '[' << r.check.worst_index
       << "]) threshold " << o.spec.tolerance << ' ' << (r.passed ? "PASS" : "FAIL") << '\n';
  *s.out << line.str();
  if (!o.out.empty()) write_text(fs::path(o.out) / "grad_check.txt", line.str());
  return r.passed ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simultaneous multimodal machine translation"};
  app.require_subcommand(1);
  Shared shared{args, &out, &err};

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train an SNMT model or run the two-stage MSNMT pipeline");
  t->add_option("--config", train.config, "INI configuration file");
  t->add_option("--set", train.overrides, "Override a key, e.g. --set train.learning_rate=0.001");
  t->add_option("--seed", train.seed, "Seed for data order, initialization and dropout");
  t->add_option("--policy.k", train.policy, "wait-k schedule: N or full");
  t->add_option("--features", train.features, "Feature file, or zeros");
  t->add_option("--out", train.out, "Output directory")->required();

  TranslateOptions tr;
  auto* d = app.add_subcommand("translate", "Decode a source file");
  d->add_option("--checkpoint", tr.checkpoint)->required();
  d->add_option("--source", tr.source)->required();
  d->add_option("--images", tr.images, "Image id per source line");
  d->add_option("--features", tr.features, "Feature file, or zeros");
  d->add_option("--policy.k", tr.policy, "Defaults to the schedule the model was trained with");
  d->add_option("--precision", tr.precision, "standard or wide");
  d->add_option("--out", tr.out)->required();

  EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "BLEU, AL and paired significance; or average reports");
  e->add_option("--hyp", ev.hyp);
  e->add_option("--ref", ev.ref);
  e->add_option("--trace", ev.trace);
  e->add_option("--compare", ev.compare, "Second hypothesis file for the significance test");
  e->add_option("--resamples", ev.resamples);
  e->add_option("--alpha", ev.alpha);
  e->add_option("--seed", ev.seed);
  e->add_option("--k", ev.label, "Label stored in the report and plot");
  e->add_option("--system", ev.system, "snmt or msnmt, for the plot columns");
  e->add_option("--average", ev.average, "Reports to average");
  e->add_option("--plot", ev.plot, "Reports to collect into plot.csv");
  e->add_option("--out", ev.out)->required();

  AdversarialOptions ad;
  auto* a = app.add_subcommand("adversarial", "Congruent vs incongruent image pairing");
  a->add_option("--checkpoint", ad.checkpoint)->required();
  a->add_option("--source", ad.source)->required();
  a->add_option("--ref", ad.ref)->required();
  a->add_option("--images", ad.images)->required();
  a->add_option("--features", ad.features)->required();
  a->add_option("--policy.k", ad.policy);
  a->add_option("--resamples", ad.resamples);
  a->add_option("--alpha", ad.alpha);
  a->add_option("--seed", ad.seed);
  a->add_option("--out", ad.out)->required();

  EntityOptions en;
  auto* n = app.add_subcommand("analyze-entities", "Entities translated before their source is read");
  n->add_option("--source", en.source)->required();
  n->add_option("--target", en.target)->required();
  n->add_option("--annotations", en.annotations)->required();
  n->add_option("--k", en.ks, "Comma-separated k values");
  n->add_option("--hyp", en.hyps, "LABEL:K=PATH, repeatable");
  n->add_option("--out", en.out)->required();

  SynthOptions sy;
  auto* g = app.add_subcommand("synth-data", "Write the synthetic image-decisive corpus");
  g->add_option("--seed", sy.seed);
  g->add_option("--out", sy.out)->required();
  g->add_option("--train", sy.spec.train);
  g->add_option("--dev", sy.spec.dev);
  g->add_option("--test", sy.spec.test);
  g->add_option("--order", sy.order, "sov or svo");
  g->add_option("--min-length", sy.spec.min_length);
  g->add_option("--max-length", sy.spec.max_length);
  g->add_option("--subjects", sy.spec.subjects);
  g->add_option("--verbs", sy.spec.verbs);
  g->add_option("--adverbs", sy.spec.adverbs);
  g->add_option("--objects", sy.spec.objects);
  g->add_option("--feature-dim", sy.spec.feature_dim);
  g->add_option("--vectors", sy.spec.vectors_per_image);
  g->add_option("--noise", sy.spec.noise);

  GradOptions gc;
  auto* c = app.add_subcommand("grad-check", "Finite-difference check of the full model gradient");
  c->add_option("--precision", gc.precision, "Must be wide");
  c->add_option("--vocab", gc.spec.vocab_size);
  c->add_option("--emb", gc.spec.embedding_dim);
  c->add_option("--hidden", gc.spec.hidden_dim);
  c->add_option("--image-dim", gc.spec.image_dim);
  c->add_option("--policy.k", gc.spec.k);
  c->add_option("--seed", gc.spec.seed);
  c->add_flag("--corrupt-backward", gc.spec.corrupt_backward, "Negative control with a wrong backward rule");
  c->add_option("--out", gc.out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return ex.get_exit_code() ? ex.get_exit_code() : 2;
  }
  try {
    if (*t) return cmd_train(shared, train);
    if (*d) return cmd_translate(shared, tr);
    if (*e) return cmd_evaluate(shared, ev);
    if (*a) return cmd_adversarial(shared, ad);
    if (*n) return cmd_analyze_entities(shared, en);
    if (*g) return cmd_synth_data(shared, sy);
    if (*c) return cmd_grad_check(shared, gc);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace msnmt
