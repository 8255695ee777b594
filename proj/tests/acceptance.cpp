// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "msnmt/cli.hpp"
#include "msnmt/decoding.hpp"
#include "msnmt/evaluation.hpp"
#include "msnmt/synthetic.hpp"
#include "msnmt/training.hpp"

using namespace msnmt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_seconds > 0 && secs > budget_seconds) {
    o.pass = false;
    o.detail += "; over time budget of " + std::to_string(static_cast<int>(budget_seconds)) + " s";
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-26s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int status = run_cli(args, o, e);
  if (out) *out = o.str();
  return status;
}

Model<float> spread(const ModelConfig& c) {
  Model<float> m(c);
  Rng rng(c.seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& [name, t] : m.params())
    for (float& x : t.data) x = u(rng);
  return m;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.vocab_size = 30;
  c.embedding_dim = 12;
  c.hidden_dim = 16;
  c.image_dim = 8;
  c.seed = 3;
  return c;
}

std::vector<int> random_tokens(Rng& rng, std::size_t n, int vocab) {
  std::uniform_int_distribution<int> tok(static_cast<int>(kReservedTokens), vocab - 1);
  std::vector<int> s(n);
  for (int& x : s) x = tok(rng);
  return s;
}

// Output distribution of step t under teacher forcing with `previous` = y_1..y_{t-1}.
std::vector<float> step_distribution(const Model<float>& m, const std::vector<int>& source,
                                     const std::vector<float>& image, const std::vector<int>& previous,
                                     const Policy& policy) {
  Tape<float> tape;
  Graph<float> g(tape, m);
  const auto enc = g.encode(source, 1, source.size(), image);
  auto state = g.initial_state(1);
  std::vector<float> logits;
  for (std::size_t t = 1; t <= previous.size() + 1; ++t) {
    const std::vector<int> prev{t == 1 ? kBos : previous[t - 2]};
    const std::vector<std::size_t> prefix{prefix_length(policy, t, source.size())};
    auto out = g.decoder_step(state, prev, enc, prefix);
    state = out.state;
    logits = out.logits.value().data;
  }
  return softmax<float>(logits);
}

// ---- BLEU oracle, counting n-grams from scratch

double oracle_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += hyps[s].size();
    ref_len += refs[s].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, int> h, r;
      auto gram = [n](const Sentence& x, std::size_t i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) key += x[i + j] + '\x1f';
        return key;
      };
      for (std::size_t i = 0; i + n <= hyps[s].size(); ++i) ++h[gram(hyps[s], i)];
      for (std::size_t i = 0; i + n <= refs[s].size(); ++i) ++r[gram(refs[s], i)];
      for (auto& [key, c] : h) {
        total[n - 1] += c;
        match[n - 1] += std::min(c, r.count(key) ? r[key] : 0);
      }
    }
  }
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0) return 0.0;
    log_sum += std::log(match[n] / total[n]);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

// ---- desk-scale experiment shared by the last criteria

struct System {
  BleuScore score;
  std::vector<Sentence> hyps;
};

struct Desk {
  SyntheticDataset data;
  Vocab vocab;
  std::vector<Example> train, dev, test;
  std::vector<Sentence> dev_refs, test_refs;
  ModelConfig base;

  Desk() {
    data = generate_synthetic_dataset(SyntheticSpec{}, 1);
    std::vector<Sentence> corpus;
    for (const auto& p : data.train.pairs) {
      corpus.push_back(p.source);
      corpus.push_back(p.target);
    }
    vocab = Vocab::build(corpus, 10000);
    train = encode_pairs(data.train.pairs, vocab);
    dev = encode_pairs(data.dev.pairs, vocab);
    test = encode_pairs(data.test.pairs, vocab);
    for (const auto& p : data.dev.pairs) dev_refs.push_back(p.target);
    for (const auto& p : data.test.pairs) test_refs.push_back(p.target);
    base.vocab_size = vocab.size();
    base.embedding_dim = 32;
    base.hidden_dim = 64;
    base.image_dim = data.features.dim();
    base.dropout_embedding = base.dropout_encoder = base.dropout_output = 0.0;
  }

  DevSet dev_set() const { return {dev, dev_refs, &vocab}; }

  TrainConfig train_config(std::size_t k) const {
    TrainConfig t;
    t.learning_rate = 0.003;
    t.max_epochs = 80;
    t.policy = Policy::wait_k(k);
    return t;
  }

  Model<float> snmt(std::size_t k) const {
    ModelConfig c = base;
    c.multimodal = false;
    c.train_policy = std::to_string(k);
    Model<float> m(c);
    train_stage(m, train, dev_set(), train_config(k), FeatureSource::zeros(1, c.image_dim));
    return m;
  }

  Model<float> msnmt(std::size_t k, bool zero_only = false) const {
    ModelConfig c = base;
    c.train_policy = std::to_string(k);
    Model<float> m(c);
    PipelineConfig p = PipelineConfig::defaults(Policy::wait_k(k), 1);
    for (TrainConfig* t : {&p.pretrain, &p.finetune}) {
      t->learning_rate = 0.003;
      t->max_epochs = 80;
    }
    p.skip_finetune = zero_only;
    train_msnmt_pipeline(m, train, dev_set(), data.features, p);
    return m;
  }

  System decode(const Model<float>& m, std::size_t k) const {
    const FeatureSource f = m.config().multimodal ? FeatureSource::real(data.features)
                                                  : FeatureSource::zeros(1, base.image_dim);
    System s;
    s.hyps = hypothesis_tokens(translate_corpus(m, test, Policy::wait_k(k), f), vocab);
    s.score = bleu(s.hyps, test_refs);
    return s;
  }
};

}  // namespace

int main() {
  std::printf("acceptance suite\n");

  criterion("gradient correctness", 30, [] {
    std::string pass_out, fail_out;
    const int ok = cli({"grad-check", "--precision", "wide"}, &pass_out);
    const int bad = cli({"grad-check", "--precision", "wide", "--corrupt-backward"}, &fail_out);
    const bool pass = ok == 0 && pass_out.find("PASS") != std::string::npos && bad != 0 &&
                      fail_out.find("FAIL") != std::string::npos;
    auto strip = [](std::string s) { return s.substr(0, s.find(" over")); };
    return Outcome{pass, strip(pass_out) + "; negative control " + strip(fail_out)};
  });

  criterion("causality", 60, [] {
    const auto m = spread(toy_config());
    Rng rng(17);
    std::uniform_real_distribution<float> px(-1.0f, 1.0f);
    std::size_t identical = 0, sensitive = 0, probes = 0;
    for (int probe = 0; probe < 100; ++probe) {
      const std::size_t n = 4 + rng() % 9;
      const std::size_t k = 1 + rng() % (n - 2);
      const Policy policy = Policy::wait_k(k);
      const auto source = random_tokens(rng, n, 30);
      std::vector<float> image(8);
      for (float& v : image) v = px(rng);
      // Pick t so that at least one source token lies beyond g(t).
      std::size_t t = 1;
      while (prefix_length(policy, t + 1, n) < n && rng() % 3) ++t;
      const auto previous = random_tokens(rng, t - 1, 30);
      const std::size_t g = prefix_length(policy, t, n);
      const auto base = step_distribution(m, source, image, previous, policy);

      auto future = source;
      for (std::size_t j = g; j < n; ++j) future[j] = 4 + (future[j] - 4 + 1 + static_cast<int>(rng() % 25)) % 26;
      identical += step_distribution(m, future, image, previous, policy) == base;

      auto past = source;
      past[g - 1] = 4 + (past[g - 1] - 4 + 1) % 26;
      sensitive += step_distribution(m, past, image, previous, policy) != base;
      ++probes;
    }
    return Outcome{identical == probes && sensitive == probes,
                   std::to_string(identical) + "/" + std::to_string(probes) +
                       " probes bit-identical after editing unread tokens; " + std::to_string(sensitive) +
                       " changed after editing a read token"};
  });

  criterion("policy reduction", 0, [] {
    const auto m = spread(toy_config());
    Rng rng(23);
    std::uniform_real_distribution<float> px(-1.0f, 1.0f);
    std::size_t same = 0;
    for (int i = 0; i < 100; ++i) {
      const std::size_t n = 1 + rng() % 12;
      const auto source = random_tokens(rng, n, 30);
      std::vector<float> image(8);
      for (float& v : image) v = px(rng);
      const Policy wait = Policy::wait_k(n + rng() % 4);
      const auto a = translate<float>(m, source, std::span<const float>(image), wait, max_decode_length(n));
      const auto b = translate<float>(m, source, std::span<const float>(image), Policy::full(), max_decode_length(n));
      same += a.tokens == b.tokens;
    }

    // Full-policy prefix loss against a loop that always attends over the whole source.
    Model<double> wide = m.converted<double>();
    std::vector<Example> ex;
    FeatureStore store(1, 8);
    for (int i = 0; i < 6; ++i) {
      Example e{random_tokens(rng, 2 + rng() % 6, 30), random_tokens(rng, 1 + rng() % 6, 30), "i" + std::to_string(i)};
      ImageFeature f{e.image_id, 1, 8, std::vector<float>(8)};
      for (float& v : f.values) v = px(rng);
      store.add(f);
      ex.push_back(e);
    }
    double total = 0;
    std::size_t tokens = 0;
    for (const auto& e : ex) {
      Tape<double> tape;
      Graph<double> g(tape, wide);
      const auto& f = store.at(e.image_id).values;
      const std::vector<double> img(f.begin(), f.end());
      auto enc = g.encode(e.source, 1, e.source.size(), img);
      auto state = g.initial_state(1);
      std::vector<int> prev{kBos};
      const std::vector<std::size_t> all{e.source.size()};
      for (std::size_t t = 0; t <= e.target.size(); ++t) {
        const std::vector<int> y{t < e.target.size() ? e.target[t] : kEos};
        auto step = g.decoder_step(state, prev, enc, all);
        total += cross_entropy_sum(step.logits, std::span<const int>(y)).value().data[0];
        ++tokens;
        prev = y;
        state = step.state;
      }
    }
    std::vector<std::size_t> idx(ex.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const Batch batch = make_batch(ex, idx, FeatureSource::real(store));
    Tape<double> tape;
    Graph<double> g(tape, wide);
    const double full = prefix_loss(g, batch, Policy::full()).value().data[0];
    const double diff = std::abs(full - total / static_cast<double>(tokens));
    return Outcome{same == 100 && diff <= 1e-6, std::to_string(same) + "/100 wait-k>=n decodes equal Full; |loss diff| " +
                                                    fmt("%.2e", diff)};
  });

  criterion("AL exactness", 0, [] {
    bool ok = true;
    std::string detail;
    for (std::size_t k : {1, 3, 5, 7}) {
      for (std::size_t n : {8, 12, 20}) {
        DecodeTrace tr{{}, n};
        for (std::size_t t = 1; t <= n; ++t) tr.g.push_back(prefix_length(Policy::wait_k(k), t, n));
        ok = ok && average_lagging(tr) == static_cast<double>(k);
      }
      detail += "k=" + std::to_string(k) + " ";
    }
    for (std::size_t n : {1, 5, 9}) {
      for (std::size_t y : {1, 4, 13}) {
        DecodeTrace tr{std::vector<std::size_t>(y, n), n};
        ok = ok && average_lagging(tr) == static_cast<double>(n);
      }
    }
    return Outcome{ok, detail + "give AL = k exactly; Full gives AL = |X|"};
  });

  criterion("BLEU oracle equivalence", 0, [] {
    Rng rng(31);
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
      std::vector<Sentence> hyps, refs;
      const std::size_t lines = 1 + rng() % 6;
      for (std::size_t i = 0; i < lines; ++i) {
        Sentence h, r;
        for (std::size_t j = 4 + rng() % 8; j > 0; --j) h.push_back(words[rng() % words.size()]);
        for (std::size_t j = 4 + rng() % 8; j > 0; --j) r.push_back(words[rng() % words.size()]);
        hyps.push_back(h);
        refs.push_back(r);
      }
      worst = std::max(worst, std::abs(bleu(hyps, refs).score - oracle_bleu(hyps, refs)));
    }
    std::vector<Sentence> same{{"the", "cat", "sat", "on", "the", "mat"}, {"a", "b", "c", "d"}};
    const double identity = bleu(same, same).score;
    return Outcome{worst <= 1e-9 && identity == 100.0,
                   "max |diff| over 50 corpora " + fmt("%.2e", worst) + "; identity " + fmt("%.1f", identity)};
  });

  criterion("overfit", 300, [] {
    SyntheticSpec spec;
    spec.train = 50;
    spec.dev = 1;
    spec.test = 1;
    const auto data = generate_synthetic_dataset(spec, 11);
    std::vector<Sentence> corpus, refs;
    for (const auto& p : data.train.pairs) {
      corpus.push_back(p.source);
      corpus.push_back(p.target);
      refs.push_back(p.target);
    }
    const Vocab vocab = Vocab::build(corpus, 1000);
    const auto train = encode_pairs(data.train.pairs, vocab);
    const DevSet dev{train, refs, &vocab};
    ModelConfig c;
    c.vocab_size = vocab.size();
    c.embedding_dim = 32;
    c.hidden_dim = 64;
    c.image_dim = data.features.dim();
    c.dropout_embedding = c.dropout_encoder = c.dropout_output = 0.0;
    c.train_policy = "3";
    TrainConfig t;
    t.learning_rate = 0.003;
    t.batch_size = 10;
    t.patience = 30;
    t.max_epochs = 200;
    t.policy = Policy::wait_k(3);

    ModelConfig sc = c;
    sc.multimodal = false;
    Model<float> snmt(sc);
    const auto rs = train_stage(snmt, train, dev, t, FeatureSource::zeros(1, c.image_dim));

    Model<float> msnmt(c);
    PipelineConfig p = PipelineConfig::defaults(t.policy, 1);
    for (TrainConfig* s : {&p.pretrain, &p.finetune}) {
      *s = t;
      s->max_epochs = 100;  // both stages together stay within 200 epochs
    }
    const auto rp = train_msnmt_pipeline(msnmt, train, dev, data.features, p);
    const double ms = rp.finetune->best_bleu;
    const std::size_t epochs = rp.pretrain.epochs.size() + rp.finetune->epochs.size();
    return Outcome{rs.best_bleu >= 90 && ms >= 90 && rs.epochs.size() <= 200 && epochs <= 200,
                   "dev BLEU SNMT " + fmt("%.1f", rs.best_bleu) + " (" + std::to_string(rs.epochs.size()) +
                       " epochs), MSNMT " + fmt("%.1f", ms) + " (" + std::to_string(epochs) + " epochs)"};
  });

  const Desk desk;
  std::map<std::size_t, std::pair<System, System>> runs;  // k -> (SNMT, MSNMT)
  std::optional<Model<float>> msnmt_k1, zero_k1;
  auto ensure = [&](std::size_t k) {
    if (runs.count(k)) return;
    const auto s = desk.snmt(k);
    auto m = desk.msnmt(k);
    runs[k] = {desk.decode(s, k), desk.decode(m, k)};
    if (k == 1) msnmt_k1.emplace(std::move(m));
  };

  criterion("multimodal advantage", 0, [&] {
    for (std::size_t k : {1, 5, 7}) ensure(k);
    auto gap = [&](std::size_t k) { return runs[k].second.score.score - runs[k].first.score.score; };
    const auto sig = bootstrap_significance(runs[1].second.hyps, runs[1].first.hyps, desk.test_refs, 1000, 0.05, 1);
    const bool pass = gap(1) >= 10 && gap(1) > gap(5) && gap(1) > gap(7) && sig.significant && sig.difference > 0;
    std::string d;
    for (std::size_t k : {1, 5, 7}) {
      d += "k=" + std::to_string(k) + " SNMT " + fmt("%.1f", runs[k].first.score.score) + " MSNMT " +
           fmt("%.1f", runs[k].second.score.score) + "; ";
    }
    return Outcome{pass, d + "p=" + fmt("%.3f", sig.p_value)};
  });

  criterion("adversarial analog", 0, [&] {
    ensure(1);
    const auto real = adversarial_eval(*msnmt_k1, desk.test, desk.test_refs, desk.vocab, desk.data.features,
                                       Policy::wait_k(1));
    zero_k1.emplace(desk.msnmt(1, true));
    const auto zero = adversarial_eval(*zero_k1, desk.test, desk.test_refs, desk.vocab, desk.data.features,
                                       Policy::wait_k(1));
    const double gap = real.congruent.score - real.incongruent.score;
    const bool pass = gap >= 10 && real.significance.significant && !zero.significance.significant;
    return Outcome{pass, "trained C-I " + fmt("%.1f", gap) + " (p=" + fmt("%.3f", real.significance.p_value) +
                             "); zero-feature model C-I " +
                             fmt("%.1f", zero.congruent.score - zero.incongruent.score) +
                             " (p=" + fmt("%.3f", zero.significance.p_value) + ")"};
  });

  criterion("entity analysis", 0, [&] {
    auto words = [](const std::string& s) { return split_tokens(s); };
    std::vector<SentencePair> pairs(1);
    pairs[0].id = 1;
    pairs[0].source = words("a person rappelling a cliff above a body of water .");
    pairs[0].target = words("海 の 上 に ある 断崖 を 降り て いる 一 人 の 男性 。");
    const std::vector<EntityAnnotation> anns{{1,
                                              {{"p", "people", {1, 2}, {11, 14}, false},
                                               {"c", "scene", {4, 5}, {6, 6}, false},
                                               {"w", "scene", {7, 10}, {1, 1}, false}}}};
    const auto at3 = count_total_entities(anns, pairs, 3);
    const bool example = at3.size() == 1 && at3[0].target_tokens == words("海");

    ensure(1);
    const auto countable = count_total_entities(desk.data.test.entities, desk.data.test.pairs, 1);
    const std::size_t s = count_correct_entities(runs[1].first.hyps, countable);
    const std::size_t m = count_correct_entities(runs[1].second.hyps, countable);
    return Outcome{example && m >= s, std::string("worked example ") + (example ? "reproduced" : "WRONG") +
                                          "; k=1 correct before input: SNMT " + std::to_string(s) + ", MSNMT " +
                                          std::to_string(m) + " of " + std::to_string(countable.size())};
  });

  criterion("significance sanity", 0, [&] {
    ensure(1);
    int significant = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      for (const System* sys : {&runs[1].first, &runs[1].second}) {
        significant += bootstrap_significance(sys->hyps, sys->hyps, desk.test_refs, 1000, 0.05, seed).significant;
      }
    }
    return Outcome{significant == 0, std::to_string(significant) + " of 40 self-comparisons significant"};
  });

  criterion("reproducibility", 0, [] {
    const fs::path root = fs::temp_directory_path() / "msnmt_acceptance_repro";
    fs::remove_all(root);
    const fs::path data = root / "data";
    if (cli({"synth-data", "--seed", "4", "--train", "120", "--dev", "20", "--test", "30", "--out", data.string()})) {
      return Outcome{false, "synth-data failed"};
    }
    std::ofstream(root / "cfg.ini") << "[model]\nembedding_dim = 16\nhidden_dim = 24\n"
                                    << "[train]\nlearning_rate = 0.003\nmax_epochs = 6\n[policy]\nk = 2\n[data]\n"
                                    << "train_source = " << (data / "train.src").string() << "\n"
                                    << "train_target = " << (data / "train.tgt").string() << "\n"
                                    << "train_images = " << (data / "train.img").string() << "\n"
                                    << "dev_source = " << (data / "dev.src").string() << "\n"
                                    << "dev_target = " << (data / "dev.tgt").string() << "\n"
                                    << "dev_images = " << (data / "dev.img").string() << "\n"
                                    << "features = " << (data / "features.bin").string() << "\n";
    for (const char* run : {"a", "b"}) {
      const fs::path out = root / run;
      if (cli({"train", "--config", (root / "cfg.ini").string(), "--seed", "9", "--out", (out / "model").string()}) ||
          cli({"translate", "--checkpoint", (out / "model" / "model.ckpt").string(), "--source",
               (data / "test.src").string(), "--images", (data / "test.img").string(), "--features",
               (data / "features.bin").string(), "--out", (out / "hyp").string()})) {
        return Outcome{false, std::string("run ") + run + " failed"};
      }
    }
    bool same = true;
    std::string detail;
    for (const fs::path f : {"model/model.ckpt", "model/model.ckpt.vocab", "hyp/hyp.txt", "hyp/trace.txt"}) {
      const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
      const bool eq = !a.empty() && a == b;
      same = same && eq;
      detail += f.filename().string() + (eq ? " identical, " : " DIFFERS, ");
    }
    return Outcome{same, detail.substr(0, detail.size() - 2)};
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
