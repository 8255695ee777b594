#include "msnmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "msnmt/errors.hpp"

namespace msnmt {

// ---------------------------------------------------------------- BLEU

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t i = 0; i < 4; ++i) {
    matches[i] += o.matches[i];
    totals[i] += o.totals[i];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(std::span<const std::string> s, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Ngram(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

BleuStats sentence_stats(std::span<const std::string> hyp, std::span<const std::string> ref) {
  BleuStats st;
  st.hyp_length = hyp.size();
  st.ref_length = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : h) {
      auto it = r.find(gram);
      if (it != r.end()) st.matches[n - 1] += std::min(count, it->second);
    }
    st.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return st;
}

BleuScore bleu_from_stats(const BleuStats& st) {
  BleuScore out;
  out.hyp_length = st.hyp_length;
  out.ref_length = st.ref_length;
  bool zero = st.hyp_length == 0;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    out.precisions[i] = st.totals[i] ? static_cast<double>(st.matches[i]) / static_cast<double>(st.totals[i]) : 0.0;
    if (out.precisions[i] == 0.0) zero = true;
    else log_sum += std::log(out.precisions[i]);
  }
  out.brevity_penalty = 1.0;
  if (st.hyp_length == 0) out.brevity_penalty = 0.0;
  else if (st.hyp_length < st.ref_length)
    out.brevity_penalty = std::exp(1.0 - static_cast<double>(st.ref_length) / static_cast<double>(st.hyp_length));
  out.score = zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

BleuScore bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                        std::to_string(references.size()) + " references");
  }
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += sentence_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total);
}

// ---------------------------------------------------------------- latency

double average_lagging(const DecodeTrace& trace) {
  const std::size_t x = trace.source_length, y = trace.target_length();
  if (y == 0) throw DomainError("average lagging of an empty hypothesis");
  if (x == 0) throw DomainError("average lagging with an empty source");
  std::size_t tau = y;
  for (std::size_t t = 1; t <= y; ++t) {
    if (trace.g[t - 1] == x) {
      tau = t;
      break;
    }
  }
  // (t-1)/r = (t-1)|X|/|Y|
  double sum = 0.0;
  for (std::size_t t = 1; t <= tau; ++t) {
    sum += static_cast<double>(trace.g[t - 1]) -
           static_cast<double>((t - 1) * x) / static_cast<double>(y);
  }
  return sum / static_cast<double>(tau);
}

ALScore average_lagging(std::span<const DecodeTrace> traces) {
  ALScore out;
  out.sentences.reserve(traces.size());
  double sum = 0.0;
  for (const auto& t : traces) {
    out.sentences.push_back(average_lagging(t));
    sum += out.sentences.back();
  }
  out.mean = traces.empty() ? 0.0 : sum / static_cast<double>(traces.size());
  return out;
}

// ---------------------------------------------------------------- significance

SignificanceResult bootstrap_significance(std::span<const Sentence> hyps_a, std::span<const Sentence> hyps_b,
                                          std::span<const Sentence> refs, std::size_t resamples, double alpha,
                                          std::uint64_t seed) {
  if (hyps_a.size() != refs.size() || hyps_b.size() != refs.size()) {
    throw ContractError("bootstrap: hypothesis and reference counts differ");
  }
  if (refs.empty()) throw ContractError("bootstrap: empty test set");
  if (resamples < 100) throw ContractError("bootstrap: at least 100 resamples are required");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("bootstrap: alpha must lie in (0, 1)");

  const std::size_t n = refs.size();
  std::vector<BleuStats> a(n), b(n);
  BleuStats ta, tb;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = sentence_stats(hyps_a[i], refs[i]);
    b[i] = sentence_stats(hyps_b[i], refs[i]);
    ta += a[i];
    tb += b[i];
  }
  SignificanceResult out;
  out.resamples = resamples;
  out.difference = bleu_from_stats(ta).score - bleu_from_stats(tb).score;
  if (out.difference == 0.0) {
    out.p_value = 1.0;
    return out;
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t against = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    BleuStats sa, sb;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = pick(rng);
      sa += a[j];
      sb += b[j];
    }
    const double d = bleu_from_stats(sa).score - bleu_from_stats(sb).score;
    if (d * (out.difference > 0 ? 1.0 : -1.0) <= 0.0) ++against;
  }
  out.p_value = static_cast<double>(against) / static_cast<double>(resamples);
  out.significant = out.p_value < alpha;
  return out;
}

// ---------------------------------------------------------------- adversarial

Reversal incongruent_pairing(std::size_t n) {
  if (n < 2) throw ContractError("incongruent pairing needs at least two sentences");
  Reversal r;
  r.image_for.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.image_for[i] = n - 1 - i;
  if (n % 2 == 1) {
    const std::size_t mid = n / 2;
    std::swap(r.image_for[mid], r.image_for[mid + 1]);
    r.notes.push_back("sentence " + std::to_string(mid + 1) + " kept its own image under reversal; swapped with sentence " +
                      std::to_string(mid + 2));
  }
  return r;
}

AdversarialResult adversarial_eval(const Model<float>& model, std::span<const Example> examples,
                                   std::span<const Sentence> references, const Vocab& vocab,
                                   const FeatureStore& features, const Policy& policy, std::size_t resamples,
                                   double alpha, std::uint64_t seed) {
  if (!model.config().multimodal) throw ContractError("adversarial evaluation needs a multimodal model");
  if (examples.size() != references.size()) throw ContractError("adversarial: examples and references differ in count");
  AdversarialResult out;
  out.pairing = incongruent_pairing(examples.size());
  std::vector<Example> swapped(examples.begin(), examples.end());
  for (std::size_t i = 0; i < swapped.size(); ++i) swapped[i].image_id = examples[out.pairing.image_for[i]].image_id;

  const auto source = FeatureSource::real(features);
  const auto congruent = hypothesis_tokens(translate_corpus(model, examples, policy, source), vocab);
  const auto incongruent = hypothesis_tokens(translate_corpus(model, swapped, policy, source), vocab);
  out.congruent = bleu(congruent, references);
  out.incongruent = bleu(incongruent, references);
  out.significance = bootstrap_significance(congruent, incongruent, references, resamples, alpha, seed);
  return out;
}

// ---------------------------------------------------------------- entities

std::vector<CountableEntity> count_total_entities(std::span<const EntityAnnotation> annotations,
                                                  std::span<const SentencePair> pairs, std::size_t k) {
  validate_annotations(annotations, pairs);
  const Policy policy = Policy::wait_k(k);
  std::map<std::size_t, std::size_t> index;
  for (std::size_t i = 0; i < pairs.size(); ++i) index[pairs[i].id] = i;

  std::vector<CountableEntity> out;
  for (const auto& ann : annotations) {
    const std::size_t s = index.at(ann.sentence_id);
    const auto& pair = pairs[s];
    for (const auto& e : ann.entities) {
      if (e.excluded) continue;
      const std::size_t read = prefix_length(policy, e.target.start, pair.source.size());
      if (e.source.end <= read) continue;
      CountableEntity c{s, ann.sentence_id, e,
                        Sentence(pair.target.begin() + static_cast<std::ptrdiff_t>(e.target.start - 1),
                                 pair.target.begin() + static_cast<std::ptrdiff_t>(e.target.end))};
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::size_t count_correct_entities(std::span<const Sentence> hypotheses,
                                   std::span<const CountableEntity> countable) {
  std::size_t correct = 0;
  for (const auto& c : countable) {
    if (c.sentence >= hypotheses.size()) throw ContractError("entity refers past the last hypothesis");
    const auto& h = hypotheses[c.sentence];
    if (std::search(h.begin(), h.end(), c.target_tokens.begin(), c.target_tokens.end()) != h.end() &&
        !c.target_tokens.empty()) {
      ++correct;
    }
  }
  return correct;
}

std::string format_entity_table(std::span<const EntityRow> rows) {
  std::vector<std::string> systems;
  for (const auto& r : rows)
    for (const auto& [name, v] : r.correct)
      if (std::find(systems.begin(), systems.end(), name) == systems.end()) systems.push_back(name);
  std::ostringstream os;
  os << "k\ttotal";
  for (const auto& s : systems) os << '\t' << s;
  os << '\n';
  for (const auto& r : rows) {
    os << r.k << '\t' << r.total;
    for (const auto& s : systems) {
      auto it = r.correct.find(s);
      os << '\t';
      if (it != r.correct.end()) os << it->second;
      else os << '-';
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- reports

void Report::add(const std::string& section, const std::string& key, const std::string& value) {
  if (!sections_.count(section)) order_.push_back(section);
  sections_[section].emplace_back(key, value);
}

void Report::add(const std::string& section, const std::string& key, double value) {
  std::ostringstream os;
  os << std::setprecision(10) << value;
  add(section, key, os.str());
}

std::string Report::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (i) os << '\n';
    os << '[' << order_[i] << "]\n";
    for (const auto& [k, v] : sections_.at(order_[i])) os << k << " = " << v << '\n';
  }
  return os.str();
}

void Report::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << str();
}

Report Report::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Report r;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos || section.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed report line");
    }
    r.add(section, line.substr(0, eq), line.substr(eq + 3));
  }
  return r;
}

Report average_reports(std::span<const Report> reports) {
  if (reports.empty()) throw ContractError("no reports to average");
  Report out;
  const auto& first = reports.front();
  for (const auto& [section, entries] : first.sections()) {
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const auto& [key, value] = entries[e];
      double sum = 0.0;
      bool numeric = true;
      for (const auto& r : reports) {
        const auto it = r.sections().find(section);
        if (it == r.sections().end() || it->second.size() <= e || it->second[e].first != key) {
          throw ContractError("reports do not share a layout (section '" + section + "')");
        }
        char* end = nullptr;
        const std::string& v = it->second[e].second;
        const double x = std::strtod(v.c_str(), &end);
        if (v.empty() || *end != '\0') numeric = false;
        sum += x;
      }
      if (numeric && value != "true" && value != "false") out.add(section, key, sum / static_cast<double>(reports.size()));
      else out.add(section, key, value);
    }
  }
  return out;
}

void write_plot_csv(std::span<const PlotRow> rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "k,bleu_snmt,bleu_msnmt,al_snmt,al_msnmt\n" << std::setprecision(10);
  for (const auto& r : rows) out << r.k << ',' << r.bleu_snmt << ',' << r.bleu_msnmt << ',' << r.al_snmt << ',' << r.al_msnmt << '\n';
}

}  // namespace msnmt
