#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msnmt/data.hpp"
#include "msnmt/decoding.hpp"
#include "msnmt/model.hpp"
#include "msnmt/policy.hpp"

namespace msnmt {

/// Clipped n-gram counts for one or more sentences; sums across a corpus.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  BleuStats& operator+=(const BleuStats& o);
};

struct BleuScore {
  double score = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

BleuStats sentence_stats(std::span<const std::string> hyp, std::span<const std::string> ref);
// Corpus score without smoothing: any zero precision gives 0.
BleuScore bleu_from_stats(const BleuStats& stats);
BleuScore bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

struct ALScore {
  std::vector<double> sentences;
  double mean = 0.0;
};

/// AL = (1/tau) sum_{t<=tau} [g(t) - (t-1)/r], r = |Y|/|X|, tau = first t with
/// g(t) = |X| (|Y| when the source is never fully read).
double average_lagging(const DecodeTrace& trace);
ALScore average_lagging(std::span<const DecodeTrace> traces);

struct SignificanceResult {
  double difference = 0.0;  // BLEU(A) - BLEU(B)
  double p_value = 1.0;
  bool significant = false;
  std::size_t resamples = 0;
};

/// Paired bootstrap over sentences. p is the share of resamples in which the
/// difference has the opposite sign of the observed one or vanishes.
SignificanceResult bootstrap_significance(std::span<const Sentence> hyps_a, std::span<const Sentence> hyps_b,
                                          std::span<const Sentence> refs, std::size_t resamples = 1000,
                                          double alpha = 0.05, std::uint64_t seed = 1);

struct Reversal {
  std::vector<std::size_t> image_for;  // sentence i gets the image of sentence image_for[i]
  std::vector<std::string> notes;      // substitutions applied to fixed points
};

// Order reversal; for odd N the middle sentence swaps partners with its successor.
Reversal incongruent_pairing(std::size_t n);

struct AdversarialResult {
  BleuScore congruent;
  BleuScore incongruent;
  SignificanceResult significance;
  Reversal pairing;
};

AdversarialResult adversarial_eval(const Model<float>& model, std::span<const Example> examples,
                                   std::span<const Sentence> references, const Vocab& vocab,
                                   const FeatureStore& features, const Policy& policy,
                                   std::size_t resamples = 1000, double alpha = 0.05, std::uint64_t seed = 1);

struct CountableEntity {
  std::size_t sentence = 0;  // index into the test set
  std::size_t sentence_id = 0;
  Entity entity;
  Sentence target_tokens;
};

/// Entities whose target span starts at a step t at which their source span is
/// not yet completely read under wait-k.
std::vector<CountableEntity> count_total_entities(std::span<const EntityAnnotation> annotations,
                                                  std::span<const SentencePair> pairs, std::size_t k);

// Countable entities whose reference tokens appear contiguously in the hypothesis.
std::size_t count_correct_entities(std::span<const Sentence> hypotheses,
                                   std::span<const CountableEntity> countable);

struct EntityRow {
  std::size_t k = 0;
  std::size_t total = 0;
  std::map<std::string, std::size_t> correct;  // per system label
};

std::string format_entity_table(std::span<const EntityRow> rows);

/// Structured text report, one "[section]" per key with "name = value" lines.
class Report {
 public:
  void add(const std::string& section, const std::string& key, const std::string& value);
  void add(const std::string& section, const std::string& key, double value);
  std::string str() const;
  void save(const fs::path& path) const;
  static Report load(const fs::path& path);
  const std::map<std::string, std::vector<std::pair<std::string, std::string>>>& sections() const {
    return sections_;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections_;
};

// Averages numeric values of reports that share a layout; non-numeric values are taken from the first.
Report average_reports(std::span<const Report> reports);

struct PlotRow {
  std::string k;
  double bleu_snmt = 0.0, bleu_msnmt = 0.0, al_snmt = 0.0, al_msnmt = 0.0;
};
void write_plot_csv(std::span<const PlotRow> rows, const fs::path& path);

}  // namespace msnmt
