#pragma once

#include <optional>
#include <span>
#include <vector>

#include "msnmt/data.hpp"
#include "msnmt/model.hpp"
#include "msnmt/policy.hpp"

namespace msnmt {

/// Read/write schedule of one decoded sentence: g[t-1] source tokens had been
/// read when target token t was emitted. EOS is not recorded.
struct DecodeTrace {
  std::vector<std::size_t> g;
  std::size_t source_length = 0;

  std::size_t target_length() const { return g.size(); }
  friend bool operator==(const DecodeTrace&, const DecodeTrace&) = default;
};

struct Hypothesis {
  std::vector<int> tokens;  // no BOS, EOS or PAD
  DecodeTrace trace;
  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

// 3n + 5, at most 200.
std::size_t max_decode_length(std::size_t source_length);

/// Greedy simultaneous decoding. `image` is the m x D block and must be given
/// exactly when the model is multimodal.
template <typename T>
Hypothesis translate(const Model<T>& model, std::span<const int> source,
                     std::optional<std::span<const T>> image, const Policy& policy,
                     std::size_t max_len);

/// Decodes every example concurrently; output order follows the input.
/// Text-only models ignore `features`.
std::vector<Hypothesis> translate_corpus(const Model<float>& model, std::span<const Example> examples,
                                         const Policy& policy, const FeatureSource& features);

// True when decoding under `policy` differs from the schedule the model was trained with.
bool policy_mismatch(const ModelConfig& config, const Policy& policy);

std::vector<Sentence> hypothesis_tokens(std::span<const Hypothesis> hyps, const Vocab& vocab);
void write_hypotheses(std::span<const Hypothesis> hyps, const Vocab& vocab, const fs::path& path);
// One line per sentence: "g1,g2,...|n"; an empty hypothesis gives "|n".
void write_traces(std::span<const Hypothesis> hyps, const fs::path& path);
std::vector<DecodeTrace> load_traces(const fs::path& path);
std::string format_trace(const DecodeTrace& trace);
DecodeTrace parse_trace(std::string_view line);

extern template Hypothesis translate<float>(const Model<float>&, std::span<const int>,
                                            std::optional<std::span<const float>>, const Policy&,
                                            std::size_t);
extern template Hypothesis translate<double>(const Model<double>&, std::span<const int>,
                                             std::optional<std::span<const double>>, const Policy&,
                                             std::size_t);

}  // namespace msnmt
