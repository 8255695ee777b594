#include "msnmt/decoding.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "msnmt/errors.hpp"

namespace msnmt {

std::size_t max_decode_length(std::size_t source_length) {
  return std::min<std::size_t>(3 * source_length + 5, 200);
}

template <typename T>
Hypothesis translate(const Model<T>& model, std::span<const int> source,
                     std::optional<std::span<const T>> image, const Policy& policy,
                     std::size_t max_len) {
  const ModelConfig& cfg = model.config();
  if (source.empty()) throw DomainError("translate: empty source sentence");
  if (cfg.multimodal && !image) throw ContractError("translate: multimodal model needs an image feature");
  if (!cfg.multimodal && image) throw ContractError("translate: text-only model was given an image feature");

  const std::size_t n = source.size();
  Tape<T> tape;
  tape.set_grad_enabled(false);
  Graph<T> graph(tape, model);
  auto enc = graph.encode(source, 1, n, image.value_or(std::span<const T>{}));
  auto state = graph.initial_state(1);

  Hypothesis hyp;
  hyp.trace.source_length = n;
  std::vector<int> previous{kBos};
  for (std::size_t t = 1; t <= max_len; ++t) {
    const std::size_t limit[1] = {prefix_length(policy, t, n)};
    auto step = graph.decoder_step(state, previous, enc, limit);
    const auto& logits = step.logits.value().data;
    // PAD and BOS are never emitted.
    int best = kEos;
    for (std::size_t v = kEos + 1; v < logits.size(); ++v)
      if (logits[v] > logits[best]) best = static_cast<int>(v);
    if (best == kEos) break;
    hyp.tokens.push_back(best);
    hyp.trace.g.push_back(limit[0]);
    previous[0] = best;
    state = std::move(step.state);
  }
  return hyp;
}

template Hypothesis translate<float>(const Model<float>&, std::span<const int>,
                                     std::optional<std::span<const float>>, const Policy&, std::size_t);
template Hypothesis translate<double>(const Model<double>&, std::span<const int>,
                                      std::optional<std::span<const double>>, const Policy&, std::size_t);

std::vector<Hypothesis> translate_corpus(const Model<float>& model, std::span<const Example> examples,
                                         const Policy& policy, const FeatureSource& features) {
  const bool multimodal = model.config().multimodal;
  if (multimodal && (features.count != model.config().image_count || features.dim != model.config().image_dim)) {
    throw ContractError("translate_corpus: feature shape does not match the model");
  }
  std::vector<Hypothesis> out(examples.size());
  // Resolve features up front so lookup errors surface outside the parallel region.
  std::vector<std::vector<float>> images;
  if (multimodal) {
    images.reserve(examples.size());
    for (const auto& ex : examples) images.push_back(features.lookup(ex.image_id));
  }
  const auto count = static_cast<std::ptrdiff_t>(examples.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      const auto& ex = examples[i];
      std::optional<std::span<const float>> image;
      if (multimodal) image = std::span<const float>(images[i]);
      out[i] = translate(model, std::span<const int>(ex.source), image, policy,
                         max_decode_length(ex.source.size()));
    } catch (...) {
#pragma omp critical(msnmt_decode_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

bool policy_mismatch(const ModelConfig& config, const Policy& policy) {
  return Policy::parse(config.train_policy) != policy;
}

std::vector<Sentence> hypothesis_tokens(std::span<const Hypothesis> hyps, const Vocab& vocab) {
  std::vector<Sentence> out;
  out.reserve(hyps.size());
  for (const auto& h : hyps) out.push_back(vocab.decode(h.tokens));
  return out;
}

void write_hypotheses(std::span<const Hypothesis> hyps, const Vocab& vocab, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : hypothesis_tokens(hyps, vocab)) out << join_tokens(s) << '\n';
}

std::string format_trace(const DecodeTrace& trace) {
  std::string line;
  for (std::size_t i = 0; i < trace.g.size(); ++i) {
    if (i) line += ',';
    line += std::to_string(trace.g[i]);
  }
  line += '|';
  line += std::to_string(trace.source_length);
  return line;
}

namespace {

std::size_t parse_count(std::string_view s, std::string_view line) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
    throw FormatError("malformed trace line '" + std::string(line) + "'");
  }
  return v;
}

}  // namespace

DecodeTrace parse_trace(std::string_view line) {
  const auto bar = line.find('|');
  if (bar == std::string_view::npos) throw FormatError("trace line without '|': '" + std::string(line) + "'");
  DecodeTrace trace;
  trace.source_length = parse_count(line.substr(bar + 1), line);
  std::string_view gs = line.substr(0, bar);
  while (!gs.empty()) {
    const auto comma = gs.find(',');
    trace.g.push_back(parse_count(gs.substr(0, comma), line));
    if (comma == std::string_view::npos) break;
    gs.remove_prefix(comma + 1);
  }
  for (std::size_t i = 0; i < trace.g.size(); ++i) {
    if (trace.g[i] < 1 || trace.g[i] > trace.source_length || (i && trace.g[i] < trace.g[i - 1])) {
      throw FormatError("invalid schedule in trace line '" + std::string(line) + "'");
    }
  }
  return trace;
}

void write_traces(std::span<const Hypothesis> hyps, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& h : hyps) out << format_trace(h.trace) << '\n';
}

std::vector<DecodeTrace> load_traces(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DecodeTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(parse_trace(line));
  }
  return out;
}

}  // namespace msnmt
