#include "msnmt/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

const std::vector<std::string> kReservedNames{"<pad>", "<bos>", "<eos>", "<unk>"};

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  auto in = open_input(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename U>
void write_le(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_le(std::istream& in, const fs::path& path, const char* what) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U))) {
    throw FormatError(path.string() + ": truncated while reading " + what);
  }
  return value;
}

Span parse_span(std::string_view text, std::size_t line_no, const fs::path& path) {
  const auto dash = text.find('-');
  auto fail = [&]() {
    return FormatError(path.string() + ":" + std::to_string(line_no) + ": bad span '" +
                       std::string(text) + "'");
  };
  if (dash == std::string_view::npos) throw fail();
  Span s;
  try {
    s.start = std::stoul(std::string(text.substr(0, dash)));
    s.end = std::stoul(std::string(text.substr(dash + 1)));
  } catch (const std::exception&) {
    throw fail();
  }
  if (s.start < 1 || s.end < s.start) throw fail();
  return s;
}

}  // namespace

Sentence split_tokens(std::string_view line) {
  Sentence out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
    if (end > pos) out.emplace_back(line.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() : Vocab(kReservedNames) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocab Vocab::build(std::span<const Sentence> corpus, std::size_t cap) {
  if (cap < 5) throw DomainError("vocabulary cap must be at least 5");
  if (corpus.empty()) throw DomainError("cannot build a vocabulary from an empty corpus");
  struct Count {
    std::size_t freq = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Count> counts;
  std::size_t position = 0;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) {
      auto [it, inserted] = counts.try_emplace(tok, Count{0, position});
      ++it->second.freq;
      ++position;
    }
  }
  std::vector<std::pair<std::string, Count>> ranked(counts.begin(), counts.end());
  std::erase_if(ranked, [](const auto& e) {
    return std::find(kReservedNames.begin(), kReservedNames.end(), e.first) != kReservedNames.end();
  });
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.freq != b.second.freq) return a.second.freq > b.second.freq;
    return a.second.first < b.second.first;
  });
  std::vector<std::string> tokens = kReservedNames;
  for (const auto& [tok, count] : ranked) {
    if (tokens.size() >= cap) break;
    tokens.push_back(tok);
  }
  return Vocab(std::move(tokens));
}

Vocab Vocab::load(const fs::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < kReservedTokens ||
      !std::equal(kReservedNames.begin(), kReservedNames.end(), lines.begin())) {
    throw FormatError(path.string() + ": vocabulary must start with the reserved tokens");
  }
  std::set<std::string> seen;
  for (const auto& tok : lines) {
    if (!seen.insert(tok).second) throw FormatError(path.string() + ": duplicate token '" + tok + "'");
  }
  return Vocab(std::move(lines));
}

void Vocab::save(const fs::path& path) const {
  auto out = open_output(path);
  for (const auto& tok : tokens_) out << tok << '\n';
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Sentence Vocab::decode(std::span<const int> ids) const {
  Sentence out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

// ---------------------------------------------------------------- corpora

std::vector<SentencePair> load_parallel_corpus(const fs::path& source_path,
                                               const fs::path& target_path, std::size_t max_len) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  if (src.size() != tgt.size()) {
    throw FormatError("line count mismatch: " + source_path.string() + " has " +
                      std::to_string(src.size()) + " lines, " + target_path.string() + " has " +
                      std::to_string(tgt.size()));
  }
  std::vector<SentencePair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair p;
    p.id = i + 1;
    p.source = split_tokens(src[i]);
    p.target = split_tokens(tgt[i]);
    if (p.source.empty()) throw FormatError(source_path.string() + ":" + std::to_string(i + 1) + ": empty line");
    if (p.target.empty()) throw FormatError(target_path.string() + ":" + std::to_string(i + 1) + ": empty line");
    if (p.source.size() > max_len) {
      throw FormatError(source_path.string() + ":" + std::to_string(i + 1) + ": " +
                        std::to_string(p.source.size()) + " tokens exceed the maximum of " +
                        std::to_string(max_len));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_parallel_corpus(std::span<const SentencePair> pairs, const fs::path& source_path,
                          const fs::path& target_path) {
  auto src = open_output(source_path);
  auto tgt = open_output(target_path);
  for (const auto& p : pairs) {
    src << join_tokens(p.source) << '\n';
    tgt << join_tokens(p.target) << '\n';
  }
}

void attach_image_ids(std::vector<SentencePair>& pairs, const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.size() != pairs.size()) {
    throw FormatError(path.string() + ": " + std::to_string(lines.size()) + " image ids for " +
                      std::to_string(pairs.size()) + " sentences");
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (lines[i].empty()) throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": empty image id");
    pairs[i].image_id = lines[i];
  }
}

void save_image_ids(std::span<const SentencePair> pairs, const fs::path& path) {
  auto out = open_output(path);
  for (const auto& p : pairs) out << p.image_id << '\n';
}

// ---------------------------------------------------------------- features

void FeatureStore::add(ImageFeature feature) {
  if (feature.count != count_ || feature.dim != dim_ || feature.values.size() != count_ * dim_) {
    throw ShapeError("image feature '" + feature.id + "' does not match store layout " +
                     std::to_string(count_) + "x" + std::to_string(dim_));
  }
  for (float v : feature.values) {
    if (!std::isfinite(v)) throw FormatError("image feature '" + feature.id + "' has a non-finite value");
  }
  if (index_.contains(feature.id)) throw FormatError("duplicate image id '" + feature.id + "'");
  index_.emplace(feature.id, features_.size());
  features_.push_back(std::move(feature));
}

const ImageFeature* FeatureStore::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &features_[it->second];
}

const ImageFeature& FeatureStore::at(std::string_view id) const {
  const ImageFeature* f = find(id);
  if (!f) throw LookupError("unknown image id '" + std::string(id) + "'");
  return *f;
}

FeatureStore load_image_features(const fs::path& path) {
  auto in = open_input(path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MMFT", 4) != 0) {
    throw FormatError(path.string() + ": bad magic, expected MMFT");
  }
  const auto version = read_le<std::uint32_t>(in, path, "version");
  if (version != 1) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = read_le<std::uint32_t>(in, path, "count");
  const auto m = read_le<std::uint32_t>(in, path, "m");
  const auto dim = read_le<std::uint32_t>(in, path, "D");
  if (m == 0 || dim == 0) throw FormatError(path.string() + ": m and D must be positive");
  FeatureStore store(m, dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto id_len = read_le<std::uint16_t>(in, path, "image id length");
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) throw FormatError(path.string() + ": truncated image id");
    ImageFeature f{std::move(id), m, dim, std::vector<float>(std::size_t{m} * dim)};
    const auto bytes = static_cast<std::streamsize>(f.values.size() * sizeof(float));
    if (!in.read(reinterpret_cast<char*>(f.values.data()), bytes)) {
      throw FormatError(path.string() + ": truncated payload for image " + std::to_string(i + 1) +
                        " of " + std::to_string(count));
    }
    store.add(std::move(f));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after " + std::to_string(count) +
                      " records (D disagrees with header?)");
  }
  return store;
}

void save_image_features(const FeatureStore& store, const fs::path& path) {
  auto out = open_output(path);
  out.write("MMFT", 4);
  write_le<std::uint32_t>(out, 1);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.vectors_per_image()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
  for (const auto& f : store.features()) {
    if (f.id.size() > 0xFFFF) throw FormatError("image id too long: " + f.id.substr(0, 32));
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(f.id.size()));
    out.write(f.id.data(), static_cast<std::streamsize>(f.id.size()));
    out.write(reinterpret_cast<const char*>(f.values.data()),
              static_cast<std::streamsize>(f.values.size() * sizeof(float)));
  }
}

// ---------------------------------------------------------------- entities

std::vector<EntityAnnotation> load_entity_annotations(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<EntityAnnotation> out;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    EntityAnnotation ann;
    const std::string head = line.substr(0, tab);
    try {
      std::size_t used = 0;
      ann.sentence_id = std::stoul(head, &used);
      if (used != head.size()) throw std::invalid_argument(head);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": bad sentence id '" + head + "'");
    }
    if (tab != std::string::npos) {
      for (const auto& rec : split_tokens(std::string_view(line).substr(tab + 1))) {
        std::vector<std::string> fields;
        std::stringstream ss(rec);
        std::string f;
        while (std::getline(ss, f, ':')) fields.push_back(f);
        if (fields.size() != 4 || fields[0].empty()) {
          throw FormatError(path.string() + ":" + std::to_string(ln + 1) + ": bad entity record '" + rec + "'");
        }
        Entity e;
        e.id = fields[0];
        e.type = fields[1];
        e.source = parse_span(fields[2], ln + 1, path);
        e.target = parse_span(fields[3], ln + 1, path);
        ann.entities.push_back(std::move(e));
      }
    }
    std::map<std::string, int> seen;
    for (const auto& e : ann.entities) ++seen[e.id];
    for (auto& e : ann.entities) e.excluded = seen[e.id] > 1;
    out.push_back(std::move(ann));
  }
  return out;
}

void save_entity_annotations(std::span<const EntityAnnotation> annotations, const fs::path& path) {
  auto out = open_output(path);
  for (const auto& ann : annotations) {
    out << ann.sentence_id << '\t';
    for (std::size_t i = 0; i < ann.entities.size(); ++i) {
      const auto& e = ann.entities[i];
      if (i) out << ' ';
      out << e.id << ':' << e.type << ':' << e.source.start << '-' << e.source.end << ':'
          << e.target.start << '-' << e.target.end;
    }
    out << '\n';
  }
}

void validate_annotations(std::span<const EntityAnnotation> annotations,
                          std::span<const SentencePair> pairs) {
  for (const auto& ann : annotations) {
    if (ann.sentence_id < 1 || ann.sentence_id > pairs.size()) {
      throw DataError("annotation for sentence " + std::to_string(ann.sentence_id) +
                      " has no matching sentence");
    }
    const auto& pair = pairs[ann.sentence_id - 1];
    for (const auto& e : ann.entities) {
      if (e.source.end > pair.source.size() || e.target.end > pair.target.size()) {
        throw DataError("sentence " + std::to_string(ann.sentence_id) + ": entity " + e.id +
                        " span lies outside the sentence");
      }
    }
  }
}

// ---------------------------------------------------------------- batching

std::vector<float> FeatureSource::lookup(const std::string& image_id) const {
  if (mode == FeatureMode::Zeros) return std::vector<float>(count * dim, 0.0f);
  if (!store) throw LookupError("no feature store for image '" + image_id + "'");
  return store->at(image_id).values;
}

std::vector<Example> encode_pairs(std::span<const SentencePair> pairs, const Vocab& vocab) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.encode(p.source), vocab.encode(p.target), p.image_id});
  return out;
}

Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices,
                 const FeatureSource& features) {
  Batch batch;
  batch.size = indices.size();
  batch.indices.assign(indices.begin(), indices.end());
  for (std::size_t i : indices) {
    batch.max_source = std::max(batch.max_source, examples[i].source.size());
    batch.max_target = std::max(batch.max_target, examples[i].target.size());
  }
  batch.source.assign(batch.size * batch.max_source, kPad);
  batch.target.assign(batch.size * batch.max_target, kPad);
  batch.image_count = features.count;
  batch.image_dim = features.dim;
  batch.images.assign(features.count * batch.size * features.dim, 0.0f);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const Example& ex = examples[indices[b]];
    std::copy(ex.source.begin(), ex.source.end(), batch.source.begin() + static_cast<std::ptrdiff_t>(b * batch.max_source));
    std::copy(ex.target.begin(), ex.target.end(), batch.target.begin() + static_cast<std::ptrdiff_t>(b * batch.max_target));
    batch.source_lengths.push_back(ex.source.size());
    batch.target_lengths.push_back(ex.target.size());
    if (features.mode == FeatureMode::Real) {
      const auto block = features.lookup(ex.image_id);
      for (std::size_t j = 0; j < features.count; ++j) {
        std::copy_n(block.begin() + static_cast<std::ptrdiff_t>(j * features.dim), features.dim,
                    batch.images.begin() + static_cast<std::ptrdiff_t>((j * batch.size + b) * features.dim));
      }
    }
  }
  return batch;
}

std::vector<Batch> make_batches(std::span<const Example> examples, const FeatureSource& features,
                                std::size_t batch_size, std::optional<std::uint64_t> seed) {
  if (batch_size == 0) throw DomainError("batch size must be positive");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (seed) {
    std::mt19937_64 rng(*seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.push_back(make_batch(examples, std::span(order).subspan(start, end - start), features));
  }
  return batches;
}

}  // namespace msnmt
