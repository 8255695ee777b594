#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace msnmt {

namespace fs = std::filesystem;

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;
inline constexpr std::size_t kDefaultMaxSentenceLength = 100;

using Sentence = std::vector<std::string>;

Sentence split_tokens(std::string_view line);
std::string join_tokens(std::span<const std::string> tokens);

/// Joint source/target vocabulary. Ids 0..3 are PAD, BOS, EOS, UNK.
class Vocab {
 public:
  Vocab();
  // Keeps the most frequent tokens up to `cap` entries including the reserved
  // ones; frequency ties go to the token seen first.
  static Vocab build(std::span<const Sentence> corpus, std::size_t cap);
  static Vocab load(const fs::path& path);
  void save(const fs::path& path) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::vector<int> encode(std::span<const std::string> tokens) const;
  Sentence decode(std::span<const int> ids) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  explicit Vocab(std::vector<std::string> tokens);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct SentencePair {
  std::size_t id = 0;  // 1-based line number in the corpus files
  Sentence source;
  Sentence target;
  std::string image_id;
};

/// Pre-tokenized, whitespace-separated, one sentence per line. Sentences longer
/// than `max_len` are rejected rather than truncated.
std::vector<SentencePair> load_parallel_corpus(const fs::path& source_path,
                                               const fs::path& target_path,
                                               std::size_t max_len = kDefaultMaxSentenceLength);
void save_parallel_corpus(std::span<const SentencePair> pairs, const fs::path& source_path,
                          const fs::path& target_path);

// Loads an image-id map (one id per line, aligned with sentences) and assigns
// ids to `pairs` in order.
void attach_image_ids(std::vector<SentencePair>& pairs, const fs::path& path);
void save_image_ids(std::span<const SentencePair> pairs, const fs::path& path);

struct ImageFeature {
  std::string id;
  std::size_t count = 1;  // m
  std::size_t dim = 0;    // D
  std::vector<float> values;  // m x D, row-major
};

class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(std::size_t count, std::size_t dim) : count_(count), dim_(dim) {}

  void add(ImageFeature feature);
  const ImageFeature* find(std::string_view id) const;
  const ImageFeature& at(std::string_view id) const;
  std::size_t size() const { return features_.size(); }
  std::size_t vectors_per_image() const { return count_; }
  std::size_t dim() const { return dim_; }
  // Insertion order; file order on load.
  const std::vector<ImageFeature>& features() const { return features_; }

 private:
  std::size_t count_ = 1;
  std::size_t dim_ = 0;
  std::vector<ImageFeature> features_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binary layout: "MMFT", u32 version = 1, u32 count, u32 m, u32 D, then per
// image: u16 id length, id bytes, m*D little-endian float32.
FeatureStore load_image_features(const fs::path& path);
void save_image_features(const FeatureStore& store, const fs::path& path);

struct Span {
  std::size_t start = 0;  // 1-based, inclusive
  std::size_t end = 0;
  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Entity {
  std::string id;
  std::string type;
  Span source;
  Span target;
  bool excluded = false;  // id occurs more than once in the sentence
  friend bool operator==(const Entity&, const Entity&) = default;
};

struct EntityAnnotation {
  std::size_t sentence_id = 0;
  std::vector<Entity> entities;
  friend bool operator==(const EntityAnnotation&, const EntityAnnotation&) = default;
};

// One line per sentence: "sentence_id<TAB>id:type:s-e:s-e id:type:s-e:s-e ...".
std::vector<EntityAnnotation> load_entity_annotations(const fs::path& path);
void save_entity_annotations(std::span<const EntityAnnotation> annotations, const fs::path& path);
// Checks every span against the sentence lengths; throws DataError naming the sentence.
void validate_annotations(std::span<const EntityAnnotation> annotations,
                          std::span<const SentencePair> pairs);

enum class FeatureMode { Real, Zeros };

/// Where image features come from when batching or decoding. In Zeros mode the
/// store is never consulted.
struct FeatureSource {
  FeatureMode mode = FeatureMode::Zeros;
  const FeatureStore* store = nullptr;
  std::size_t count = 1;
  std::size_t dim = 0;

  static FeatureSource zeros(std::size_t count, std::size_t dim) {
    return {FeatureMode::Zeros, nullptr, count, dim};
  }
  static FeatureSource real(const FeatureStore& store) {
    return {FeatureMode::Real, &store, store.vectors_per_image(), store.dim()};
  }
  // m x D block for one image; throws LookupError for unknown ids in Real mode.
  std::vector<float> lookup(const std::string& image_id) const;
};

struct Example {
  std::vector<int> source;  // no BOS/EOS
  std::vector<int> target;  // no BOS/EOS
  std::string image_id;
};

std::vector<Example> encode_pairs(std::span<const SentencePair> pairs, const Vocab& vocab);

struct Batch {
  std::size_t size = 0;
  std::size_t max_source = 0;
  std::size_t max_target = 0;
  std::vector<int> source;  // size x max_source, PAD after each true length
  std::vector<std::size_t> source_lengths;
  std::vector<int> target;  // size x max_target
  std::vector<std::size_t> target_lengths;
  std::vector<float> images;  // (m * size) x D, row j*size + b holds vector j of example b
  std::size_t image_count = 0;
  std::size_t image_dim = 0;
  std::vector<std::size_t> indices;  // positions in the input example list

  bool is_pad(std::size_t b, std::size_t j) const { return j >= source_lengths[b]; }
};

Batch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices,
                 const FeatureSource& features);

/// Shuffles with `seed` (no shuffle when seed is empty) and cuts into batches,
/// keeping the final partial batch.
std::vector<Batch> make_batches(std::span<const Example> examples, const FeatureSource& features,
                                std::size_t batch_size, std::optional<std::uint64_t> seed);

}  // namespace msnmt
