#include "msnmt/synthetic.hpp"

#include <random>
#include <string>

#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

std::string word(char tag, std::size_t i) { return std::string(1, tag) + std::to_string(i); }

SyntheticSplit generate_split(const SyntheticSpec& spec, std::size_t count, const std::string& prefix,
                              std::mt19937_64& rng, FeatureStore& features) {
  std::uniform_int_distribution<std::size_t> subj(0, spec.subjects - 1), verb(0, spec.verbs - 1),
      adv(0, spec.adverbs - 1), obj(0, spec.objects - 1),
      length(spec.min_length, spec.max_length);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const std::size_t block = spec.feature_dim / spec.objects;

  SyntheticSplit split;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n = length(rng);
    const std::size_t s = subj(rng), v = verb(rng), o = obj(rng);
    std::vector<std::size_t> advs(n - 3);
    for (auto& a : advs) a = adv(rng);

    SentencePair pair;
    pair.id = i + 1;
    pair.image_id = prefix + std::to_string(i + 1);
    pair.source.push_back(word('s', s));
    pair.source.push_back(word('v', v));
    for (auto a : advs) pair.source.push_back(word('a', a));
    pair.source.push_back(word('o', o));

    EntityAnnotation ann;
    ann.sentence_id = pair.id;
    if (spec.order == WordOrder::SOV) {
      pair.target.push_back(word('O', o));
      pair.target.push_back(word('S', s));
      pair.target.push_back(word('V', v));
      for (auto a : advs) pair.target.push_back(word('A', a));
      ann.entities.push_back({"1", "subject", {1, 1}, {2, 2}, false});
      ann.entities.push_back({"2", "object", {n, n}, {1, 1}, false});
    } else {
      for (const auto& tok : pair.source) pair.target.push_back(std::string(1, char(std::toupper(tok[0]))) + tok.substr(1));
      ann.entities.push_back({"1", "subject", {1, 1}, {1, 1}, false});
      ann.entities.push_back({"2", "object", {n, n}, {n, n}, false});
    }

    ImageFeature f{pair.image_id, spec.vectors_per_image, spec.feature_dim,
                   std::vector<float>(spec.vectors_per_image * spec.feature_dim)};
    for (std::size_t j = 0; j < spec.vectors_per_image; ++j) {
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        const bool hot = d >= o * block && d < (o + 1) * block;
        f.values[j * spec.feature_dim + d] = static_cast<float>((hot ? 1.0 : 0.0) + noise(rng));
      }
    }
    features.add(std::move(f));
    split.pairs.push_back(std::move(pair));
    split.entities.push_back(std::move(ann));
    split.object_classes.push_back(o);
  }
  return split;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.min_length < 3 || spec.max_length < spec.min_length) {
    throw DomainError("synthetic spec: lengths must satisfy 3 <= min_length <= max_length");
  }
  if (spec.max_length > kDefaultMaxSentenceLength) {
    throw DomainError("synthetic spec: max_length exceeds the corpus limit");
  }
  if (spec.subjects == 0 || spec.verbs == 0 || spec.adverbs == 0 || spec.objects == 0) {
    throw DomainError("synthetic spec: every word class needs at least one member");
  }
  if (spec.feature_dim < spec.objects) {
    throw DomainError("synthetic spec: feature_dim must be at least the number of object classes");
  }
  if (spec.vectors_per_image == 0 || spec.noise < 0.0) {
    throw DomainError("synthetic spec: need at least one vector per image and nonnegative noise");
  }
  std::mt19937_64 rng(seed);
  SyntheticDataset data;
  data.features = FeatureStore(spec.vectors_per_image, spec.feature_dim);
  data.train = generate_split(spec, spec.train, "train_", rng, data.features);
  data.dev = generate_split(spec, spec.dev, "dev_", rng, data.features);
  data.test = generate_split(spec, spec.test, "test_", rng, data.features);
  return data;
}

void write_synthetic_dataset(const SyntheticDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, split] : {std::pair{"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}}) {
    const std::string base = name;
    save_parallel_corpus(split->pairs, dir / (base + ".src"), dir / (base + ".tgt"));
    save_image_ids(split->pairs, dir / (base + ".img"));
    save_entity_annotations(split->entities, dir / (base + ".ent"));
  }
  save_image_features(data.features, dir / "features.bin");
}

}  // namespace msnmt
