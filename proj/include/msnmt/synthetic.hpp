#pragma once

#include <cstdint>
#include <vector>

#include "msnmt/data.hpp"

namespace msnmt {

enum class WordOrder { SOV, SVO };

/// Parameters of the synthetic multimodal corpus. Source sentences read
///   SUBJ VERB ADV* OBJ
/// and targets (SOV order) read
///   OBJ' SUBJ' VERB' ADV'*
/// so the object has to be produced before it is read whenever k < n. The
/// image of each sentence encodes its object class as a hot block of the
/// feature vector plus Gaussian noise. SVO order keeps the target monotone.
struct SyntheticSpec {
  std::size_t subjects = 6;
  std::size_t verbs = 6;
  std::size_t adverbs = 6;
  std::size_t objects = 8;
  std::size_t train = 500;
  std::size_t dev = 100;
  std::size_t test = 100;
  std::size_t min_length = 3;
  std::size_t max_length = 6;
  std::size_t feature_dim = 16;
  std::size_t vectors_per_image = 1;
  double noise = 0.1;
  WordOrder order = WordOrder::SOV;
};

struct SyntheticSplit {
  std::vector<SentencePair> pairs;
  std::vector<EntityAnnotation> entities;
  std::vector<std::size_t> object_classes;  // per pair
};

struct SyntheticDataset {
  SyntheticSplit train, dev, test;
  FeatureStore features;
};

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Writes {train,dev,test}.{src,tgt,img,ent} and features.bin under `dir`.
void write_synthetic_dataset(const SyntheticDataset& data, const fs::path& dir);

}  // namespace msnmt
