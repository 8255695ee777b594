#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msnmt/model.hpp"
#include "msnmt/training.hpp"

namespace msnmt {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "msnmt 0.1.0";
inline constexpr const char* kEnvPrefix = "MSNMT_";

struct DataConfig {
  fs::path train_source, train_target, train_images;
  fs::path dev_source, dev_target, dev_images;
  std::string features = "zeros";  // feature file path, or "zeros"
  std::size_t vocab_cap = 10000;
  std::size_t max_length = kDefaultMaxSentenceLength;
};

/// Everything a training run needs. Sections in the file are [model], [train],
/// [policy] and [data]; keys are addressed as "section.key".
struct RunConfig {
  ModelConfig model;
  TrainConfig train;  // SNMT run; also supplies lr, epochs and clipping to both MSNMT stages
  std::size_t pretrain_patience = 10;
  std::size_t finetune_batch_size = 32;
  std::size_t finetune_patience = 5;
  bool skip_finetune = false;
  DataConfig data;

  // Throws ContractError naming unknown keys, FormatError for bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // Reads an INI file; missing keys keep their defaults.
  static RunConfig load(const fs::path& path);
  std::string to_ini() const;

  // MSNMT_<SECTION>_<KEY> (upper case) overrides a key, e.g. MSNMT_TRAIN_LEARNING_RATE.
  void apply_env(const std::function<const char*(const char*)>& lookup);

  void set_seed(std::uint64_t seed);
  void set_policy(const std::string& text);
  PipelineConfig pipeline() const;
  void validate() const;
};

std::string env_name(const std::string& key);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

/// Written by every command before any of its outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::string config;  // resolved configuration text
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::map<std::string, std::string> fingerprints;  // input path -> sha256
  std::string tool_version = kToolVersion;

  void fingerprint(const fs::path& path);
  std::string to_json() const;
  void save(const fs::path& path) const;
};

}  // namespace msnmt
