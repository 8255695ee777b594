#include "msnmt/config.hpp"

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "msnmt/errors.hpp"

namespace msnmt {

namespace {

std::size_t to_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size() || value.empty()) {
    throw FormatError("config key '" + key + "': expected a nonnegative integer, got '" + value + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw FormatError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw FormatError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string real_text(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Model keys, in ModelConfig::to_text order.
std::vector<std::pair<std::string, std::string>> model_fields(const ModelConfig& m) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(m.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    out.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> snapshot(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& [k, v] : model_fields(c.model)) {
    if (k != "train_policy") out.emplace_back("model." + k, v);
  }
  const TrainConfig& t = c.train;
  out.emplace_back("train.learning_rate", real_text(t.learning_rate));
  out.emplace_back("train.batch_size", std::to_string(t.batch_size));
  out.emplace_back("train.patience", std::to_string(t.patience));
  out.emplace_back("train.max_epochs", std::to_string(t.max_epochs));
  out.emplace_back("train.seed", std::to_string(t.seed));
  out.emplace_back("train.clip_norm", real_text(t.clip_norm));
  out.emplace_back("train.pretrain_patience", std::to_string(c.pretrain_patience));
  out.emplace_back("train.finetune_batch_size", std::to_string(c.finetune_batch_size));
  out.emplace_back("train.finetune_patience", std::to_string(c.finetune_patience));
  out.emplace_back("train.skip_finetune", c.skip_finetune ? "true" : "false");
  out.emplace_back("policy.k", t.policy.to_string());
  const DataConfig& d = c.data;
  out.emplace_back("data.train_source", d.train_source.string());
  out.emplace_back("data.train_target", d.train_target.string());
  out.emplace_back("data.train_images", d.train_images.string());
  out.emplace_back("data.dev_source", d.dev_source.string());
  out.emplace_back("data.dev_target", d.dev_target.string());
  out.emplace_back("data.dev_images", d.dev_images.string());
  out.emplace_back("data.features", d.features);
  out.emplace_back("data.vocab_cap", std::to_string(d.vocab_cap));
  out.emplace_back("data.max_length", std::to_string(d.max_length));
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ContractError("config key '" + key + "' has no section");
  const std::string section = key.substr(0, dot), name = key.substr(dot + 1);
  if (section == "model") {
    if (name == "train_policy") throw ContractError("config key '" + key + "' is set through policy.k");
    bool known = false;
    for (auto& [k, v] : model_fields(model)) known = known || k == name;
    if (!known) throw ContractError("unknown config key '" + key + "'");
    try {
      model.set(name, value);
    } catch (const ContractError& e) {
      throw FormatError("config key '" + key + "': " + e.what());
    }
    return;
  }
  if (section == "train") {
    if (name == "learning_rate") train.learning_rate = to_real(key, value);
    else if (name == "batch_size") train.batch_size = to_size(key, value);
    else if (name == "patience") train.patience = to_size(key, value);
    else if (name == "max_epochs") train.max_epochs = to_size(key, value);
    else if (name == "seed") train.seed = to_size(key, value);
    else if (name == "clip_norm") train.clip_norm = to_real(key, value);
    else if (name == "pretrain_patience") pretrain_patience = to_size(key, value);
    else if (name == "finetune_batch_size") finetune_batch_size = to_size(key, value);
    else if (name == "finetune_patience") finetune_patience = to_size(key, value);
    else if (name == "skip_finetune") skip_finetune = to_bool(key, value);
    else throw ContractError("unknown config key '" + key + "'");
    return;
  }
  if (section == "policy" && name == "k") {
    set_policy(value);
    return;
  }
  if (section == "data") {
    if (name == "train_source") data.train_source = value;
    else if (name == "train_target") data.train_target = value;
    else if (name == "train_images") data.train_images = value;
    else if (name == "dev_source") data.dev_source = value;
    else if (name == "dev_target") data.dev_target = value;
    else if (name == "dev_images") data.dev_images = value;
    else if (name == "features") data.features = value;
    else if (name == "vocab_cap") data.vocab_cap = to_size(key, value);
    else if (name == "max_length") data.max_length = to_size(key, value);
    else throw ContractError("unknown config key '" + key + "'");
    return;
  }
  throw ContractError("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  for (auto& [k, v] : snapshot(*this)) {
    if (k == key) return v;
  }
  throw ContractError("unknown config key '" + key + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (auto& [k, v] : snapshot(RunConfig{})) out.push_back(k);
  return out;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw LookupError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError("config file " + path.string() + ": " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ContractError("config key '" + section + "' has no section");
    }
    for (const auto& [name, leaf] : body) c.set(section + "." + name, leaf.data());
  }
  return c;
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  std::string current;
  for (auto& [k, v] : snapshot(*this)) {
    const std::string section = k.substr(0, k.find('.'));
    if (section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << k.substr(k.find('.') + 1) << " = " << v << '\n';
  }
  return os.str();
}

std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

void RunConfig::apply_env(const std::function<const char*(const char*)>& lookup) {
  for (const std::string& key : keys()) {
    if (const char* v = lookup(env_name(key).c_str())) set(key, v);
  }
}

void RunConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  model.seed = seed;
}

void RunConfig::set_policy(const std::string& text) {
  train.policy = Policy::parse(text);
  model.train_policy = train.policy.to_string();
}

PipelineConfig RunConfig::pipeline() const {
  PipelineConfig p = PipelineConfig::defaults(train.policy, train.seed);
  for (TrainConfig* t : {&p.pretrain, &p.finetune}) {
    t->learning_rate = train.learning_rate;
    t->max_epochs = train.max_epochs;
    t->clip_norm = train.clip_norm;
  }
  p.pretrain.batch_size = train.batch_size;
  p.pretrain.patience = pretrain_patience;
  p.finetune.batch_size = finetune_batch_size;
  p.finetune.patience = finetune_patience;
  p.skip_finetune = skip_finetune;
  return p;
}

void RunConfig::validate() const {
  train.validate();
  pipeline().pretrain.validate();
  pipeline().finetune.validate();
  if (model.train_policy != train.policy.to_string()) {
    throw ContractError("model.train_policy disagrees with policy.k");
  }
  if (data.vocab_cap <= kReservedTokens) throw ContractError("data.vocab_cap must exceed the reserved tokens");
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void RunManifest::fingerprint(const fs::path& path) { fingerprints[path.string()] = sha256_file(path); }

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["arguments"] = arguments;
  j["seed"] = seed;
  j["checkpoint"] = checkpoint;
  j["config"] = config;
  j["fingerprints"] = fingerprints;
  return j.dump(2) + "\n";
}

void RunManifest::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write " + path.string());
  out << to_json();
}

}  // namespace msnmt
