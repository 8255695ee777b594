#include "msnmt/model.hpp"

#include <cmath>
#include <sstream>

#include "msnmt/data.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/policy.hpp"

namespace msnmt {

// ---------------------------------------------------------------- config

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a nonnegative integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ContractError("config key '" + key + "' expects true/false, got '" + value + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || embedding_dim == 0 || hidden_dim == 0 || image_dim == 0 || image_count == 0) {
    throw ContractError("model dimensions must be positive");
  }
  if (vocab_size <= kReservedTokens) throw ContractError("vocabulary must hold more than the reserved tokens");
  for (double p : {dropout_embedding, dropout_encoder, dropout_output}) {
    if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout rates must lie in [0, 1)");
  }
  (void)Policy::parse(train_policy);
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "vocab_size") vocab_size = parse_size(key, value);
  else if (key == "embedding_dim") embedding_dim = parse_size(key, value);
  else if (key == "hidden_dim") hidden_dim = parse_size(key, value);
  else if (key == "attention_dim") attention_dim = parse_size(key, value);
  else if (key == "image_dim") image_dim = parse_size(key, value);
  else if (key == "image_count") image_count = parse_size(key, value);
  else if (key == "dropout_embedding") dropout_embedding = parse_real(key, value);
  else if (key == "dropout_encoder") dropout_encoder = parse_real(key, value);
  else if (key == "dropout_output") dropout_output = parse_real(key, value);
  else if (key == "multimodal") multimodal = parse_bool(key, value);
  else if (key == "seed") seed = parse_size(key, value);
  else if (key == "train_policy") train_policy = Policy::parse(value).to_string();
  else throw ContractError("unknown model config key '" + key + "'");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "vocab_size = " << vocab_size << '\n'
     << "embedding_dim = " << embedding_dim << '\n'
     << "hidden_dim = " << hidden_dim << '\n'
     << "attention_dim = " << attention_dim << '\n'
     << "image_dim = " << image_dim << '\n'
     << "image_count = " << image_count << '\n'
     << "dropout_embedding = " << dropout_embedding << '\n'
     << "dropout_encoder = " << dropout_encoder << '\n'
     << "dropout_output = " << dropout_output << '\n'
     << "multimodal = " << (multimodal ? "true" : "false") << '\n'
     << "seed = " << seed << '\n'
     << "train_policy = " << train_policy << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError("model config line without '=': " + t);
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t V = c.vocab_size, E = c.embedding_dim, H = c.hidden_dim, A = c.attention(),
                    G = 3 * H;
  std::vector<std::pair<std::string, Shape>> layout{{"emb", {V, E}}};
  auto gru = [&](const std::string& name, std::size_t in) {
    layout.push_back({name + ".Wx", {in, G}});
    layout.push_back({name + ".Wh", {H, G}});
    layout.push_back({name + ".bx", {G}});
    layout.push_back({name + ".bh", {G}});
  };
  auto att = [&](const std::string& name) {
    layout.push_back({name + ".Wq", {H, A}});
    layout.push_back({name + ".bq", {A}});
    layout.push_back({name + ".Wk", {H, A}});
    layout.push_back({name + ".v", {A}});
  };
  gru("enc.0", E);
  gru("enc.1", H);
  gru("dec.0", E);
  gru("dec.1", H);
  att("att.txt");
  layout.push_back({"out.W", {H, E}});
  layout.push_back({"out.b", {E}});
  layout.push_back({"out.bias", {V}});
  if (c.multimodal) {
    layout.push_back({"img.W", {c.image_dim, H}});
    layout.push_back({"img.b", {H}});
    att("att.img");
    layout.push_back({"fuse.Us", {H, A}});
    layout.push_back({"fuse.Uc", {H, A}});
    layout.push_back({"fuse.b", {A}});
    layout.push_back({"fuse.v", {A, 1}});
    layout.push_back({"fuse.Wtxt", {H, H}});
    layout.push_back({"fuse.Wimg", {H, H}});
  }
  return layout;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_layout(config)) total += shape_size(shape);
  return total;
}

// ---------------------------------------------------------------- Model

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  Rng rng(config_.seed);
  for (auto& [name, shape] : parameter_layout(config_)) {
    Tensor<T> t(shape);
    double bound = 0.0;
    if (name == "emb") {
      bound = std::sqrt(3.0 / static_cast<double>(shape[1]));  // rows of unit expected norm
    } else if (shape.size() == 2) {
      bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    } else if (name.ends_with(".v")) {
      bound = std::sqrt(6.0 / static_cast<double>(shape[0] + 1));
    }
    if (bound > 0.0) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& x : t.data) x = static_cast<T>(dist(rng));
    }
    t.requires_grad = true;
    params_.emplace(name, std::move(t));
  }
}

template <typename T>
Model<T>::Model(ModelConfig config, std::map<std::string, Tensor<T>> params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw ContractError("model has " + std::to_string(params_.size()) + " tensors, config expects " +
                        std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("model is missing tensor '" + name + "'");
    if (it->second.shape != shape) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_string(it->second.shape) +
                       ", config expects " + shape_string(shape));
    }
    it->second.requires_grad = true;
  }
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : params_) total += t.size();
  return total;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, t] : params_) t.clear_grad();
}

// ---------------------------------------------------------------- Graph

template <typename T>
Graph<T>::Graph(Tape<T>& tape, Model<T>& model, Mode mode, Rng* rng)
    : tape_(tape), config_(model.config()), mode_(mode), rng_(rng) {
  if (mode == Mode::Train && !rng) throw ContractError("training mode needs a dropout generator");
  for (auto& [name, t] : model.params()) vars_.emplace(name, tape.param(t));
}

template <typename T>
Graph<T>::Graph(Tape<T>& tape, const Model<T>& model)
    : tape_(tape), config_(model.config()), mode_(Mode::Eval), rng_(nullptr) {
  for (const auto& [name, t] : model.params()) vars_.emplace(name, tape.frozen(t));
}

template <typename T>
Var<T> Graph<T>::bound(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter '" + name + "' is not part of this model");
  return it->second;
}

template <typename T>
Var<T> Graph<T>::maybe_dropout(const Var<T>& x, double p) {
  if (mode_ != Mode::Train || p == 0.0) return x;
  return dropout(x, p, *rng_);
}

template <typename T>
Var<T> Graph<T>::project_keys(const Var<T>& states, const std::string& prefix) {
  const Shape& s = states.shape();
  auto flat = reshape(states, {s[0] * s[1], s[2]});
  auto keys = linear(flat, bound(prefix + ".Wk"), Var<T>{});
  return reshape(keys, {s[0], s[1], config_.attention()});
}

template <typename T>
Var<T> Graph<T>::encode_source(std::span<const int> ids, std::size_t batch, std::size_t n) {
  if (n == 0 || batch == 0) throw DomainError("encode_source: empty input");
  if (ids.size() != batch * n) throw ShapeError("encode_source: id matrix does not match batch x length");
  const std::size_t H = config_.hidden_dim;
  Var<T> emb = bound("emb");
  Var<T> h0 = tape_.constant(Tensor<T>({batch, H}));
  Var<T> h1 = h0;
  std::vector<Var<T>> outputs;
  outputs.reserve(n);
  std::vector<int> column(batch);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t b = 0; b < batch; ++b) column[b] = ids[b * n + j];
    auto x = maybe_dropout(embedding(emb, std::span<const int>(column)), config_.dropout_embedding);
    h0 = gru_cell(x, h0, bound("enc.0.Wx"), bound("enc.0.Wh"), bound("enc.0.bx"), bound("enc.0.bh"));
    h1 = gru_cell(h0, h1, bound("enc.1.Wx"), bound("enc.1.Wh"), bound("enc.1.bx"), bound("enc.1.bh"));
    outputs.push_back(maybe_dropout(h1, config_.dropout_encoder));
  }
  return stack<T>(outputs);
}

template <typename T>
Var<T> Graph<T>::encode_image(std::span<const T> features, std::size_t batch) {
  if (!config_.multimodal) throw ContractError("encode_image: text-only model has no image branch");
  const std::size_t m = config_.image_count, D = config_.image_dim;
  if (features.size() != m * batch * D) {
    throw ShapeError("encode_image: expected " + std::to_string(m * batch) + " vectors of dimension " +
                     std::to_string(D) + ", got " + std::to_string(features.size()) + " values");
  }
  auto z = tape_.constant(Tensor<T>({m * batch, D}, std::vector<T>(features.begin(), features.end())));
  auto h = linear(z, bound("img.W"), bound("img.b"));
  return reshape(h, {m, batch, config_.hidden_dim});
}

template <typename T>
EncoderStates<T> Graph<T>::encode(std::span<const int> ids, std::size_t batch, std::size_t n,
                                  std::span<const T> image_features) {
  EncoderStates<T> enc;
  enc.batch = batch;
  enc.source_length = n;
  enc.text = encode_source(ids, batch, n);
  enc.text_keys = project_keys(enc.text, "att.txt");
  if (config_.multimodal) {
    enc.image = encode_image(image_features, batch);
    enc.image_keys = project_keys(enc.image, "att.img");
  }
  return enc;
}

template <typename T>
DecoderState<T> Graph<T>::initial_state(std::size_t batch) {
  DecoderState<T> s;
  s.layer2 = tape_.constant(Tensor<T>({batch, config_.hidden_dim}));
  s.layer1 = s.layer2;
  s.previous.assign(batch, kBos);
  return s;
}

template <typename T>
AttentionOutput<T> Graph<T>::modality_attention(const Var<T>& query_state, const Var<T>& states,
                                                const Var<T>& keys, Modality modality,
                                                std::span<const std::size_t> limits) {
  const std::string prefix = modality == Modality::Text ? "att.txt" : "att.img";
  auto query = linear(query_state, bound(prefix + ".Wq"), bound(prefix + ".bq"));
  return attention(query, keys, states, bound(prefix + ".v"), limits);
}

template <typename T>
AttentionOutput<T> Graph<T>::masked_text_context(const Var<T>& query_state,
                                                 const EncoderStates<T>& enc,
                                                 std::span<const std::size_t> prefix) {
  for (std::size_t g : prefix) {
    if (g < 1 || g > enc.source_length) {
      throw ContractError("masked_text_context: prefix length " + std::to_string(g) +
                          " outside [1, " + std::to_string(enc.source_length) + "]");
    }
  }
  return modality_attention(query_state, enc.text, enc.text_keys, Modality::Text, prefix);
}

template <typename T>
FusionOutput<T> Graph<T>::hierarchical_fusion(const Var<T>& query_state, const Var<T>& text_context,
                                              const std::optional<Var<T>>& image_context) {
  const std::size_t batch = text_context.shape()[0];
  FusionOutput<T> out;
  if (!config_.multimodal) {
    out.context = text_context;
    out.weights.assign(2 * batch, T{0});
    for (std::size_t b = 0; b < batch; ++b) out.weights[2 * b + 1] = T{1};
    return out;
  }
  if (!image_context) throw ContractError("hierarchical_fusion: multimodal model needs an image context");
  auto shared = linear(query_state, bound("fuse.Us"), bound("fuse.b"));
  auto energy = [&](const Var<T>& ctx) {
    return matmul(tanh(add(shared, matmul(ctx, bound("fuse.Uc")))), bound("fuse.v"));
  };
  auto beta = softmax_rows(concat_cols(energy(*image_context), energy(text_context)));
  out.weights = beta.value().data;
  out.context = add(mul_col(matmul(*image_context, bound("fuse.Wimg")), column(beta, 0)),
                    mul_col(matmul(text_context, bound("fuse.Wtxt")), column(beta, 1)));
  return out;
}

template <typename T>
StepOutput<T> Graph<T>::decoder_step(const DecoderState<T>& state, std::span<const int> previous,
                                     const EncoderStates<T>& enc, std::span<const std::size_t> prefix,
                                     bool bypass_fusion) {
  if (previous.size() != enc.batch || prefix.size() != enc.batch) {
    throw ShapeError("decoder_step: batch size disagreement");
  }
  auto y = embedding(bound("emb"), previous);
  auto s1 = gru_cell(y, state.layer2, bound("dec.0.Wx"), bound("dec.0.Wh"), bound("dec.0.bx"),
                     bound("dec.0.bh"));
  auto text = masked_text_context(s1, enc, prefix);

  StepOutput<T> out;
  out.text_weights = std::move(text.weights);
  Var<T> context;
  if (config_.multimodal && !bypass_fusion) {
    const std::vector<std::size_t> all(enc.batch, config_.image_count);
    auto image = modality_attention(s1, enc.image, enc.image_keys, Modality::Image, all);
    out.image_weights = std::move(image.weights);
    auto fused = hierarchical_fusion(s1, text.context, image.context);
    out.fusion_weights = std::move(fused.weights);
    context = fused.context;
  } else {
    context = text.context;
    out.fusion_weights.assign(2 * enc.batch, T{0});
    for (std::size_t b = 0; b < enc.batch; ++b) out.fusion_weights[2 * b + 1] = T{1};
  }
  auto s2 = gru_cell(context, s1, bound("dec.1.Wx"), bound("dec.1.Wh"), bound("dec.1.bx"),
                     bound("dec.1.bh"));
  auto pre = maybe_dropout(tanh(linear(s2, bound("out.W"), bound("out.b"))), config_.dropout_output);
  out.logits = add_bias(matmul_nt(pre, bound("emb")), bound("out.bias"));
  out.state.layer1 = s1;
  out.state.layer2 = s2;
  out.state.previous.assign(previous.begin(), previous.end());
  return out;
}

template class Model<float>;
template class Model<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace msnmt
