#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msnmt/autodiff.hpp"

namespace msnmt {

struct ModelConfig {
  std::size_t vocab_size = 10000;
  std::size_t embedding_dim = 200;
  std::size_t hidden_dim = 400;
  std::size_t attention_dim = 0;  // 0 means "same as hidden_dim"
  std::size_t image_dim = 2048;
  std::size_t image_count = 1;
  double dropout_embedding = 0.4;
  double dropout_encoder = 0.5;
  double dropout_output = 0.5;
  bool multimodal = true;
  std::uint64_t seed = 1;
  std::string train_policy = "full";  // schedule the weights were trained under

  std::size_t attention() const { return attention_dim ? attention_dim : hidden_dim; }
  void validate() const;

  // "key = value" lines, one per field.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  // Applies one textual field; throws ContractError naming unknown keys.
  void set(const std::string& key, const std::string& value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Names and shapes of every learnable tensor, in initialization order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

/// Learnable tensors of the network. The embedding table is shared by the
/// source side, the target side and (transposed) the output projection.
template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(ModelConfig config, std::map<std::string, Tensor<T>> params);

  const ModelConfig& config() const { return config_; }
  std::map<std::string, Tensor<T>>& params() { return params_; }
  const std::map<std::string, Tensor<T>>& params() const { return params_; }
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  template <typename U>
  Model<U> converted() const {
    std::map<std::string, Tensor<U>> out;
    for (const auto& [name, t] : params_) out.emplace(name, tensor_cast<U>(t));
    return Model<U>(config_, std::move(out));
  }

 private:
  ModelConfig config_;
  std::map<std::string, Tensor<T>> params_;
};

enum class Mode { Train, Eval };
enum class Modality { Text, Image };

/// Per-layer decoder state. layer1 is the first GRU's output (the attention
/// query); layer2 is the second GRU's output, carried to the next step.
template <typename T>
struct DecoderState {
  Var<T> layer1;
  Var<T> layer2;
  std::vector<int> previous;  // last emitted token per batch row
};

template <typename T>
struct EncoderStates {
  std::size_t batch = 0;
  std::size_t source_length = 0;  // padded length n
  Var<T> text;        // [n x B x H]
  Var<T> text_keys;   // [n x B x A]
  Var<T> image;       // [m x B x H], invalid for text-only models
  Var<T> image_keys;  // [m x B x A]
};

template <typename T>
struct FusionOutput {
  Var<T> context;        // [B x H]
  std::vector<T> weights;  // [B x 2], columns (image, text)
};

template <typename T>
struct StepOutput {
  DecoderState<T> state;
  Var<T> logits;  // [B x V]
  std::vector<T> text_weights;
  std::vector<T> image_weights;
  std::vector<T> fusion_weights;
};

/// Binds a model to a tape and builds the forward computation. Built from a
/// mutable model, gradients flow into its tensors; built from a const model,
/// the parameters are read-only references and only evaluation is allowed.
template <typename T>
class Graph {
 public:
  Graph(Tape<T>& tape, Model<T>& model, Mode mode, Rng* rng);
  Graph(Tape<T>& tape, const Model<T>& model);

  Tape<T>& tape() { return tape_; }
  const ModelConfig& config() const { return config_; }

  // ids is batch x n row-major; returns H^txt as [n x B x H].
  Var<T> encode_source(std::span<const int> ids, std::size_t batch, std::size_t n);
  // features is (m * batch) x D, row j*batch + b; returns [m x B x H].
  Var<T> encode_image(std::span<const T> features, std::size_t batch);
  EncoderStates<T> encode(std::span<const int> ids, std::size_t batch, std::size_t n,
                          std::span<const T> image_features);

  DecoderState<T> initial_state(std::size_t batch);

  // e = v . tanh(Wq s + bq + Wk h_j), alpha = softmax over j < limit, c = sum alpha h.
  AttentionOutput<T> modality_attention(const Var<T>& query_state, const Var<T>& states,
                                        const Var<T>& keys, Modality modality,
                                        std::span<const std::size_t> limits);
  // Text context over the first g positions only.
  AttentionOutput<T> masked_text_context(const Var<T>& query_state, const EncoderStates<T>& enc,
                                         std::span<const std::size_t> prefix);
  // Second-stage attention over the modality contexts. Without an image
  // context (text-only model) returns the text context with beta_txt = 1.
  FusionOutput<T> hierarchical_fusion(const Var<T>& query_state, const Var<T>& text_context,
                                      const std::optional<Var<T>>& image_context);

  StepOutput<T> decoder_step(const DecoderState<T>& state, std::span<const int> previous,
                             const EncoderStates<T>& enc, std::span<const std::size_t> prefix,
                             bool bypass_fusion = false);

 private:
  Var<T> bound(const std::string& name) const;
  Var<T> maybe_dropout(const Var<T>& x, double p);
  Var<T> project_keys(const Var<T>& states, const std::string& prefix);

  Tape<T>& tape_;
  ModelConfig config_;
  Mode mode_;
  Rng* rng_;
  std::map<std::string, Var<T>> vars_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace msnmt
