#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "msnmt/tensor.hpp"

namespace msnmt {

using Rng = std::mt19937_64;

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape<T>* tape() const { return tape_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in execution order so that backward() can replay them
/// in reverse. One tape per forward pass; not thread-safe.
template <typename T>
class Tape {
 public:
  // Called with the tape and the id of the output whose gradient is final.
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  // Trainable leaf. After backward() the gradient is added into p.grad.
  Var<T> param(Tensor<T>& p);
  // Read-only leaf referencing p without copying; never receives gradient.
  Var<T> frozen(const Tensor<T>& p);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward fn);

  const Tensor<T>& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var<T>& v) const { return v.valid() && nodes_[v.id()].needs_grad; }
  // Gradient buffer for a node; zero-filled on first access.
  std::vector<T>& grad(std::size_t id);
  const std::vector<T>* grad_if_present(std::size_t id) const;

  void backward(const Var<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* target = nullptr;
    bool needs_grad = false;
    Backward backward;
    std::vector<T> grad;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

/// Numerically stable softmax over a plain vector.
template <typename T>
std::vector<T> softmax(std::span<const T> v);

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a [m x k] times b^T where b is [n x k].
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);
// x [B x I] * W [I x O] + b [O]; `bias` may be an invalid Var.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> tanh(const Var<T>& a);
template <typename T>
Var<T> sigmoid(const Var<T>& a);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
// Stacks equally shaped [B x H] values into [n x B x H].
template <typename T>
Var<T> stack(std::span<const Var<T>> items);
template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b);
// Column j of a 2-D value as [rows x 1].
template <typename T>
Var<T> column(const Var<T>& a, std::size_t j);
// Scales row r of a [B x H] by w[r] where w is [B x 1].
template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& w);
template <typename T>
Var<T> softmax_rows(const Var<T>& a);
// Gathers rows of table [V x E]; throws IndexError for ids outside [0, V).
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids);
// Inverted dropout: kept units are scaled by 1/(1-p). Identity when p == 0.
template <typename T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng);

/// Fused GRU cell, gates ordered (reset, update, candidate):
///   r = s(x Wr + h Ur), z = s(x Wz + h Uz), n = tanh(x Wn + r * (h Un)),
///   h' = (1 - z) * n + z * h
/// with biases on both the input and recurrent halves.
template <typename T>
Var<T> gru_cell(const Var<T>& x, const Var<T>& h, const Var<T>& w_input, const Var<T>& w_hidden,
                const Var<T>& b_input, const Var<T>& b_hidden);

template <typename T>
struct AttentionOutput {
  Var<T> context;          // [B x H]
  std::vector<T> weights;  // [n x B], zero beyond each row's limit
};

/// Additive attention. For batch row b only positions j < limits[b] are
/// scored:  e_j = v . tanh(query_b + keys_{j,b}),  alpha = softmax(e),
///          context_b = sum_j alpha_j values_{j,b}.
/// Positions at or past the limit are never read.
template <typename T>
AttentionOutput<T> attention(const Var<T>& query, const Var<T>& keys, const Var<T>& values,
                             const Var<T>& v, std::span<const std::size_t> limits);

/// Sum over rows of -log softmax(logits_r)[targets_r]; rows with target < 0 are skipped.
template <typename T>
Var<T> cross_entropy_sum(const Var<T>& logits, std::span<const int> targets);
/// Mean over rows of -log softmax(logits_r)[targets_r].
template <typename T>
Var<T> cross_entropy_loss(const Var<T>& logits, std::span<const int> targets);

}  // namespace msnmt
