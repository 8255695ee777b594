#include "msnmt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "msnmt/kernels.hpp"

namespace msnmt {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](T x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------- Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(Tensor<T>& p) {
  Node node;
  node.ref = &p;
  node.target = &p;
  node.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::frozen(const Tensor<T>& p) {
  Node node;
  node.ref = &p;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, Backward fn) {
  Node node;
  node.owned = std::move(value);
  if (grad_enabled_) {
    node.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](const Var<T>& v) { return needs_grad(v); });
  }
  if (node.needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(fn));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

template <typename T>
std::vector<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
  return n.grad;
}

template <typename T>
const std::vector<T>* Tape<T>::grad_if_present(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (!loss.valid() || loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  if (value(loss.id()).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(value(loss.id()).shape));
  }
  grad(loss.id())[0] = T{1};
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
  for (Node& n : nodes_) {
    if (!n.target || n.grad.empty()) continue;
    if (n.target->grad.empty()) n.target->grad.assign(n.target->size(), T{0});
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.target->grad[i] += n.grad[i];
  }
}

// ---------------------------------------------------------------- helpers

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace

template <typename T>
std::vector<T> softmax(std::span<const T> v) {
  if (v.empty()) throw DomainError("softmax: empty vector");
  const T mx = *std::max_element(v.begin(), v.end());
  std::vector<T> out(v.size());
  T total{0};
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (T& x : out) x /= total;
  return out;
}

// ---------------------------------------------------------------- linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  if (bv.shape[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(av.shape) + " x " +
                     shape_string(bv.shape));
  }
  Tensor<T> out({m, n});
  kernels::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& dc = tape.grad(o);
    if (tape.needs_grad(ia)) {
      kernels::gemm_nt(dc.data(), tape.value(ib).data.data(), tape.grad(ia).data(), m, n, k, true);
    }
    if (tape.needs_grad(ib)) {
      kernels::gemm_tn(tape.value(ia).data.data(), dc.data(), tape.grad(ib).data(), k, m, n, true);
    }
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 2, "matmul_nt");
  require_rank(bv, 2, "matmul_nt");
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[0];
  if (bv.shape[1] != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree " + shape_string(av.shape) + " x " +
                     shape_string(bv.shape) + "^T");
  }
  Tensor<T> out({m, n});
  kernels::gemm_nt(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& dc = tape.grad(o);
    if (tape.needs_grad(ia)) {
      kernels::gemm_nn(dc.data(), tape.value(ib).data.data(), tape.grad(ia).data(), m, n, k, true);
    }
    if (tape.needs_grad(ib)) {
      kernels::gemm_tn(dc.data(), tape.value(ia).data.data(), tape.grad(ib).data(), n, m, k, true);
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  require_rank(xv, 2, "linear");
  require_rank(wv, 2, "linear");
  const std::size_t m = xv.shape[0], k = xv.shape[1], n = wv.shape[1];
  if (wv.shape[0] != k) {
    throw ShapeError("linear: input " + shape_string(xv.shape) + " does not fit weight " +
                     shape_string(wv.shape));
  }
  Tensor<T> out({m, n});
  if (bias.valid()) {
    const Tensor<T>& bv = bias.value();
    if (bv.size() != n) {
      throw ShapeError("linear: bias " + shape_string(bv.shape) + " does not fit weight " +
                       shape_string(wv.shape));
    }
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.data.begin(), bv.data.end(), out.row(i).begin());
  }
  kernels::gemm_nn(xv.data.data(), wv.data.data(), out.data.data(), m, k, n, bias.valid());
  const std::size_t ix = x.id(), iw = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t ib = has_bias ? bias.id() : 0;
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.tape()->record(
      std::move(out), std::span<const Var<T>>(inputs),
      [ix, iw, ib, has_bias, m, k, n](Tape<T>& tape, std::size_t o) {
        const std::vector<T>& dy = tape.grad(o);
        if (tape.needs_grad(ix)) {
          kernels::gemm_nt(dy.data(), tape.value(iw).data.data(), tape.grad(ix).data(), m, n, k,
                           true);
        }
        if (tape.needs_grad(iw)) {
          kernels::gemm_tn(tape.value(ix).data.data(), dy.data(), tape.grad(iw).data(), k, m, n,
                           true);
        }
        if (has_bias && tape.needs_grad(ib)) {
          std::vector<T>& db = tape.grad(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
        }
      });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    for (std::size_t in : {ia, ib}) {
      if (!tape.needs_grad(in)) continue;
      std::vector<T>& g = tape.grad(in);
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = bias.value();
  require_rank(av, 2, "add_bias");
  const std::size_t m = av.shape[0], n = av.shape[1];
  if (bv.size() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape) + " does not fit " +
                     shape_string(av.shape));
  }
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bv.data[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape()->record(std::move(out), {a, bias}, [ia, ib, m, n](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    if (tape.needs_grad(ia)) {
      std::vector<T>& g = tape.grad(ia);
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
    }
    if (tape.needs_grad(ib)) {
      std::vector<T>& g = tape.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += d[i * n + j];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    if (tape.needs_grad(ia)) {
      std::vector<T>& g = tape.grad(ia);
      const auto& other = tape.value(ib).data;
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * other[i];
    }
    if (tape.needs_grad(ib)) {
      std::vector<T>& g = tape.grad(ib);
      const auto& other = tape.value(ia).data;
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * other[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (T& x : out.data) x *= factor;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, factor](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    std::vector<T>& g = tape.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * factor;
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (T& x : out.data) x = std::tanh(x);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    const std::vector<T>& y = tape.value(o).data;
    std::vector<T>& g = tape.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * (T{1} - y[i] * y[i]);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (T& x : out.data) x = sigmoid_scalar(x);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    const std::vector<T>& y = tape.value(o).data;
    std::vector<T>& g = tape.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  T total{0};
  for (T x : av.data) total += x;
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor<T>(Shape{1}, std::vector<T>{total}), {a},
                          [ia](Tape<T>& tape, std::size_t o) {
                            const T d = tape.grad(o)[0];
                            for (T& g : tape.grad(ia)) g += d;
                          });
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  const Tensor<T>& av = a.value();
  if (shape_size(shape) != av.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(av.shape) + " as " +
                     shape_string(shape));
  }
  Tensor<T> out(std::move(shape), av.data);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    std::vector<T>& g = tape.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
  });
}

template <typename T>
Var<T> stack(std::span<const Var<T>> items) {
  if (items.empty()) throw DomainError("stack: no items");
  const Shape& inner = items.front().shape();
  for (const auto& it : items) require_same_shape(items.front().value(), it.value(), "stack");
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor<T> out(shape);
  const std::size_t block = items.front().value().size();
  std::vector<std::size_t> ids;
  ids.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& d = items[i].value().data;
    std::copy(d.begin(), d.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * block));
    ids.push_back(items[i].id());
  }
  return items.front().tape()->record(
      std::move(out), items, [ids = std::move(ids), block](Tape<T>& tape, std::size_t o) {
        const std::vector<T>& d = tape.grad(o);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (!tape.needs_grad(ids[i])) continue;
          std::vector<T>& g = tape.grad(ids[i]);
          for (std::size_t j = 0; j < block; ++j) g[j] += d[i * block + j];
        }
      });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank(av, 2, "concat_cols");
  require_rank(bv, 2, "concat_cols");
  if (av.shape[0] != bv.shape[0]) {
    throw ShapeError("concat_cols: row mismatch " + shape_string(av.shape) + " vs " +
                     shape_string(bv.shape));
  }
  const std::size_t m = av.shape[0], na = av.shape[1], nb = bv.shape[1];
  Tensor<T> out({m, na + nb});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data.begin() + static_cast<std::ptrdiff_t>(i * na), na,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (na + nb)));
    std::copy_n(bv.data.begin() + static_cast<std::ptrdiff_t>(i * nb), nb,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * (na + nb) + na));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, m, na, nb](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    if (tape.needs_grad(ia)) {
      std::vector<T>& g = tape.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) g[i * na + j] += d[i * (na + nb) + j];
    }
    if (tape.needs_grad(ib)) {
      std::vector<T>& g = tape.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += d[i * (na + nb) + na + j];
    }
  });
}

template <typename T>
Var<T> column(const Var<T>& a, std::size_t j) {
  const Tensor<T>& av = a.value();
  require_rank(av, 2, "column");
  const std::size_t m = av.shape[0], n = av.shape[1];
  if (j >= n) throw IndexError("column: index " + std::to_string(j) + " outside " + shape_string(av.shape));
  Tensor<T> out({m, 1});
  for (std::size_t i = 0; i < m; ++i) out.data[i] = av.data[i * n + j];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, m, n, j](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    std::vector<T>& g = tape.grad(ia);
    for (std::size_t i = 0; i < m; ++i) g[i * n + j] += d[i];
  });
}

template <typename T>
Var<T> mul_col(const Var<T>& a, const Var<T>& w) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& wv = w.value();
  require_rank(av, 2, "mul_col");
  const std::size_t m = av.shape[0], n = av.shape[1];
  if (wv.size() != m) {
    throw ShapeError("mul_col: weights " + shape_string(wv.shape) + " do not fit " +
                     shape_string(av.shape));
  }
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] *= wv.data[i];
  const std::size_t ia = a.id(), iw = w.id();
  return a.tape()->record(std::move(out), {a, w}, [ia, iw, m, n](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    if (tape.needs_grad(ia)) {
      std::vector<T>& g = tape.grad(ia);
      const auto& wd = tape.value(iw).data;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += d[i * n + j] * wd[i];
    }
    if (tape.needs_grad(iw)) {
      std::vector<T>& g = tape.grad(iw);
      const auto& ad = tape.value(ia).data;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += d[i * n + j] * ad[i * n + j];
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  require_rank(av, 2, "softmax_rows");
  const std::size_t m = av.shape[0], n = av.shape[1];
  Tensor<T> out(av.shape);
  for (std::size_t i = 0; i < m; ++i) {
    auto p = softmax<T>(av.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, m, n](Tape<T>& tape, std::size_t o) {
    const std::vector<T>& d = tape.grad(o);
    const std::vector<T>& y = tape.value(o).data;
    std::vector<T>& g = tape.grad(ia);
    for (std::size_t i = 0; i < m; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += d[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[i * n + j] * (d[i * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  const Tensor<T>& tv = table.value();
  require_rank(tv, 2, "embedding");
  const std::size_t vocab = tv.shape[0], dim = tv.shape[1];
  Tensor<T> out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id();
  return table.tape()->record(
      std::move(out), {table},
      [it, dim, idv = std::vector<int>(ids.begin(), ids.end())](Tape<T>& tape, std::size_t o) {
        const std::vector<T>& d = tape.grad(o);
        std::vector<T>& g = tape.grad(it);
        for (std::size_t i = 0; i < idv.size(); ++i) {
          const std::size_t r = static_cast<std::size_t>(idv[i]);
          for (std::size_t j = 0; j < dim; ++j) g[r * dim + j] += d[i * dim + j];
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw DomainError("dropout: rate must lie in [0, 1)");
  if (p == 0.0) return a;
  const Tensor<T>& av = a.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<T> mask(av.size());
  for (T& m : mask) m = keep(rng) ? keep_scale : T{0};
  Tensor<T> out = Tensor<T>(av.shape, av.data);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, mask = std::move(mask)](Tape<T>& tape, std::size_t o) {
                            const std::vector<T>& d = tape.grad(o);
                            std::vector<T>& g = tape.grad(ia);
                            for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * mask[i];
                          });
}

// ---------------------------------------------------------------- fused cells

template <typename T>
Var<T> gru_cell(const Var<T>& x, const Var<T>& h, const Var<T>& w_input, const Var<T>& w_hidden,
                const Var<T>& b_input, const Var<T>& b_hidden) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& hv = h.value();
  const Tensor<T>& wi = w_input.value();
  const Tensor<T>& wh = w_hidden.value();
  require_rank(xv, 2, "gru_cell");
  require_rank(hv, 2, "gru_cell");
  const std::size_t batch = xv.shape[0], in = xv.shape[1], hid = hv.shape[1];
  const std::size_t g3 = 3 * hid;
  if (hv.shape[0] != batch || wi.shape != Shape{in, g3} || wh.shape != Shape{hid, g3} ||
      b_input.value().size() != g3 || b_hidden.value().size() != g3) {
    throw ShapeError("gru_cell: inconsistent shapes x" + shape_string(xv.shape) + " h" +
                     shape_string(hv.shape) + " Wx" + shape_string(wi.shape) + " Wh" +
                     shape_string(wh.shape));
  }
  struct Cache {
    std::vector<T> r, z, n, gh_n;
  };
  auto cache = std::make_shared<Cache>();
  std::vector<T> gx(batch * g3), gh(batch * g3);
  const auto& bi = b_input.value().data;
  const auto& bh = b_hidden.value().data;
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(bi.begin(), bi.end(), gx.begin() + static_cast<std::ptrdiff_t>(b * g3));
    std::copy(bh.begin(), bh.end(), gh.begin() + static_cast<std::ptrdiff_t>(b * g3));
  }
  kernels::gemm_nn(xv.data.data(), wi.data.data(), gx.data(), batch, in, g3, true);
  kernels::gemm_nn(hv.data.data(), wh.data.data(), gh.data(), batch, hid, g3, true);

  cache->r.resize(batch * hid);
  cache->z.resize(batch * hid);
  cache->n.resize(batch * hid);
  cache->gh_n.resize(batch * hid);
  Tensor<T> out({batch, hid});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < hid; ++j) {
      const std::size_t o = b * g3;
      const std::size_t c = b * hid + j;
      const T r = sigmoid_scalar(gx[o + j] + gh[o + j]);
      const T z = sigmoid_scalar(gx[o + hid + j] + gh[o + hid + j]);
      const T ghn = gh[o + 2 * hid + j];
      const T n = std::tanh(gx[o + 2 * hid + j] + r * ghn);
      cache->r[c] = r;
      cache->z[c] = z;
      cache->n[c] = n;
      cache->gh_n[c] = ghn;
      out.data[c] = (T{1} - z) * n + z * hv.data[c];
    }
  }

  const std::size_t ix = x.id(), ih = h.id(), iwi = w_input.id(), iwh = w_hidden.id(),
                    ibi = b_input.id(), ibh = b_hidden.id();
  return x.tape()->record(
      std::move(out), {x, h, w_input, w_hidden, b_input, b_hidden},
      [=](Tape<T>& tape, std::size_t o) {
        const std::vector<T>& dout = tape.grad(o);
        const std::vector<T>& hprev = tape.value(ih).data;
        std::vector<T> dgx(batch * g3), dgh(batch * g3);
        std::vector<T> dh_direct(batch * hid);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < hid; ++j) {
            const std::size_t c = b * hid + j;
            const std::size_t base = b * g3;
            const T r = cache->r[c], z = cache->z[c], n = cache->n[c];
            const T d = dout[c];
            const T dz = d * (hprev[c] - n);
            const T dn = d * (T{1} - z);
            dh_direct[c] = d * z;
            const T dan = dn * (T{1} - n * n);
            const T dr = dan * cache->gh_n[c];
            const T dar = dr * r * (T{1} - r);
            const T daz = dz * z * (T{1} - z);
            dgx[base + j] = dar;
            dgh[base + j] = dar;
            dgx[base + hid + j] = daz;
            dgh[base + hid + j] = daz;
            dgx[base + 2 * hid + j] = dan;
            dgh[base + 2 * hid + j] = dan * r;
          }
        }
        if (tape.needs_grad(ix)) {
          kernels::gemm_nt(dgx.data(), tape.value(iwi).data.data(), tape.grad(ix).data(), batch, g3,
                           in, true);
        }
        if (tape.needs_grad(ih)) {
          std::vector<T>& gh_in = tape.grad(ih);
          for (std::size_t i = 0; i < dh_direct.size(); ++i) gh_in[i] += dh_direct[i];
          kernels::gemm_nt(dgh.data(), tape.value(iwh).data.data(), gh_in.data(), batch, g3, hid,
                           true);
        }
        if (tape.needs_grad(iwi)) {
          kernels::gemm_tn(tape.value(ix).data.data(), dgx.data(), tape.grad(iwi).data(), in, batch,
                           g3, true);
        }
        if (tape.needs_grad(iwh)) {
          kernels::gemm_tn(hprev.data(), dgh.data(), tape.grad(iwh).data(), hid, batch, g3, true);
        }
        for (auto [id, src] : {std::pair{ibi, &dgx}, std::pair{ibh, &dgh}}) {
          if (!tape.needs_grad(id)) continue;
          std::vector<T>& gb = tape.grad(id);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < g3; ++j) gb[j] += (*src)[b * g3 + j];
        }
      });
}

template <typename T>
AttentionOutput<T> attention(const Var<T>& query, const Var<T>& keys, const Var<T>& values,
                             const Var<T>& v, std::span<const std::size_t> limits) {
  const Tensor<T>& qv = query.value();
  const Tensor<T>& kv = keys.value();
  const Tensor<T>& vv = values.value();
  const Tensor<T>& sv = v.value();
  require_rank(qv, 2, "attention");
  require_rank(kv, 3, "attention");
  require_rank(vv, 3, "attention");
  const std::size_t batch = qv.shape[0], adim = qv.shape[1];
  const std::size_t len = kv.shape[0], hdim = vv.shape[2];
  if (len == 0) throw DomainError("attention: empty state sequence");
  if (kv.shape[1] != batch || kv.shape[2] != adim || vv.shape[0] != len || vv.shape[1] != batch ||
      sv.size() != adim) {
    throw ShapeError("attention: query " + shape_string(qv.shape) + ", keys " +
                     shape_string(kv.shape) + ", values " + shape_string(vv.shape) +
                     ", scorer " + shape_string(sv.shape));
  }
  if (limits.size() != batch) throw ShapeError("attention: one limit per batch row required");
  for (std::size_t lim : limits) {
    if (lim < 1 || lim > len) {
      throw ContractError("attention: limit " + std::to_string(lim) + " outside [1, " +
                          std::to_string(len) + "]");
    }
  }

  auto u = std::make_shared<std::vector<T>>(len * batch * adim, T{0});
  std::vector<T> alpha(len * batch, T{0});
  Tensor<T> ctx({batch, hdim});
  std::vector<T> energies;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t lim = limits[b];
    energies.assign(lim, T{0});
    for (std::size_t j = 0; j < lim; ++j) {
      T* uj = u->data() + (j * batch + b) * adim;
      const T* kj = kv.data.data() + (j * batch + b) * adim;
      const T* q = qv.data.data() + b * adim;
      T e{0};
      for (std::size_t a = 0; a < adim; ++a) {
        uj[a] = std::tanh(q[a] + kj[a]);
        e += sv.data[a] * uj[a];
      }
      energies[j] = e;
    }
    const auto p = softmax<T>(energies);
    T* c = ctx.data.data() + b * hdim;
    for (std::size_t j = 0; j < lim; ++j) {
      alpha[j * batch + b] = p[j];
      const T* hj = vv.data.data() + (j * batch + b) * hdim;
      for (std::size_t d = 0; d < hdim; ++d) c[d] += p[j] * hj[d];
    }
  }

  const std::size_t iq = query.id(), ik = keys.id(), ival = values.id(), iv = v.id();
  std::vector<std::size_t> lims(limits.begin(), limits.end());
  AttentionOutput<T> result;
  result.weights = alpha;
  result.context = query.tape()->record(
      std::move(ctx), {query, keys, values, v},
      [=, alpha = std::move(alpha), lims = std::move(lims)](Tape<T>& tape, std::size_t o) {
        const std::vector<T>& dc = tape.grad(o);
        const std::vector<T>& vals = tape.value(ival).data;
        const std::vector<T>& scorer = tape.value(iv).data;
        std::vector<T>* gq = tape.needs_grad(iq) ? &tape.grad(iq) : nullptr;
        std::vector<T>* gk = tape.needs_grad(ik) ? &tape.grad(ik) : nullptr;
        std::vector<T>* gval = tape.needs_grad(ival) ? &tape.grad(ival) : nullptr;
        std::vector<T>* gv = tape.needs_grad(iv) ? &tape.grad(iv) : nullptr;
        std::vector<T> dalpha;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t lim = lims[b];
          const T* dcb = dc.data() + b * hdim;
          dalpha.assign(lim, T{0});
          T weighted{0};
          for (std::size_t j = 0; j < lim; ++j) {
            const std::size_t row = j * batch + b;
            const T* hj = vals.data() + row * hdim;
            T da{0};
            for (std::size_t d = 0; d < hdim; ++d) da += dcb[d] * hj[d];
            dalpha[j] = da;
            weighted += alpha[row] * da;
            if (gval) {
              T* g = gval->data() + row * hdim;
              for (std::size_t d = 0; d < hdim; ++d) g[d] += alpha[row] * dcb[d];
            }
          }
          for (std::size_t j = 0; j < lim; ++j) {
            const std::size_t row = j * batch + b;
            const T de = alpha[row] * (dalpha[j] - weighted);
            const T* uj = u->data() + row * adim;
            for (std::size_t a = 0; a < adim; ++a) {
              if (gv) (*gv)[a] += de * uj[a];
              const T dpre = de * scorer[a] * (T{1} - uj[a] * uj[a]);
              if (gq) (*gq)[b * adim + a] += dpre;
              if (gk) (*gk)[row * adim + a] += dpre;
            }
          }
        }
      });
  return result;
}

// ---------------------------------------------------------------- losses

template <typename T>
Var<T> cross_entropy_sum(const Var<T>& logits, std::span<const int> targets) {
  const Tensor<T>& lv = logits.value();
  require_rank(lv, 2, "cross_entropy");
  const std::size_t rows = lv.shape[0], vocab = lv.shape[1];
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  }
  for (int t : targets) {
    if (t >= 0 && static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  auto probs = std::make_shared<std::vector<T>>(rows * vocab, T{0});
  T total{0};
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] < 0) continue;
    auto row = lv.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T z{0};
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const T log_z = std::log(z);
    for (std::size_t j = 0; j < vocab; ++j) (*probs)[i * vocab + j] = std::exp(row[j] - mx - log_z);
    total -= row[static_cast<std::size_t>(targets[i])] - mx - log_z;
  }
  const std::size_t il = logits.id();
  return logits.tape()->record(
      Tensor<T>(Shape{1}, std::vector<T>{total}), {logits},
      [il, rows, vocab, probs, tv = std::vector<int>(targets.begin(), targets.end())](
          Tape<T>& tape, std::size_t o) {
        const T d = tape.grad(o)[0];
        std::vector<T>& g = tape.grad(il);
        for (std::size_t i = 0; i < rows; ++i) {
          if (tv[i] < 0) continue;
          for (std::size_t j = 0; j < vocab; ++j) g[i * vocab + j] += d * (*probs)[i * vocab + j];
          g[i * vocab + static_cast<std::size_t>(tv[i])] -= d;
        }
      });
}

template <typename T>
Var<T> cross_entropy_loss(const Var<T>& logits, std::span<const int> targets) {
  if (targets.empty()) throw DomainError("cross_entropy_loss: empty target sequence");
  for (int t : targets) {
    if (t < 0) throw IndexError("cross_entropy_loss: negative target id " + std::to_string(t));
  }
  return scale(cross_entropy_sum(logits, targets), T{1} / static_cast<T>(targets.size()));
}

// ---------------------------------------------------------------- instantiation

#define MSNMT_INSTANTIATE_AUTODIFF(T)                                                          \
  template class Tape<T>;                                                                      \
  template bool all_finite<T>(const Tensor<T>&);                                               \
  template std::vector<T> softmax<T>(std::span<const T>);                                      \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> matmul_nt<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale<T>(const Var<T>&, T);                                                  \
  template Var<T> tanh<T>(const Var<T>&);                                                      \
  template Var<T> sigmoid<T>(const Var<T>&);                                                   \
  template Var<T> sum<T>(const Var<T>&);                                                       \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                            \
  template Var<T> stack<T>(std::span<const Var<T>>);                                           \
  template Var<T> concat_cols<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> column<T>(const Var<T>&, std::size_t);                                       \
  template Var<T> mul_col<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> softmax_rows<T>(const Var<T>&);                                              \
  template Var<T> embedding<T>(const Var<T>&, std::span<const int>);                           \
  template Var<T> dropout<T>(const Var<T>&, double, Rng&);                                     \
  template Var<T> gru_cell<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,      \
                              const Var<T>&, const Var<T>&);                                   \
  template AttentionOutput<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&,        \
                                           const Var<T>&, std::span<const std::size_t>);       \
  template Var<T> cross_entropy_sum<T>(const Var<T>&, std::span<const int>);                   \
  template Var<T> cross_entropy_loss<T>(const Var<T>&, std::span<const int>);

MSNMT_INSTANTIATE_AUTODIFF(float)
MSNMT_INSTANTIATE_AUTODIFF(double)

}  // namespace msnmt
