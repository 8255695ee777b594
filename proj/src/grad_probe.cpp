#include "msnmt/grad_probe.hpp"

#include <cmath>
#include <random>

#include "msnmt/data.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/training.hpp"

namespace msnmt {

namespace {

// tanh forward, but backward uses 1 - y instead of 1 - y^2.
Var<double> broken_tanh(const Var<double>& x) {
  Tape<double>& tape = *x.tape();
  Tensor<double> y = x.value();
  for (double& v : y.data) v = std::tanh(v);
  const std::size_t in = x.id();
  return tape.record(std::move(y), {x}, [in](Tape<double>& t, std::size_t out) {
    if (!t.needs_grad(in)) return;
    const auto& yv = t.value(out).data;
    const std::vector<double> go = t.grad(out);
    auto& gi = t.grad(in);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * (1.0 - yv[i]);
  });
}

}  // namespace

GradProbeResult run_grad_probe(const GradProbeSpec& spec) {
  if (spec.vocab_size <= kReservedTokens + 1) throw ContractError("grad probe: vocabulary too small");
  if (spec.sentences == 0 || spec.k == 0) throw ContractError("grad probe: need sentences and k >= 1");
  ModelConfig c;
  c.vocab_size = spec.vocab_size;
  c.embedding_dim = spec.embedding_dim;
  c.hidden_dim = spec.hidden_dim;
  c.image_dim = spec.image_dim;
  c.multimodal = true;
  c.seed = spec.seed;
  c.train_policy = Policy::wait_k(spec.k).to_string();
  Model<double> model(c);

  // Fixed-scale weights instead of the initializer's, so the probe does not
  // move when initialization changes. Larger scales saturate the attention
  // tanh and leave coordinates with gradients near 1e-8.
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> weight(-spec.weight_scale, spec.weight_scale);
  for (auto& [name, t] : model.params())
    for (double& x : t.data) x = weight(rng);

  std::uniform_int_distribution<int> token(static_cast<int>(kReservedTokens), static_cast<int>(spec.vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> length(2, 5);
  std::normal_distribution<float> pixel(0.0f, 1.0f);
  FeatureStore store(1, spec.image_dim);
  std::vector<Example> examples;
  for (std::size_t i = 0; i < spec.sentences; ++i) {
    Example e;
    e.image_id = "probe" + std::to_string(i);
    for (std::size_t j = length(rng); j > 0; --j) e.source.push_back(token(rng));
    for (std::size_t j = length(rng); j > 0; --j) e.target.push_back(token(rng));
    ImageFeature f{e.image_id, 1, spec.image_dim, std::vector<float>(spec.image_dim)};
    for (float& v : f.values) v = pixel(rng);
    store.add(std::move(f));
    examples.push_back(std::move(e));
  }
  std::vector<std::size_t> indices(examples.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const Batch batch = make_batch(examples, indices, FeatureSource::real(store));
  const Policy policy = Policy::wait_k(spec.k);

  LossBuilder<double> build = [&](Tape<double>& tape) {
    Graph<double> g(tape, model, Mode::Eval, nullptr);
    Var<double> loss = prefix_loss(g, batch, policy);
    return spec.corrupt_backward ? broken_tanh(loss) : loss;
  };
  std::vector<Tensor<double>*> params;
  std::vector<std::string> names;
  for (auto& [name, t] : model.params()) {
    params.push_back(&t);
    names.push_back(name);
  }
  GradProbeResult out;
  out.check = grad_check<double>(build, params, spec.epsilon);
  out.worst_param = names.at(out.check.worst_param);
  out.passed = out.check.max_relative_error <= spec.tolerance;
  return out;
}

}  // namespace msnmt
