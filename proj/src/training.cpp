#include "msnmt/training.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "msnmt/decoding.hpp"
#include "msnmt/errors.hpp"
#include "msnmt/evaluation.hpp"

namespace msnmt {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("learning rate must be positive");
  if (batch_size == 0) throw ContractError("batch size must be positive");
  if (patience == 0) throw ContractError("patience must be at least 1");
  if (max_epochs == 0) throw ContractError("max epochs must be positive");
  if (clip_norm < 0.0) throw ContractError("clip norm must be nonnegative");
}

template <typename T>
Var<T> prefix_loss(Graph<T>& graph, const Batch& batch, const Policy& policy) {
  const std::size_t B = batch.size, n = batch.max_source;
  if (B == 0 || n == 0) throw DomainError("prefix_loss: empty batch");
  std::vector<T> images(batch.images.begin(), batch.images.end());
  auto enc = graph.encode(batch.source, B, n, images);
  auto state = graph.initial_state(B);

  std::vector<int> previous(B, kBos), targets(B);
  std::vector<std::size_t> limits(B);
  std::size_t tokens = 0;
  Var<T> total;
  for (std::size_t t = 1; t <= batch.max_target + 1; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t len = batch.target_lengths[b];
      limits[b] = prefix_length(policy, t, batch.source_lengths[b]);
      targets[b] = t <= len ? batch.target[b * batch.max_target + t - 1] : (t == len + 1 ? kEos : -1);
      if (targets[b] >= 0) ++tokens;
    }
    auto step = graph.decoder_step(state, previous, enc, limits);
    auto loss = cross_entropy_sum(step.logits, std::span<const int>(targets));
    total = total.valid() ? add(total, loss) : loss;
    for (std::size_t b = 0; b < B; ++b) previous[b] = targets[b] > 0 ? targets[b] : kPad;
    state = std::move(step.state);
  }
  return scale(total, static_cast<T>(1.0 / static_cast<double>(tokens)));
}

template Var<float> prefix_loss<float>(Graph<float>&, const Batch&, const Policy&);
template Var<double> prefix_loss<double>(Graph<double>&, const Batch&, const Policy&);

// ---------------------------------------------------------------- Adam

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(learning_rate > 0.0)) throw ContractError("Adam: learning rate must be positive");
}

void Adam::step(std::map<std::string, Tensor<float>>& params) {
  for (const auto& [name, p] : params) {
    for (float g : p.grad) {
      if (!std::isfinite(g)) throw DomainError("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad.empty() ? 0.0 : static_cast<double>(p.grad[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
      p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) - update);
    }
  }
}

double clip_gradients(std::map<std::string, Tensor<float>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (float g : p.grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float f = static_cast<float>(max_norm / norm);
    for (auto& [name, p] : params)
      for (float& g : p.grad) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------- early stopping

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ContractError("patience must be at least 1");
}

bool EarlyStopper::observe(double score) {
  ++epochs_;
  improved_ = epochs_ == 1 || score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epochs_;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return since_best_ >= patience_;
}

std::string TrainReport::to_json_lines(const std::string& stage) const {
  std::ostringstream os;
  for (const auto& e : epochs) {
    os << nlohmann::json{{"stage", stage}, {"epoch", e.epoch}, {"loss", e.loss}, {"dev_bleu", e.dev_bleu}}.dump()
       << '\n';
  }
  os << nlohmann::json{{"stage", stage},
                       {"best_epoch", best_epoch},
                       {"best_dev_bleu", best_bleu},
                       {"stop_reason", stop_reason}}
            .dump()
     << '\n';
  return os.str();
}

// ---------------------------------------------------------------- loops

double dev_bleu(const Model<float>& model, const DevSet& dev, const Policy& policy,
                const FeatureSource& features) {
  if (dev.examples.empty()) throw DomainError("development set is empty");
  if (!dev.vocab) throw ContractError("development set needs a vocabulary");
  const auto hyps = translate_corpus(model, dev.examples, policy, features);
  return bleu(hypothesis_tokens(hyps, *dev.vocab), dev.references).score;
}

TrainReport train_stage(Model<float>& model, std::span<const Example> train, const DevSet& dev,
                        const TrainConfig& config, const FeatureSource& features,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DomainError("training set is empty");
  if (dev.examples.empty()) throw DomainError("development set is empty");

  Adam adam(config.learning_rate);
  EarlyStopper stopper(config.patience);
  Rng dropout_rng(config.seed);
  auto best = model.params();
  TrainReport report;
  report.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = make_batches(train, features, config.batch_size, config.seed * 1000003u + epoch);
    double loss_sum = 0.0;
    bool diverged = false;
    for (const Batch& batch : batches) {
      model.zero_grad();
      Tape<float> tape;
      Graph<float> graph(tape, model, Mode::Train, &dropout_rng);
      auto loss = prefix_loss(graph, batch, config.policy);
      const double value = loss.value().data[0];
      if (!std::isfinite(value)) {
        diverged = true;
        break;
      }
      tape.backward(loss);
      if (config.clip_norm > 0.0) clip_gradients(model.params(), config.clip_norm);
      try {
        adam.step(model.params());
      } catch (const DomainError&) {
        diverged = true;
        break;
      }
      loss_sum += value;
    }
    model.zero_grad();
    if (diverged) {
      report.stop_reason = "diverged";
      break;
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches.size()),
                    dev_bleu(model, dev, config.policy, features)};
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.observe(rec.dev_bleu);
    if (stopper.improved()) best = model.params();
    if (stop) {
      report.stop_reason = "patience";
      break;
    }
  }
  model.params() = std::move(best);
  report.best_epoch = stopper.best_epoch();
  report.best_bleu = stopper.best_score();
  return report;
}

PipelineConfig PipelineConfig::defaults(const Policy& policy, std::uint64_t seed) {
  PipelineConfig c;
  c.pretrain.batch_size = 64;
  c.pretrain.patience = 10;
  c.finetune.batch_size = 32;
  c.finetune.patience = 5;
  for (TrainConfig* t : {&c.pretrain, &c.finetune}) {
    t->policy = policy;
    t->seed = seed;
  }
  return c;
}

PipelineReport train_msnmt_pipeline(Model<float>& model, std::span<const Example> train, const DevSet& dev,
                                    const FeatureStore& store, const PipelineConfig& config,
                                    const EpochCallback& on_epoch) {
  if (!model.config().multimodal) throw ContractError("the two-stage pipeline needs a multimodal model");
  const auto zeros = FeatureSource::zeros(model.config().image_count, model.config().image_dim);
  PipelineReport report;
  report.pretrain = train_stage(model, train, dev, config.pretrain, zeros, on_epoch);
  if (config.skip_finetune) return report;
  const auto real = FeatureSource::real(store);
  report.finetune_initial_bleu = dev_bleu(model, dev, config.finetune.policy, real);
  report.finetune = train_stage(model, train, dev, config.finetune, real, on_epoch);
  return report;
}

}  // namespace msnmt
