#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msnmt/data.hpp"
#include "msnmt/model.hpp"
#include "msnmt/policy.hpp"

namespace msnmt {

struct TrainConfig {
  double learning_rate = 0.0004;
  std::size_t batch_size = 64;
  std::size_t patience = 15;
  std::size_t max_epochs = 100;
  Policy policy = Policy::full();
  std::uint64_t seed = 1;
  double clip_norm = 0.0;  // 0 disables clipping

  void validate() const;
};

/// Mean token negative log-likelihood under teacher forcing. At step t the
/// text attention of row b sees only the first g(t, n_b) source states.
template <typename T>
Var<T> prefix_loss(Graph<T>& graph, const Batch& batch, const Policy& policy);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  // Updates every tensor from its grad buffer (missing grad counts as zero).
  // Throws DomainError naming the first parameter with a non-finite gradient.
  void step(std::map<std::string, Tensor<float>>& params);
  std::size_t steps() const { return steps_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// Scales all gradients so that their joint L2 norm is at most max_norm; returns the norm before scaling.
double clip_gradients(std::map<std::string, Tensor<float>>& params, double max_norm);

/// Stops after `patience` epochs without strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  // Records the score of the next epoch; returns true when training should stop.
  bool observe(double score);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }
  std::size_t epochs() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double dev_bleu = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_bleu = 0.0;
  std::string stop_reason;  // "patience", "max_epochs" or "diverged"

  // One JSON object per epoch followed by a summary record.
  std::string to_json_lines(const std::string& stage) const;
};

struct DevSet {
  std::span<const Example> examples;
  std::span<const Sentence> references;
  const Vocab* vocab = nullptr;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place. On return the model holds the parameters of the
/// best dev epoch.
TrainReport train_stage(Model<float>& model, std::span<const Example> train, const DevSet& dev,
                        const TrainConfig& config, const FeatureSource& features,
                        const EpochCallback& on_epoch = {});

struct PipelineConfig {
  TrainConfig pretrain;  // zero features
  TrainConfig finetune;  // real features, warm-started from the pretrain best
  bool skip_finetune = false;

  static PipelineConfig defaults(const Policy& policy, std::uint64_t seed);
};

struct PipelineReport {
  TrainReport pretrain;
  std::optional<TrainReport> finetune;
  double finetune_initial_bleu = 0.0;
};

PipelineReport train_msnmt_pipeline(Model<float>& model, std::span<const Example> train, const DevSet& dev,
                                    const FeatureStore& store, const PipelineConfig& config,
                                    const EpochCallback& on_epoch = {});

double dev_bleu(const Model<float>& model, const DevSet& dev, const Policy& policy,
                const FeatureSource& features);

extern template Var<float> prefix_loss<float>(Graph<float>&, const Batch&, const Policy&);
extern template Var<double> prefix_loss<double>(Graph<double>&, const Batch&, const Policy&);

}  // namespace msnmt
