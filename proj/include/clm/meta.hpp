#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clm/corpus.hpp"
#include "clm/model.hpp"
#include "clm/optim.hpp"
#include "clm/trainer.hpp"
#include "json.hpp"

namespace clm {

enum class AdaptSet { All, HeadsOnly };
enum class OuterOptimizer { Sgd, AdamW };

struct MetaConfig {
  double inner_lr = 0.01;
  double outer_lr = 0.001;
  std::size_t inner_steps = 5;
  std::size_t meta_batch = 4;
  bool first_order = false;
  AdaptSet adapt = AdaptSet::HeadsOnly;
  OuterOptimizer outer = OuterOptimizer::Sgd;
  std::size_t ways = 5;             // classes per episode
  std::size_t shots = 2;            // support examples per class
  std::size_t queries = 2;          // query examples per class
  std::size_t steps_per_epoch = 10; // outer steps per meta-epoch
  std::vector<Language> languages{Language::L2};
  bool dropout = true;              // train-mode encoder inside episodes

  void validate() const;
};

void to_json(nlohmann::json& j, const MetaConfig& c);
void from_json(const nlohmann::json& j, MetaConfig& c);

struct Episode {
  std::vector<EncodedExample> support;
  std::vector<EncodedExample> query;
  Language language = Language::L2;
  std::vector<std::size_t> classes;
};

// Each episode picks one of `languages` and `ways` classes, then disjoint
// support and query draws of the triplets' views in that language.
std::vector<Episode> sample_episodes(std::span<const EncodedTriplet> data, std::span<const Language> languages,
                                     std::size_t num_tasks, std::size_t ways, std::size_t shots,
                                     std::size_t queries, std::uint64_t seed);

// `steps` plain gradient-descent steps on `loss`. Only entries with
// adapt[i] set move. With create_graph the result stays differentiable
// through the updates (second order); otherwise the step directions are
// constants (first order).
std::vector<Tensor> sgd_adapt(std::vector<Tensor> theta,
                              const std::function<Tensor(std::span<const Tensor>)>& loss, double lr,
                              std::size_t steps, bool create_graph, const std::vector<bool>& adapt = {});

// Mean cross-entropy of `examples` under the given parameter tensors.
Tensor episode_loss(const ParamTensors& params, std::span<const EncodedExample> examples, const ModelConfig& model,
                    Mode mode, std::uint64_t dropout_seed);

// `support_losses`, when given, receives the support loss seen at each inner step.
ParamTensors adapt_on_graph(const ParamTensors& theta, std::span<const EncodedExample> support,
                            const ModelConfig& model, const MetaConfig& meta, std::uint64_t seed, bool create_graph,
                            std::vector<double>* support_losses = nullptr);

// Adapted copy of `params`; the input is untouched.
ModelParams inner_adapt(const ModelParams& params, std::span<const EncodedExample> support, const ModelConfig& model,
                        const MetaConfig& meta, std::uint64_t seed);

// Query loss after adaptation, as a plain function of the parameters.
double meta_objective(const ModelParams& params, const Episode& episode, const ModelConfig& model,
                      const MetaConfig& meta, std::uint64_t seed);

struct MetaGradient {
  std::vector<Array> grads;  // aligned with the ModelParams layout, mean over episodes
  std::vector<double> support_losses;  // before the first inner step; NaN with 0 steps
  std::vector<double> query_losses;
  std::vector<std::string> warnings;
  std::size_t used = 0;
};

// Episode e uses seed sub_seed(seed, "episode", e).
MetaGradient meta_gradient(const ModelParams& params, std::span<const Episode> episodes, const ModelConfig& model,
                           const MetaConfig& meta, std::uint64_t seed);

struct MetaStepLog {
  std::int64_t step = 0;
  std::vector<std::string> languages;
  std::vector<double> support_losses;
  std::vector<double> query_losses;
  double meta_grad_norm = 0.0;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
};

// One outer update. `optimizer` is used only when meta.outer is AdamW.
MetaStepLog meta_step(ModelParams& params, std::span<const Episode> episodes, const ModelConfig& model,
                      const MetaConfig& meta, AdamW& optimizer, std::uint64_t seed);

// Phase 4: meta-training over episodes from the training split.
PhaseReport run_meta_phase(ModelParams& params, const TrainData& data, const ModelConfig& model,
                           const TrainConfig& config, const MetaConfig& meta, const PhaseOptions& options = {},
                           const std::function<void(const MetaStepLog&)>& on_step = nullptr);

struct AdaptationResult {
  double pre_accuracy = 0.0;
  double post_accuracy = 0.0;
  std::size_t support_size = 0;
  std::size_t query_size = 0;
};

// Accuracy on `query` before and after adapting on `shots` examples per
// class drawn from `support_pool`. The given parameters are never modified.
AdaptationResult evaluate_adaptation(const ModelParams& params, const ModelConfig& model,
                                     std::span<const EncodedExample> support_pool,
                                     std::span<const EncodedExample> query, std::size_t shots,
                                     const MetaConfig& meta, std::uint64_t seed);

}  // namespace clm
