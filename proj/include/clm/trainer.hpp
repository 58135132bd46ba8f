#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clm/corpus.hpp"
#include "clm/encoder.hpp"
#include "clm/model.hpp"
#include "clm/optim.hpp"
#include "json.hpp"

namespace clm {

// V1: classification only. V2: + contrastive pretraining. V3: + multi-task.
// V4: + meta-learning.
enum class Variant { V1, V2, V3, V4 };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);
std::vector<int> variant_phases(Variant v);

// Representation compared by the translation loss.
enum class MseSpace { Projection, Cls };

struct TrainConfig {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 0.8;
  double tau = 0.07;
  std::array<std::size_t, 4> epochs{5, 5, 7, 3};
  std::size_t batch_size = 32;
  AdamWSettings optimizer;
  std::int64_t warmup_steps = 20;
  double max_grad_norm = 1.0;  // 0 disables clipping
  std::size_t patience = 3;    // 0 disables early stopping
  std::uint64_t seed = 7;
  Variant variant = Variant::V4;
  bool l2_l3_pairs = false;
  MseSpace mse_space = MseSpace::Projection;
  std::vector<Language> classification_languages{Language::L1};
  bool freeze_encoder = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossWeights {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

// Loss weights and trainable parameter set of a training phase (1-3).
LossWeights phase_weights(int phase, const TrainConfig& c);
std::function<bool(const std::string&)> phase_trainable(int phase, const TrainConfig& c);
// Languages whose labels a phase consumes.
std::vector<Language> phase_labeled_languages(int phase, const TrainConfig& c);

// Unweighted components; a component whose weight is 0 is not computed.
struct LossComponents {
  std::optional<double> cls;
  std::optional<double> trans;
  std::optional<double> contrast;
  double total = 0.0;

  nlohmann::ordered_json to_json() const;
};

struct BatchLoss {
  Tensor total;
  std::optional<Tensor> cls;
  std::optional<Tensor> trans;
  std::optional<Tensor> contrast;

  LossComponents values() const;
};

// Language pairs used by the alignment losses.
std::vector<std::pair<Language, Language>> alignment_pairs(const TrainConfig& c);

// total = alpha*cls + beta*trans + gamma*contrast over a batch of triplets.
// Classification is averaged over the batch and the configured languages;
// contrastive and translation losses are averaged over language pairs.
BatchLoss multitask_loss(const ParamTensors& params, std::span<const EncodedTriplet* const> batch,
                         const ModelConfig& model, const TrainConfig& config, const LossWeights& weights,
                         Mode mode, std::uint64_t dropout_seed);

struct StepResult {
  LossComponents loss;
  double grad_norm = 0.0;
};

// One optimizer step on one batch. Parameters outside `trainable` enter the
// graph as constants and are never touched.
StepResult train_step(ModelParams& params, std::span<const EncodedTriplet* const> batch, const ModelConfig& model,
                      const TrainConfig& config, const LossWeights& weights,
                      const std::function<bool(const std::string&)>& trainable, AdamW& optimizer, double lr,
                      std::uint64_t step_seed);

// Mean cosine between projections of aligned sentences, eval mode.
double verify_alignment(const ModelParams& params, const ModelConfig& model, std::span<const EncodedExample> a,
                        std::span<const EncodedExample> b);
// Mean over L1-L2 and L1-L3 (and L2-L3 when asked).
double mean_alignment(const ModelParams& params, const ModelConfig& model, std::span<const EncodedTriplet> triplets,
                      bool include_l2_l3 = false);
// {"L1-L2", "L1-L3", "L2-L3"} cosines.
std::vector<std::pair<std::string, double>> alignment_breakdown(const ModelParams& params, const ModelConfig& model,
                                                                std::span<const EncodedTriplet> triplets);

struct EpochLog {
  int phase = 0;
  std::size_t epoch = 0;  // 1-based
  LossComponents loss;
  std::optional<double> alignment;
  double lr = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> val_macro_f1;
  std::size_t steps = 0;

  nlohmann::ordered_json to_json() const;
  static EpochLog from_json(const nlohmann::json& j);
};

struct PhaseReport {
  int phase = 0;
  std::vector<EpochLog> epochs;
  std::optional<double> alignment_before;
  std::optional<double> alignment_after;
  double seconds = 0.0;
  std::vector<Language> labeled_languages;
  std::optional<std::size_t> best_epoch;
  bool stopped_early = false;

  nlohmann::ordered_json to_json() const;
};

// Which languages' labels a finished phase consumed.
struct Provenance {
  int phase = 0;
  std::vector<Language> labeled_languages;
  std::size_t epochs = 0;
};

inline Provenance provenance_of(const PhaseReport& r) { return {r.phase, r.labeled_languages, r.epochs.size()}; }

struct EarlyStopState {
  std::optional<double> best_score;
  std::size_t best_epoch = 0;
  std::size_t bad_epochs = 0;
  std::vector<double> best_params;
};

// Everything needed to continue a phase after an epoch boundary.
struct PhaseState {
  int phase = 0;
  std::size_t epochs_done = 0;
  std::int64_t step = 0;
  AdamW optimizer;
  EarlyStopState early;
  std::vector<EpochLog> history;
  std::optional<double> alignment_before;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const PhaseState&, const ModelParams&)>;

struct PhaseOptions {
  const PhaseState* resume = nullptr;
  EpochCallback on_epoch;
};

struct TrainData {
  std::vector<EncodedTriplet> train;
  std::vector<EncodedTriplet> val;
};

// Shuffled batch index lists; a trailing singleton joins the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed);

PhaseReport run_phase(int phase, ModelParams& params, const TrainData& data, const ModelConfig& model,
                      const TrainConfig& config, const PhaseOptions& options = {});

inline PhaseReport run_phase1_contrastive(ModelParams& p, const TrainData& d, const ModelConfig& m,
                                          const TrainConfig& c, const PhaseOptions& o = {}) {
  return run_phase(1, p, d, m, c, o);
}
inline PhaseReport run_phase2_classification(ModelParams& p, const TrainData& d, const ModelConfig& m,
                                             const TrainConfig& c, const PhaseOptions& o = {}) {
  return run_phase(2, p, d, m, c, o);
}
inline PhaseReport run_phase3_multitask(ModelParams& p, const TrainData& d, const ModelConfig& m,
                                        const TrainConfig& c, const PhaseOptions& o = {}) {
  return run_phase(3, p, d, m, c, o);
}

}  // namespace clm
