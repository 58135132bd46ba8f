#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clm/corpus.hpp"
#include "clm/model.hpp"
#include "json.hpp"

namespace clm {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted);
  std::size_t classes() const { return k_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t support(std::size_t truth) const;         // row sum
  std::size_t predicted_count(std::size_t pred) const;  // column sum

  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

// A class with no predicted positives has precision 0; a class with no true
// examples has recall 0; F1 is 0 whenever P + R is 0.
ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c);
double macro_f1(const ConfusionMatrix& cm);

struct EvalReport {
  std::string language;
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
  bool zero_shot = false;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Everything in a report is a function of its confusion matrix.
EvalReport report_from_confusion(const std::string& language, const ConfusionMatrix& cm);

// Class probabilities and argmax (lowest index wins ties), eval mode.
std::vector<double> predict_proba(const ModelParams& params, const ModelConfig& config, const EncodedExample& ex);
std::vector<std::size_t> predict(const ModelParams& params, const ModelConfig& config,
                                 std::span<const EncodedExample> examples);

EvalReport evaluate(const ModelParams& params, const ModelConfig& config, std::span<const EncodedExample> examples,
                    const std::string& language);

struct ZeroShotResult {
  std::map<Language, EvalReport> reports;
  std::map<std::string, double> alignment;  // "L1-L2" etc.

  nlohmann::ordered_json to_json() const;
};

// L1 is the supervised view; L2 and L3 are evaluated on the same triplets
// and marked zero-shot.
ZeroShotResult zero_shot_suite(const ModelParams& params, const ModelConfig& config,
                               std::span<const EncodedTriplet> triplets);

// Aligned text grid, one row per true class.
std::string render_confusion(const ConfusionMatrix& cm, const std::vector<std::string>& labels);

}  // namespace clm
