#include "clm/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "clm/heads.hpp"
#include "clm/trainer.hpp"

namespace clm {

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= k_ || predicted >= k_) {
    throw LabelError("confusion: class " + std::to_string(std::max(truth, predicted)) + " outside " +
                     std::to_string(k_) + " classes");
  }
  ++counts_[truth * k_ + predicted];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

std::size_t ConfusionMatrix::support(std::size_t truth) const {
  std::size_t t = 0;
  for (std::size_t j = 0; j < k_; ++j) t += at(truth, j);
  return t;
}

std::size_t ConfusionMatrix::predicted_count(std::size_t pred) const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, pred);
  return t;
}

nlohmann::json ConfusionMatrix::to_json() const {
  auto grid = nlohmann::json::array();
  for (std::size_t i = 0; i < k_; ++i) {
    auto row = nlohmann::json::array();
    for (std::size_t j = 0; j < k_; ++j) row.push_back(at(i, j));
    grid.push_back(std::move(row));
  }
  return grid;
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw SchemaError("confusion matrix must be an array of rows");
  ConfusionMatrix cm(j.size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j.size()) throw SchemaError("confusion matrix must be square");
    for (std::size_t c = 0; c < j.size(); ++c) cm.counts_[r * cm.k_ + c] = j[r][c].get<std::size_t>();
  }
  return cm;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c) {
  ClassMetrics m;
  const double tp = static_cast<double>(cm.at(c, c));
  const std::size_t predicted = cm.predicted_count(c);
  m.support = cm.support(c);
  m.precision = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
  m.recall = m.support == 0 ? 0.0 : tp / static_cast<double>(m.support);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

double macro_f1(const ConfusionMatrix& cm) { return report_from_confusion("", cm).macro_f1; }

EvalReport report_from_confusion(const std::string& language, const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InvalidInput("report: empty confusion matrix");
  EvalReport r;
  r.language = language;
  r.n = cm.total();
  r.confusion = cm;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(r.n);
  const std::size_t k = cm.classes();
  for (std::size_t c = 0; c < k; ++c) {
    r.per_class.push_back(class_metrics(cm, c));
    r.macro_precision += r.per_class.back().precision;
    r.macro_recall += r.per_class.back().recall;
    r.macro_f1 += r.per_class.back().f1;
  }
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["language"] = language;
  j["n"] = n;
  j["accuracy"] = accuracy;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  auto pc = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    nlohmann::ordered_json e;
    e["class"] = c;
    e["precision"] = per_class[c].precision;
    e["recall"] = per_class[c].recall;
    e["f1"] = per_class[c].f1;
    e["support"] = per_class[c].support;
    pc.push_back(std::move(e));
  }
  j["per_class"] = std::move(pc);
  j["confusion"] = confusion.to_json();
  j["zero_shot"] = zero_shot;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  for (const char* key : {"language", "n", "accuracy", "macro_precision", "macro_recall", "macro_f1", "per_class",
                          "confusion"}) {
    if (!j.contains(key)) throw SchemaError(std::string("report: missing key '") + key + "'");
  }
  EvalReport r;
  r.language = j["language"].get<std::string>();
  r.n = j["n"].get<std::size_t>();
  r.accuracy = j["accuracy"].get<double>();
  r.macro_precision = j["macro_precision"].get<double>();
  r.macro_recall = j["macro_recall"].get<double>();
  r.macro_f1 = j["macro_f1"].get<double>();
  for (const auto& e : j["per_class"]) {
    r.per_class.push_back({e["precision"].get<double>(), e["recall"].get<double>(), e["f1"].get<double>(),
                           e["support"].get<std::size_t>()});
  }
  r.confusion = ConfusionMatrix::from_json(j["confusion"]);
  r.zero_shot = j.value("zero_shot", false);
  return r;
}

std::vector<double> predict_proba(const ModelParams& params, const ModelConfig& config, const EncodedExample& ex) {
  FrozenModel model(params, config);
  return model.probabilities(ex);
}

std::vector<std::size_t> predict(const ModelParams& params, const ModelConfig& config,
                                 std::span<const EncodedExample> examples) {
  FrozenModel model(params, config);
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto probs = model.probabilities(ex);
    out.push_back(static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
  }
  return out;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& config, std::span<const EncodedExample> examples,
                    const std::string& language) {
  if (examples.empty()) throw InvalidInput("evaluate: no examples for " + language);
  const std::size_t k = config.heads.num_classes;
  for (const auto& ex : examples) {
    if (ex.label >= k) {
      throw LabelError("evaluate: label " + std::to_string(ex.label) + " outside the " + std::to_string(k) +
                       "-class mapping");
    }
  }
  const auto preds = predict(params, config, examples);
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < examples.size(); ++i) cm.add(examples[i].label, preds[i]);
  return report_from_confusion(language, cm);
}

nlohmann::ordered_json ZeroShotResult::to_json() const {
  nlohmann::ordered_json j;
  auto reps = nlohmann::ordered_json::object();
  for (const auto& [lang, r] : reports) reps[language_name(lang)] = r.to_json();
  j["reports"] = std::move(reps);
  auto al = nlohmann::ordered_json::object();
  for (const auto& [pair, v] : alignment) al[pair] = v;
  j["alignment"] = std::move(al);
  return j;
}

ZeroShotResult zero_shot_suite(const ModelParams& params, const ModelConfig& config,
                               std::span<const EncodedTriplet> triplets) {
  ZeroShotResult result;
  for (Language lang : kLanguages) {
    const auto view = language_view({triplets.begin(), triplets.end()}, lang);
    EvalReport r = evaluate(params, config, view, language_name(lang));
    r.zero_shot = lang != Language::L1;
    result.reports.emplace(lang, std::move(r));
  }
  for (const auto& ab : alignment_breakdown(params, config, triplets)) result.alignment[ab.first] = ab.second;
  return result;
}

std::string render_confusion(const ConfusionMatrix& cm, const std::vector<std::string>& labels) {
  const std::size_t k = cm.classes();
  std::size_t label_w = 4;
  for (std::size_t i = 0; i < k; ++i) label_w = std::max(label_w, i < labels.size() ? labels[i].size() : 4);
  std::size_t cell_w = 3;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) cell_w = std::max(cell_w, std::to_string(cm.at(i, j)).size() + 1);
  }
  std::ostringstream out;
  auto pad = [&out](const std::string& s, std::size_t w) {
    out << std::string(w > s.size() ? w - s.size() : 0, ' ') << s;
  };
  pad("", label_w);
  for (std::size_t j = 0; j < k; ++j) pad(std::to_string(j), cell_w);
  out << '\n';
  for (std::size_t i = 0; i < k; ++i) {
    pad(i < labels.size() ? labels[i] : std::to_string(i), label_w);
    for (std::size_t j = 0; j < k; ++j) pad(std::to_string(cm.at(i, j)), cell_w);
    out << '\n';
  }
  return out.str();
}

}  // namespace clm
