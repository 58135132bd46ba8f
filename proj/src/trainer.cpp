#include "clm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "clm/eval.hpp"
#include "clm/heads.hpp"
#include "clm/seed.hpp"

namespace clm {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::V1: return "V1";
    case Variant::V2: return "V2";
    case Variant::V3: return "V3";
    case Variant::V4: return "V4";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "V1" || s == "v1") return Variant::V1;
  if (s == "V2" || s == "v2") return Variant::V2;
  if (s == "V3" || s == "v3") return Variant::V3;
  if (s == "V4" || s == "v4") return Variant::V4;
  throw ValidationError("unknown variant '" + s + "' (expected V1..V4)");
}

std::vector<int> variant_phases(Variant v) {
  switch (v) {
    case Variant::V1: return {2};
    case Variant::V2: return {1, 2};
    case Variant::V3: return {1, 2, 3};
    case Variant::V4: return {1, 2, 3, 4};
  }
  return {};
}

void TrainConfig::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0) throw ValidationError("loss weights must be non-negative");
  if (!(tau > 0)) throw ValidationError("temperature must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (!(optimizer.lr > 0)) throw ValidationError("learning rate must be positive");
  if (optimizer.weight_decay < 0) throw ValidationError("weight decay must be non-negative");
  if (warmup_steps < 0) throw ValidationError("warmup steps must be non-negative");
  if (max_grad_norm < 0) throw ValidationError("max grad norm must be non-negative");
  if (classification_languages.empty()) throw ValidationError("need at least one classification language");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  std::vector<std::string> langs;
  for (Language l : c.classification_languages) langs.push_back(language_name(l));
  j = nlohmann::json{{"alpha", c.alpha},
                     {"beta", c.beta},
                     {"gamma", c.gamma},
                     {"tau", c.tau},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.optimizer.lr},
                     {"weight_decay", c.optimizer.weight_decay},
                     {"beta1", c.optimizer.beta1},
                     {"beta2", c.optimizer.beta2},
                     {"epsilon", c.optimizer.epsilon},
                     {"warmup_steps", c.warmup_steps},
                     {"max_grad_norm", c.max_grad_norm},
                     {"patience", c.patience},
                     {"seed", c.seed},
                     {"variant", variant_name(c.variant)},
                     {"l2_l3_pairs", c.l2_l3_pairs},
                     {"mse_space", c.mse_space == MseSpace::Projection ? "projection" : "cls"},
                     {"classification_languages", langs},
                     {"freeze_encoder", c.freeze_encoder}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.gamma = j.value("gamma", c.gamma);
  c.tau = j.value("tau", c.tau);
  if (j.contains("epochs")) c.epochs = j["epochs"].get<std::array<std::size_t, 4>>();
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer.lr = j.value("lr", c.optimizer.lr);
  c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  c.l2_l3_pairs = j.value("l2_l3_pairs", c.l2_l3_pairs);
  if (j.contains("mse_space")) {
    const auto s = j["mse_space"].get<std::string>();
    if (s == "projection") {
      c.mse_space = MseSpace::Projection;
    } else if (s == "cls") {
      c.mse_space = MseSpace::Cls;
    } else {
      throw ValidationError("mse_space must be 'projection' or 'cls'");
    }
  }
  if (j.contains("classification_languages")) {
    c.classification_languages.clear();
    for (const auto& s : j["classification_languages"]) c.classification_languages.push_back(parse_language(s));
  }
  c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
}

LossWeights phase_weights(int phase, const TrainConfig& c) {
  switch (phase) {
    case 1: return {0.0, 0.0, c.gamma};
    case 2: return {c.alpha, 0.0, 0.0};
    case 3: return {c.alpha, c.beta, c.gamma};
  }
  throw ValidationError("no loss weights for phase " + std::to_string(phase));
}

std::function<bool(const std::string&)> phase_trainable(int phase, const TrainConfig& c) {
  const bool freeze = c.freeze_encoder;
  auto encoder_ok = [freeze](const std::string& n) { return !freeze || !is_encoder_param(n); };
  switch (phase) {
    case 1:
      return [encoder_ok](const std::string& n) { return !is_classifier_param(n) && encoder_ok(n); };
    case 2:
      return [encoder_ok](const std::string& n) { return !is_projection_param(n) && encoder_ok(n); };
    case 3:
    case 4:
      return encoder_ok;
  }
  throw ValidationError("no parameter set for phase " + std::to_string(phase));
}

std::vector<Language> phase_labeled_languages(int phase, const TrainConfig& c) {
  if (phase == 1) return {};
  if (phase == 4) return {Language::L2};
  return c.classification_languages;
}

nlohmann::ordered_json LossComponents::to_json() const {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  j["cls"] = opt(cls);
  j["trans"] = opt(trans);
  j["contrast"] = opt(contrast);
  j["total"] = total;
  return j;
}

LossComponents BatchLoss::values() const {
  LossComponents v;
  if (cls) v.cls = cls->item();
  if (trans) v.trans = trans->item();
  if (contrast) v.contrast = contrast->item();
  v.total = total.item();
  return v;
}

std::vector<std::pair<Language, Language>> alignment_pairs(const TrainConfig& c) {
  std::vector<std::pair<Language, Language>> pairs{{Language::L1, Language::L2}, {Language::L1, Language::L3}};
  if (c.l2_l3_pairs) pairs.emplace_back(Language::L2, Language::L3);
  return pairs;
}

namespace {

Tensor accumulate(const Tensor& acc, const Tensor& term) { return acc.valid() ? add(acc, term) : term; }

}  // namespace

BatchLoss multitask_loss(const ParamTensors& params, std::span<const EncodedTriplet* const> batch,
                         const ModelConfig& model, const TrainConfig& config, const LossWeights& weights,
                         Mode mode, std::uint64_t dropout_seed) {
  if (batch.empty()) throw InvalidInput("multitask_loss: empty batch");
  const bool want_cls = weights.alpha > 0, want_trans = weights.beta > 0, want_contrast = weights.gamma > 0;
  if (!want_cls && !want_trans && !want_contrast) throw InvalidInput("multitask_loss: every loss weight is zero");
  if (want_contrast && batch.size() < 2) {
    throw InvalidInput("multitask_loss: invalid batch, the contrastive loss needs at least 2 triplets");
  }
  const auto pairs = alignment_pairs(config);

  std::array<bool, 3> need{};
  if (want_cls) {
    for (Language l : config.classification_languages) need[static_cast<std::size_t>(l)] = true;
  }
  if (want_trans || want_contrast) {
    for (const auto& [a, b] : pairs) need[static_cast<std::size_t>(a)] = need[static_cast<std::size_t>(b)] = true;
  }

  const std::size_t n = batch.size();
  std::array<std::vector<SentenceOutput>, 3> out;
  std::array<Tensor, 3> z;  // [n, p] projections
  for (Language lang : kLanguages) {
    const auto li = static_cast<std::size_t>(lang);
    if (!need[li]) continue;
    out[li].reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      EncodeOptions opts;
      opts.mode = mode;
      opts.dropout_seed = sub_seed(dropout_seed, language_name(lang), i);
      out[li].push_back(encode_sentence(batch[i]->view(lang), params, model.encoder, opts));
    }
    if (want_trans || want_contrast) {
      std::vector<Tensor> pooled;
      for (const auto& o : out[li]) pooled.push_back(o.pooled.pooled);
      z[li] = project(stack(pooled), params);
    }
  }

  BatchLoss loss;
  if (want_cls) {
    Tensor sum_ce;
    std::size_t count = 0;
    for (Language lang : config.classification_languages) {
      const auto li = static_cast<std::size_t>(lang);
      for (std::size_t i = 0; i < n; ++i) {
        sum_ce = accumulate(sum_ce, cross_entropy(classify(out[li][i].pooled.pooled, params), batch[i]->label));
        ++count;
      }
    }
    loss.cls = scale(sum_ce, 1.0 / static_cast<double>(count));
  }
  if (want_trans) {
    Tensor sum_mse;
    for (const auto& [a, b] : pairs) {
      const auto ai = static_cast<std::size_t>(a), bi = static_cast<std::size_t>(b);
      for (std::size_t i = 0; i < n; ++i) {
        Tensor da = config.mse_space == MseSpace::Projection ? row(z[ai], i) : out[ai][i].encoded.cls;
        Tensor db = config.mse_space == MseSpace::Projection ? row(z[bi], i) : out[bi][i].encoded.cls;
        sum_mse = accumulate(sum_mse, translation_mse(da, db));
      }
    }
    loss.trans = scale(sum_mse, 1.0 / static_cast<double>(n * pairs.size()));
  }
  if (want_contrast) {
    Tensor sum_nt;
    for (const auto& [a, b] : pairs) {
      sum_nt = accumulate(sum_nt, nt_xent(z[static_cast<std::size_t>(a)], z[static_cast<std::size_t>(b)], config.tau));
    }
    loss.contrast = scale(sum_nt, 1.0 / static_cast<double>(pairs.size()));
  }

  Tensor total;
  if (loss.cls) total = accumulate(total, scale(*loss.cls, weights.alpha));
  if (loss.trans) total = accumulate(total, scale(*loss.trans, weights.beta));
  if (loss.contrast) total = accumulate(total, scale(*loss.contrast, weights.gamma));
  loss.total = total;
  return loss;
}

StepResult train_step(ModelParams& params, std::span<const EncodedTriplet* const> batch, const ModelConfig& model,
                      const TrainConfig& config, const LossWeights& weights,
                      const std::function<bool(const std::string&)>& trainable, AdamW& optimizer, double lr,
                      std::uint64_t step_seed) {
  params.zero_grad();
  Graph g;
  const ParamTensors pt = bind(g, params, trainable);
  const BatchLoss loss = multitask_loss(pt, batch, model, config, weights, Mode::Train, step_seed);
  StepResult result;
  result.loss = loss.values();
  if (!std::isfinite(result.loss.total)) {
    throw NumericError("training loss is not finite (" + std::to_string(result.loss.total) + ")");
  }
  g.backward(loss.total);
  auto selected = params.select(trainable);
  if (config.max_grad_norm > 0) {
    result.grad_norm = clip_grad_norm(selected, config.max_grad_norm);
  } else {
    double sq = 0.0;
    for (const Parameter* p : selected) {
      if (!p->touched) continue;
      for (double v : p->grad.data) sq += v * v;
    }
    result.grad_norm = std::sqrt(sq);
  }
  optimizer.step(selected, lr);
  return result;
}

double verify_alignment(const ModelParams& params, const ModelConfig& model, std::span<const EncodedExample> a,
                        std::span<const EncodedExample> b) {
  if (a.empty()) throw InvalidInput("verify_alignment: no sentence pairs");
  if (a.size() != b.size()) throw DimensionError("verify_alignment: unequal pair lists");
  FrozenModel frozen(params, model);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += cosine_similarity(frozen.projection(a[i]), frozen.projection(b[i]));
  }
  return total / static_cast<double>(a.size());
}

namespace {

// Per-language projection vectors for every triplet.
std::array<std::vector<std::vector<double>>, 3> project_all(const ModelParams& params, const ModelConfig& model,
                                                            std::span<const EncodedTriplet> triplets) {
  if (triplets.empty()) throw InvalidInput("alignment: no aligned triplets");
  FrozenModel frozen(params, model);
  std::array<std::vector<std::vector<double>>, 3> z;
  for (const auto& t : triplets) {
    for (Language lang : kLanguages) z[static_cast<std::size_t>(lang)].push_back(frozen.projection(t.view(lang)));
  }
  return z;
}

double pair_cosine(const std::array<std::vector<std::vector<double>>, 3>& z, Language a, Language b) {
  const auto& za = z[static_cast<std::size_t>(a)];
  const auto& zb = z[static_cast<std::size_t>(b)];
  double total = 0.0;
  for (std::size_t i = 0; i < za.size(); ++i) total += cosine_similarity(za[i], zb[i]);
  return total / static_cast<double>(za.size());
}

}  // namespace

double mean_alignment(const ModelParams& params, const ModelConfig& model, std::span<const EncodedTriplet> triplets,
                      bool include_l2_l3) {
  const auto z = project_all(params, model, triplets);
  double s = pair_cosine(z, Language::L1, Language::L2) + pair_cosine(z, Language::L1, Language::L3);
  if (include_l2_l3) return (s + pair_cosine(z, Language::L2, Language::L3)) / 3.0;
  return s / 2.0;
}

std::vector<std::pair<std::string, double>> alignment_breakdown(const ModelParams& params, const ModelConfig& model,
                                                                std::span<const EncodedTriplet> triplets) {
  const auto z = project_all(params, model, triplets);
  return {{"L1-L2", pair_cosine(z, Language::L1, Language::L2)},
          {"L1-L3", pair_cosine(z, Language::L1, Language::L3)},
          {"L2-L3", pair_cosine(z, Language::L2, Language::L3)}};
}

nlohmann::ordered_json EpochLog::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["epoch"] = epoch;
  j["loss"] = loss.to_json();
  j["alignment"] = opt(alignment);
  j["lr"] = lr;
  j["val_accuracy"] = opt(val_accuracy);
  j["val_macro_f1"] = opt(val_macro_f1);
  j["steps"] = steps;
  return j;
}

EpochLog EpochLog::from_json(const nlohmann::json& j) {
  auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::optional<double>() : v.get<double>(); };
  EpochLog e;
  e.phase = j.at("phase").get<int>();
  e.epoch = j.at("epoch").get<std::size_t>();
  const auto& l = j.at("loss");
  e.loss.cls = opt(l.at("cls"));
  e.loss.trans = opt(l.at("trans"));
  e.loss.contrast = opt(l.at("contrast"));
  e.loss.total = l.at("total").get<double>();
  e.alignment = opt(j.at("alignment"));
  e.lr = j.at("lr").get<double>();
  e.val_accuracy = opt(j.at("val_accuracy"));
  e.val_macro_f1 = opt(j.at("val_macro_f1"));
  e.steps = j.at("steps").get<std::size_t>();
  return e;
}

nlohmann::ordered_json PhaseReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["phase"] = phase;
  auto ep = nlohmann::ordered_json::array();
  for (const auto& e : epochs) ep.push_back(e.to_json());
  j["epochs"] = std::move(ep);
  j["alignment_before"] = opt(alignment_before);
  j["alignment_after"] = opt(alignment_after);
  std::vector<std::string> langs;
  for (Language l : labeled_languages) langs.push_back(language_name(l));
  j["labeled_languages"] = langs;
  j["best_epoch"] = best_epoch ? nlohmann::ordered_json(*best_epoch) : nlohmann::ordered_json();
  j["stopped_early"] = stopped_early;
  j["seconds"] = seconds;
  return j;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

PhaseReport run_phase(int phase, ModelParams& params, const TrainData& data, const ModelConfig& model,
                      const TrainConfig& config, const PhaseOptions& options) {
  if (phase < 1 || phase > 3) throw ValidationError("run_phase handles phases 1-3, got " + std::to_string(phase));
  config.validate();
  const auto start_time = std::chrono::steady_clock::now();
  const std::size_t epochs = config.epochs[static_cast<std::size_t>(phase - 1)];

  PhaseReport report;
  report.phase = phase;
  report.labeled_languages = phase_labeled_languages(phase, config);
  if (epochs == 0) return report;
  if (data.train.empty()) throw InvalidInput("phase " + std::to_string(phase) + ": empty training set");

  const LossWeights weights = phase_weights(phase, config);
  const auto trainable = phase_trainable(phase, config);
  const auto& probe = data.val.empty() ? data.train : data.val;
  const bool early_stopping = phase >= 2 && config.patience > 0 && !data.val.empty();
  const std::string tag = "phase" + std::to_string(phase);

  PhaseState state;
  if (options.resume) {
    if (options.resume->phase != phase) {
      throw CompatibilityError("resume state belongs to phase " + std::to_string(options.resume->phase));
    }
    state = *options.resume;
  } else {
    state.phase = phase;
    state.optimizer = AdamW(config.optimizer);
    state.alignment_before = mean_alignment(params, model, probe, config.l2_l3_pairs);
  }

  const std::size_t steps_per_epoch = make_batches(data.train.size(), config.batch_size, 0).size();
  const auto total_steps = static_cast<std::int64_t>(epochs * steps_per_epoch);
  const LrSchedule schedule(config.optimizer.lr, std::min(config.warmup_steps, total_steps - 1), total_steps);

  while (state.epochs_done < epochs && !state.stopped_early) {
    const std::size_t epoch = state.epochs_done + 1;
    const auto batches = make_batches(data.train.size(), config.batch_size, sub_seed(config.seed, tag + "/shuffle", epoch));
    EpochLog log;
    log.phase = phase;
    log.epoch = epoch;
    double cls = 0.0, trans = 0.0, contrast = 0.0, total = 0.0;
    for (const auto& idx : batches) {
      std::vector<const EncodedTriplet*> batch;
      for (std::size_t i : idx) batch.push_back(&data.train[i]);
      log.lr = schedule.at(state.step);
      const StepResult r = train_step(params, batch, model, config, weights, trainable, state.optimizer, log.lr,
                                      sub_seed(config.seed, tag + "/dropout", static_cast<std::uint64_t>(state.step)));
      ++state.step;
      cls += r.loss.cls.value_or(0.0);
      trans += r.loss.trans.value_or(0.0);
      contrast += r.loss.contrast.value_or(0.0);
      total += r.loss.total;
    }
    const auto nb = static_cast<double>(batches.size());
    if (weights.alpha > 0) log.loss.cls = cls / nb;
    if (weights.beta > 0) log.loss.trans = trans / nb;
    if (weights.gamma > 0) log.loss.contrast = contrast / nb;
    log.loss.total = total / nb;
    log.steps = batches.size();
    log.alignment = mean_alignment(params, model, probe, config.l2_l3_pairs);
    if (phase >= 2 && !data.val.empty()) {
      const auto view = language_view(data.val, Language::L1);
      const EvalReport r = evaluate(params, model, view, "L1");
      log.val_accuracy = r.accuracy;
      log.val_macro_f1 = r.macro_f1;
    }
    if (early_stopping) {
      auto& es = state.early;
      // Ties favour the later epoch: once validation saturates, training
      // keeps going rather than rolling back to the first saturated epoch.
      if (!es.best_score || *log.val_macro_f1 >= *es.best_score) {
        es.best_score = log.val_macro_f1;
        es.best_epoch = epoch;
        es.bad_epochs = 0;
        es.best_params = params.flatten();
      } else if (++es.bad_epochs >= config.patience) {
        state.stopped_early = true;
      }
    }
    state.history.push_back(log);
    state.epochs_done = epoch;
    if (options.on_epoch) options.on_epoch(state, params);
  }

  if (early_stopping && !state.early.best_params.empty()) {
    params.unflatten(state.early.best_params);
    report.best_epoch = state.early.best_epoch;
  }
  report.epochs = state.history;
  report.alignment_before = state.alignment_before;
  report.alignment_after = mean_alignment(params, model, probe, config.l2_l3_pairs);
  report.stopped_early = state.stopped_early;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return report;
}

}  // namespace clm
