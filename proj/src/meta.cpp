#include "clm/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "clm/eval.hpp"
#include "clm/heads.hpp"
#include "clm/seed.hpp"

namespace clm {

void MetaConfig::validate() const {
  if (!(inner_lr >= 0)) throw ValidationError("inner learning rate must be non-negative");
  if (!(outer_lr > 0)) throw ValidationError("outer learning rate must be positive");
  if (meta_batch < 1) throw ValidationError("meta batch needs at least one task");
  if (ways < 1 || shots < 1 || queries < 1) throw ValidationError("episodes need ways, shots and queries >= 1");
  if (languages.empty()) throw ValidationError("meta-training needs at least one episode language");
}

void to_json(nlohmann::json& j, const MetaConfig& c) {
  std::vector<std::string> langs;
  for (Language l : c.languages) langs.push_back(language_name(l));
  j = nlohmann::json{{"inner_lr", c.inner_lr},
                     {"outer_lr", c.outer_lr},
                     {"inner_steps", c.inner_steps},
                     {"meta_batch", c.meta_batch},
                     {"first_order", c.first_order},
                     {"adapt", c.adapt == AdaptSet::All ? "all" : "heads-only"},
                     {"outer_optimizer", c.outer == OuterOptimizer::Sgd ? "sgd" : "adamw"},
                     {"ways", c.ways},
                     {"shots", c.shots},
                     {"queries", c.queries},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"languages", langs},
                     {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, MetaConfig& c) {
  c.inner_lr = j.value("inner_lr", c.inner_lr);
  c.outer_lr = j.value("outer_lr", c.outer_lr);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.meta_batch = j.value("meta_batch", c.meta_batch);
  c.first_order = j.value("first_order", c.first_order);
  if (j.contains("adapt")) {
    const auto s = j["adapt"].get<std::string>();
    if (s == "all") {
      c.adapt = AdaptSet::All;
    } else if (s == "heads-only") {
      c.adapt = AdaptSet::HeadsOnly;
    } else {
      throw ValidationError("adapt must be 'all' or 'heads-only'");
    }
  }
  if (j.contains("outer_optimizer")) {
    const auto s = j["outer_optimizer"].get<std::string>();
    if (s == "sgd") {
      c.outer = OuterOptimizer::Sgd;
    } else if (s == "adamw") {
      c.outer = OuterOptimizer::AdamW;
    } else {
      throw ValidationError("outer_optimizer must be 'sgd' or 'adamw'");
    }
  }
  c.ways = j.value("ways", c.ways);
  c.shots = j.value("shots", c.shots);
  c.queries = j.value("queries", c.queries);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  if (j.contains("languages")) {
    c.languages.clear();
    for (const auto& s : j["languages"]) c.languages.push_back(parse_language(s));
  }
  c.dropout = j.value("dropout", c.dropout);
}

std::vector<Episode> sample_episodes(std::span<const EncodedTriplet> data, std::span<const Language> languages,
                                     std::size_t num_tasks, std::size_t ways, std::size_t shots,
                                     std::size_t queries, std::uint64_t seed) {
  if (languages.empty()) throw InvalidInput("sample_episodes: no languages to draw from");
  if (ways == 0 || shots == 0 || queries == 0) throw InvalidInput("sample_episodes: ways, shots and queries must be >= 1");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  std::vector<std::size_t> classes;
  for (const auto& [c, idx] : by_class) classes.push_back(c);
  if (classes.size() < ways) {
    throw SamplingError("sample_episodes: " + std::to_string(ways) + " classes per episode requested but only " +
                        std::to_string(classes.size()) + " present");
  }

  Rng rng(seed);
  std::vector<Episode> episodes;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    Episode ep;
    ep.language = languages[std::uniform_int_distribution<std::size_t>(0, languages.size() - 1)(rng)];
    auto pool = classes;
    std::shuffle(pool.begin(), pool.end(), rng);
    ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(ways));
    std::sort(ep.classes.begin(), ep.classes.end());
    for (std::size_t c : ep.classes) {
      auto idx = by_class[c];
      if (idx.size() < shots + queries) {
        throw SamplingError("sample_episodes: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                            " examples, an episode needs " + std::to_string(shots + queries));
      }
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t k = 0; k < shots; ++k) ep.support.push_back(data[idx[k]].view(ep.language));
      for (std::size_t k = shots; k < shots + queries; ++k) ep.query.push_back(data[idx[k]].view(ep.language));
    }
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

std::vector<Tensor> sgd_adapt(std::vector<Tensor> theta,
                              const std::function<Tensor(std::span<const Tensor>)>& loss, double lr,
                              std::size_t steps, bool create_graph, const std::vector<bool>& adapt) {
  if (!adapt.empty() && adapt.size() != theta.size()) throw DimensionError("sgd_adapt: adapt mask length mismatch");
  if (theta.empty()) return theta;
  Graph& g = theta.front().graph();
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor l = loss(theta);
    std::vector<Tensor> wrt;
    std::vector<std::size_t> which;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (adapt.empty() || adapt[i]) {
        wrt.push_back(theta[i]);
        which.push_back(i);
      }
    }
    const auto grads = g.gradients(l, wrt, create_graph);
    for (std::size_t k = 0; k < which.size(); ++k) {
      theta[which[k]] = sub(theta[which[k]], scale(grads[k], lr));
    }
  }
  return theta;
}

Tensor episode_loss(const ParamTensors& params, std::span<const EncodedExample> examples, const ModelConfig& model,
                    Mode mode, std::uint64_t dropout_seed) {
  if (examples.empty()) throw InvalidInput("episode_loss: empty example set");
  Tensor total;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    EncodeOptions opts;
    opts.mode = mode;
    opts.dropout_seed = sub_seed(dropout_seed, "example", i);
    const auto out = encode_sentence(examples[i], params, model.encoder, opts);
    const Tensor ce = cross_entropy(classify(out.pooled.pooled, params), examples[i].label);
    total = total.valid() ? add(total, ce) : ce;
  }
  return scale(total, 1.0 / static_cast<double>(examples.size()));
}

namespace {

Mode episode_mode(const MetaConfig& meta) { return meta.dropout ? Mode::Train : Mode::Eval; }

std::vector<bool> adapt_mask(const ModelParams& layout, AdaptSet set) {
  std::vector<bool> mask(layout.size(), true);
  if (set == AdaptSet::HeadsOnly) {
    for (std::size_t i = 0; i < layout.size(); ++i) mask[i] = !is_encoder_param(layout.at(i).name);
  }
  return mask;
}

void require_finite(const Tensor& loss, const char* what) {
  if (!std::isfinite(loss.item())) {
    throw NumericError(std::string("episode aborted: ") + what + " loss is not finite");
  }
}

}  // namespace

ParamTensors adapt_on_graph(const ParamTensors& theta, std::span<const EncodedExample> support,
                            const ModelConfig& model, const MetaConfig& meta, std::uint64_t seed, bool create_graph,
                            std::vector<double>* support_losses) {
  if (support.empty()) throw InvalidInput("inner_adapt: empty support set");
  const ModelParams& layout = theta.layout();
  std::size_t step = 0;
  auto loss = [&](std::span<const Tensor> t) {
    const ParamTensors pt(&layout, {t.begin(), t.end()});
    Tensor l = episode_loss(pt, support, model, episode_mode(meta), sub_seed(seed, "inner", step++));
    require_finite(l, "support");
    if (support_losses) support_losses->push_back(l.item());
    return l;
  };
  auto adapted = sgd_adapt(theta.tensors(), loss, meta.inner_lr, meta.inner_steps, create_graph,
                           adapt_mask(layout, meta.adapt));
  return ParamTensors(&layout, std::move(adapted));
}

ModelParams inner_adapt(const ModelParams& params, std::span<const EncodedExample> support, const ModelConfig& model,
                        const MetaConfig& meta, std::uint64_t seed) {
  Graph g;
  const ParamTensors theta = bind_variables(g, params);
  const ParamTensors adapted = adapt_on_graph(theta, support, model, meta, seed, false);
  ModelParams out(params);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto v = adapted.at(i).values();
    out.at(i).value.data.assign(v.begin(), v.end());
  }
  return out;
}

double meta_objective(const ModelParams& params, const Episode& episode, const ModelConfig& model,
                      const MetaConfig& meta, std::uint64_t seed) {
  Graph g;
  const ParamTensors theta = bind_variables(g, params);
  const ParamTensors adapted = adapt_on_graph(theta, episode.support, model, meta, seed, false);
  Graph::NoGradGuard guard(g);
  return episode_loss(adapted, episode.query, model, episode_mode(meta), sub_seed(seed, "query")).item();
}

MetaGradient meta_gradient(const ModelParams& params, std::span<const Episode> episodes, const ModelConfig& model,
                           const MetaConfig& meta, std::uint64_t seed) {
  if (episodes.empty()) throw InvalidInput("meta_step: no episodes");
  MetaGradient mg;
  for (std::size_t i = 0; i < params.size(); ++i) mg.grads.emplace_back(params.at(i).value.shape, 0.0);
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const std::uint64_t es = sub_seed(seed, "episode", e);
    try {
      Graph g;
      const ParamTensors theta = bind_variables(g, params);
      std::vector<double> inner;
      const ParamTensors adapted =
          adapt_on_graph(theta, episodes[e].support, model, meta, es, !meta.first_order, &inner);
      const Tensor q = episode_loss(adapted, episodes[e].query, model, episode_mode(meta), sub_seed(es, "query"));
      require_finite(q, "query");
      const auto grads = g.gradients(q, theta.tensors(), false);
      for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto v = grads[i].values();
        for (std::size_t k = 0; k < v.size(); ++k) mg.grads[i].data[k] += v[k];
      }
      mg.support_losses.push_back(inner.empty() ? std::nan("") : inner.front());
      mg.query_losses.push_back(q.item());
      ++mg.used;
    } catch (const NumericError& err) {
      mg.warnings.push_back("episode " + std::to_string(e) + " skipped: " + err.what());
    }
  }
  if (mg.used == 0) throw NumericError("meta_step: every episode aborted");
  const double inv = 1.0 / static_cast<double>(mg.used);
  for (auto& a : mg.grads) {
    for (double& v : a.data) v *= inv;
  }
  return mg;
}

nlohmann::ordered_json MetaStepLog::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["languages"] = languages;
  auto sl = nlohmann::ordered_json::array();
  for (double v : support_losses) sl.push_back(std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json());
  j["support_losses"] = std::move(sl);
  j["query_losses"] = query_losses;
  j["meta_grad_norm"] = meta_grad_norm;
  j["warnings"] = warnings;
  return j;
}

MetaStepLog meta_step(ModelParams& params, std::span<const Episode> episodes, const ModelConfig& model,
                      const MetaConfig& meta, AdamW& optimizer, std::uint64_t seed) {
  const MetaGradient mg = meta_gradient(params, episodes, model, meta, seed);
  MetaStepLog log;
  for (const auto& ep : episodes) log.languages.push_back(language_name(ep.language));
  log.support_losses = mg.support_losses;
  log.query_losses = mg.query_losses;
  log.warnings = mg.warnings;
  double sq = 0.0;
  for (const auto& a : mg.grads) {
    for (double v : a.data) sq += v * v;
  }
  log.meta_grad_norm = std::sqrt(sq);
  if (!std::isfinite(log.meta_grad_norm)) throw NumericError("meta_step: meta-gradient is not finite");

  if (meta.outer == OuterOptimizer::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& value = params.at(i).value.data;
      for (std::size_t k = 0; k < value.size(); ++k) value[k] -= meta.outer_lr * mg.grads[i].data[k];
    }
  } else {
    params.zero_grad();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params.at(i).grad = mg.grads[i];
      params.at(i).touched = true;
    }
    optimizer.step(params.all(), meta.outer_lr);
  }
  return log;
}

PhaseReport run_meta_phase(ModelParams& params, const TrainData& data, const ModelConfig& model,
                           const TrainConfig& config, const MetaConfig& meta, const PhaseOptions& options,
                           const std::function<void(const MetaStepLog&)>& on_step) {
  meta.validate();
  const auto start_time = std::chrono::steady_clock::now();
  const std::size_t epochs = config.epochs[3];
  PhaseReport report;
  report.phase = 4;
  report.labeled_languages = meta.languages;
  if (epochs == 0) return report;
  if (data.train.empty()) throw InvalidInput("phase 4: empty training set");
  const auto& probe = data.val.empty() ? data.train : data.val;

  PhaseState state;
  if (options.resume) {
    if (options.resume->phase != 4) {
      throw CompatibilityError("resume state belongs to phase " + std::to_string(options.resume->phase));
    }
    state = *options.resume;
  } else {
    state.phase = 4;
    state.optimizer = AdamW(config.optimizer);
    state.alignment_before = mean_alignment(params, model, probe, config.l2_l3_pairs);
  }

  while (state.epochs_done < epochs) {
    EpochLog log;
    log.phase = 4;
    log.epoch = state.epochs_done + 1;
    log.lr = meta.outer_lr;
    double query = 0.0;
    for (std::size_t s = 0; s < meta.steps_per_epoch; ++s) {
      const auto step = static_cast<std::uint64_t>(state.step);
      const auto episodes = sample_episodes(data.train, meta.languages, meta.meta_batch, meta.ways, meta.shots,
                                            meta.queries, sub_seed(config.seed, "phase4/episodes", step));
      MetaStepLog sl = meta_step(params, episodes, model, meta, state.optimizer,
                                 sub_seed(config.seed, "phase4/dropout", step));
      sl.step = state.step;
      query += std::accumulate(sl.query_losses.begin(), sl.query_losses.end(), 0.0) /
               static_cast<double>(sl.query_losses.size());
      if (on_step) on_step(sl);
      ++state.step;
    }
    log.steps = meta.steps_per_epoch;
    if (log.steps > 0) {
      log.loss.cls = query / static_cast<double>(log.steps);
      log.loss.total = *log.loss.cls;
    }
    log.alignment = mean_alignment(params, model, probe, config.l2_l3_pairs);
    if (!data.val.empty()) {
      const EvalReport r = evaluate(params, model, language_view(data.val, Language::L1), "L1");
      log.val_accuracy = r.accuracy;
      log.val_macro_f1 = r.macro_f1;
    }
    state.history.push_back(log);
    state.epochs_done = log.epoch;
    if (options.on_epoch) options.on_epoch(state, params);
  }
  report.epochs = state.history;
  report.alignment_before = state.alignment_before;
  report.alignment_after = mean_alignment(params, model, probe, config.l2_l3_pairs);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return report;
}

AdaptationResult evaluate_adaptation(const ModelParams& params, const ModelConfig& model,
                                     std::span<const EncodedExample> support_pool,
                                     std::span<const EncodedExample> query, std::size_t shots,
                                     const MetaConfig& meta, std::uint64_t seed) {
  if (query.empty()) throw InvalidInput("evaluate_adaptation: empty query set");
  auto accuracy = [&](const ModelParams& p) {
    const auto preds = predict(p, model, query);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < query.size(); ++i) hit += preds[i] == query[i].label;
    return static_cast<double>(hit) / static_cast<double>(query.size());
  };
  AdaptationResult r;
  r.query_size = query.size();
  r.pre_accuracy = accuracy(params);
  if (shots == 0 || meta.inner_steps == 0) {
    r.post_accuracy = r.pre_accuracy;
    return r;
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < support_pool.size(); ++i) by_class[support_pool[i].label].push_back(i);
  Rng rng(sub_seed(seed, "adaptation/support"));
  std::vector<EncodedExample> support;
  for (auto& [c, idx] : by_class) {
    if (idx.size() < shots) {
      throw SamplingError("evaluate_adaptation: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                          " support examples, " + std::to_string(shots) + " requested");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < shots; ++k) support.push_back(support_pool[idx[k]]);
  }
  r.support_size = support.size();
  const ModelParams adapted = inner_adapt(params, support, model, meta, sub_seed(seed, "adaptation/inner"));
  r.post_accuracy = accuracy(adapted);
  return r;
}

}  // namespace clm
