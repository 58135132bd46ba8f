#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "clm/eval.hpp"
#include "clm/heads.hpp"
#include "clm/trainer.hpp"
#include "support.hpp"

using namespace clm;
using namespace clm::testing;

namespace {

std::vector<Array> grads_of(ModelParams& p) {
  std::vector<Array> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back(p.at(i).grad);
  return out;
}

std::vector<Array> loss_grads(ModelParams& p, std::span<const EncodedTriplet* const> batch, const ModelConfig& m,
                              const TrainConfig& c, const LossWeights& w) {
  p.zero_grad();
  Graph g;
  ParamTensors t = bind(g, p);
  g.backward(multitask_loss(t, batch, m, c, w, Mode::Train, 5).total);
  auto out = grads_of(p);
  p.zero_grad();
  return out;
}

bool same_values(const ModelParams& a, const ModelParams& b, const std::function<bool(const std::string&)>& pick) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (pick(a.at(i).name) && !(a.at(i).value == b.at(i).value)) return false;
  return true;
}

}  // namespace

TEST_CASE("loss composition identity") {
  LossComponents c{1.0, 1.0, 1.0, 0.0};
  TrainConfig cfg;
  LossWeights w = phase_weights(3, cfg);
  CHECK(w.alpha == 1.0);
  CHECK(w.beta == 0.5);
  CHECK(w.gamma == 0.8);
  CHECK(w.alpha * *c.cls + w.beta * *c.trans + w.gamma * *c.contrast == doctest::Approx(2.3).epsilon(1e-15));

  ModelConfig m = micro_config();
  m.encoder.dropout = 0.1;
  ModelParams p = micro_params(m, 1);
  auto data = random_triplets(4, m, 2);
  auto batch = pointers(data);
  Graph g;
  ParamTensors t = bind_constants(g, p);
  BatchLoss loss = multitask_loss(t, batch, m, cfg, w, Mode::Train, 9);
  LossComponents v = loss.values();
  REQUIRE(v.cls);
  REQUIRE(v.trans);
  REQUIRE(v.contrast);
  CHECK(std::abs(v.total - (1.0 * *v.cls + 0.5 * *v.trans + 0.8 * *v.contrast)) <= 1e-12);

  LossWeights cls_only{1.0, 0.0, 0.0};
  LossComponents only = multitask_loss(t, batch, m, cfg, cls_only, Mode::Train, 9).values();
  CHECK_FALSE(only.trans);
  CHECK_FALSE(only.contrast);
  CHECK(only.total == *only.cls);
  CHECK(*only.cls == *v.cls);
  CHECK(only.to_json()["trans"].is_null());
}

TEST_CASE("classification loss oracle") {
  ModelConfig m = micro_config();
  ModelParams p = micro_params(m, 3);
  auto data = random_triplets(3, m, 4);
  auto batch = pointers(data);
  TrainConfig cfg;
  Graph g;
  ParamTensors t = bind_constants(g, p);
  double got = *multitask_loss(t, batch, m, cfg, {1.0, 0.0, 0.0}, Mode::Eval, 0).values().cls;
  FrozenModel frozen(p, m);
  double expect = 0;
  for (const auto& tr : data) expect += -std::log(frozen.probabilities(tr.view(Language::L1))[tr.label]);
  CHECK(got == doctest::Approx(expect / 3).epsilon(1e-12));

  // Translation term: mean over (L1,L2),(L1,L3) pairs and the batch of the
  // summed squared projection distance.
  double trans = *multitask_loss(t, batch, m, cfg, {0.0, 1.0, 0.0}, Mode::Eval, 0).values().trans;
  double expect_trans = 0;
  for (const auto& tr : data) {
    auto z1 = frozen.projection(tr.view(Language::L1));
    for (Language other : {Language::L2, Language::L3}) {
      auto z = frozen.projection(tr.view(other));
      for (std::size_t k = 0; k < z.size(); ++k) expect_trans += (z1[k] - z[k]) * (z1[k] - z[k]);
    }
  }
  CHECK(trans == doctest::Approx(expect_trans / 6).epsilon(1e-12));

  double contrast = *multitask_loss(t, batch, m, cfg, {0.0, 0.0, 1.0}, Mode::Eval, 0).values().contrast;
  double expect_contrast = 0;
  for (Language other : {Language::L2, Language::L3}) {
    std::vector<std::vector<double>> a, b;
    for (const auto& tr : data) {
      a.push_back(frozen.projection(tr.view(Language::L1)));
      b.push_back(frozen.projection(tr.view(other)));
    }
    expect_contrast += brute_nt_xent(a, b, cfg.tau) / 2;
  }
  CHECK(contrast == doctest::Approx(expect_contrast).epsilon(1e-12));
}

TEST_CASE("total gradient is the weighted sum of component gradients") {
  ModelConfig m = micro_config();
  m.encoder.dropout = 0.1;
  ModelParams p = micro_params(m, 5);
  auto data = random_triplets(3, m, 6);
  auto batch = pointers(data);
  TrainConfig cfg;
  auto total = loss_grads(p, batch, m, cfg, {1.0, 0.5, 0.8});
  auto cls = loss_grads(p, batch, m, cfg, {1.0, 0.0, 0.0});
  auto trans = loss_grads(p, batch, m, cfg, {0.0, 1.0, 0.0});
  auto con = loss_grads(p, batch, m, cfg, {0.0, 0.0, 1.0});
  double worst = 0;
  for (std::size_t i = 0; i < total.size(); ++i)
    for (std::size_t k = 0; k < total[i].size(); ++k)
      worst = std::max(worst, rel_error(total[i].data[k],
                                        cls[i].data[k] + 0.5 * trans[i].data[k] + 0.8 * con[i].data[k]));
  CHECK(worst < 1e-10);
}

TEST_CASE("batch of one cannot form contrastive negatives") {
  ModelConfig m = micro_config();
  ModelParams p = micro_params(m, 7);
  auto data = random_triplets(1, m, 8);
  auto batch = pointers(data);
  TrainConfig cfg;
  Graph g;
  ParamTensors t = bind_constants(g, p);
  CHECK_THROWS_AS(multitask_loss(t, batch, m, cfg, {1.0, 0.5, 0.8}, Mode::Eval, 0), InvalidInput);
  CHECK_NOTHROW(multitask_loss(t, batch, m, cfg, {1.0, 0.0, 0.0}, Mode::Eval, 0));
}

TEST_CASE("phase gating tables") {
  TrainConfig c;
  auto p1 = phase_trainable(1, c), p2 = phase_trainable(2, c), p3 = phase_trainable(3, c);
  CHECK_FALSE(p1("classifier.w"));
  CHECK(p1("projection.w1"));
  CHECK(p1("pool.v"));
  CHECK(p1("encoder.token_embedding"));
  CHECK(p2("classifier.b"));
  CHECK_FALSE(p2("projection.b2"));
  CHECK(p3("projection.b2"));
  c.freeze_encoder = true;
  CHECK_FALSE(phase_trainable(2, c)("encoder.layer0.ff.w1"));
  CHECK(phase_trainable(2, c)("pool.w"));

  LossWeights w1 = phase_weights(1, c), w2 = phase_weights(2, c);
  CHECK((w1.alpha == 0.0 && w1.beta == 0.0 && w1.gamma == 0.8));
  CHECK((w2.alpha == 1.0 && w2.beta == 0.0 && w2.gamma == 0.0));
  CHECK(phase_labeled_languages(1, c).empty());
  CHECK(phase_labeled_languages(2, c) == std::vector<Language>{Language::L1});

  CHECK(variant_phases(Variant::V1) == std::vector<int>{2});
  CHECK(variant_phases(Variant::V4) == std::vector<int>{1, 2, 3, 4});
  CHECK(parse_variant("V3") == Variant::V3);
  CHECK_THROWS_AS(parse_variant("V5"), ValidationError);
}

TEST_CASE("phase 3 with beta = gamma = 0 reproduces a phase 2 step bitwise") {
  ModelConfig m = micro_config();
  m.encoder.dropout = 0.1;
  ModelParams base = micro_params(m, 9);
  auto data = random_triplets(4, m, 10);
  auto batch = pointers(data);
  TrainConfig cfg;
  TrainConfig zero = cfg;
  zero.beta = 0.0;
  zero.gamma = 0.0;

  ModelParams a = base, b = base;
  AdamW oa(cfg.optimizer), ob(cfg.optimizer);
  for (int step = 0; step < 3; ++step) {
    StepResult ra = train_step(a, batch, m, cfg, phase_weights(2, cfg), phase_trainable(2, cfg), oa, 1e-3, step);
    StepResult rb = train_step(b, batch, m, zero, phase_weights(3, zero), phase_trainable(3, zero), ob, 1e-3, step);
    CHECK(ra.loss.total == rb.loss.total);
    CHECK(ra.grad_norm == rb.grad_norm);
  }
  CHECK(a.values_equal(b));
  CHECK_FALSE(a.values_equal(base));
}

TEST_CASE("phase runs on a small synthetic corpus") {
  Setup s = small_setup();
  TrainConfig cfg;
  cfg.epochs = {2, 3, 2, 0};
  cfg.batch_size = 16;
  const TrainData& data = s.prepared.data;
  ModelParams init = init_model(s.model, 3);

  SUBCASE("zero epochs leave everything alone") {
    TrainConfig none = cfg;
    none.epochs = {0, 0, 0, 0};
    ModelParams p = init;
    PhaseReport r = run_phase(1, p, data, s.model, none);
    CHECK(r.epochs.empty());
    CHECK(p.values_equal(init));
  }

  SUBCASE("phase 1 never moves the classifier and raises alignment") {
    ModelParams p = init;
    PhaseReport r = run_phase1_contrastive(p, data, s.model, cfg);
    CHECK(same_values(p, init, is_classifier_param));
    CHECK_FALSE(same_values(p, init, is_projection_param));
    REQUIRE(r.alignment_before);
    REQUIRE(r.alignment_after);
    CHECK(*r.alignment_after > *r.alignment_before);
    CHECK(r.epochs.size() == 2);
    for (const auto& e : r.epochs) {
      CHECK_FALSE(e.loss.cls);
      REQUIRE(e.loss.contrast);
      CHECK(std::isfinite(*e.loss.contrast));
    }

    run_phase2_classification(p, data, s.model, cfg);
    PhaseReport r3 = run_phase3_multitask(p, data, s.model, cfg);
    for (const auto& e : r3.epochs) {
      CHECK(std::isfinite(*e.loss.cls));
      CHECK(std::isfinite(*e.loss.trans));
      CHECK(std::isfinite(*e.loss.contrast));
    }
  }

  SUBCASE("frozen encoder stays put in phase 2") {
    TrainConfig frozen = cfg;
    frozen.freeze_encoder = true;
    ModelParams p = init;
    run_phase2_classification(p, data, s.model, frozen);
    CHECK(same_values(p, init, is_encoder_param));
    CHECK(same_values(p, init, is_projection_param));
    CHECK_FALSE(same_values(p, init, is_classifier_param));
  }

  SUBCASE("runs are deterministic") {
    ModelParams a = init, b = init;
    PhaseReport ra = run_phase(3, a, data, s.model, cfg);
    PhaseReport rb = run_phase(3, b, data, s.model, cfg);
    CHECK(a.values_equal(b));
    REQUIRE(ra.epochs.size() == rb.epochs.size());
    for (std::size_t i = 0; i < ra.epochs.size(); ++i) CHECK(ra.epochs[i].loss.total == rb.epochs[i].loss.total);
  }

  SUBCASE("resuming after an epoch matches the uninterrupted run") {
    TrainConfig long_cfg = cfg;
    long_cfg.epochs = {0, 4, 0, 0};
    long_cfg.patience = 0;
    ModelParams full = init;
    PhaseReport rf = run_phase(2, full, data, s.model, long_cfg);

    ModelParams part = init;
    std::optional<PhaseState> saved;
    ModelParams snapshot;
    PhaseOptions opts;
    opts.on_epoch = [&](const PhaseState& st, const ModelParams& p) {
      if (st.epochs_done == 2) {
        saved = st;
        snapshot = p;
      }
    };
    run_phase(2, part, data, s.model, long_cfg, opts);
    REQUIRE(saved);
    PhaseOptions resume;
    resume.resume = &*saved;
    PhaseReport rr = run_phase(2, snapshot, data, s.model, long_cfg, resume);
    CHECK(snapshot.values_equal(full));
    REQUIRE(rr.epochs.size() == rf.epochs.size());
    for (std::size_t i = 0; i < rf.epochs.size(); ++i) CHECK(rr.epochs[i].loss.total == rf.epochs[i].loss.total);
  }
}

TEST_CASE("single-class data is fitted quickly") {
  Setup s = small_setup(2, 20);
  TrainData data = s.prepared.data;
  for (auto* part : {&data.train, &data.val})
    for (auto& t : *part) {
      t.label = 0;
      for (auto& v : t.views) v.label = 0;
    }
  TrainConfig cfg;
  cfg.epochs = {0, 6, 0, 0};
  cfg.batch_size = 8;
  cfg.warmup_steps = 2;
  cfg.optimizer.lr = 1e-2;
  cfg.patience = 0;
  ModelParams p = init_model(s.model, 1);
  PhaseReport r = run_phase(2, p, data, s.model, cfg);
  CHECK(*r.epochs.back().loss.cls < 0.05);
  CHECK(*r.epochs.back().loss.cls < *r.epochs.front().loss.cls);
}

TEST_CASE("phase 2 reaches high training accuracy on the default corpus") {
  // Baseline at seed 7: training accuracy 1.0 after the default 5 epochs.
  SyntheticCorpus sc = generate_synthetic_corpus({});
  Vocab vocab = Vocab::build(sc.corpus);
  Split split = split_corpus(sc.corpus, {});
  ModelConfig m = resolve_model({}, vocab, sc.corpus);
  PreparedData prep = prepare_data(sc.corpus, split, vocab, m.encoder.max_len);
  TrainConfig cfg;
  ModelParams p = init_model(m, init_seed(7));
  run_phase2_classification(p, prep.data, m, cfg);
  EvalReport r = evaluate(p, m, language_view(prep.data.train, Language::L1), "L1");
  MESSAGE("phase-2 training accuracy " << r.accuracy);
  CHECK(r.accuracy >= 0.9);
}

TEST_CASE("alignment measurement") {
  ModelConfig m = micro_config();
  ModelParams p = micro_params(m, 12);
  auto data = random_triplets(12, m, 13);
  auto l1 = language_view(data, Language::L1);
  auto l2 = language_view(data, Language::L2);
  CHECK(std::abs(verify_alignment(p, m, l1, l1) - 1.0) <= 1e-9);

  ModelParams fresh = init_model(m, 14);
  CHECK(std::abs(verify_alignment(fresh, m, l1, l2)) < 0.99);

  double base = verify_alignment(p, m, l1, l2);
  std::vector<std::size_t> order(l1.size());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::vector<EncodedExample> r1, r2;
  for (auto i : order) {
    r1.push_back(l1[i]);
    r2.push_back(l2[i]);
  }
  CHECK(verify_alignment(p, m, r1, r2) == doctest::Approx(base).epsilon(1e-12));
  CHECK_THROWS_AS(verify_alignment(p, m, std::span<const EncodedExample>{}, std::span<const EncodedExample>{}),
                  InvalidInput);

  double l12 = base, l13 = verify_alignment(p, m, l1, language_view(data, Language::L3));
  CHECK(mean_alignment(p, m, data) == doctest::Approx((l12 + l13) / 2).epsilon(1e-12));
}

TEST_CASE("batching covers every index without singletons") {
  for (std::size_t n : {1u, 2u, 31u, 32u, 33u, 65u, 100u}) {
    auto batches = make_batches(n, 32, 7);
    std::set<std::size_t> seen;
    for (const auto& b : batches) {
      if (n > 1) CHECK(b.size() >= 2);
      for (auto i : b) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == n);
  }
  CHECK(make_batches(100, 32, 7) == make_batches(100, 32, 7));
  CHECK(make_batches(100, 32, 7) != make_batches(100, 32, 8));
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig c;
  c.variant = Variant::V2;
  c.classification_languages = {Language::L1, Language::L2};
  c.epochs = {1, 2, 3, 4};
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
