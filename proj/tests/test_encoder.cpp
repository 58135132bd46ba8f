#include <cmath>
#include <random>

#include "doctest.h"
#include "clm/encoder.hpp"
#include "support.hpp"

using namespace clm;
using namespace clm::testing;

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  std::size_t n = t.shape()[1];
  auto v = t.values();
  return {v.begin() + r * n, v.begin() + (r + 1) * n};
}

}  // namespace

TEST_CASE("embedding is token row plus position row") {
  ModelConfig c = micro_config();
  ModelParams p = init_model(c, 3);
  auto& pos = p.get("encoder.position_embedding").value;
  const auto& tok = p.get("encoder.token_embedding").value;

  SUBCASE("zero position table") {
    std::fill(pos.data.begin(), pos.data.end(), 0.0);
    Graph g;
    std::vector<std::size_t> ids{5, 7, 5}, positions{0, 1, 2};
    Tensor e = embed(bind_constants(g, p), ids, positions);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t d = 0; d < c.encoder.dim; ++d) CHECK(e.array()(i, d) == tok(ids[i], d));
  }
  SUBCASE("same token at two positions") {
    Graph g;
    std::vector<std::size_t> ids{9, 9}, positions{1, 4};
    Array e = embed(bind_constants(g, p), ids, positions).array();
    for (std::size_t d = 0; d < c.encoder.dim; ++d) {
      CHECK(e(0, d) - e(1, d) == doctest::Approx(pos(1, d) - pos(4, d)).epsilon(1e-14));
    }
  }
  SUBCASE("gradient counts occurrences") {
    Graph g;
    ParamTensors t = bind(g, p);
    std::vector<std::size_t> ids{6, 8, 6, 6}, positions{0, 1, 2, 3};
    g.backward(sum(embed(t, ids, positions)));
    const auto& grad = p.get("encoder.token_embedding").grad;
    for (std::size_t d = 0; d < c.encoder.dim; ++d) {
      CHECK(grad(6, d) == 3.0);
      CHECK(grad(8, d) == 1.0);
      CHECK(grad(7, d) == 0.0);
    }
  }
  SUBCASE("range errors") {
    Graph g;
    std::vector<std::size_t> ids{20}, positions{0};
    CHECK_THROWS_AS(embed(bind_constants(g, p), ids, positions), RangeError);
    std::vector<std::size_t> ok{4}, far{8};
    CHECK_THROWS_AS(embed(bind_constants(g, p), ok, far), RangeError);
  }
}

TEST_CASE("zero layers pass the embedding through") {
  ModelConfig c = micro_config();
  c.encoder.layers = 0;
  ModelParams p = init_model(c, 4);
  std::mt19937_64 rng(1);
  EncodedExample ex = random_example(rng, 20, 8, 0, Language::L1);
  Graph g;
  ParamTensors t = bind_constants(g, p);
  EncoderOutput out = encode_sequence(ex, t, c.encoder);
  std::vector<std::size_t> ids(ex.ids.begin(), ex.ids.begin() + ex.length()), pos;
  for (std::size_t i = 0; i < ids.size(); ++i) pos.push_back(i);
  CHECK(out.hidden.array() == embed(t, ids, pos).array());
}

TEST_CASE("padding invariance and trimming") {
  ModelConfig c = micro_config();
  c.encoder.layers = 2;
  ModelParams p = micro_params(c, 5);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    EncodedExample ex = random_example(rng, 20, 8, 0, Language::L1);
    std::size_t n = ex.length();
    Graph g;
    ParamTensors t = bind_constants(g, p);
    EncodeOptions full;
    full.trim_padding = false;
    Tensor base = encode_sequence(ex, t, c.encoder, full).hidden;
    Tensor trimmed = encode_sequence(ex, t, c.encoder).hidden;
    CHECK(trimmed.shape()[0] == n);

    // Scramble what sits under the padding mask.
    EncodedExample noisy = ex;
    for (std::size_t i = n; i < noisy.ids.size(); ++i) noisy.ids[i] = 4 + rng() % 16;
    Tensor other = encode_sequence(noisy, t, c.encoder, full).hidden;
    for (std::size_t r = 0; r < n; ++r) {
      auto a = row_of(base, r), b = row_of(other, r), tr = row_of(trimmed, r);
      for (std::size_t d = 0; d < a.size(); ++d) {
        CHECK(std::abs(a[d] - b[d]) <= 1e-9);
        CHECK(std::abs(a[d] - tr[d]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("attention rows are distributions over real tokens") {
  ModelConfig c = micro_config();
  c.encoder.layers = 2;
  ModelParams p = micro_params(c, 6);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    EncodedExample ex = random_example(rng, 20, 8, 0, Language::L1);
    Graph g;
    std::vector<Tensor> attn;
    EncodeOptions o;
    o.trim_padding = false;
    o.attention = &attn;
    encode_sequence(ex, bind_constants(g, p), c.encoder, o);
    CHECK(attn.size() == c.encoder.layers * c.encoder.heads);
    for (const Tensor& a : attn) {
      Array w = a.array();
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double s = 0;
        for (std::size_t k = 0; k < w.cols(); ++k) {
          if (!ex.mask[k]) CHECK(w(r, k) == 0.0);
          s += w(r, k);
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("cls row, eval determinism and dropout") {
  ModelConfig c = micro_config();
  c.encoder.dropout = 0.3;
  ModelParams p = micro_params(c, 7);
  std::mt19937_64 rng(4);
  EncodedExample ex = random_example(rng, 20, 8, 0, Language::L1, 5);
  Graph g;
  ParamTensors t = bind_constants(g, p);
  EncoderOutput a = encode_sequence(ex, t, c.encoder);
  EncoderOutput b = encode_sequence(ex, t, c.encoder);
  CHECK(a.hidden.array() == b.hidden.array());
  CHECK(std::vector<double>(a.cls.values().begin(), a.cls.values().end()) == row_of(a.hidden, 0));

  EncodeOptions train;
  train.mode = Mode::Train;
  train.dropout_seed = 11;
  Array d1 = encode_sequence(ex, t, c.encoder, train).hidden.array();
  Array d2 = encode_sequence(ex, t, c.encoder, train).hidden.array();
  CHECK(d1 == d2);
  CHECK_FALSE(d1 == a.hidden.array());
  train.dropout_seed = 12;
  CHECK_FALSE(encode_sequence(ex, t, c.encoder, train).hidden.array() == d1);
}

TEST_CASE("inverted dropout keeps the expectation") {
  Graph g;
  Tensor x = g.constant(Array({200, 50}, 1.0));
  Array y = dropout(x, 0.25, 99).array();
  double s = 0;
  std::size_t zeros = 0;
  for (double v : y.data) {
    s += v;
    zeros += v == 0.0;
    if (v != 0.0) CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  CHECK(s / y.size() == doctest::Approx(1.0).epsilon(0.03));
  CHECK(static_cast<double>(zeros) / y.size() == doctest::Approx(0.25).epsilon(0.1));
  CHECK(dropout(x, 0.0, 1).id() == x.id());
}

TEST_CASE("layer norm gradient and statistics") {
  std::mt19937_64 rng(5);
  Array x = random_array({3, 6}, rng, 2.0), gamma = random_array({6}, rng), beta = random_array({6}, rng);
  auto r = check_leaf_gradients(
      [](Graph& g, std::span<const Tensor> t) {
        std::mt19937_64 wr(1);
        return sum(mul(layer_norm(t[0], t[1], t[2]), g.constant(random_array({3, 6}, wr))));
      },
      {x, gamma, beta});
  INFO(r.worst);
  CHECK(r.max_rel < 1e-6);

  Graph g;
  Array y = layer_norm(g.constant(x), g.constant(Array({6}, 1.0)), g.constant(Array({6}, 0.0))).array();
  for (std::size_t i = 0; i < 3; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 6; ++j) m += y(i, j) / 6;
    for (std::size_t j = 0; j < 6; ++j) v += (y(i, j) - m) * (y(i, j) - m) / 6;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("encoder stack gradient check") {
  ModelConfig c = micro_config();
  ModelParams p = micro_params(c, 8);
  std::mt19937_64 rng(6);
  EncodedExample ex = random_example(rng, 20, 8, 0, Language::L1, 5);
  std::mt19937_64 wr(7);
  Array w = random_array({ex.length(), c.encoder.dim}, wr);
  auto r = check_param_gradients(p, [&](const ParamTensors& t) {
    Tensor h = encode_sequence(ex, t, c.encoder).hidden;
    return sum(mul(h, t.at(0).graph().constant(w)));
  });
  INFO(r.worst);
  CHECK(r.max_rel <= 1e-4);
}

TEST_CASE("config validation") {
  EncoderConfig e;
  CHECK_NOTHROW(e.validate());
  e.heads = 3;
  CHECK_THROWS_AS(e.validate(), ValidationError);
  e.heads = 4;
  e.dropout = 1.0;
  CHECK_THROWS_AS(e.validate(), ValidationError);
}
