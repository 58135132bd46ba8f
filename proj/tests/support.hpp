#pragma once

// Shared oracles for the unit and acceptance tests: finite differences,
// a brute-force NT-Xent and small hand-built inputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "clm/corpus.hpp"
#include "clm/model.hpp"
#include "clm/pipeline.hpp"
#include "clm/tensor.hpp"

namespace clm::testing {

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7});
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline void note(GradCheck& r, double a, double n, const std::string& where) {
  double e = rel_error(a, n);
  ++r.checked;
  if (e > r.max_rel || r.worst.empty()) {
    r.max_rel = std::max(e, r.max_rel);
    r.worst = where + " analytic " + std::to_string(a) + " numeric " + std::to_string(n);
  }
}

using LeafFn = std::function<Tensor(Graph&, std::span<const Tensor>)>;

// Central differences of a scalar function of plain leaves against
// Graph::gradients.
inline GradCheck check_leaf_gradients(const LeafFn& f, const std::vector<Array>& inputs, double h = 1e-5) {
  std::vector<Array> grads;
  {
    Graph g;
    std::vector<Tensor> leaves;
    for (const Array& a : inputs) leaves.push_back(g.variable(a));
    Tensor root = f(g, leaves);
    for (const Tensor& t : g.gradients(root, leaves, false)) {
      grads.push_back(t.valid() ? t.array() : Array());
    }
  }
  auto eval = [&](const std::vector<Array>& xs) {
    Graph g;
    Graph::NoGradGuard ng(g);
    std::vector<Tensor> leaves;
    for (const Array& a : xs) leaves.push_back(g.constant(a));
    return f(g, leaves).item();
  };
  GradCheck r;
  std::vector<Array> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      double orig = xs[k].data[i];
      xs[k].data[i] = orig + h;
      double up = eval(xs);
      xs[k].data[i] = orig - h;
      double down = eval(xs);
      xs[k].data[i] = orig;
      double numeric = (up - down) / (2 * h);
      double analytic = grads[k].data.empty() ? 0.0 : grads[k].data[i];
      note(r, analytic, numeric, "input " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  return r;
}

using ParamLossFn = std::function<Tensor(const ParamTensors&)>;

// Backward into the parameter buffers against central differences over
// every scalar of every parameter.
inline GradCheck check_param_gradients(ModelParams& params, const ParamLossFn& loss, double h = 1e-5) {
  params.zero_grad();
  {
    Graph g;
    ParamTensors t = bind(g, params);
    g.backward(loss(t));
  }
  std::vector<Array> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params.at(i).grad);

  auto eval = [&] {
    Graph g;
    Graph::NoGradGuard ng(g);
    return loss(bind_constants(g, params)).item();
  };
  GradCheck r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      double orig = p.value.data[k];
      p.value.data[k] = orig + h;
      double up = eval();
      p.value.data[k] = orig - h;
      double down = eval();
      p.value.data[k] = orig;
      note(r, analytic[i].data[k], (up - down) / (2 * h), p.name + "[" + std::to_string(k) + "]");
    }
  }
  params.zero_grad();
  return r;
}

// NT-Xent written out term by term, independent of the tensor library.
inline double brute_nt_xent(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                            double tau) {
  std::vector<std::vector<double>> z = a;
  z.insert(z.end(), b.begin(), b.end());
  std::size_t n = a.size();
  auto cosine = [](const std::vector<double>& x, const std::vector<double>& y) {
    double dot = 0, nx = 0, ny = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      dot += x[i] * y[i];
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    return dot / (std::sqrt(nx) * std::sqrt(ny));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    std::size_t j = i < n ? i + n : i - n;
    double denom = 0.0;
    for (std::size_t k = 0; k < 2 * n; ++k) {
      if (k != i) denom += std::exp(cosine(z[i], z[k]) / tau);
    }
    total += -std::log(std::exp(cosine(z[i], z[j]) / tau) / denom);
  }
  return total / static_cast<double>(2 * n);
}

inline Array random_array(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Array a(std::move(shape));
  for (double& x : a.data) x = nd(rng);
  return a;
}

// Micro configuration small enough for exhaustive finite differences.
inline ModelConfig micro_config(std::size_t classes = 3) {
  ModelConfig c;
  c.encoder.vocab_size = 20;
  c.encoder.max_len = 8;
  c.encoder.dim = 8;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.ff_dim = 16;
  c.encoder.dropout = 0.0;
  c.heads.num_classes = classes;
  c.heads.pool_dim = 4;
  c.heads.proj_hidden = 8;
  c.heads.proj_dim = 4;
  c.init_std = 0.5;
  return c;
}

// Biases start at zero; randomize everything so no gradient is trivially 0.
inline ModelParams micro_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = init_model(c, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Parameter& q = p.at(i);
    bool is_gamma = q.name.find("gamma") != std::string::npos;
    for (double& x : q.value.data) x = is_gamma ? 1.0 + nd(rng) : (x == 0.0 ? nd(rng) : x);
  }
  return p;
}

inline EncodedExample random_example(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len,
                                     std::size_t label, Language lang, std::size_t min_len = 3) {
  std::uniform_int_distribution<std::size_t> len_d(min_len, max_len);
  std::uniform_int_distribution<std::size_t> tok(Vocab::kReserved, vocab - 1);
  std::size_t len = len_d(rng);
  EncodedExample ex;
  ex.ids.assign(max_len, Vocab::kPad);
  ex.mask.assign(max_len, 0);
  for (std::size_t i = 0; i < len; ++i) {
    ex.ids[i] = i == 0 ? Vocab::kCls : (i + 1 == len ? Vocab::kSep : tok(rng));
    ex.mask[i] = 1;
  }
  ex.label = label;
  ex.language = lang;
  return ex;
}

inline std::vector<EncodedTriplet> random_triplets(std::size_t n, const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedTriplet t;
    t.label = i % c.heads.num_classes;
    t.id = i;
    for (Language l : kLanguages) {
      t.views[static_cast<std::size_t>(l)] =
          random_example(rng, c.encoder.vocab_size, c.encoder.max_len, t.label, l);
      t.views[static_cast<std::size_t>(l)].triplet_id = i;
    }
    out.push_back(t);
  }
  return out;
}

inline std::vector<const EncodedTriplet*> pointers(const std::vector<EncodedTriplet>& v) {
  std::vector<const EncodedTriplet*> out;
  for (const EncodedTriplet& t : v) out.push_back(&t);
  return out;
}

// Synthetic corpus, vocab, split and a small encoder sized to it.
struct Setup {
  SyntheticCorpus synthetic;
  Vocab vocab;
  Split split;
  PreparedData prepared;
  ModelConfig model;
};

inline Setup small_setup(std::size_t classes = 6, std::size_t per_class = 20, std::uint64_t seed = 7) {
  Setup s;
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.samples_per_class = per_class;
  spec.seed = seed;
  s.synthetic = generate_synthetic_corpus(spec);
  s.vocab = Vocab::build(s.synthetic.corpus);
  SplitSpec split;
  split.seed = seed;
  s.split = split_corpus(s.synthetic.corpus, split);
  ModelConfig base;
  base.encoder.dim = 16;
  base.encoder.layers = 1;
  base.encoder.heads = 2;
  base.encoder.ff_dim = 32;
  base.heads.pool_dim = 8;
  base.heads.proj_hidden = 16;
  base.heads.proj_dim = 8;
  s.model = resolve_model(base, s.vocab, s.synthetic.corpus);
  s.prepared = prepare_data(s.synthetic.corpus, s.split, s.vocab, s.model.encoder.max_len);
  return s;
}

}  // namespace clm::testing
