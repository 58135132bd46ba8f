#include "clm/model.hpp"

#include <random>
#include <string_view>

#include "clm/error.hpp"
#include "clm/seed.hpp"

namespace clm {

void EncoderConfig::validate() const {
  if (heads == 0 || dim % heads != 0) {
    throw ValidationError("encoder: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("encoder: dropout must lie in [0, 1)");
  if (max_len < 3) throw ValidationError("encoder: max_len must be at least 3");
  if (vocab_size < 5) throw ValidationError("encoder: vocab_size too small");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"dim", c.dim},       {"layers", c.layers},
       {"heads", c.heads},           {"ff_dim", c.ff_dim},   {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.dropout = j.value("dropout", c.dropout);
}

void to_json(nlohmann::json& j, const HeadsConfig& c) {
  j = {{"num_classes", c.num_classes},
       {"pool_dim", c.pool_dim},
       {"proj_hidden", c.proj_hidden},
       {"proj_dim", c.proj_dim}};
}

void from_json(const nlohmann::json& j, HeadsConfig& c) {
  c.num_classes = j.value("num_classes", c.num_classes);
  c.pool_dim = j.value("pool_dim", c.pool_dim);
  c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"heads", c.heads}, {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("encoder")) c.encoder = j["encoder"].get<EncoderConfig>();
  if (j.contains("heads")) c.heads = j["heads"].get<HeadsConfig>();
  c.init_std = j.value("init_std", c.init_std);
}

ModelParams::ModelParams(const ModelParams& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ModelParams& ModelParams::operator=(const ModelParams& other) {
  if (this != &other) {
    ModelParams copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ModelParams::add(std::string name, Array value) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

std::size_t ModelParams::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown parameter " + name);
  return it->second;
}

Parameter& ModelParams::get(const std::string& name) { return *params_[index(name)]; }
const Parameter& ModelParams::get(const std::string& name) const { return *params_[index(name)]; }

std::vector<Parameter*> ModelParams::select(const std::function<bool(const std::string&)>& pred) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (pred(p->name)) out.push_back(p.get());
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& p : params_) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  return out;
}

void ModelParams::unflatten(std::span<const double> flat) {
  if (flat.size() != count()) {
    throw DimensionError("unflatten: " + std::to_string(flat.size()) + " values for " + std::to_string(count()) +
                         " parameters");
  }
  std::size_t pos = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + pos, p->value.size(), p->value.data.begin());
    pos += p->value.size();
  }
}

void ModelParams::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

bool ModelParams::values_equal(const ModelParams& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->name != other.params_[i]->name || !(params_[i]->value == other.params_[i]->value)) return false;
  }
  return true;
}

bool is_encoder_param(const std::string& name) { return name.rfind("encoder.", 0) == 0; }
bool is_pool_param(const std::string& name) { return name.rfind("pool.", 0) == 0; }
bool is_classifier_param(const std::string& name) { return name.rfind("classifier.", 0) == 0; }
bool is_projection_param(const std::string& name) { return name.rfind("projection.", 0) == 0; }

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  const auto& e = config.encoder;
  const auto& h = config.heads;
  e.validate();
  Rng rng(sub_seed(seed, "init"));
  std::normal_distribution<double> normal(0.0, config.init_std);
  auto randn = [&](Shape s) {
    Array a(std::move(s));
    for (double& v : a.data) v = normal(rng);
    return a;
  };
  auto zeros = [](Shape s) { return Array(std::move(s), 0.0); };
  auto ones = [](Shape s) { return Array(std::move(s), 1.0); };

  ModelParams p;
  p.add("encoder.token_embedding", randn({e.vocab_size, e.dim}));
  p.add("encoder.position_embedding", randn({e.max_len, e.dim}));
  for (std::size_t l = 0; l < e.layers; ++l) {
    const std::string pre = "encoder.layer" + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      p.add(pre + "attn." + w, randn({e.dim, e.dim}));
      // A key bias shifts every score in a softmax row equally, so it would
      // never receive gradient.
      if (std::string_view(w) != "wk") p.add(pre + "attn.b" + std::string(w).substr(1), zeros({e.dim}));
    }
    p.add(pre + "ln1.gamma", ones({e.dim}));
    p.add(pre + "ln1.beta", zeros({e.dim}));
    p.add(pre + "ff.w1", randn({e.ff_dim, e.dim}));
    p.add(pre + "ff.b1", zeros({e.ff_dim}));
    p.add(pre + "ff.w2", randn({e.dim, e.ff_dim}));
    p.add(pre + "ff.b2", zeros({e.dim}));
    p.add(pre + "ln2.gamma", ones({e.dim}));
    p.add(pre + "ln2.beta", zeros({e.dim}));
  }
  p.add("pool.w", randn({h.pool_dim, e.dim}));
  p.add("pool.b", zeros({h.pool_dim}));
  p.add("pool.v", randn({h.pool_dim}));
  p.add("classifier.w", randn({h.num_classes, e.dim}));
  p.add("classifier.b", zeros({h.num_classes}));
  p.add("projection.w1", randn({h.proj_hidden, e.dim}));
  p.add("projection.b1", zeros({h.proj_hidden}));
  p.add("projection.w2", randn({h.proj_dim, h.proj_hidden}));
  p.add("projection.b2", zeros({h.proj_dim}));
  return p;
}

ParamTensors bind(Graph& g, ModelParams& params, const std::function<bool(const std::string&)>& trainable) {
  std::vector<Tensor> t;
  t.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    if (!trainable || trainable(p.name)) {
      t.push_back(g.param(p));
    } else {
      t.push_back(g.constant(p.value));
    }
  }
  return ParamTensors(&params, std::move(t));
}

ParamTensors bind_constants(Graph& g, const ModelParams& params) {
  std::vector<Tensor> t;
  t.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) t.push_back(g.constant(params.at(i).value));
  return ParamTensors(&params, std::move(t));
}

ParamTensors bind_variables(Graph& g, const ModelParams& params) {
  std::vector<Tensor> t;
  t.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) t.push_back(g.variable(params.at(i).value));
  return ParamTensors(&params, std::move(t));
}

}  // namespace clm
