#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "clm/tensor.hpp"
#include "json.hpp"

namespace clm {

struct EncoderConfig {
  std::size_t vocab_size = 500;
  std::size_t max_len = 32;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  double dropout = 0.1;

  void validate() const;
};

struct HeadsConfig {
  std::size_t num_classes = 24;
  std::size_t pool_dim = 32;        // d' of the attention scorer
  std::size_t proj_hidden = 64;
  std::size_t proj_dim = 32;
};

struct ModelConfig {
  EncoderConfig encoder;
  HeadsConfig heads;
  double init_std = 0.02;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const HeadsConfig& c);
void from_json(const nlohmann::json& j, HeadsConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Ordered, name-addressable collection of every learnable tensor. Order is
// fixed at construction and defines the flat layout used by checkpoints.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(const ModelParams& other);
  ModelParams& operator=(const ModelParams& other);
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;

  Parameter& add(std::string name, Array value);

  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> select(const std::function<bool(const std::string&)>& pred);
  std::vector<Parameter*> all() { return select([](const std::string&) { return true; }); }

  std::size_t count() const;  // total scalar parameters
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  void zero_grad();

  bool values_equal(const ModelParams& other) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Name predicates for phase gating.
bool is_encoder_param(const std::string& name);
bool is_pool_param(const std::string& name);
bool is_classifier_param(const std::string& name);
bool is_projection_param(const std::string& name);

// Parameters materialized on a graph, aligned with a ModelParams layout.
// Adapted copies (MAML) share the layout but hold different tensors.
class ParamTensors {
 public:
  ParamTensors() = default;
  ParamTensors(const ModelParams* layout, std::vector<Tensor> tensors)
      : layout_(layout), tensors_(std::move(tensors)) {}

  const Tensor& operator[](const std::string& name) const { return tensors_[layout_->index(name)]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  std::size_t size() const { return tensors_.size(); }
  const ModelParams& layout() const { return *layout_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

 private:
  const ModelParams* layout_ = nullptr;
  std::vector<Tensor> tensors_;
};

// Parameters for which `trainable` holds become differentiable leaves; the
// rest enter the graph as constants and never receive gradients.
ParamTensors bind(Graph& g, ModelParams& params,
                  const std::function<bool(const std::string&)>& trainable = nullptr);
ParamTensors bind_constants(Graph& g, const ModelParams& params);
// Differentiable leaves not tied to the parameters' grad buffers; use with
// Graph::gradients.
ParamTensors bind_variables(Graph& g, const ModelParams& params);

}  // namespace clm
