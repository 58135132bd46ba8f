#pragma once

#include <cstdint>
#include <span>

#include "clm/encoder.hpp"
#include "clm/model.hpp"
#include "clm/tensor.hpp"

namespace clm {

inline constexpr double kProbabilityFloor = 1e-12;

struct PooledOutput {
  Tensor attn;    // [n], zero at masked positions
  Tensor pooled;  // [d]
};

// e_i = v . tanh(W h_i + b); alpha = masked softmax(e); pooled = sum alpha_i h_i.
PooledOutput attention_pool(const Tensor& hidden, std::span<const std::uint8_t> mask, const Tensor& w,
                            const Tensor& b, const Tensor& v);
PooledOutput attention_pool(const Tensor& hidden, std::span<const std::uint8_t> mask, const ParamTensors& params);

// W x + b for a rank-1 x.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// softmax(W_c pooled + b_c).
Tensor classify(const Tensor& pooled, const Tensor& w, const Tensor& b);
Tensor classify(const Tensor& pooled, const ParamTensors& params);

// -log(max(probs[label], floor)).
Tensor cross_entropy(const Tensor& probs, std::size_t label);

enum class Activation { Relu, Identity };

// affine -> activation -> affine. Accepts a vector [d] or a batch [B, d].
Tensor project(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
               Activation act = Activation::Relu);
Tensor project(const Tensor& x, const ParamTensors& params);

// NT-Xent over 2N anchors: row i of `view_a` and row i of `view_b` form a
// positive pair, every other row is a negative. Cosine similarity, mean over
// anchors.
Tensor nt_xent(const Tensor& view_a, const Tensor& view_b, double tau);

// Squared L2 distance, summed over components.
Tensor translation_mse(const Tensor& a, const Tensor& b);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Encoder + attention pooling for one sentence.
struct SentenceOutput {
  EncoderOutput encoded;
  PooledOutput pooled;
};

SentenceOutput encode_sentence(const EncodedExample& example, const ParamTensors& params,
                               const EncoderConfig& config, const EncodeOptions& options = {});

// Eval-mode forward passes over a fixed parameter snapshot. Parameters are
// copied onto the graph once; per-sentence nodes are dropped after each call.
class FrozenModel {
 public:
  FrozenModel(const ModelParams& params, const ModelConfig& config);

  std::vector<double> probabilities(const EncodedExample& ex);
  std::vector<double> pooled(const EncodedExample& ex);
  std::vector<double> projection(const EncodedExample& ex);

 private:
  Graph graph_;
  ParamTensors tensors_;
  ModelConfig config_;
  std::size_t mark_ = 0;
};

}  // namespace clm
