#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clm/corpus.hpp"
#include "clm/model.hpp"
#include "clm/tensor.hpp"

namespace clm {

enum class Mode { Train, Eval };

struct EncoderOutput {
  Tensor hidden;                   // [n, d]
  Tensor cls;                      // [d], row 0 of hidden
  std::vector<std::uint8_t> mask;  // n entries
};

// token_embedding[id] + position_embedding[pos] for each row.
Tensor embed(const ParamTensors& params, std::span<const std::size_t> ids,
             std::span<const std::size_t> positions);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Inverted dropout; identity when rate is 0.
Tensor dropout(const Tensor& x, double rate, std::uint64_t seed);

struct EncodeOptions {
  Mode mode = Mode::Eval;
  std::uint64_t dropout_seed = 0;
  // Run only the real-token prefix. Unmasked outputs are identical either
  // way; trimming just skips work on padding.
  bool trim_padding = true;
  // When set, receives each layer's per-head attention matrices.
  std::vector<Tensor>* attention = nullptr;
};

// Post-LN transformer blocks: masked multi-head self-attention, add & norm,
// ReLU feed-forward, add & norm.
EncoderOutput encode_sequence(const EncodedExample& example, const ParamTensors& params,
                              const EncoderConfig& config, const EncodeOptions& options = {});

}  // namespace clm
