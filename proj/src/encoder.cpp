#include "clm/encoder.hpp"

#include <cmath>
#include <random>

#include "clm/seed.hpp"

namespace clm {

Tensor embed(const ParamTensors& params, std::span<const std::size_t> ids,
             std::span<const std::size_t> positions) {
  if (ids.size() != positions.size()) {
    throw DimensionError("embed: " + std::to_string(ids.size()) + " ids but " + std::to_string(positions.size()) +
                         " positions");
  }
  return add(gather_rows(params["encoder.token_embedding"], ids),
             gather_rows(params["encoder.position_embedding"], positions));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor mu = scale(row_sum(x), inv_n);
  Tensor centered = sub(x, broadcast_cols(mu, n));
  Tensor var = scale(row_sum(mul(centered, centered)), inv_n);
  Tensor inv_std = reciprocal(sqrt(add_scalar(var, eps)));
  Tensor normed = mul(centered, broadcast_cols(inv_std, n));
  return add_row(mul(normed, broadcast_rows(gamma, m)), beta);
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t seed) {
  if (rate <= 0.0) return x;
  Rng rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Array m(x.shape());
  for (double& v : m.data) v = keep(rng) ? s : 0.0;
  return mul(x, x.graph().constant(std::move(m)));
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row(matmul(x, transpose(w)), b);
}

}  // namespace

EncoderOutput encode_sequence(const EncodedExample& example, const ParamTensors& params,
                              const EncoderConfig& config, const EncodeOptions& options) {
  if (example.ids.size() != example.mask.size()) throw DimensionError("encode_sequence: ids/mask length mismatch");
  if (example.ids.size() > config.max_len) {
    throw DimensionError("encode_sequence: sequence of " + std::to_string(example.ids.size()) +
                         " exceeds max_len " + std::to_string(config.max_len));
  }
  std::size_t n = example.ids.size();
  if (options.trim_padding) {
    std::size_t real = 0;
    while (real < n && example.mask[real]) ++real;
    bool prefix = true;
    for (std::size_t i = real; i < n; ++i) prefix = prefix && !example.mask[i];
    if (prefix && real > 0) n = real;
  }
  std::vector<std::size_t> ids(example.ids.begin(), example.ids.begin() + n);
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  std::vector<std::uint8_t> mask(example.mask.begin(), example.mask.begin() + n);

  const bool train = options.mode == Mode::Train && config.dropout > 0.0;
  std::uint64_t drop_counter = 0;
  auto drop = [&](const Tensor& t) {
    return train ? dropout(t, config.dropout, sub_seed(options.dropout_seed, "dropout", drop_counter++)) : t;
  };

  Tensor x = drop(embed(params, ids, positions));
  const std::size_t heads = config.heads, dh = config.dim / config.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = "encoder.layer" + std::to_string(l) + ".";
    Tensor q = linear(x, params[pre + "attn.wq"], params[pre + "attn.bq"]);
    Tensor k = matmul(x, transpose(params[pre + "attn.wk"]));
    Tensor v = linear(x, params[pre + "attn.wv"], params[pre + "attn.bv"]);
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
      if (options.attention) options.attention->push_back(weights);
      head_out.push_back(matmul(weights, vh));
    }
    Tensor attn = drop(linear(concat_cols(head_out), params[pre + "attn.wo"], params[pre + "attn.bo"]));
    x = layer_norm(add(x, attn), params[pre + "ln1.gamma"], params[pre + "ln1.beta"]);
    Tensor ff = linear(relu(linear(x, params[pre + "ff.w1"], params[pre + "ff.b1"])), params[pre + "ff.w2"],
                       params[pre + "ff.b2"]);
    x = layer_norm(add(x, drop(ff)), params[pre + "ln2.gamma"], params[pre + "ln2.beta"]);
  }
  EncoderOutput out;
  out.hidden = x;
  out.cls = row(x, 0);
  out.mask = std::move(mask);
  return out;
}

}  // namespace clm
