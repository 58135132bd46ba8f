#include "clm/heads.hpp"

#include <cmath>

namespace clm {

PooledOutput attention_pool(const Tensor& hidden, std::span<const std::uint8_t> mask, const Tensor& w,
                            const Tensor& b, const Tensor& v) {
  if (hidden.rank() != 2) throw DimensionError("attention_pool: hidden must be [n, d], got " + shape_str(hidden.shape()));
  const std::size_t n = hidden.shape()[0], d = hidden.shape()[1];
  if (w.rank() != 2 || w.shape()[1] != d || b.shape() != Shape{w.shape()[0]} || v.shape() != Shape{w.shape()[0]}) {
    throw DimensionError("attention_pool: parameter shapes " + shape_str(w.shape()) + ", " + shape_str(b.shape()) +
                         ", " + shape_str(v.shape()) + " do not fit hidden " + shape_str(hidden.shape()));
  }
  if (!mask.empty() && mask.size() != n) throw DimensionError("attention_pool: mask length differs from sequence");
  Tensor scored = tanh(add_row(matmul(hidden, transpose(w)), b));  // [n, d']
  Tensor e = reshape(matmul(scored, reshape(v, {v.size(), 1})), {n});
  PooledOutput out;
  out.attn = softmax(e, mask);
  out.pooled = reshape(matmul(reshape(out.attn, {1, n}), hidden), {d});
  return out;
}

PooledOutput attention_pool(const Tensor& hidden, std::span<const std::uint8_t> mask, const ParamTensors& params) {
  return attention_pool(hidden, mask, params["pool.w"], params["pool.b"], params["pool.v"]);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1) throw DimensionError("affine: expected a vector, got " + shape_str(x.shape()));
  Tensor y = matmul(reshape(x, {1, x.size()}), transpose(w));
  return add(reshape(y, {y.size()}), b);
}

Tensor classify(const Tensor& pooled, const Tensor& w, const Tensor& b) { return softmax(affine(pooled, w, b)); }

Tensor classify(const Tensor& pooled, const ParamTensors& params) {
  return classify(pooled, params["classifier.w"], params["classifier.b"]);
}

Tensor cross_entropy(const Tensor& probs, std::size_t label) {
  if (probs.rank() != 1) throw DimensionError("cross_entropy: expected a probability vector");
  if (label >= probs.size()) {
    throw RangeError("cross_entropy: label " + std::to_string(label) + " outside " + std::to_string(probs.size()) +
                     " classes");
  }
  return neg(log(clamp_min(pick(probs, label), kProbabilityFloor)));
}

Tensor project(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
               Activation act) {
  if (x.rank() == 1) {
    Tensor h = affine(x, w1, b1);
    if (act == Activation::Relu) h = relu(h);
    return affine(h, w2, b2);
  }
  Tensor h = add_row(matmul(x, transpose(w1)), b1);
  if (act == Activation::Relu) h = relu(h);
  return add_row(matmul(h, transpose(w2)), b2);
}

Tensor project(const Tensor& x, const ParamTensors& params) {
  return project(x, params["projection.w1"], params["projection.b1"], params["projection.w2"],
                 params["projection.b2"]);
}

Tensor nt_xent(const Tensor& view_a, const Tensor& view_b, double tau) {
  if (view_a.rank() != 2 || view_a.shape() != view_b.shape()) {
    throw DimensionError("nt_xent: views must share shape [N, p], got " + shape_str(view_a.shape()) + " and " +
                         shape_str(view_b.shape()));
  }
  const std::size_t n = view_a.shape()[0];
  if (n < 2) throw InvalidInput("nt_xent: need at least 2 positive pairs, got " + std::to_string(n));
  if (!(tau > 0.0)) throw InvalidInput("nt_xent: temperature must be positive");
  const std::array<Tensor, 2> views{view_a, view_b};
  Tensor z = concat_rows(views);  // [2N, p]
  const std::size_t m = 2 * n, p = z.shape()[1];
  Tensor sq = row_sum(mul(z, z));
  for (double s : sq.values()) {
    if (s == 0.0) throw ContractViolation("nt_xent: cosine similarity of a zero-norm projection");
  }
  Tensor unit = mul(z, broadcast_cols(reciprocal(sqrt(sq)), p));
  Tensor logits = scale(matmul(unit, transpose(unit)), 1.0 / tau);  // [2N, 2N]
  std::vector<std::uint8_t> off_diag(m * m, 1);
  for (std::size_t i = 0; i < m; ++i) off_diag[i * m + i] = 0;
  Tensor logp = log_softmax(logits, off_diag);
  Tensor total;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = (i + n) % m;
    Tensor term = pick(logp, i * m + j);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, -1.0 / static_cast<double>(m));
}

Tensor translation_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("translation_mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor diff = sub(a, b);
  return sum(mul(diff, diff));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ContractViolation("cosine_similarity: zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

SentenceOutput encode_sentence(const EncodedExample& example, const ParamTensors& params,
                               const EncoderConfig& config, const EncodeOptions& options) {
  SentenceOutput out;
  out.encoded = encode_sequence(example, params, config, options);
  out.pooled = attention_pool(out.encoded.hidden, out.encoded.mask, params);
  return out;
}

FrozenModel::FrozenModel(const ModelParams& params, const ModelConfig& config) : config_(config) {
  Graph::NoGradGuard guard(graph_);
  tensors_ = bind_constants(graph_, params);
  mark_ = graph_.size();
}

namespace {

std::vector<double> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

std::vector<double> FrozenModel::probabilities(const EncodedExample& ex) {
  Graph::NoGradGuard guard(graph_);
  auto out = encode_sentence(ex, tensors_, config_.encoder);
  auto probs = copy_values(classify(out.pooled.pooled, tensors_));
  graph_.truncate(mark_);
  return probs;
}

std::vector<double> FrozenModel::pooled(const EncodedExample& ex) {
  Graph::NoGradGuard guard(graph_);
  auto v = copy_values(encode_sentence(ex, tensors_, config_.encoder).pooled.pooled);
  graph_.truncate(mark_);
  return v;
}

std::vector<double> FrozenModel::projection(const EncodedExample& ex) {
  Graph::NoGradGuard guard(graph_);
  auto out = encode_sentence(ex, tensors_, config_.encoder);
  auto v = copy_values(project(out.pooled.pooled, tensors_));
  graph_.truncate(mark_);
  return v;
}

}  // namespace clm
