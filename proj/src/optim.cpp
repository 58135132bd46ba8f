#include "clm/optim.hpp"

#include <algorithm>
#include <cmath>

namespace clm {

AdamW::Moments& AdamW::moments_for(const Parameter& p) {
  for (auto& m : moments_)
    if (m.name == p.name) return m;
  moments_.push_back({p.name, std::vector<double>(p.value.size(), 0.0),
                      std::vector<double>(p.value.size(), 0.0)});
  return moments_.back();
}

void AdamW::step(std::span<Parameter* const> params, double lr) {
  for (const Parameter* p : params) {
    if (!p->touched) continue;
    if (p->grad.shape != p->value.shape) {
      throw DimensionError("adamw: gradient of " + p->name + " has shape " + shape_str(p->grad.shape) +
                           ", parameter has " + shape_str(p->value.shape));
    }
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      if (!std::isfinite(p->grad.data[i])) {
        throw NumericError("adamw: non-finite gradient in parameter '" + p->name + "' at element " +
                           std::to_string(i));
      }
    }
  }
  ++step_;
  const auto& s = settings_;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step_));
  for (Parameter* p : params) {
    if (!p->touched) continue;
    Moments& m = moments_for(*p);
    auto& v = p->value.data;
    const auto& g = p->grad.data;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] -= lr * s.weight_decay * v[i];
      m.first[i] = s.beta1 * m.first[i] + (1.0 - s.beta1) * g[i];
      m.second[i] = s.beta2 * m.second[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mhat = m.first[i] / bc1;
      const double vhat = m.second[i] / bc2;
      v[i] -= lr * mhat / (std::sqrt(vhat) + s.epsilon);
    }
  }
}

void AdamW::restore(std::int64_t step, std::vector<Moments> moments) {
  step_ = step;
  moments_ = std::move(moments);
}

LrSchedule::LrSchedule(double base, std::int64_t warmup, std::int64_t total)
    : base_lr(base), warmup_steps(warmup), total_steps(total) {
  if (warmup < 0) throw ValidationError("lr schedule: warmup steps must be >= 0");
  if (total <= warmup) throw ValidationError("lr schedule: total steps must exceed warmup steps");
}

double LrSchedule::at(std::int64_t step) const {
  if (step < 0 || step > total_steps) {
    throw RangeError("lr schedule: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  }
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    if (p->touched)
      for (double g : p->grad.data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params)
      if (p->touched)
        for (double& g : p->grad.data) g *= f;
  }
  return norm;
}

}  // namespace clm
