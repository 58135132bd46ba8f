#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clm/tensor.hpp"

namespace clm {

struct AdamWSettings {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Decoupled-weight-decay Adam. Moments are keyed by parameter name so a
// state can be saved and restored independently of pointer identity.
class AdamW {
 public:
  explicit AdamW(AdamWSettings settings = {}) : settings_(settings) {}

  // Applies one update to every parameter whose grad was touched by a
  // backward pass; untouched parameters are left exactly as they are.
  // A non-finite gradient aborts the whole step before anything changes.
  void step(std::span<Parameter* const> params, double lr);

  std::int64_t step_count() const { return step_; }
  const AdamWSettings& settings() const { return settings_; }

  struct Moments {
    std::string name;
    std::vector<double> first;
    std::vector<double> second;
  };
  const std::vector<Moments>& moments() const { return moments_; }
  void restore(std::int64_t step, std::vector<Moments> moments);

 private:
  Moments& moments_for(const Parameter& p);

  AdamWSettings settings_;
  std::int64_t step_ = 0;
  std::vector<Moments> moments_;
};

// Linear warm-up from 0 to base_lr, then linear decay to 0 at total_steps.
struct LrSchedule {
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  LrSchedule(double base, std::int64_t warmup, std::int64_t total);
  double at(std::int64_t step) const;
};

// Scales all touched gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace clm
