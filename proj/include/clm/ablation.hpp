#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clm/eval.hpp"
#include "clm/meta.hpp"
#include "clm/trainer.hpp"

namespace clm {

struct AblationRow {
  Variant variant = Variant::V1;
  std::optional<EvalReport> report;        // zero-shot on the held-out language
  std::optional<double> delta_f1;          // vs the previous variant; absent for V1
  std::vector<Provenance> provenance;      // labelled languages per phase
  std::string error;                       // set when training failed
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::uint64_t split_hash = 0;
  Language held_out = Language::L3;

  // variant,accuracy,precision,recall,f1,delta_f1
  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

struct AblationInput {
  TrainData data;
  std::vector<EncodedTriplet> test;
  std::uint64_t split_hash = 0;
  ModelConfig model;
  TrainConfig train;
  MetaConfig meta;
  std::uint64_t init_seed = 0;
  Language held_out = Language::L3;
};

// Trains V1..V4 from the same initial parameters and seeds and evaluates
// each on the held-out language of the test split. V2-V4 share their common
// phase prefix, which gives the same parameters as separate runs because
// every phase draws its randomness from its own named stream and starts a
// fresh optimizer.
AblationResult ablation_suite(const AblationInput& input);

}  // namespace clm
