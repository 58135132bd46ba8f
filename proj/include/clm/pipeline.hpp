#pragma once

// Run configuration, checkpoints and the variant driver used by the CLI.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "clm/corpus.hpp"
#include "clm/meta.hpp"
#include "clm/model.hpp"
#include "clm/trainer.hpp"
#include "json.hpp"

namespace clm {

struct CorpusSource {
  std::string csv_path;  // empty: synthetic
  CsvColumns columns;
  SyntheticSpec synthetic;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "run";
  CorpusSource corpus;
  std::size_t min_count = 1;
  SplitSpec split;
  ModelConfig model;
  TrainConfig train;
  MetaConfig meta;

  // Pushes the root seed into every module that takes one.
  void apply_seed(std::uint64_t root);
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

std::uint64_t init_seed(std::uint64_t root);

// Writes `j` as pretty JSON with a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

// ---- checkpoints -----------------------------------------------------------
//
// <stem>.json holds the manifest, <stem>.bin every parameter as little-endian
// 64-bit floats in manifest order, and <stem>.state.bin (when training state
// is saved) the optimizer moments followed by the early-stopping snapshot.

struct CheckpointInfo {
  RunConfig config;
  std::uint64_t vocab_hash = 0;
  std::uint64_t split_hash = 0;
  std::vector<int> phases_done;  // completed phases
  std::vector<Provenance> provenance;
  std::optional<PhaseState> state;  // in-progress or just-finished phase
};

void save_checkpoint(const std::filesystem::path& stem, const ModelParams& params, const CheckpointInfo& info);

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointInfo info;
};

// `stem` may name the manifest (.json) or omit the extension.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem);

void write_f64_le(std::ostream& out, std::span<const double> values);
std::vector<double> read_f64_le(std::istream& in, std::size_t count);

// ---- variant driver --------------------------------------------------------

struct PreparedData {
  TrainData data;
  std::vector<EncodedTriplet> test;
};

PreparedData prepare_data(const Corpus& corpus, const Split& split, const Vocab& vocab, std::size_t max_len);

// Model dimensions that depend on the data.
ModelConfig resolve_model(const ModelConfig& base, const Vocab& vocab, const Corpus& corpus);

struct TrainHooks {
  std::function<void(const PhaseState&, const ModelParams&)> on_epoch;
  std::function<void(const PhaseReport&, const ModelParams&)> on_phase;
  std::function<void(const MetaStepLog&)> on_meta_step;
};

struct ResumePoint {
  std::vector<int> phases_done;
  std::optional<PhaseState> state;
};

// Runs the phases of `config.train.variant` that are not yet done.
std::vector<PhaseReport> run_variant(ModelParams& params, const TrainData& data, const ModelConfig& model,
                                     const TrainConfig& train, const MetaConfig& meta, const TrainHooks& hooks = {},
                                     const ResumePoint* resume = nullptr);

}  // namespace clm
