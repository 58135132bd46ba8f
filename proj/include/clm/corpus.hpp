#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace clm {

// L1 is the pivot language carrying labels during training; L2 and L3 are the
// surrogate languages (column names follow the original hindi/bengali layout).
enum class Language : std::uint8_t { L1 = 0, L2 = 1, L3 = 2 };
inline constexpr std::array<Language, 3> kLanguages{Language::L1, Language::L2, Language::L3};

std::string language_name(Language lang);
Language parse_language(const std::string& name);

struct ExampleTriplet {
  std::array<std::string, 3> texts;  // indexed by Language
  std::size_t label = 0;
  std::size_t id = 0;

  const std::string& text(Language lang) const { return texts[static_cast<std::size_t>(lang)]; }
};

struct Corpus {
  std::vector<ExampleTriplet> examples;
  std::vector<std::string> label_names;  // index == label

  std::size_t num_classes() const { return label_names.size(); }
};

// Word-level translation table from L1 surface forms.
using Lexicon = std::map<std::string, std::string>;

struct SyntheticCorpus {
  Corpus corpus;
  Lexicon to_l2;
  Lexicon to_l3;
  std::vector<std::vector<std::string>> class_words;  // L1 symptom words per class
  std::vector<std::string> filler_words;              // L1 words shared by all classes
};

struct SyntheticSpec {
  std::size_t num_classes = 24;
  std::size_t samples_per_class = 50;
  std::size_t words_per_class = 5;
  std::size_t filler_words = 40;
  std::uint64_t seed = 7;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Applies a lexicon word by word; an unknown word is an InvalidInput.
std::string translate(const std::string& text, const Lexicon& lexicon);

std::vector<std::string> split_words(const std::string& text);

// ---- CSV / JSONL ----------------------------------------------------------

struct CsvColumns {
  std::string text = "text";
  std::string l2 = "hindi";
  std::string l3 = "bengali";
  std::string label = "label";
};

// Labels are mapped to dense indices by first appearance unless
// `fixed_labels` is supplied, in which case an unseen label is an error.
Corpus load_csv(const std::filesystem::path& path, const CsvColumns& columns = {},
                const std::optional<std::vector<std::string>>& fixed_labels = std::nullopt);
Corpus parse_csv(const std::string& content, const CsvColumns& columns = {},
                 const std::optional<std::vector<std::string>>& fixed_labels = std::nullopt);
std::string to_csv(const Corpus& corpus, const CsvColumns& columns = {});
void write_csv(const Corpus& corpus, const std::filesystem::path& path, const CsvColumns& columns = {});

std::string to_jsonl(const Corpus& corpus);
Corpus parse_jsonl(const std::string& content,
                   const std::optional<std::vector<std::string>>& fixed_labels = std::nullopt);

// ---- vocabulary -----------------------------------------------------------

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kCls = 1;
  static constexpr std::size_t kSep = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();

  // Whitespace tokens from all three languages with count >= min_count get
  // ids after the reserved ones, ordered by count desc then lexicographically.
  static Vocab build(const Corpus& corpus, std::size_t min_count = 1);
  static Vocab from_json(const nlohmann::json& j);

  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }

  nlohmann::ordered_json to_json() const;
  std::uint64_t hash() const;

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void push(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncodedExample {
  std::vector<std::size_t> ids;     // length max_len
  std::vector<std::uint8_t> mask;   // 1 for real tokens
  std::size_t label = 0;
  Language language = Language::L1;
  std::size_t triplet_id = 0;

  std::size_t length() const;  // number of real tokens
};

EncodedExample encode(const std::string& text, const Vocab& vocab, std::size_t max_len);
std::string decode(const EncodedExample& ex, const Vocab& vocab);

struct EncodedTriplet {
  std::array<EncodedExample, 3> views;
  std::size_t label = 0;
  std::size_t id = 0;

  const EncodedExample& view(Language lang) const { return views[static_cast<std::size_t>(lang)]; }
};

EncodedTriplet encode_triplet(const ExampleTriplet& t, const Vocab& vocab, std::size_t max_len);
std::vector<EncodedTriplet> encode_triplets(const Corpus& corpus, const std::vector<std::size_t>& ids,
                                            const Vocab& vocab, std::size_t max_len);
std::vector<EncodedExample> language_view(const std::vector<EncodedTriplet>& triplets, Language lang);

// ---- splits ---------------------------------------------------------------

struct SplitSpec {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 7;
  bool stratified = true;
};

// Triplet-level split: a triplet's three texts always land in the same part.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;

  std::uint64_t hash() const;
  nlohmann::json to_json() const;
  static Split from_json(const nlohmann::json& j);
};

Split split_corpus(const Corpus& corpus, const SplitSpec& spec);

}  // namespace clm
