#include "clm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "clm/error.hpp"
#include "clm/seed.hpp"

namespace clm {

std::string language_name(Language lang) {
  switch (lang) {
    case Language::L1: return "L1";
    case Language::L2: return "L2";
    case Language::L3: return "L3";
  }
  return "?";
}

Language parse_language(const std::string& name) {
  if (name == "L1") return Language::L1;
  if (name == "L2") return Language::L2;
  if (name == "L3") return Language::L3;
  throw ValidationError("unknown language '" + name + "' (expected L1, L2 or L3)");
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string translate(const std::string& text, const Lexicon& lexicon) {
  std::string out;
  for (const auto& w : split_words(text)) {
    auto it = lexicon.find(w);
    if (it == lexicon.end()) throw InvalidInput("translate: word '" + w + "' not in lexicon");
    if (!out.empty()) out += ' ';
    out += it->second;
  }
  return out;
}

// ---- synthetic generator --------------------------------------------------

namespace {

struct Phonology {
  std::vector<std::string> onsets;
  std::vector<std::string> nuclei;
};

// Distinct letter inventories keep the three surface vocabularies apart; the
// `used` set makes disjointness hold even if two inventories ever collide.
const std::array<Phonology, 3>& phonologies() {
  static const std::array<Phonology, 3> p{{
      {{"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"}, {"a", "e", "i", "o", "u"}},
      {{"bh", "ch", "dh", "gh", "kh", "ph", "sh", "th"}, {"aa", "ee", "oo", "ai", "au"}},
      {{"c", "h", "j", "q", "w", "x", "y", "z"}, {"ey", "ow", "ua", "ie", "uo"}},
  }};
  return p;
}

std::string fresh_word(Rng& rng, const Phonology& ph, std::set<std::string>& used) {
  std::uniform_int_distribution<std::size_t> syll(2, 3);
  std::uniform_int_distribution<std::size_t> on(0, ph.onsets.size() - 1);
  std::uniform_int_distribution<std::size_t> nu(0, ph.nuclei.size() - 1);
  for (;;) {
    std::string w;
    const std::size_t n = syll(rng);
    for (std::size_t i = 0; i < n; ++i) w += ph.onsets[on(rng)] + ph.nuclei[nu(rng)];
    if (used.insert(w).second) return w;
  }
}

constexpr std::size_t kOpeners = 4;

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("synthetic corpus needs at least 2 classes");
  if (spec.samples_per_class < 2) throw ValidationError("synthetic corpus needs at least 2 samples per class");
  if (spec.words_per_class < 2) throw ValidationError("synthetic corpus needs at least 2 words per class");
  if (spec.filler_words < kOpeners) {
    throw ValidationError("synthetic corpus needs at least " + std::to_string(kOpeners) + " filler words");
  }

  SyntheticCorpus out;
  Rng lex_rng(sub_seed(spec.seed, "corpus/lexicon"));
  std::set<std::string> used;
  const auto& ph = phonologies();

  std::vector<std::string> base;
  out.class_words.resize(spec.num_classes);
  for (auto& words : out.class_words) {
    for (std::size_t i = 0; i < spec.words_per_class; ++i) {
      words.push_back(fresh_word(lex_rng, ph[0], used));
      base.push_back(words.back());
    }
  }
  for (std::size_t i = 0; i < spec.filler_words; ++i) {
    out.filler_words.push_back(fresh_word(lex_rng, ph[0], used));
    base.push_back(out.filler_words.back());
  }
  for (const auto& w : base) {
    out.to_l2[w] = fresh_word(lex_rng, ph[1], used);
    out.to_l3[w] = fresh_word(lex_rng, ph[2], used);
  }

  Rng rng(sub_seed(spec.seed, "corpus/sentences"));
  const std::size_t k_max = std::min<std::size_t>(4, spec.words_per_class);
  std::uniform_int_distribution<std::size_t> n_symptoms(2, k_max);
  std::uniform_int_distribution<std::size_t> n_filler(3, 6);
  std::uniform_int_distribution<std::size_t> opener(0, kOpeners - 1);
  std::uniform_int_distribution<std::size_t> filler(kOpeners, spec.filler_words - 1);

  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02zu", c);
    out.corpus.label_names.emplace_back(name);
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      std::vector<std::string> symptoms = out.class_words[c];
      std::shuffle(symptoms.begin(), symptoms.end(), rng);
      symptoms.resize(n_symptoms(rng));
      const std::size_t nf = n_filler(rng);
      std::vector<std::string> bag = symptoms;
      for (std::size_t i = 0; i < nf; ++i) bag.push_back(out.filler_words[filler(rng)]);
      std::shuffle(bag.begin(), bag.end(), rng);

      std::string text = out.filler_words[opener(rng)];
      for (const auto& w : bag) text += ' ' + w;

      ExampleTriplet t;
      t.texts = {text, translate(text, out.to_l2), translate(text, out.to_l3)};
      t.label = c;
      t.id = out.corpus.examples.size();
      out.corpus.examples.push_back(std::move(t));
    }
  }
  return out;
}

// ---- CSV ------------------------------------------------------------------

namespace {

// RFC-4180 records. Quoted fields may hold commas, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_records(const std::string& s) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    rec.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = rec.size() == 1 && rec[0].empty();
    if (!blank) records.push_back(std::move(rec));
    rec.clear();
  };
  if (s.size() >= 3 && s.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < s.size() && s[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // handled with the following \n
    } else if (c == '\n') {
      end_record();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw SchemaError("csv: unterminated quoted field");
  if (!field.empty() || !rec.empty()) end_record();
  return records;
}

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n\r") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

class LabelMapper {
 public:
  explicit LabelMapper(const std::optional<std::vector<std::string>>& fixed) : fixed_(fixed.has_value()) {
    if (fixed)
      for (const auto& n : *fixed) add(n);
  }
  std::size_t map(const std::string& name, std::size_t row) {
    if (auto it = index_.find(name); it != index_.end()) return it->second;
    if (fixed_) {
      throw LabelError("row " + std::to_string(row) + ": label '" + name + "' not in the fixed label mapping");
    }
    return add(name);
  }
  std::vector<std::string> names() const { return names_; }

 private:
  std::size_t add(const std::string& name) {
    index_.emplace(name, names_.size());
    names_.push_back(name);
    return names_.size() - 1;
  }
  bool fixed_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

Corpus parse_csv(const std::string& content, const CsvColumns& columns,
                 const std::optional<std::vector<std::string>>& fixed_labels) {
  const auto records = parse_records(content);
  if (records.empty()) throw SchemaError("csv: missing header row");
  const auto& header = records[0];
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("csv: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::array<std::size_t, 3> text_cols{column(columns.text), column(columns.l2), column(columns.l3)};
  const std::size_t label_col = column(columns.label);

  Corpus corpus;
  LabelMapper labels(fixed_labels);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw RowError("csv row " + std::to_string(r) + ": expected " + std::to_string(header.size()) +
                     " fields, found " + std::to_string(rec.size()));
    }
    ExampleTriplet t;
    for (std::size_t k = 0; k < 3; ++k) {
      t.texts[k] = rec[text_cols[k]];
      if (split_words(t.texts[k]).empty()) {
        throw RowError("csv row " + std::to_string(r) + ": empty text in column '" + header[text_cols[k]] + "'");
      }
    }
    if (rec[label_col].empty()) throw RowError("csv row " + std::to_string(r) + ": empty label");
    t.label = labels.map(rec[label_col], r);
    t.id = corpus.examples.size();
    corpus.examples.push_back(std::move(t));
  }
  corpus.label_names = labels.names();
  return corpus;
}

Corpus load_csv(const std::filesystem::path& path, const CsvColumns& columns,
                const std::optional<std::vector<std::string>>& fixed_labels) {
  return parse_csv(read_file(path), columns, fixed_labels);
}

std::string to_csv(const Corpus& corpus, const CsvColumns& columns) {
  std::string out = csv_field(columns.text) + ',' + csv_field(columns.l2) + ',' + csv_field(columns.l3) + ',' +
                    csv_field(columns.label) + '\n';
  for (const auto& t : corpus.examples) {
    out += csv_field(t.texts[0]) + ',' + csv_field(t.texts[1]) + ',' + csv_field(t.texts[2]) + ',' +
           csv_field(corpus.label_names.at(t.label)) + '\n';
  }
  return out;
}

void write_csv(const Corpus& corpus, const std::filesystem::path& path, const CsvColumns& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_csv(corpus, columns);
}

std::string to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& t : corpus.examples) {
    nlohmann::ordered_json j;
    j["text"] = t.texts[0];
    j["hindi"] = t.texts[1];
    j["bengali"] = t.texts[2];
    j["label"] = corpus.label_names.at(t.label);
    out += j.dump() + '\n';
  }
  return out;
}

Corpus parse_jsonl(const std::string& content, const std::optional<std::vector<std::string>>& fixed_labels) {
  Corpus corpus;
  LabelMapper labels(fixed_labels);
  std::istringstream is(content);
  std::string line;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw RowError("jsonl line " + std::to_string(row) + ": " + e.what());
    }
    ExampleTriplet t;
    const std::array<const char*, 3> keys{"text", "hindi", "bengali"};
    for (std::size_t k = 0; k < 3; ++k) {
      if (!j.contains(keys[k]) || !j[keys[k]].is_string()) {
        throw SchemaError("jsonl line " + std::to_string(row) + ": missing string field '" + keys[k] + "'");
      }
      t.texts[k] = j[keys[k]].get<std::string>();
      if (split_words(t.texts[k]).empty()) {
        throw RowError("jsonl line " + std::to_string(row) + ": empty text in '" + keys[k] + "'");
      }
    }
    if (!j.contains("label")) throw SchemaError("jsonl line " + std::to_string(row) + ": missing 'label'");
    t.label = labels.map(j["label"].is_string() ? j["label"].get<std::string>() : j["label"].dump(), row);
    t.id = corpus.examples.size();
    corpus.examples.push_back(std::move(t));
  }
  corpus.label_names = labels.names();
  return corpus;
}

// ---- vocabulary -----------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[CLS]", "[SEP]", "[UNK]"}) push(t);
}

void Vocab::push(const std::string& token) {
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
}

Vocab Vocab::build(const Corpus& corpus, std::size_t min_count) {
  if (corpus.examples.empty()) throw InvalidInput("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : corpus.examples)
    for (const auto& text : t.texts)
      for (const auto& w : split_words(text)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (const auto& [w, c] : counts) {
    if (c >= min_count) entries.emplace_back(w, c);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& e : entries) {
    if (!v.contains(e.first)) v.push(e.first);
  }
  return v;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("vocab: expected a JSON object of token -> id");
  std::vector<std::string> tokens(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [tok, idj] : j.items()) {
    const auto id = idj.get<std::size_t>();
    if (id >= tokens.size() || seen[id]) throw SchemaError("vocab: ids must be dense and unique");
    tokens[id] = tok;
    seen[id] = true;
  }
  const std::array<const char*, 4> reserved{"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  for (std::size_t i = 0; i < reserved.size(); ++i) {
    if (tokens.size() <= i || tokens[i] != reserved[i]) throw SchemaError("vocab: reserved ids reassigned");
  }
  Vocab v;
  for (std::size_t i = kReserved; i < tokens.size(); ++i) v.push(tokens[i]);
  return v;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw RangeError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

nlohmann::ordered_json Vocab::to_json() const {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& t : tokens_) h = fnv1a(t + '\n', h);
  return h;
}

// ---- encoding -------------------------------------------------------------

std::size_t EncodedExample::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

EncodedExample encode(const std::string& text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw ValidationError("encode: max_len must be at least 3");
  const auto words = split_words(text);
  const std::size_t n = std::min(words.size(), max_len - 2);
  EncodedExample ex;
  ex.ids.assign(max_len, Vocab::kPad);
  ex.mask.assign(max_len, 0);
  ex.ids[0] = Vocab::kCls;
  for (std::size_t i = 0; i < n; ++i) ex.ids[i + 1] = vocab.id(words[i]);
  ex.ids[n + 1] = Vocab::kSep;
  std::fill_n(ex.mask.begin(), n + 2, 1);
  return ex;
}

std::string decode(const EncodedExample& ex, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ex.ids.size(); ++i) {
    const auto id = ex.ids[i];
    if (!ex.mask[i] || id == Vocab::kCls || id == Vocab::kSep || id == Vocab::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

EncodedTriplet encode_triplet(const ExampleTriplet& t, const Vocab& vocab, std::size_t max_len) {
  EncodedTriplet e;
  for (auto lang : kLanguages) {
    auto& v = e.views[static_cast<std::size_t>(lang)];
    v = encode(t.text(lang), vocab, max_len);
    v.label = t.label;
    v.language = lang;
    v.triplet_id = t.id;
  }
  e.label = t.label;
  e.id = t.id;
  return e;
}

std::vector<EncodedTriplet> encode_triplets(const Corpus& corpus, const std::vector<std::size_t>& ids,
                                            const Vocab& vocab, std::size_t max_len) {
  std::vector<EncodedTriplet> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(encode_triplet(corpus.examples.at(id), vocab, max_len));
  return out;
}

std::vector<EncodedExample> language_view(const std::vector<EncodedTriplet>& triplets, Language lang) {
  std::vector<EncodedExample> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.push_back(t.view(lang));
  return out;
}

// ---- splits ---------------------------------------------------------------

namespace {

// Largest-remainder apportionment of `n` items over the fractions.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& f) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double ideal = static_cast<double>(n) * f[k];
    out[k] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
    rem[k] = ideal - static_cast<double>(out[k]);
    used += out[k];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (rem[k] > rem[best] + 1e-12) best = k;
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  return out;
}

}  // namespace

Split split_corpus(const Corpus& corpus, const SplitSpec& spec) {
  const std::array<double, 3> f{spec.train, spec.val, spec.test};
  for (double x : f)
    if (x < 0.0 || x > 1.0) throw ValidationError("split fractions must lie in [0, 1]");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  Split split;
  std::array<std::vector<std::size_t>*, 3> parts{&split.train, &split.val, &split.test};
  Rng rng(sub_seed(spec.seed, "split"));
  const std::size_t n = corpus.examples.size();
  const auto targets = apportion(n, f);

  if (!spec.stratified) {
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = corpus.examples[i].id;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      parts[k]->assign(ids.begin() + pos, ids.begin() + pos + targets[k]);
      pos += targets[k];
    }
  } else {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (const auto& t : corpus.examples) by_class[t.label].push_back(t.id);

    // Floor allocation per class, then leftovers go to the splits furthest
    // below their global target, at most one extra per class and split.
    std::map<std::size_t, std::array<std::size_t, 3>> alloc;
    std::array<std::size_t, 3> given{};
    for (const auto& [label, ids] : by_class) {
      std::array<std::size_t, 3> a{};
      for (std::size_t k = 0; k < 3; ++k) {
        a[k] = static_cast<std::size_t>(std::floor(static_cast<double>(ids.size()) * f[k] + 1e-9));
        given[k] += a[k];
      }
      alloc[label] = a;
      const std::size_t nonzero = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](double x) { return x > 0.0; }));
      if (ids.size() < nonzero) {
        split.warnings.push_back("class " + std::to_string(label) + " has " + std::to_string(ids.size()) +
                                 " samples, fewer than the " + std::to_string(nonzero) +
                                 " splits; allocation is best-effort");
      }
    }
    for (auto& [label, a] : alloc) {
      std::size_t left = by_class[label].size() - (a[0] + a[1] + a[2]);
      std::array<bool, 3> bumped{};
      while (left > 0) {
        std::size_t best = 3;
        long best_deficit = 0;
        for (std::size_t k = 0; k < 3; ++k) {
          if (bumped[k] || f[k] <= 0.0) continue;
          const long deficit = static_cast<long>(targets[k]) - static_cast<long>(given[k]);
          if (best == 3 || deficit > best_deficit) {
            best = k;
            best_deficit = deficit;
          }
        }
        if (best == 3) {
          for (std::size_t k = 0; k < 3; ++k) bumped[k] = false;
          continue;
        }
        ++a[best];
        ++given[best];
        bumped[best] = true;
        --left;
      }
    }
    for (auto& [label, ids] : by_class) {
      std::shuffle(ids.begin(), ids.end(), rng);
      const auto& a = alloc[label];
      std::size_t pos = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        parts[k]->insert(parts[k]->end(), ids.begin() + pos, ids.begin() + pos + a[k]);
        pos += a[k];
      }
    }
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return split;
}

std::uint64_t Split::hash() const {
  std::uint64_t h = fnv1a("split");
  for (const auto* part : {&train, &val, &test}) {
    h = fnv1a("|", h);
    for (auto id : *part) h = fnv1a(std::to_string(id) + ',', h);
  }
  return h;
}

nlohmann::json Split::to_json() const {
  nlohmann::json j;
  j["train"] = train;
  j["val"] = val;
  j["test"] = test;
  j["hash"] = hash();
  return j;
}

Split Split::from_json(const nlohmann::json& j) {
  Split s;
  try {
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.val = j.at("val").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("splits: ") + e.what());
  }
  return s;
}

}  // namespace clm
