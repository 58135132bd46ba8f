#include "clm/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "clm/seed.hpp"

namespace clm {

namespace {

nlohmann::json columns_json(const CsvColumns& c) {
  return {{"text", c.text}, {"l2", c.l2}, {"l3", c.l3}, {"label", c.label}};
}

nlohmann::json synthetic_json(const SyntheticSpec& s) {
  return {{"num_classes", s.num_classes},
          {"samples_per_class", s.samples_per_class},
          {"words_per_class", s.words_per_class},
          {"filler_words", s.filler_words},
          {"seed", s.seed}};
}

nlohmann::json split_json(const SplitSpec& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"seed", s.seed}, {"stratified", s.stratified}};
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t root) {
  seed = root;
  corpus.synthetic.seed = root;
  split.seed = root;
  train.seed = root;
}

std::uint64_t init_seed(std::uint64_t root) { return sub_seed(root, "model/init"); }

void RunConfig::validate() const {
  if (corpus.csv_path.empty() && corpus.synthetic.num_classes < 2) {
    throw ValidationError("the synthetic corpus needs at least 2 classes");
  }
  if (corpus.synthetic.samples_per_class < 1) throw ValidationError("samples per class must be at least 1");
  if (split.train <= 0 || split.val < 0 || split.test < 0) throw ValidationError("split fractions must be non-negative");
  model.encoder.validate();
  train.validate();
  meta.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"out_dir", c.out_dir},
                     {"corpus",
                      {{"csv_path", c.corpus.csv_path},
                       {"columns", columns_json(c.corpus.columns)},
                       {"synthetic", synthetic_json(c.corpus.synthetic)}}},
                     {"min_count", c.min_count},
                     {"split", split_json(c.split)},
                     {"model", c.model},
                     {"train", c.train},
                     {"meta", c.meta}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("corpus")) {
    const auto& cj = j["corpus"];
    c.corpus.csv_path = cj.value("csv_path", c.corpus.csv_path);
    if (cj.contains("columns")) {
      const auto& col = cj["columns"];
      c.corpus.columns.text = col.value("text", c.corpus.columns.text);
      c.corpus.columns.l2 = col.value("l2", c.corpus.columns.l2);
      c.corpus.columns.l3 = col.value("l3", c.corpus.columns.l3);
      c.corpus.columns.label = col.value("label", c.corpus.columns.label);
    }
    if (cj.contains("synthetic")) {
      const auto& s = cj["synthetic"];
      auto& t = c.corpus.synthetic;
      t.num_classes = s.value("num_classes", t.num_classes);
      t.samples_per_class = s.value("samples_per_class", t.samples_per_class);
      t.words_per_class = s.value("words_per_class", t.words_per_class);
      t.filler_words = s.value("filler_words", t.filler_words);
      t.seed = s.value("seed", t.seed);
    }
  }
  c.min_count = j.value("min_count", c.min_count);
  if (j.contains("split")) {
    const auto& s = j["split"];
    c.split.train = s.value("train", c.split.train);
    c.split.val = s.value("val", c.split.val);
    c.split.test = s.value("test", c.split.test);
    c.split.seed = s.value("seed", c.split.seed);
    c.split.stratified = s.value("stratified", c.split.stratified);
  }
  if (j.contains("model")) {
    nlohmann::json merged = c.model;
    merged.merge_patch(j["model"]);
    c.model = merged.get<ModelConfig>();
  }
  if (j.contains("train")) from_json(j["train"], c.train);
  if (j.contains("meta")) from_json(j["meta"], c.meta);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

void write_f64_le(std::ostream& out, std::span<const double> values) {
  std::vector<unsigned char> buf(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<double> read_f64_le(std::istream& in, std::size_t count) {
  std::vector<unsigned char> buf(count * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw IoError("binary file truncated: expected " + std::to_string(count) + " values");
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

std::filesystem::path strip_manifest(const std::filesystem::path& p) {
  const auto s = p.string();
  if (s.size() > 5 && s.ends_with(".json")) return s.substr(0, s.size() - 5);
  return p;
}

nlohmann::ordered_json languages_json(const std::vector<Language>& langs) {
  auto a = nlohmann::ordered_json::array();
  for (Language l : langs) a.push_back(language_name(l));
  return a;
}

std::vector<Language> languages_from(const nlohmann::json& j) {
  std::vector<Language> out;
  for (const auto& s : j) out.push_back(parse_language(s.get<std::string>()));
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem_in, const ModelParams& params, const CheckpointInfo& info) {
  const auto stem = strip_manifest(stem_in);
  nlohmann::ordered_json m;
  m["format"] = "clm-checkpoint-v1";
  m["config"] = nlohmann::json(info.config);
  m["seed"] = info.config.seed;
  m["variant"] = variant_name(info.config.train.variant);
  m["vocab_hash"] = hex64(info.vocab_hash);
  m["split_hash"] = hex64(info.split_hash);
  m["phases_done"] = info.phases_done;
  auto prov = nlohmann::ordered_json::array();
  for (const auto& p : info.provenance) {
    nlohmann::ordered_json e;
    e["phase"] = p.phase;
    e["labeled_languages"] = languages_json(p.labeled_languages);
    e["epochs"] = p.epochs;
    prov.push_back(std::move(e));
  }
  m["provenance"] = std::move(prov);
  auto pl = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    nlohmann::ordered_json e;
    e["name"] = params.at(i).name;
    e["shape"] = params.at(i).value.shape;
    pl.push_back(std::move(e));
  }
  m["params"] = std::move(pl);
  m["param_count"] = params.count();

  std::vector<double> state_values;
  if (info.state) {
    const PhaseState& s = *info.state;
    nlohmann::ordered_json sj;
    sj["phase"] = s.phase;
    sj["epochs_done"] = s.epochs_done;
    sj["step"] = s.step;
    sj["stopped_early"] = s.stopped_early;
    sj["alignment_before"] = s.alignment_before ? nlohmann::ordered_json(*s.alignment_before) : nlohmann::ordered_json();
    auto hist = nlohmann::ordered_json::array();
    for (const auto& e : s.history) hist.push_back(e.to_json());
    sj["history"] = std::move(hist);
    nlohmann::ordered_json es;
    es["best_score"] = s.early.best_score ? nlohmann::ordered_json(*s.early.best_score) : nlohmann::ordered_json();
    es["best_epoch"] = s.early.best_epoch;
    es["bad_epochs"] = s.early.bad_epochs;
    es["snapshot_size"] = s.early.best_params.size();
    sj["early_stopping"] = std::move(es);
    nlohmann::ordered_json opt;
    opt["step"] = s.optimizer.step_count();
    auto mom = nlohmann::ordered_json::array();
    for (const auto& mo : s.optimizer.moments()) {
      nlohmann::ordered_json e;
      e["name"] = mo.name;
      e["size"] = mo.first.size();
      mom.push_back(std::move(e));
      state_values.insert(state_values.end(), mo.first.begin(), mo.first.end());
      state_values.insert(state_values.end(), mo.second.begin(), mo.second.end());
    }
    opt["moments"] = std::move(mom);
    sj["optimizer"] = std::move(opt);
    state_values.insert(state_values.end(), s.early.best_params.begin(), s.early.best_params.end());
    m["state"] = std::move(sj);
  } else {
    m["state"] = nullptr;
  }

  auto write_bin = [](const std::filesystem::path& path, std::span<const double> values) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_f64_le(out, values);
    if (!out) throw IoError("write failed for " + path.string());
  };
  const auto flat = params.flatten();
  write_bin(with_suffix(stem, ".bin"), flat);
  if (info.state) {
    write_bin(with_suffix(stem, ".state.bin"), state_values);
  } else {
    std::error_code ec;
    std::filesystem::remove(with_suffix(stem, ".state.bin"), ec);
  }
  write_json_file(with_suffix(stem, ".json"), m);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem_in) {
  const auto stem = strip_manifest(stem_in);
  const auto m = read_json_file(with_suffix(stem, ".json"));
  if (m.value("format", "") != "clm-checkpoint-v1") {
    throw CompatibilityError(stem.string() + ": not a checkpoint manifest of a known format");
  }
  LoadedCheckpoint out;
  try {
    out.info.config = m.at("config").get<RunConfig>();
    out.info.vocab_hash = parse_hex64(m.at("vocab_hash").get<std::string>());
    out.info.split_hash = parse_hex64(m.at("split_hash").get<std::string>());
    out.info.phases_done = m.at("phases_done").get<std::vector<int>>();
    for (const auto& p : m.at("provenance")) {
      out.info.provenance.push_back(
          {p.at("phase").get<int>(), languages_from(p.at("labeled_languages")), p.at("epochs").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(stem.string() + ".json: " + e.what());
  }

  // Parameter layout comes from the manifest and must match the model the
  // config describes.
  out.params = init_model(out.info.config.model, 0);
  const auto& pl = m.at("params");
  if (pl.size() != out.params.size()) throw CompatibilityError("checkpoint parameter list does not match the model");
  for (std::size_t i = 0; i < pl.size(); ++i) {
    const auto& p = out.params.at(i);
    if (pl[i].at("name").get<std::string>() != p.name || pl[i].at("shape").get<Shape>() != p.value.shape) {
      throw CompatibilityError("checkpoint parameter " + pl[i].at("name").get<std::string>() +
                               " does not match the model layout");
    }
  }
  {
    std::ifstream in(with_suffix(stem, ".bin"), std::ios::binary);
    if (!in) throw IoError("cannot read " + with_suffix(stem, ".bin").string());
    out.params.unflatten(read_f64_le(in, out.params.count()));
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("parameter file has trailing data");
  }

  if (!m.at("state").is_null()) {
    const auto& sj = m["state"];
    PhaseState s;
    s.phase = sj.at("phase").get<int>();
    s.epochs_done = sj.at("epochs_done").get<std::size_t>();
    s.step = sj.at("step").get<std::int64_t>();
    s.stopped_early = sj.at("stopped_early").get<bool>();
    if (!sj.at("alignment_before").is_null()) s.alignment_before = sj["alignment_before"].get<double>();
    for (const auto& e : sj.at("history")) s.history.push_back(EpochLog::from_json(e));
    const auto& es = sj.at("early_stopping");
    if (!es.at("best_score").is_null()) s.early.best_score = es["best_score"].get<double>();
    s.early.best_epoch = es.at("best_epoch").get<std::size_t>();
    s.early.bad_epochs = es.at("bad_epochs").get<std::size_t>();
    const auto snapshot = es.at("snapshot_size").get<std::size_t>();
    std::size_t total = snapshot;
    for (const auto& mo : sj.at("optimizer").at("moments")) total += 2 * mo.at("size").get<std::size_t>();
    std::ifstream in(with_suffix(stem, ".state.bin"), std::ios::binary);
    if (!in) throw IoError("cannot read " + with_suffix(stem, ".state.bin").string());
    const auto values = read_f64_le(in, total);
    std::size_t pos = 0;
    std::vector<AdamW::Moments> moments;
    for (const auto& mo : sj["optimizer"]["moments"]) {
      const auto n = mo.at("size").get<std::size_t>();
      AdamW::Moments e;
      e.name = mo.at("name").get<std::string>();
      e.first.assign(values.begin() + static_cast<std::ptrdiff_t>(pos), values.begin() + static_cast<std::ptrdiff_t>(pos + n));
      pos += n;
      e.second.assign(values.begin() + static_cast<std::ptrdiff_t>(pos), values.begin() + static_cast<std::ptrdiff_t>(pos + n));
      pos += n;
      moments.push_back(std::move(e));
    }
    s.early.best_params.assign(values.begin() + static_cast<std::ptrdiff_t>(pos), values.end());
    s.optimizer = AdamW(out.info.config.train.optimizer);
    s.optimizer.restore(sj["optimizer"].at("step").get<std::int64_t>(), std::move(moments));
    out.info.state = std::move(s);
  }
  return out;
}

PreparedData prepare_data(const Corpus& corpus, const Split& split, const Vocab& vocab, std::size_t max_len) {
  PreparedData p;
  p.data.train = encode_triplets(corpus, split.train, vocab, max_len);
  p.data.val = encode_triplets(corpus, split.val, vocab, max_len);
  p.test = encode_triplets(corpus, split.test, vocab, max_len);
  return p;
}

ModelConfig resolve_model(const ModelConfig& base, const Vocab& vocab, const Corpus& corpus) {
  ModelConfig m = base;
  m.encoder.vocab_size = vocab.size();
  m.heads.num_classes = corpus.num_classes();
  m.encoder.validate();
  return m;
}

std::vector<PhaseReport> run_variant(ModelParams& params, const TrainData& data, const ModelConfig& model,
                                     const TrainConfig& train, const MetaConfig& meta, const TrainHooks& hooks,
                                     const ResumePoint* resume) {
  std::vector<PhaseReport> reports;
  for (int phase : variant_phases(train.variant)) {
    if (resume && std::find(resume->phases_done.begin(), resume->phases_done.end(), phase) !=
                      resume->phases_done.end()) {
      continue;
    }
    PhaseOptions opts;
    if (resume && resume->state && resume->state->phase == phase) opts.resume = &*resume->state;
    if (hooks.on_epoch) opts.on_epoch = hooks.on_epoch;
    PhaseReport r;
    if (phase == 4) {
      r = run_meta_phase(params, data, model, train, meta, opts, hooks.on_meta_step);
    } else {
      r = run_phase(phase, params, data, model, train, opts);
    }
    if (hooks.on_phase) hooks.on_phase(r, params);
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace clm
