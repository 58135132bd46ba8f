// Command-line driver: gen-corpus, train, eval, verify-alignment, ablation.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "clm/ablation.hpp"
#include "clm/eval.hpp"
#include "clm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace clm;

namespace {

struct StopRequested {};

int exit_code(const Error& e) {
  const auto& k = e.kind();
  if (k == "numeric") return 3;
  if (k == "io") return 4;
  if (k == "compatibility") return 5;
  return 2;
}

// Flags shared by every command. Unset optionals leave the file/default
// value alone.
struct CommonFlags {
  std::string out = "run";
  std::string config_file;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--out", f.out, "Run directory")->capture_default_str();
  cmd->add_option("--config", f.config_file, "JSON config merged under the command-line flags");
  cmd->add_option("--seed", f.seed, "Root seed (default: $CLM_SEED, else 7)");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CLM_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ValidationError(std::string("CLM_SEED is not an unsigned integer: ") + s);
  }
}

// defaults < $CLM_SEED < <out>/config.json < --config file < flags.
RunConfig base_config(const CommonFlags& f) {
  RunConfig c;
  if (auto s = env_seed()) c.apply_seed(*s);
  const fs::path existing = fs::path(f.out) / "config.json";
  if (fs::exists(existing)) from_json(read_json_file(existing), c);
  if (!f.config_file.empty()) from_json(read_json_file(f.config_file), c);
  c.out_dir = f.out;
  return c;
}

struct RunData {
  Corpus corpus;
  Vocab vocab;
  Split split;
};

fs::path out_path(const RunConfig& c, const std::string& rel) { return fs::path(c.out_dir) / rel; }

bool corpus_present(const RunConfig& c) {
  for (const char* f : {"corpus.jsonl", "vocab.json", "splits.json", "labels.json"}) {
    if (!fs::exists(out_path(c, f))) return false;
  }
  return true;
}

RunData generate_run_data(const RunConfig& c) {
  RunData d;
  if (c.corpus.csv_path.empty()) {
    d.corpus = generate_synthetic_corpus(c.corpus.synthetic).corpus;
  } else {
    d.corpus = load_csv(c.corpus.csv_path, c.corpus.columns);
  }
  d.vocab = Vocab::build(d.corpus, c.min_count);
  d.split = split_corpus(d.corpus, c.split);
  return d;
}

void write_run_data(const RunConfig& c, const RunData& d) {
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec) throw IoError("cannot create " + c.out_dir + ": " + ec.message());
  write_text_file(out_path(c, "corpus.jsonl"), to_jsonl(d.corpus));
  write_json_file(out_path(c, "vocab.json"), d.vocab.to_json());
  write_json_file(out_path(c, "splits.json"), d.split.to_json());
  write_json_file(out_path(c, "labels.json"), nlohmann::ordered_json(d.corpus.label_names));
}

RunData load_run_data(const RunConfig& c) {
  RunData d;
  const auto labels = read_json_file(out_path(c, "labels.json")).get<std::vector<std::string>>();
  d.corpus = parse_jsonl(read_text_file(out_path(c, "corpus.jsonl")), labels);
  d.vocab = Vocab::from_json(read_json_file(out_path(c, "vocab.json")));
  d.split = Split::from_json(read_json_file(out_path(c, "splits.json")));
  return d;
}

void write_config(const RunConfig& c) {
  write_json_file(out_path(c, "config.json"), nlohmann::ordered_json(nlohmann::json(c)));
}

// ---- gen-corpus ------------------------------------------------------------

int cmd_gen_corpus(const CommonFlags& f, std::optional<std::size_t> classes, std::optional<std::size_t> per_class,
                   const std::string& csv) {
  RunConfig c = base_config(f);
  if (f.seed) c.apply_seed(*f.seed);
  if (classes) c.corpus.synthetic.num_classes = *classes;
  if (per_class) c.corpus.synthetic.samples_per_class = *per_class;
  if (!csv.empty()) c.corpus.csv_path = csv;
  c.validate();
  const RunData d = generate_run_data(c);
  c.model = resolve_model(c.model, d.vocab, d.corpus);
  write_run_data(c, d);
  write_config(c);
  std::vector<std::size_t> counts(d.corpus.num_classes(), 0);
  for (const auto& t : d.corpus.examples) ++counts[t.label];
  std::printf("%zu triplets, %zu classes, vocab %zu, split %zu/%zu/%zu\n", d.corpus.examples.size(),
              d.corpus.num_classes(), d.vocab.size(), d.split.train.size(), d.split.val.size(), d.split.test.size());
  for (std::size_t k = 0; k < counts.size(); ++k) std::printf("  %-12s %zu\n", d.corpus.label_names[k].c_str(), counts[k]);
  for (const auto& w : d.split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  std::string variant;
  std::string resume;
  std::vector<std::size_t> epochs;
  std::size_t stop_after = 0;
};

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  if (!fs::exists(p)) return lines;
  std::istringstream in(read_text_file(p));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void append_line(const fs::path& p, const std::string& line) {
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + p.string());
  out << line << '\n';
}

// Keeps only log lines the checkpoint being resumed already covers.
void trim_logs(const RunConfig& c, const ResumePoint& rp) {
  auto covered = [&](int phase, std::size_t epoch_or_step, bool meta_line) {
    if (std::find(rp.phases_done.begin(), rp.phases_done.end(), phase) != rp.phases_done.end()) return true;
    if (!rp.state || rp.state->phase != phase) return false;
    return meta_line ? epoch_or_step < static_cast<std::size_t>(rp.state->step) : epoch_or_step <= rp.state->epochs_done;
  };
  for (const auto& [file, meta_line] : {std::pair{"logs/train.jsonl", false}, std::pair{"logs/meta.jsonl", true}}) {
    const auto path = out_path(c, file);
    std::string kept;
    for (const auto& line : read_lines(path)) {
      const auto j = nlohmann::json::parse(line);
      const int phase = meta_line ? 4 : j.at("phase").get<int>();
      const auto pos = j.at(meta_line ? "step" : "epoch").get<std::size_t>();
      if (covered(phase, pos, meta_line)) kept += line + '\n';
    }
    if (fs::exists(path)) write_text_file(path, kept);
  }
}

int cmd_train(const CommonFlags& f, const TrainFlags& t) {
  RunConfig c;
  std::optional<LoadedCheckpoint> resumed;
  if (!t.resume.empty()) {
    resumed = load_checkpoint(t.resume);
    c = resumed->info.config;
    c.out_dir = f.out;
    if (!f.config_file.empty()) throw ValidationError("--resume continues the checkpoint's config; drop --config");
  } else {
    c = base_config(f);
    if (f.seed) {
      if (corpus_present(c)) {
        c.seed = *f.seed;
        c.train.seed = *f.seed;
      } else {
        c.apply_seed(*f.seed);
      }
    }
    if (!t.variant.empty()) c.train.variant = parse_variant(t.variant);
    if (!t.epochs.empty()) {
      if (t.epochs.size() != 4) throw ValidationError("--epochs takes four comma-separated values");
      std::copy(t.epochs.begin(), t.epochs.end(), c.train.epochs.begin());
    }
  }
  c.validate();

  RunData d;
  if (corpus_present(c)) {
    d = load_run_data(c);
  } else {
    if (resumed) throw IoError("run directory " + c.out_dir + " has no corpus to resume on");
    d = generate_run_data(c);
    write_run_data(c, d);
  }
  c.model = resolve_model(c.model, d.vocab, d.corpus);
  if (resumed && resumed->info.vocab_hash != d.vocab.hash()) {
    throw CompatibilityError("checkpoint vocab hash " + hex64(resumed->info.vocab_hash) + " does not match " +
                             hex64(d.vocab.hash()));
  }
  write_config(c);

  const PreparedData prep = prepare_data(d.corpus, d.split, d.vocab, c.model.encoder.max_len);
  CheckpointInfo info;
  info.config = c;
  info.config.out_dir.clear();  // checkpoints do not depend on where they were written
  info.vocab_hash = d.vocab.hash();
  info.split_hash = d.split.hash();

  ModelParams params;
  ResumePoint rp;
  if (resumed) {
    params = std::move(resumed->params);
    rp.phases_done = resumed->info.phases_done;
    rp.state = resumed->info.state;
    info.phases_done = resumed->info.phases_done;
    info.provenance = resumed->info.provenance;
    trim_logs(c, rp);
  } else {
    params = init_model(c.model, init_seed(c.seed));
    std::error_code ec;
    fs::remove_all(out_path(c, "logs"), ec);
    save_checkpoint(out_path(c, "ckpt/init"), params, info);
  }

  std::size_t epochs_this_run = 0;
  const std::string variant = variant_name(c.train.variant);
  const auto started = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_epoch = [&](const PhaseState& s, const ModelParams& p) {
    auto line = s.history.back().to_json();
    line["variant"] = variant;
    nlohmann::ordered_json timing;
    timing["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    line["timing"] = timing;
    append_line(out_path(c, "logs/train.jsonl"), line.dump());
    CheckpointInfo ci = info;
    ci.state = s;
    save_checkpoint(out_path(c, "ckpt/last"), p, ci);
    if ((s.phase == 2 || s.phase == 3) && s.early.best_score && s.early.best_epoch == s.epochs_done) {
      save_checkpoint(out_path(c, "ckpt/best"), p, info);
    }
    std::printf("phase %d epoch %zu  loss %.6f  align %s\n", s.phase, s.epochs_done, s.history.back().loss.total,
                s.history.back().alignment ? std::to_string(*s.history.back().alignment).c_str() : "-");
    std::fflush(stdout);
    if (t.stop_after > 0 && ++epochs_this_run >= t.stop_after) throw StopRequested{};
  };
  hooks.on_meta_step = [&](const MetaStepLog& l) {
    append_line(out_path(c, "logs/meta.jsonl"), l.to_json().dump());
  };
  hooks.on_phase = [&](const PhaseReport& r, const ModelParams& p) {
    info.phases_done.push_back(r.phase);
    info.provenance.push_back(provenance_of(r));
    save_checkpoint(out_path(c, "ckpt/phase" + std::to_string(r.phase)), p, info);
    save_checkpoint(out_path(c, "ckpt/last"), p, info);
    auto rj = r.to_json();
    nlohmann::ordered_json timing;
    timing["seconds"] = rj["seconds"];
    rj.erase("seconds");
    rj["timing"] = timing;
    write_json_file(out_path(c, "reports/phase" + std::to_string(r.phase) + ".json"), rj);
  };

  try {
    run_variant(params, prep.data, c.model, c.train, c.meta, hooks, &rp);
  } catch (const StopRequested&) {
    std::printf("stopped after %zu epochs; resume with --resume %s\n", epochs_this_run,
                out_path(c, "ckpt/last.json").string().c_str());
    return 0;
  }
  save_checkpoint(out_path(c, "ckpt/final"), params, info);
  std::printf("finished %s: %s\n", variant.c_str(), out_path(c, "ckpt/final.json").string().c_str());
  return 0;
}

// ---- eval / verify-alignment ----------------------------------------------

struct LoadedRun {
  RunConfig config;
  RunData data;
  LoadedCheckpoint ckpt;
};

LoadedRun load_for_eval(const CommonFlags& f, const std::string& ckpt) {
  LoadedRun r;
  r.config = base_config(f);
  r.data = load_run_data(r.config);
  const fs::path path = ckpt.empty() ? out_path(r.config, "ckpt/final.json") : fs::path(ckpt);
  r.ckpt = load_checkpoint(path);
  if (r.ckpt.info.vocab_hash != r.data.vocab.hash()) {
    throw CompatibilityError("checkpoint vocab hash " + hex64(r.ckpt.info.vocab_hash) + " does not match the corpus vocab " +
                             hex64(r.data.vocab.hash()));
  }
  return r;
}

std::vector<std::size_t> split_ids(const Split& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw ValidationError("unknown split '" + name + "' (train, val, test)");
}

bool labels_used(const CheckpointInfo& info, Language lang) {
  for (const auto& p : info.provenance) {
    for (Language l : p.labeled_languages) {
      if (l == lang) return true;
    }
  }
  return false;
}

int cmd_eval(const CommonFlags& f, const std::string& ckpt, const std::string& split, const std::string& language,
             bool zero_shot) {
  const LoadedRun r = load_for_eval(f, ckpt);
  const ModelConfig& model = r.ckpt.info.config.model;
  const auto triplets = encode_triplets(r.data.corpus, split_ids(r.data.split, split), r.data.vocab, model.encoder.max_len);
  std::vector<Language> langs;
  if (language == "all") {
    langs.assign(kLanguages.begin(), kLanguages.end());
  } else {
    langs.push_back(parse_language(language));
  }
  for (Language lang : langs) {
    const bool unseen = !labels_used(r.ckpt.info, lang);
    if (zero_shot && !unseen) {
      throw ValidationError(language_name(lang) + " labels were used in training; it cannot be reported as zero-shot");
    }
    EvalReport rep = evaluate(r.ckpt.params, model, language_view(triplets, lang), language_name(lang));
    rep.zero_shot = unseen;
    auto j = rep.to_json();
    j["split"] = split;
    const std::string stem = "reports/eval_" + split + "_" + language_name(lang);
    write_json_file(out_path(r.config, stem + ".json"), j);
    write_text_file(out_path(r.config, stem + "_confusion.txt"), render_confusion(rep.confusion, r.data.corpus.label_names));
    std::printf("%s %s%s  n=%zu  accuracy %.4f  macro-P %.4f  macro-R %.4f  macro-F1 %.4f\n", split.c_str(),
                language_name(lang).c_str(), rep.zero_shot ? " (zero-shot)" : "", rep.n, rep.accuracy,
                rep.macro_precision, rep.macro_recall, rep.macro_f1);
  }
  return 0;
}

int cmd_verify_alignment(const CommonFlags& f, const std::string& ckpt, const std::string& split) {
  const LoadedRun r = load_for_eval(f, ckpt);
  const ModelConfig& model = r.ckpt.info.config.model;
  const auto triplets = encode_triplets(r.data.corpus, split_ids(r.data.split, split), r.data.vocab, model.encoder.max_len);
  if (triplets.empty()) throw InvalidInput("split '" + split + "' selects no sentence pairs");
  const auto pairs = alignment_breakdown(r.ckpt.params, model, triplets);
  const double mean = (pairs[0].second + pairs[1].second) / 2.0;
  nlohmann::ordered_json j;
  j["split"] = split;
  j["checkpoint"] = ckpt.empty() ? "ckpt/final.json" : ckpt;
  j["n"] = triplets.size();
  j["mean"] = mean;
  nlohmann::ordered_json pj;
  for (const auto& [name, v] : pairs) pj[name] = v;
  j["pairs"] = pj;
  write_json_file(out_path(r.config, "reports/alignment_" + split + ".json"), j);
  std::printf("%.6f\n", mean);
  for (const auto& [name, v] : pairs) std::printf("  %s %.6f\n", name.c_str(), v);
  return 0;
}

// ---- ablation ----------------------------------------------------------------

int cmd_ablation(const CommonFlags& f) {
  RunConfig c = base_config(f);
  if (f.seed) {
    if (corpus_present(c)) {
      c.seed = *f.seed;
      c.train.seed = *f.seed;
    } else {
      c.apply_seed(*f.seed);
    }
  }
  c.validate();
  RunData d;
  if (corpus_present(c)) {
    d = load_run_data(c);
  } else {
    d = generate_run_data(c);
    write_run_data(c, d);
  }
  c.model = resolve_model(c.model, d.vocab, d.corpus);
  write_config(c);
  const PreparedData prep = prepare_data(d.corpus, d.split, d.vocab, c.model.encoder.max_len);
  AblationInput in;
  in.data = prep.data;
  in.test = prep.test;
  in.split_hash = d.split.hash();
  in.model = c.model;
  in.train = c.train;
  in.meta = c.meta;
  in.init_seed = init_seed(c.seed);
  const AblationResult res = ablation_suite(in);
  write_text_file(out_path(c, "reports/ablation.csv"), res.to_csv());
  write_json_file(out_path(c, "reports/ablation.json"), res.to_json());
  std::printf("%s", res.to_csv().c_str());
  for (const auto& row : res.rows) {
    if (!row.error.empty()) std::fprintf(stderr, "%s failed: %s\n", variant_name(row.variant).c_str(), row.error.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual multi-task meta-learning text classifier"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, align_flags, abl_flags;

  auto* gen = app.add_subcommand("gen-corpus", "Write corpus, vocabulary and split files");
  add_common(gen, gen_flags);
  std::optional<std::size_t> classes, per_class;
  std::string csv;
  gen->add_option("--classes", classes, "Number of classes");
  gen->add_option("--per-class", per_class, "Triplets per class");
  gen->add_option("--csv", csv, "Load a CSV (text, hindi, bengali, label) instead of generating");

  auto* train = app.add_subcommand("train", "Run the training phases of a variant");
  add_common(train, train_flags);
  TrainFlags tf;
  train->add_option("--variant", tf.variant, "V1, V2, V3 or V4");
  train->add_option("--resume", tf.resume, "Checkpoint manifest to continue from");
  train->add_option("--epochs", tf.epochs, "Epochs for phases 1-4")->delimiter(',');
  train->add_option("--stop-after-epochs", tf.stop_after, "Stop after this many epochs (for resume testing)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint per language");
  add_common(ev, eval_flags);
  std::string ev_ckpt, ev_split = "test", ev_lang = "all";
  bool zero_shot = false;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint manifest (default <out>/ckpt/final.json)");
  ev->add_option("--split", ev_split, "train, val or test")->capture_default_str();
  ev->add_option("--language", ev_lang, "L1, L2, L3 or all")->capture_default_str();
  ev->add_flag("--zero-shot", zero_shot, "Require the language's labels to be unused in training");

  auto* al = app.add_subcommand("verify-alignment", "Mean cosine of aligned sentence projections");
  add_common(al, align_flags);
  std::string al_ckpt, al_split = "val";
  al->add_option("--ckpt", al_ckpt, "Checkpoint manifest (default <out>/ckpt/final.json)");
  al->add_option("--split", al_split, "train, val or test")->capture_default_str();

  auto* abl = app.add_subcommand("ablation", "Train V1-V4 and compare zero-shot scores");
  add_common(abl, abl_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(gen_flags, classes, per_class, csv);
    if (train->parsed()) return cmd_train(train_flags, tf);
    if (ev->parsed()) return cmd_eval(eval_flags, ev_ckpt, ev_split, ev_lang, zero_shot);
    if (al->parsed()) return cmd_verify_alignment(align_flags, al_ckpt, al_split);
    if (abl->parsed()) return cmd_ablation(abl_flags);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", e.kind().c_str(), e.what());
    return exit_code(e);
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error (schema): %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error (io): %s\n", e.what());
    return 4;
  }
  return 0;
}
