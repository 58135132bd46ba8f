#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "clm/corpus.hpp"
#include "clm/error.hpp"

using namespace clm;

namespace {

Corpus corpus_of(std::vector<std::string> l1) {
  Corpus c;
  c.label_names = {"x"};
  for (std::size_t i = 0; i < l1.size(); ++i) c.examples.push_back({{l1[i], "", ""}, 0, i});
  return c;
}

std::string strip_ws(std::string s) {
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }), s.end());
  return s;
}

}  // namespace

TEST_CASE("synthetic corpus is balanced and sized") {
  SyntheticCorpus sc = generate_synthetic_corpus({});
  CHECK(sc.corpus.examples.size() == 1200);
  CHECK(sc.corpus.num_classes() == 24);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& t : sc.corpus.examples) ++counts[t.label];
  for (std::size_t c = 0; c < 24; ++c) CHECK(counts[c] == 50);

  SyntheticSpec tiny;
  tiny.num_classes = 2;
  tiny.samples_per_class = 2;
  tiny.seed = 0;
  SyntheticCorpus small = generate_synthetic_corpus(tiny);
  std::multiset<std::size_t> labels;
  for (const auto& t : small.corpus.examples) labels.insert(t.label);
  CHECK(labels == std::multiset<std::size_t>{0, 0, 1, 1});

  tiny.num_classes = 1;
  CHECK_THROWS_AS(generate_synthetic_corpus(tiny), ValidationError);
}

TEST_CASE("synthetic translations follow injective, disjoint lexicons") {
  SyntheticCorpus sc = generate_synthetic_corpus({});
  for (const auto& t : sc.corpus.examples) {
    REQUIRE_FALSE(t.text(Language::L1).empty());
    CHECK(translate(t.text(Language::L1), sc.to_l2) == t.text(Language::L2));
    CHECK(translate(t.text(Language::L1), sc.to_l3) == t.text(Language::L3));
  }
  std::set<std::string> l1, l2, l3;
  for (const auto& [src, dst] : sc.to_l2) {
    l1.insert(src);
    l2.insert(dst);
  }
  for (const auto& [src, dst] : sc.to_l3) l3.insert(dst);
  CHECK(l2.size() == sc.to_l2.size());
  CHECK(l3.size() == sc.to_l3.size());
  for (const auto& w : l2) {
    CHECK(l1.count(w) == 0);
    CHECK(l3.count(w) == 0);
  }
  for (const auto& w : l3) CHECK(l1.count(w) == 0);

  // Class words are private to their class.
  std::map<std::string, std::size_t> owner;
  for (std::size_t c = 0; c < sc.class_words.size(); ++c)
    for (const auto& w : sc.class_words[c]) CHECK(owner.emplace(w, c).second);
}

TEST_CASE("synthetic corpus is deterministic in its seed") {
  SyntheticSpec s;
  auto a = generate_synthetic_corpus(s);
  auto b = generate_synthetic_corpus(s);
  CHECK(to_jsonl(a.corpus) == to_jsonl(b.corpus));
  s.seed = 8;
  auto c = generate_synthetic_corpus(s);
  CHECK(to_jsonl(a.corpus) != to_jsonl(c.corpus));
}

TEST_CASE("csv loading maps labels by first appearance") {
  const std::string csv =
      "text,hindi,bengali,label\n"
      "fever rash,h1 h2,b1 b2,Dengue\n"
      "chills,h3,b3,Malaria\n"
      "\"pain, joints\",\"h \"\"q\"\"\",b4,Dengue\n";
  Corpus c = parse_csv(csv);
  REQUIRE(c.examples.size() == 3);
  CHECK(c.examples[0].label == 0);
  CHECK(c.examples[1].label == 1);
  CHECK(c.examples[2].label == 0);
  CHECK(c.label_names == std::vector<std::string>{"Dengue", "Malaria"});
  CHECK(c.examples[2].text(Language::L1) == "pain, joints");
  CHECK(c.examples[2].text(Language::L2) == "h \"q\"");

  CHECK(strip_ws(to_csv(c)) == strip_ws(csv));

  // Columns may come in any order.
  Corpus reordered = parse_csv("label,bengali,text,hindi\nA,b,t,h\n");
  CHECK(reordered.examples[0].text(Language::L1) == "t");
  CHECK(reordered.examples[0].text(Language::L3) == "b");
}

TEST_CASE("csv errors") {
  CHECK_THROWS_AS(parse_csv("text,hindi,label\nA,b,c\n"), SchemaError);
  try {
    parse_csv("text,hindi,bengali,label\na,b,c,X\na,,c,X\n");
    FAIL("expected RowError");
  } catch (const RowError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  std::vector<std::string> fixed{"Dengue"};
  CHECK_THROWS_AS(parse_csv("text,hindi,bengali,label\na,b,c,Malaria\n", {}, fixed), LabelError);
  Corpus ok = parse_csv("text,hindi,bengali,label\na,b,c,Dengue\n", {}, fixed);
  CHECK(ok.examples[0].label == 0);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), IoError);
}

TEST_CASE("csv file round trip") {
  auto sc = generate_synthetic_corpus({});
  auto path = std::filesystem::temp_directory_path() / "clm_corpus_roundtrip.csv";
  write_csv(sc.corpus, path);
  Corpus back = load_csv(path);
  CHECK(back.label_names == sc.corpus.label_names);
  REQUIRE(back.examples.size() == sc.corpus.examples.size());
  for (std::size_t i = 0; i < back.examples.size(); ++i) {
    CHECK(back.examples[i].texts == sc.corpus.examples[i].texts);
    CHECK(back.examples[i].label == sc.corpus.examples[i].label);
  }
  std::filesystem::remove(path);
}

TEST_CASE("jsonl round trip and errors") {
  auto sc = generate_synthetic_corpus({});
  const std::string text = to_jsonl(sc.corpus);
  Corpus back = parse_jsonl(text);
  CHECK(to_jsonl(back) == text);
  CHECK_THROWS_AS(parse_jsonl("{\"text\": \"a\", \"hindi\": \"b\", \"label\": \"x\"}\n"), SchemaError);
  CHECK_THROWS_AS(parse_jsonl("{not json}\n"), RowError);
}

TEST_CASE("vocab ordering and reserved ids") {
  Vocab v = Vocab::build(corpus_of({"a a b"}), 1);
  CHECK(v.id("[PAD]") == 0);
  CHECK(v.id("[CLS]") == 1);
  CHECK(v.id("[SEP]") == 2);
  CHECK(v.id("[UNK]") == 3);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
  CHECK(v.size() == 6);

  Vocab v2 = Vocab::build(corpus_of({"a a b"}), 2);
  CHECK(v2.id("b") == Vocab::kUnk);
  CHECK(v2.id("never") == Vocab::kUnk);

  // Count-desc then lexicographic.
  Vocab v3 = Vocab::build(corpus_of({"z y y x", "x w"}), 1);
  CHECK(v3.id("x") == 4);
  CHECK(v3.id("y") == 5);
  CHECK(v3.id("w") == 6);
  CHECK(v3.id("z") == 7);

  auto sc = generate_synthetic_corpus({});
  Vocab a = Vocab::build(sc.corpus), b = Vocab::build(sc.corpus);
  CHECK(a == b);
  CHECK(a.hash() == b.hash());
  CHECK(Vocab::from_json(a.to_json()) == a);

  CHECK_THROWS_AS(Vocab::from_json(nlohmann::json{{"[PAD]", 0}, {"a", 2}}), SchemaError);
  CHECK_THROWS_AS(Vocab::from_json(nlohmann::json{{"[CLS]", 0}, {"[PAD]", 1}, {"[SEP]", 2}, {"[UNK]", 3}}),
                  SchemaError);
}

TEST_CASE("encoding layout") {
  Vocab v = Vocab::build(corpus_of({"a a b"}), 1);
  EncodedExample e = encode("a b", v, 5);
  CHECK(e.ids == std::vector<std::size_t>{1, 4, 5, 2, 0});
  CHECK(e.mask == std::vector<std::uint8_t>{1, 1, 1, 1, 0});

  EncodedExample empty = encode("   ", v, 4);
  CHECK(empty.ids == std::vector<std::size_t>{1, 2, 0, 0});
  CHECK(empty.length() == 2);

  CHECK_THROWS_AS(encode("a", v, 2), ValidationError);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t max_len = 3 + rng() % 10;
    std::size_t words = rng() % 20;
    std::string text;
    for (std::size_t i = 0; i < words; ++i) text += (rng() % 2 ? "a " : "b ");
    EncodedExample ex = encode(text, v, max_len);
    CHECK(ex.ids.size() == max_len);
    std::size_t n = ex.length();
    CHECK(n == std::min(words, max_len - 2) + 2);
    CHECK(ex.ids[0] == Vocab::kCls);
    CHECK(ex.ids[n - 1] == Vocab::kSep);
    for (std::size_t i = 0; i < max_len; ++i) CHECK((ex.mask[i] == 1) == (ex.ids[i] != Vocab::kPad));
    if (words <= max_len - 2) {
      std::string expect;
      for (std::size_t i = 0; i < words; ++i) expect += (i ? " " : "") + std::string(1, text[2 * i]);
      CHECK(decode(ex, v) == expect);
    }
  }
}

TEST_CASE("stratified split") {
  auto sc = generate_synthetic_corpus({});
  Split s = split_corpus(sc.corpus, {});
  CHECK(s.train.size() == 840);
  CHECK(s.val.size() == 180);
  CHECK(s.test.size() == 180);
  CHECK(s.warnings.empty());

  std::set<std::size_t> all;
  for (auto* part : {&s.train, &s.val, &s.test})
    for (auto id : *part) CHECK(all.insert(id).second);
  CHECK(all.size() == 1200);

  std::map<std::size_t, std::array<std::size_t, 3>> per_class;
  std::array<const std::vector<std::size_t>*, 3> parts{&s.train, &s.val, &s.test};
  for (std::size_t k = 0; k < 3; ++k)
    for (auto id : *parts[k]) ++per_class[sc.corpus.examples[id].label][k];
  for (const auto& [label, a] : per_class) {
    CHECK(a[0] == 35);
    CHECK(a[1] >= 7);
    CHECK(a[1] <= 8);
    CHECK(a[2] >= 7);
    CHECK(a[2] <= 8);
  }

  Split again = split_corpus(sc.corpus, {});
  CHECK(again.train == s.train);
  CHECK(again.hash() == s.hash());
  Split back = Split::from_json(s.to_json());
  CHECK(back.test == s.test);
  CHECK(back.hash() == s.hash());

  SplitSpec other;
  other.seed = 9;
  CHECK(split_corpus(sc.corpus, other).hash() != s.hash());
}

TEST_CASE("split edge cases") {
  SyntheticSpec tiny;
  tiny.num_classes = 2;
  tiny.samples_per_class = 2;
  auto sc = generate_synthetic_corpus(tiny);
  Split s = split_corpus(sc.corpus, {});
  CHECK_FALSE(s.warnings.empty());
  CHECK(s.train.size() + s.val.size() + s.test.size() == 4);

  SplitSpec bad;
  bad.train = 0.8;
  CHECK_THROWS_AS(split_corpus(sc.corpus, bad), ValidationError);

  SplitSpec flat;
  flat.stratified = false;
  auto big = generate_synthetic_corpus({});
  Split f = split_corpus(big.corpus, flat);
  CHECK(f.train.size() == 840);
  CHECK(f.val.size() == 180);
}

TEST_CASE("encoded triplets share id and label") {
  auto sc = generate_synthetic_corpus({});
  Vocab v = Vocab::build(sc.corpus);
  auto enc = encode_triplets(sc.corpus, {0, 5, 9}, v, 32);
  REQUIRE(enc.size() == 3);
  for (const auto& t : enc) {
    for (Language l : kLanguages) {
      CHECK(t.view(l).language == l);
      CHECK(t.view(l).label == t.label);
      CHECK(t.view(l).triplet_id == t.id);
      CHECK(decode(t.view(l), v) == sc.corpus.examples[t.id].text(l));
    }
  }
  auto l2 = language_view(enc, Language::L2);
  CHECK(l2.size() == 3);
  CHECK(l2[1].ids == enc[1].view(Language::L2).ids);
}
