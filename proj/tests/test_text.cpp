#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "jessi/metrics.hpp"
#include "jessi/text.hpp"

using namespace jessi;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

// Independent cue matcher for the generated corpus.
int oracle_label(const std::vector<std::string>& t) {
  auto starts = [&](std::initializer_list<const char*> prefix) {
    if (t.size() < prefix.size()) return false;
    std::size_t i = 0;
    for (const char* p : prefix)
      if (t[i++] != p) return false;
    return true;
  };
  if (starts({"please"}) || starts({"you", "should"}) || starts({"i", "suggest"}) ||
      starts({"it", "would", "be", "great", "if"}))
    return 1;
  return 0;
}

}  // namespace

TEST_CASE("tokenize applies the stated rules") {
  CHECK(tokenize("Please add USB-C!") ==
        std::vector<std::string>{"please", "add", "usb-c", "!"});
  CHECK(tokenize("OK") == std::vector<std::string>{"ok"});
  CHECK(tokenize("don't stop...") == std::vector<std::string>{"don't", "stop", ".", ".", "."});
  CHECK(tokenize("a- -b a--b") == std::vector<std::string>{"a", "-", "-", "b", "a", "-", "-", "b"});
  CHECK(tokenize("x1y2  ,world") == std::vector<std::string>{"x1y2", ",", "world"});
  CHECK_THROWS_AS(tokenize("   \t  "), ValueError);
  CHECK_THROWS_AS(tokenize(""), ValueError);
}

TEST_CASE("tokenize of joined lowercase tokens is idempotent") {
  RngStream rng(21);
  SynthSpec spec;
  spec.n_train = 50;
  spec.n_trial_a = 5;
  spec.n_trial_b = 5;
  spec.n_test_a = 5;
  spec.n_test_b = 5;
  SynthCorpus corpus = synth_generate(spec, rng);
  for (const auto& ex : corpus.train) {
    auto tokens = tokenize(ex.sentence);
    CHECK(tokenize(join(tokens)) == tokens);
  }
  // and on punctuation-heavy text
  auto tokens = tokenize("Well -- it isn't \"great\", is it?!");
  CHECK(tokenize(join(tokens)) == tokens);
}

TEST_CASE("load_dataset parses, validates and counts") {
  const std::string path = temp_path("jessi_data_basic.csv");
  {
    std::ofstream out(path);
    out << "id,sentence,label\n";
    out << "a1,Add more ports please,1\n";
    out << "a2,\"The screen, as shipped, is fine\",0\n";
  }
  auto rows = load_dataset(path, Domain::SourceA, true);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].id == "a1");
  CHECK(rows[0].label == 1);
  CHECK(rows[1].sentence == "The screen, as shipped, is fine");
  CHECK(rows[1].label == 0);
  CHECK(rows[1].domain == Domain::SourceA);
  std::remove(path.c_str());
}

TEST_CASE("load_dataset rejects a bad label naming the line") {
  const std::string path = temp_path("jessi_data_badlabel.csv");
  {
    std::ofstream out(path);
    out << "id,sentence,label\n";
    out << "a1,fine sentence,1\n";
    out << "a2,another one,2\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path, Domain::SourceA, true), doctest::Contains(":3:"),
                       ParseError);
  std::remove(path.c_str());
}

TEST_CASE("load_dataset handles 8230 rows") {
  const std::string path = temp_path("jessi_data_large.csv");
  {
    std::ofstream out(path);
    out << "id,sentence,label\n";
    for (int i = 0; i < 8230; ++i) out << "r" << i << ",some sentence here," << (i % 2) << "\n";
  }
  CHECK(load_dataset(path, Domain::SourceA, true).size() == 8230);
  std::remove(path.c_str());
}

TEST_CASE("dataset write/load round-trip is identity") {
  RngStream rng(5);
  SynthSpec spec;
  spec.n_train = 40;
  spec.n_trial_a = 4;
  spec.n_trial_b = 4;
  spec.n_test_a = 4;
  spec.n_test_b = 4;
  SynthCorpus corpus = synth_generate(spec, rng);
  corpus.train[0].sentence += ", with a \"quoted\" twist";

  const std::string path = temp_path("jessi_data_roundtrip.csv");
  write_dataset(path, corpus.train, true);
  auto reloaded = load_dataset(path, Domain::SourceA, true);
  CHECK(reloaded == corpus.train);

  // unlabeled round-trip drops labels
  std::vector<RawExample> unlabeled = corpus.trial_b;
  for (auto& ex : unlabeled) ex.label = -1;
  write_dataset(path, unlabeled, false);
  auto reloaded2 = load_dataset(path, Domain::TargetB, false);
  CHECK(reloaded2 == unlabeled);
  std::remove(path.c_str());
}

TEST_CASE("build_vocab ordering and threshold") {
  Vocab v = build_vocab({tokenize("a a b")}, 1);
  CHECK(v.lookup("<pad>") == 0);
  CHECK(v.lookup("<unk>") == 1);
  CHECK(v.lookup("a") == 2);
  CHECK(v.lookup("b") == 3);
  CHECK(v.size() == 4);

  Vocab v2 = build_vocab({tokenize("a a b")}, 2);
  CHECK(v2.lookup("a") == 2);
  CHECK(v2.lookup("b") == Vocab::kUnk);
}

TEST_CASE("build_vocab indices are gapless") {
  RngStream rng(9);
  SynthSpec spec;
  spec.n_train = 120;
  spec.n_trial_a = 10;
  spec.n_trial_b = 10;
  spec.n_test_a = 10;
  spec.n_test_b = 10;
  SynthCorpus corpus = synth_generate(spec, rng);
  std::vector<std::vector<std::string>> tokens;
  for (const auto& ex : corpus.train) tokens.push_back(tokenize(ex.sentence));
  Vocab v = build_vocab(tokens, 1);

  std::set<std::int32_t> seen;
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v.lookup(v.token(static_cast<std::int32_t>(i))) == static_cast<std::int32_t>(i));
    seen.insert(static_cast<std::int32_t>(i));
  }
  CHECK(seen.size() == v.size());
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == static_cast<std::int32_t>(v.size()) - 1);
}

TEST_CASE("load_embeddings copies file rows, zeroes PAD, bounds the rest") {
  Vocab v = build_vocab({tokenize("alpha beta gamma")}, 1);
  const std::string path = temp_path("jessi_emb.txt");
  {
    std::ofstream out(path);
    out << "alpha 0.5 -0.5 1.25\n";
    out << "beta 1 2 3\n";
    out << "gamma -1 -2 -3\n";
    out << "unused 9 9 9\n";
  }
  RngStream rng(33);
  Tensor<float> table = load_embeddings<float>(path, v, 3, rng);
  REQUIRE(table.shape == std::vector<std::size_t>{5, 3});
  for (std::size_t j = 0; j < 3; ++j) CHECK(table(0, j) == 0.0f);  // PAD
  CHECK(table(v.lookup("alpha"), 0) == 0.5f);
  CHECK(table(v.lookup("alpha"), 2) == 1.25f);
  CHECK(table(v.lookup("beta"), 1) == 2.0f);
  CHECK(table(v.lookup("gamma"), 2) == -3.0f);

  // word absent from the file: random rows live in [-0.25, 0.25] across seeds
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    RngStream r(seed);
    Tensor<float> t = load_embeddings<float>("", v, 3, r);
    for (std::size_t row = 1; row < t.shape[0]; ++row)
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(t(row, j) >= -0.25f);
        CHECK(t(row, j) <= 0.25f);
      }
  }

  // dimension mismatch names the line
  {
    std::ofstream out(path);
    out << "alpha 1 2 3\n";
    out << "beta 1 2\n";
  }
  RngStream r2(1);
  CHECK_THROWS_WITH_AS(load_embeddings<float>(path, v, 3, r2), doctest::Contains(":2:"),
                       ParseError);
  std::remove(path.c_str());
}

TEST_CASE("make_batches sizes, order and replay") {
  std::vector<RawExample> raws;
  for (int i = 0; i < 70; ++i)
    raws.push_back({strf("id%02d", i), strf("token%d word", i), i % 2, Domain::SourceA});
  Vocab v = build_vocab({tokenize("word")}, 1);
  auto encoded = encode_examples(raws, v);

  RngStream rng(1);
  auto batches = make_batches(encoded, 32, false, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size == 32);
  CHECK(batches[1].size == 32);
  CHECK(batches[2].size == 6);
  CHECK(batches[0].ids[0] == "id00");  // shuffle=false keeps order
  CHECK(batches[2].ids[5] == "id69");

  // mask rows have exactly lengths[i] leading ones
  const Batch& b0 = batches[0];
  for (std::size_t r = 0; r < b0.size; ++r) {
    std::size_t ones = 0;
    bool trailing = false;
    for (std::size_t t = 0; t < b0.max_len; ++t) {
      if (b0.mask[r * b0.max_len + t] == 1.0f) {
        CHECK(!trailing);
        ++ones;
      } else {
        trailing = true;
        CHECK(b0.token_ids[r * b0.max_len + t] == Vocab::kPad);
      }
    }
    CHECK(ones == b0.lengths[r]);
  }

  // epoch partition: multiset of ids equals the input multiset
  RngStream shuffled_rng(7);
  auto shuffled = make_batches(encoded, 32, true, shuffled_rng);
  std::multiset<std::string> seen, want;
  for (const auto& ex : raws) want.insert(ex.id);
  for (const auto& b : shuffled)
    for (const auto& id : b.ids) seen.insert(id);
  CHECK(seen == want);

  // same seed, same composition
  RngStream replay(7);
  auto again = make_batches(encoded, 32, true, replay);
  REQUIRE(again.size() == shuffled.size());
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].ids == shuffled[i].ids);
}

TEST_CASE("synth corpus honors the spec contract") {
  RngStream rng(2024);
  SynthSpec spec;
  spec.n_train = 1000;
  spec.n_trial_a = 50;
  spec.n_trial_b = 50;
  spec.n_test_a = 60;
  spec.n_test_b = 60;
  spec.positive_rate = 0.5;
  SynthCorpus corpus = synth_generate(spec, rng);

  std::size_t positives = 0;
  for (const auto& ex : corpus.train) positives += ex.label == 1;
  CHECK(positives == 500);

  // disjoint content lexicons
  std::set<std::string> a(synth_lexicon_a().begin(), synth_lexicon_a().end());
  for (const auto& w : synth_lexicon_b()) CHECK(a.count(w) == 0);

  // template-matcher oracle is perfect on every split
  for (const auto* split : {&corpus.train, &corpus.trial_a, &corpus.trial_b, &corpus.test_a,
                            &corpus.test_b}) {
    std::vector<int> pred, gold;
    for (const auto& ex : *split) {
      pred.push_back(oracle_label(tokenize(ex.sentence)));
      gold.push_back(ex.label);
    }
    CHECK(prf1(pred, gold).f1 == 1.0);
  }

  // deterministic per seed
  RngStream rng2(2024);
  SynthCorpus again = synth_generate(spec, rng2);
  CHECK(again.train == corpus.train);
  CHECK(again.test_b == corpus.test_b);

  CHECK_THROWS_AS(synth_generate(SynthSpec{0, 1, 1, 1, 1, 0.5}, rng), ValueError);
}
