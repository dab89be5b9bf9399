#include <algorithm>
#include <cmath>
#include <set>

#include "curated_prompts.hpp"
#include "test_util.hpp"
#include "textseg/embedding.hpp"
#include "textseg/prompt.hpp"

using namespace textseg;
using testutil::expect_error;

namespace {

std::vector<int> present(const ParsedPrompt& p) { return p.organs(); }

LabelMap map_with(std::initializer_list<int> ids) {
  LabelMap l({1, 1, 16}, {});
  std::size_t i = 0;
  for (int id : ids) l.data[i++] = static_cast<std::uint8_t>(id);
  return l;
}

}  // namespace

TEST_CASE("parse_prompt on multi-organ prompts") {
  const auto lex = Lexicon::defaults();
  CHECK(present(parse_prompt("segment the liver and spleenic organ", lex)) == std::vector<int>{1, 6});
  CHECK(present(parse_prompt("Create a segmentation mask of right kidney, spleen, and hepatic organ", lex)) ==
        std::vector<int>{1, 2, 6});
  const auto empty = parse_prompt("", lex);
  CHECK(empty.presence == std::vector<std::uint8_t>(14, 0));
  CHECK(empty.relations.empty());
  CHECK_FALSE(empty.any_organ());
}

TEST_CASE("curated lexicon set parses exactly") {
  const auto lex = Lexicon::defaults();
  for (const auto& c : testutil::curated_prompts()) {
    CAPTURE(c.text);
    const auto p = parse_prompt(c.text, lex);
    CHECK(p.presence[0] == 0);
    CHECK(present(p) == c.organs);
    CHECK(p.relations == c.relations);
  }
}

TEST_CASE("extract_relations") {
  const auto lex = Lexicon::defaults();
  CHECK(extract_relations("the region around the kidney that belongs to the liver", lex) ==
        std::vector<Relation>{{2, 6}, {3, 6}});
  CHECK(extract_relations("segment the liver", lex).empty());
  CHECK(extract_relations("the region around the spleen that belongs to the stomach", lex) ==
        std::vector<Relation>{{1, 7}});
}

TEST_CASE("relation targets are always present") {
  const auto lex = Lexicon::defaults();
  const auto p = parse_prompt("area around the aorta that belongs to the pancreas", lex);
  REQUIRE(p.relations.size() == 1);
  CHECK(p.presence[11] == 1);
}

TEST_CASE("lexicon file round-trip and errors") {
  const auto lex = Lexicon::defaults();
  const auto again = Lexicon::parse(lex.serialize());
  CHECK(again.serialize() == lex.serialize());
  for (const auto& c : testutil::curated_prompts()) CHECK(parse_prompt(c.text, again) == parse_prompt(c.text, lex));

  const auto custom = Lexicon::parse("1|spleen|lien\n6|liver|hepar\nrelation|{TARGET} beside the {ANCHOR}\n");
  CHECK(present(parse_prompt("the hepar beside the lien", custom)) == std::vector<int>{1, 6});
  CHECK(parse_prompt("the hepar beside the lien", custom).relations == std::vector<Relation>{{1, 6}});
  expect_error(ErrorCode::ConfigInvalid, [] { Lexicon::parse("not a lexicon line\n"); });
  expect_error(ErrorCode::ConfigInvalid, [] { Lexicon::parse("1|spleen|\n2|liver|spleen\n"); });
  expect_error(ErrorCode::KeyNotFound, [&] { lex.organ(40); });
}

TEST_CASE("prompt corpus") {
  const auto lex = Lexicon::defaults();
  std::vector<LabelMap> maps{map_with({1, 2, 3, 6, 7}), map_with({6, 7}), map_with({1, 6})};

  SUBCASE("seeded generation is byte-identical") {
    PromptCorpusConfig cfg;
    cfg.n_train = 60;
    cfg.n_val = 20;
    cfg.seed = 7;
    const auto a = generate_prompt_corpus(maps, cfg, lex);
    const auto b = generate_prompt_corpus(maps, cfg, lex);
    REQUIRE(a.size() == 80);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(format_corpus_line(a[i]) == format_corpus_line(b[i]));
  }

  SUBCASE("canonical names only with zero probabilities") {
    PromptCorpusConfig cfg;
    cfg.n_train = 100;
    cfg.n_val = 0;
    cfg.synonym_probability = 0.0;
    cfg.relation_probability = 0.0;
    const auto recs = generate_prompt_corpus(maps, cfg, lex);
    std::set<std::string> synonyms;
    for (const auto& o : lex.organs()) synonyms.insert(o.synonyms.begin(), o.synonyms.end());
    for (const auto& r : recs) {
      CHECK(r.parsed.relations.empty());
      for (const auto& s : synonyms) CHECK(r.text.find(s) == std::string::npos);
    }
  }

  SUBCASE("liver-only map with one organ per prompt") {
    PromptCorpusConfig cfg;
    cfg.n_train = 50;
    cfg.n_val = 10;
    cfg.max_organs = 1;
    cfg.relation_probability = 0.0;
    const auto recs = generate_prompt_corpus({map_with({6})}, cfg, lex);
    for (const auto& r : recs) {
      CAPTURE(r.text);
      CHECK(present(parse_prompt(r.text, lex)) == std::vector<int>{6});
    }
  }

  SUBCASE("every prompt matches its source map and re-parses to its record") {
    PromptCorpusConfig cfg;
    cfg.n_train = 200;
    cfg.n_val = 40;
    cfg.relation_probability = 0.5;
    cfg.seed = 3;
    const auto recs = generate_prompt_corpus(maps, cfg, lex);
    std::size_t with_rel = 0;
    for (const auto& r : recs) {
      CAPTURE(r.text);
      const auto& src = maps[r.source];
      for (int c : r.parsed.organs()) {
        CHECK(std::find(src.data.begin(), src.data.end(), static_cast<std::uint8_t>(c)) != src.data.end());
      }
      CHECK(parse_prompt(r.text, lex) == r.parsed);
      with_rel += r.parsed.relations.empty() ? 0 : 1;
    }
    CHECK(with_rel > 0);
  }

  SUBCASE("corpus file round-trip") {
    testutil::TempDir dir("corpus");
    PromptCorpusConfig cfg;
    cfg.n_train = 30;
    cfg.n_val = 5;
    cfg.relation_probability = 0.5;
    const auto recs = generate_prompt_corpus(maps, cfg, lex);
    save_corpus(recs, dir.file("c.tsv"));
    const auto back = load_corpus(dir.file("c.tsv"));
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(back[i].text == recs[i].text);
      CHECK(back[i].parsed.presence == recs[i].parsed.presence);
      CHECK(back[i].parsed.relations == recs[i].parsed.relations);
    }
    expect_error(ErrorCode::LengthMismatch, [] { parse_corpus_line("liver\t0000001\t", 14); });
  }

  SUBCASE("maps without foreground are rejected") {
    PromptCorpusConfig cfg;
    expect_error(ErrorCode::EmptyForeground, [&] { generate_prompt_corpus({map_with({})}, cfg, lex); });
  }
}

TEST_CASE("hashed embeddings") {
  const auto a = embed_hashed("liver"), b = embed_hashed("liver");
  CHECK(a == b);
  CHECK(a.size() == kEmbeddingDim);
  for (const char* text : {"liver", "segment the liver and spleenic organ", "x"}) {
    const auto t = embed_hashed(text);
    double n = 0.0;
    for (double v : t) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(embed_hashed("Liver  segment") == embed_hashed("liver segment"));
  CHECK(embed_hashed("liver") != embed_hashed("spleen"));
  expect_error(ErrorCode::EmptyPrompt, [] { embed_hashed("  ,;  "); });
}

TEST_CASE("hashed embedding matches an independent recomputation") {
  // Token stream: SplitMix64 seeded with FNV-1a of the token, 53-bit uniform
  // scaled onto [-1, 1); mean over tokens, then L2 normalization.
  auto fnv = [](const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  };
  const std::vector<std::string> tokens{"segment", "the", "liver"};
  std::vector<double> acc(kEmbeddingDim, 0.0);
  for (const auto& tok : tokens) {
    std::uint64_t state = fnv(tok);
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
      std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      z ^= z >> 31;
      acc[i] += static_cast<double>(z >> 11) * 0x1p-53 * 2.0 - 1.0;
    }
  }
  double n = 0.0;
  for (auto& v : acc) {
    v /= 3.0;
    n += v * v;
  }
  n = std::sqrt(n);
  const auto t = embed_hashed("Segment the LIVER");
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) CHECK(t[i] == doctest::Approx(acc[i] / n).epsilon(1e-12));
}

TEST_CASE("embedding table lookup") {
  const auto table = EmbeddingTable::parse("E=4\nsegment the liver\t2 0 0 0\nspleen\t0 3 4 0\n");
  CHECK(embed_lookup("segment   the liver", table) == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  const auto s = embed_lookup("spleen", table);
  CHECK(s[1] == doctest::Approx(0.6));
  CHECK(s[2] == doctest::Approx(0.8));
  expect_error(ErrorCode::KeyNotFound, [&] { embed_lookup("kidney", table); });
  expect_error(ErrorCode::BadTableFormat, [] { EmbeddingTable::parse("E=3\nx\t1 2\n"); });
  expect_error(ErrorCode::BadTableFormat, [] { EmbeddingTable::parse("dim 3\n"); });
}

TEST_CASE("embed_batch") {
  HashedEncoder enc;
  const auto one = embed_batch({"liver"}, enc);
  CHECK(one.rows == 1);
  CHECK(one.row(0) == embed_hashed("liver"));
  const auto dup = embed_batch({"spleen", "spleen"}, enc);
  CHECK(dup.row(0) == dup.row(1));
  try {
    embed_batch({"liver", "", "spleen"}, enc);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyPrompt);
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}
