#include <doctest.h>

#include <filesystem>
#include <set>

#include "fixtures.hpp"
#include "linrel/errors.hpp"
#include "linrel/relations.hpp"

using namespace linrel;

namespace {

Relation capital_relation() {
  Relation r;
  r.name = "country capital city";
  r.category = "factual";
  r.prompt_templates = {"The capital of {} is", "The capital city of {} is"};
  r.samples = {{"Spain", "Madrid"},   {"France", "Paris"},  {"England", "London"},
               {"Norway", "Oslo"},    {"Italy", "Rome"},    {"Greece", "Athens"},
               {"Sri Lanka", "Colombo"}};
  r.validate();
  return r;
}

} // namespace

TEST_CASE("relation JSON loads a single relation object") {
  const std::string text = R"({
    "name": "country capital city",
    "category": "factual",
    "prompt_templates": ["The capital of {} is"],
    "samples": [{"subject": "France", "object": "Paris"},
                {"subject": "Spain", "object": "Madrid"}]
  })";
  const auto relations = parse_relations_json(text);
  REQUIRE(relations.size() == 1);
  CHECK(relations[0].name == "country capital city");
  CHECK(relations[0].prompt_templates[0] == "The capital of {} is");
  CHECK(relations[0].samples.size() == 2);
}

TEST_CASE("schema violations are rejected with named fields") {
  CHECK_THROWS_AS(parse_relations_json(R"({"name":"x","category":"factual",
    "prompt_templates":[],"samples":[{"subject":"a","object":"b"}]})"),
                  DatasetError);
  CHECK_THROWS_AS(parse_relations_json(R"({"name":"x","category":"factual",
    "prompt_templates":["{} is"],"samples":[]})"),
                  DatasetError);
  CHECK_THROWS_AS(parse_relations_json(R"({"name":"x","category":"mystery",
    "prompt_templates":["{} is"],"samples":[{"subject":"a","object":"b"}]})"),
                  DatasetError);
  // duplicate subject
  CHECK_THROWS_AS(parse_relations_json(R"({"name":"x","category":"factual",
    "prompt_templates":["{} is"],
    "samples":[{"subject":"a","object":"b"},{"subject":"a","object":"c"}]})"),
                  DatasetError);
  // two placeholders
  CHECK_THROWS_AS(parse_relations_json(R"({"name":"x","category":"factual",
    "prompt_templates":["{} and {}"],"samples":[{"subject":"a","object":"b"}]})"),
                  DatasetError);
}

TEST_CASE("a 47-relation file loads with the expected category counts") {
  std::vector<Relation> relations;
  auto add = [&relations](const std::string& category, int count) {
    for (int i = 0; i < count; ++i) {
      Relation r;
      r.name = category + " " + std::to_string(i);
      r.category = category;
      r.prompt_templates = {"{} points-to"};
      r.samples = {{"a" + std::to_string(i), "x"}, {"b" + std::to_string(i), "y"}};
      relations.push_back(std::move(r));
    }
  };
  add("factual", 26);
  add("commonsense", 8);
  add("linguistic", 6);
  add("bias", 7);
  REQUIRE(relations.size() == 47);

  const auto reloaded = parse_relations_json(relations_to_json(relations));
  REQUIRE(reloaded.size() == 47);
  std::map<std::string, int> counts;
  for (const auto& r : reloaded) counts[r.category]++;
  CHECK(counts["factual"] == 26);
  CHECK(counts["commonsense"] == 8);
  CHECK(counts["linguistic"] == 6);
  CHECK(counts["bias"] == 7);
}

TEST_CASE("relations survive a JSON round trip semantically intact") {
  const std::vector<Relation> original{capital_relation()};
  const auto reloaded = parse_relations_json(relations_to_json(original));
  REQUIRE(reloaded.size() == 1);
  CHECK(reloaded[0].name == original[0].name);
  CHECK(reloaded[0].category == original[0].category);
  CHECK(reloaded[0].prompt_templates == original[0].prompt_templates);
  REQUIRE(reloaded[0].samples.size() == original[0].samples.size());
  for (std::size_t i = 0; i < original[0].samples.size(); ++i) {
    CHECK(reloaded[0].samples[i].subject == original[0].samples[i].subject);
    CHECK(reloaded[0].samples[i].object == original[0].samples[i].object);
  }
}

TEST_CASE("fewshot prompt renders statements joined by newlines") {
  const Relation rel = capital_relation();
  const Vocabulary vocab = build_vocabulary({&rel, 1});
  const std::vector<Sample> icl{{"Spain", "Madrid"}};
  const Prompt p = build_prompt(rel, {"France", "Paris"}, icl, 0, PromptMode::Fewshot, vocab);
  CHECK(p.text == "The capital of Spain is Madrid\nThe capital of France is");
  CHECK(p.icl_count == 1);
  // span points at the final subject mention and detokenizes to the subject
  std::vector<int> span(p.tokens.begin() + p.subject_first,
                        p.tokens.begin() + p.subject_last + 1);
  CHECK(vocab.decode(span) == "France");
  CHECK(p.subject_last < static_cast<int>(p.tokens.size()) - 1);
}

TEST_CASE("zeroshot prompt is the bare truncated statement") {
  const Relation rel = capital_relation();
  const Vocabulary vocab = build_vocabulary({&rel, 1});
  const std::vector<Sample> icl{{"Spain", "Madrid"}};
  const Prompt p = build_prompt(rel, {"France", "Paris"}, icl, 0, PromptMode::Zeroshot, vocab);
  CHECK(p.text == "The capital of France is");
  CHECK(p.icl_count == 0);
}

TEST_CASE("nocontext prompt drops the relation wording") {
  Relation rel;
  rel.name = "plays sport";
  rel.category = "factual";
  rel.prompt_templates = {"{} plays the sport of"};
  rel.samples = {{"LeBron James", "basketball"}, {"Lionel Messi", "soccer"},
                 {"Roger Federer", "tennis"}};
  rel.validate();
  const Vocabulary vocab = build_vocabulary({&rel, 1});
  const std::vector<Sample> icl{{"LeBron James", "basketball"}};
  const Prompt p =
      build_prompt(rel, {"Lionel Messi", "soccer"}, icl, 0, PromptMode::Nocontext, vocab);
  CHECK(p.text == "LeBron James basketball\nLionel Messi");
  // subject is the final token run in nocontext mode
  CHECK(p.subject_last == static_cast<int>(p.tokens.size()) - 1);
  std::vector<int> span(p.tokens.begin() + p.subject_first,
                        p.tokens.begin() + p.subject_last + 1);
  CHECK(vocab.decode(span) == "Lionel Messi");
}

TEST_CASE("build_prompt rejects a target that appears in the context examples") {
  const Relation rel = capital_relation();
  const Vocabulary vocab = build_vocabulary({&rel, 1});
  const std::vector<Sample> icl{{"France", "Paris"}};
  CHECK_THROWS_AS(build_prompt(rel, {"France", "Paris"}, icl, 0, PromptMode::Fewshot, vocab),
                  ContractError);
}

TEST_CASE("subject spans detokenize correctly across the shipped datasets") {
  // synthetic relations
  SyntheticSpec spec;
  spec.relations = 2;
  spec.subjects = 12;
  spec.objects = 3;
  spec.templates = 2;
  spec.seed = 4;
  const auto synthetic = gen_synthetic_relations(spec);
  const Vocabulary vocab = build_vocabulary(synthetic);
  for (const Relation& rel : synthetic) {
    for (std::size_t t = 0; t < rel.prompt_templates.size(); ++t) {
      for (std::size_t i = 0; i < rel.samples.size(); ++i) {
        std::vector<Sample> icl;
        for (std::size_t j = 0; j < rel.samples.size() && icl.size() < 2; ++j) {
          if (j != i) icl.push_back(rel.samples[j]);
        }
        const Prompt p = build_prompt(rel, rel.samples[i], icl, static_cast<int>(t),
                                      PromptMode::Fewshot, vocab);
        std::vector<int> span(p.tokens.begin() + p.subject_first,
                              p.tokens.begin() + p.subject_last + 1);
        CHECK(vocab.decode(span) == rel.samples[i].subject);
      }
    }
  }
  // demo relations (multi-word subject included)
  const Relation demo = capital_relation();
  const Vocabulary demo_vocab = build_vocabulary({&demo, 1});
  for (const Sample& s : demo.samples) {
    std::vector<Sample> icl;
    for (const Sample& other : demo.samples) {
      if (other.subject != s.subject && icl.size() < 3) icl.push_back(other);
    }
    const Prompt p = build_prompt(demo, s, icl, 1, PromptMode::Fewshot, demo_vocab);
    std::vector<int> span(p.tokens.begin() + p.subject_first,
                          p.tokens.begin() + p.subject_last + 1);
    CHECK(demo_vocab.decode(span) == s.subject);
  }
}

TEST_CASE("filter_known keeps every sample for a perfectly trained model") {
  const auto& w = fixtures::toy_world();
  const Relation& rel = w.relations.front();
  const FilterResult res = filter_known(w.model, rel, 4, 99);
  CHECK(res.attempted == static_cast<int>(rel.samples.size()));
  CHECK(res.correct == res.attempted);
  CHECK(res.known.size() == rel.samples.size());
}

TEST_CASE("filter_known is deterministic in the seed") {
  const auto& w = fixtures::toy_world();
  const Relation& rel = w.relations.front();
  const FilterResult a = filter_known(w.untrained, rel, 4, 7);
  const FilterResult b = filter_known(w.untrained, rel, 4, 7);
  REQUIRE(a.known.size() == b.known.size());
  for (std::size_t i = 0; i < a.known.size(); ++i) {
    CHECK(a.known[i].subject == b.known[i].subject);
  }
}

TEST_CASE("filter_known on an untrained model stays at chance level") {
  // An untrained model has no knowledge of the mapping, so survival cannot
  // systematically beat guessing the object set (1/objects = 0.25 here);
  // the trained twin sits at 1.0.
  const auto& w = fixtures::toy_world();
  const Relation& rel = w.relations.front();
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const FilterResult res = filter_known(w.untrained, rel, 4, seed);
    total += static_cast<double>(res.correct) / res.attempted;
  }
  const double mean_survival = total / 4.0;
  CHECK(mean_survival < 0.5);
}

TEST_CASE("filter_known requires more samples than n") {
  const auto& w = fixtures::toy_world();
  const Relation& rel = w.relations.front();
  CHECK_THROWS_AS(filter_known(w.model, rel, static_cast<int>(rel.samples.size()), 1),
                  ContractError);
}

TEST_CASE("sample_trials draws n distinct train samples per trial") {
  const auto& w = fixtures::toy_world();
  const std::vector<Sample>& known = w.relations.front().samples;
  const auto trials = sample_trials(known, 8, 24, 5);
  REQUIRE(trials.size() == 24);
  for (const Trial& t : trials) {
    CHECK(t.train.size() == 8);
    CHECK(t.test.size() == known.size() - 8);
    std::set<std::string> seen;
    for (const Sample& s : t.train) CHECK(seen.insert(s.subject).second);
    for (const Sample& s : t.test) CHECK(seen.insert(s.subject).second);
  }
}

TEST_CASE("sample_trials boundary: |known| = n + 1 gives singleton test sets") {
  std::vector<Sample> known;
  for (int i = 0; i < 5; ++i) known.push_back({"s" + std::to_string(i), "o"});
  const auto trials = sample_trials(known, 4, 6, 3);
  for (const Trial& t : trials) CHECK(t.test.size() == 1);
  CHECK_THROWS_AS(sample_trials(known, 5, 1, 3), ContractError);
}

TEST_CASE("sample_trials is seed-deterministic and seed-sensitive") {
  const auto& w = fixtures::toy_world();
  const std::vector<Sample>& known = w.relations.front().samples;
  const auto a = sample_trials(known, 6, 4, 1);
  const auto b = sample_trials(known, 6, 4, 1);
  const auto c = sample_trials(known, 6, 4, 2);
  bool same_ab = true, same_ac = true;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].train.size(); ++i) {
      same_ab &= a[t].train[i].subject == b[t].train[i].subject;
      same_ac &= a[t].train[i].subject == c[t].train[i].subject;
    }
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
}

TEST_CASE("synthetic generator balances objects and validates") {
  SyntheticSpec spec;
  spec.relations = 1;
  spec.subjects = 60;
  spec.objects = 10;
  spec.seed = 8;
  const auto rels = gen_synthetic_relations(spec);
  REQUIRE(rels.size() == 1);
  CHECK(rels[0].samples.size() == 60);
  std::map<std::string, int> counts;
  for (const Sample& s : rels[0].samples) counts[s.object]++;
  CHECK(counts.size() == 10);
  for (const auto& [obj, count] : counts) CHECK(count == 6);
}

TEST_CASE("training corpus respects the token budget and covers every statement") {
  SyntheticSpec spec;
  spec.subjects = 10;
  spec.objects = 3;
  spec.seed = 2;
  const auto rels = gen_synthetic_relations(spec);
  const Vocabulary vocab = build_vocabulary(rels);
  const auto corpus = build_training_corpus(rels, vocab, 2, 24, 6);
  int statements = 0;
  for (const auto& seq : corpus) {
    CHECK(seq.size() <= 24);
    CHECK(!seq.empty());
    statements += 1 + static_cast<int>(std::count(seq.begin(), seq.end(), vocab.id("\n")));
  }
  CHECK(statements == 2 * 10); // two epochs over ten statements
}
