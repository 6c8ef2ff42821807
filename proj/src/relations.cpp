#include "linrel/relations.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "linrel/errors.hpp"
#include "linrel/rng.hpp"

namespace linrel {

namespace {

const std::set<std::string> kCategories = {"factual", "commonsense", "linguistic",
                                           "bias", "synthetic"};

// A clean word string survives the whitespace tokenizer round trip.
bool round_trips(const std::string& s) {
  return !s.empty() && Vocabulary::join_words(Vocabulary::split_words(s)) == s &&
         s.find('\n') == std::string::npos;
}

int placeholder_count(const std::string& tmpl) {
  int count = 0;
  for (const std::string& w : Vocabulary::split_words(tmpl)) {
    if (w == "{}") ++count;
  }
  return count;
}

} // namespace

void Relation::validate() const {
  if (name.empty()) throw DatasetError("relation: empty name");
  const std::string where = "relation '" + name + "': ";
  if (!kCategories.count(category)) {
    throw DatasetError(where + "unknown category '" + category + "'");
  }
  if (prompt_templates.empty()) throw DatasetError(where + "prompt_templates is empty");
  for (const std::string& t : prompt_templates) {
    if (!round_trips(t)) {
      throw DatasetError(where + "template '" + t + "' is not whitespace-normalized");
    }
    if (placeholder_count(t) != 1) {
      throw DatasetError(where + "template '" + t +
                         "' must contain exactly one {} placeholder word");
    }
  }
  if (samples.empty()) throw DatasetError(where + "samples is empty");
  std::set<std::string> seen;
  for (const Sample& s : samples) {
    if (!round_trips(s.subject)) {
      throw DatasetError(where + "subject '" + s.subject + "' is not whitespace-normalized");
    }
    if (!round_trips(s.object)) {
      throw DatasetError(where + "object '" + s.object + "' is not whitespace-normalized");
    }
    if (!seen.insert(s.subject).second) {
      throw DatasetError(where + "duplicate subject '" + s.subject + "'");
    }
  }
}

std::string Relation::fill_template(int template_index, const std::string& subject) const {
  if (template_index < 0 || template_index >= static_cast<int>(prompt_templates.size())) {
    throw ContractError("relation '" + name + "': template index out of range");
  }
  const std::string& tmpl = prompt_templates[static_cast<std::size_t>(template_index)];
  const std::size_t pos = tmpl.find("{}");
  return tmpl.substr(0, pos) + subject + tmpl.substr(pos + 2);
}

std::string Relation::statement(int template_index, const Sample& sample) const {
  return fill_template(template_index, sample.subject) + " " + sample.object;
}

std::vector<std::string> Relation::object_set() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const Sample& s : samples) {
    if (seen.insert(s.object).second) out.push_back(s.object);
  }
  return out;
}

namespace {

Relation relation_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DatasetError("relation entry is not a JSON object");
  Relation r;
  try {
    r.name = j.at("name").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.prompt_templates = j.at("prompt_templates").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      r.samples.push_back({s.at("subject").get<std::string>(),
                           s.at("object").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("relation '" + r.name + "': schema violation: " + e.what());
  }
  r.validate();
  return r;
}

nlohmann::json relation_to_json(const Relation& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const Sample& s : r.samples) {
    samples.push_back({{"subject", s.subject}, {"object", s.object}});
  }
  return {{"name", r.name},
          {"category", r.category},
          {"prompt_templates", r.prompt_templates},
          {"samples", samples}};
}

} // namespace

std::vector<Relation> parse_relations_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("relations file: invalid JSON: ") + e.what());
  }
  std::vector<Relation> out;
  if (j.is_array()) {
    for (const auto& entry : j) out.push_back(relation_from_json(entry));
  } else {
    out.push_back(relation_from_json(j));
  }
  if (out.empty()) throw DatasetError("relations file: no relations");
  return out;
}

std::string relations_to_json(const std::vector<Relation>& relations) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Relation& r : relations) arr.push_back(relation_to_json(r));
  return arr.dump(2) + "\n";
}

std::vector<Relation> load_relations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DatasetError("relations file: cannot open '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_relations_json(buf.str());
}

void save_relations(const std::vector<Relation>& relations, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("relations file: cannot open '" + path + "' for writing");
  os << relations_to_json(relations);
}

Vocabulary build_vocabulary(std::span<const Relation> relations, int pad_to) {
  std::set<std::string> words;
  words.insert("\n");
  words.insert("Repeat");   // distraction-harness instruction line
  words.insert("exactly.");
  for (const Relation& r : relations) {
    for (const std::string& t : r.prompt_templates) {
      for (const std::string& w : Vocabulary::split_words(t)) {
        if (w != "{}") words.insert(w);
      }
    }
    for (const Sample& s : r.samples) {
      for (const std::string& w : Vocabulary::split_words(s.subject)) words.insert(w);
      for (const std::string& w : Vocabulary::split_words(s.object)) words.insert(w);
    }
  }
  for (int i = 0; static_cast<int>(words.size()) < pad_to; ++i) {
    words.insert("w" + std::to_string(i)); // inert filler to reach the target size
  }
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

Prompt build_prompt(const Relation& relation, const Sample& target,
                    std::span<const Sample> icl, int template_index, PromptMode mode,
                    const Vocabulary& vocab) {
  for (const Sample& s : icl) {
    if (s.subject == target.subject) {
      throw ContractError("build_prompt: target subject '" + target.subject +
                          "' also appears in the in-context examples");
    }
  }

  std::vector<std::string> lines;
  switch (mode) {
    case PromptMode::Fewshot:
      for (const Sample& s : icl) lines.push_back(relation.statement(template_index, s));
      lines.push_back(relation.fill_template(template_index, target.subject));
      break;
    case PromptMode::Zeroshot:
      lines.push_back(relation.fill_template(template_index, target.subject));
      break;
    case PromptMode::Nocontext:
      for (const Sample& s : icl) lines.push_back(s.subject + " " + s.object);
      lines.push_back(target.subject);
      break;
  }

  Prompt prompt;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) prompt.text.push_back('\n');
    prompt.text += lines[i];
  }
  prompt.tokens = vocab.encode(prompt.text);
  prompt.icl_count = (mode == PromptMode::Zeroshot) ? 0 : static_cast<int>(icl.size());

  const std::vector<int> subject_tokens = vocab.encode(target.subject);
  const int n = static_cast<int>(prompt.tokens.size());
  const int m = static_cast<int>(subject_tokens.size());
  int found = -1;
  for (int start = 0; start + m <= n; ++start) {
    if (std::equal(subject_tokens.begin(), subject_tokens.end(),
                   prompt.tokens.begin() + start)) {
      found = start;
    }
  }
  if (found < 0) {
    throw DatasetError("build_prompt: subject '" + target.subject +
                       "' not recoverable from the tokenized prompt");
  }
  prompt.subject_first = found;
  prompt.subject_last = found + m - 1;
  return prompt;
}

int object_first_token(const Vocabulary& vocab, const Sample& sample) {
  const std::vector<int> toks = vocab.encode(sample.object);
  if (toks.empty()) throw DatasetError("sample '" + sample.subject + "': object has no tokens");
  return toks.front();
}

FilterResult filter_known(const TransformerLM& model, const Relation& relation, int n,
                          std::uint64_t seed, int template_index) {
  const int total = static_cast<int>(relation.samples.size());
  if (total <= n) {
    throw ContractError("filter_known: relation '" + relation.name + "' has " +
                        std::to_string(total) + " samples, needs more than n=" +
                        std::to_string(n));
  }
  Rng rng(seed);
  FilterResult result;
  result.attempted = total;
  for (int i = 0; i < total; ++i) {
    const Sample& target = relation.samples[static_cast<std::size_t>(i)];
    std::vector<Sample> others;
    others.reserve(static_cast<std::size_t>(total - 1));
    for (int j = 0; j < total; ++j) {
      if (j != i) others.push_back(relation.samples[static_cast<std::size_t>(j)]);
    }
    std::vector<Sample> icl;
    for (int idx : rng.sample_indices(static_cast<int>(others.size()), n - 1)) {
      icl.push_back(others[static_cast<std::size_t>(idx)]);
    }
    const Prompt prompt =
        build_prompt(relation, target, icl, template_index, PromptMode::Fewshot, model.vocab);
    const RelationForwardResult fwd = relation_forward(model, prompt, 0);
    if (fwd.predicted_token == object_first_token(model.vocab, target)) {
      result.known.push_back(target);
      ++result.correct;
    }
  }
  return result;
}

std::vector<Trial> sample_trials(std::span<const Sample> known, int n, int trials,
                                 std::uint64_t seed) {
  const int total = static_cast<int>(known.size());
  if (total <= n) {
    throw ContractError("sample_trials: needs more than n=" + std::to_string(n) +
                        " known samples, got " + std::to_string(total));
  }
  Rng rng(seed);
  std::vector<Trial> out;
  out.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    Trial trial;
    const std::vector<int> idx = rng.sample_indices(total, n);
    std::vector<char> in_train(static_cast<std::size_t>(total), 0);
    for (int i : idx) {
      trial.train.push_back(known[static_cast<std::size_t>(i)]);
      in_train[static_cast<std::size_t>(i)] = 1;
    }
    for (int i = 0; i < total; ++i) {
      if (!in_train[static_cast<std::size_t>(i)]) {
        trial.test.push_back(known[static_cast<std::size_t>(i)]);
      }
    }
    out.push_back(std::move(trial));
  }
  return out;
}

std::vector<Relation> gen_synthetic_relations(const SyntheticSpec& spec) {
  if (spec.relations <= 0 || spec.subjects <= 0 || spec.objects <= 0 ||
      spec.templates <= 0 || spec.templates > 2) {
    throw ContractError("gen_synthetic_relations: bad spec");
  }
  Rng rng(spec.seed);
  std::vector<Relation> out;
  for (int k = 0; k < spec.relations; ++k) {
    Relation r;
    r.name = "r" + std::to_string(k);
    r.category = "synthetic";
    r.prompt_templates.push_back("{} maps-to-r" + std::to_string(k));
    if (spec.templates > 1) {
      r.prompt_templates.push_back("under-r" + std::to_string(k) + " {} becomes");
    }
    // balanced subject->object assignment: each object covers ~subjects/objects
    std::vector<int> assignment(static_cast<std::size_t>(spec.subjects));
    for (int i = 0; i < spec.subjects; ++i) {
      assignment[static_cast<std::size_t>(i)] = i % spec.objects;
    }
    rng.shuffle(assignment);
    for (int i = 0; i < spec.subjects; ++i) {
      r.samples.push_back({"s_" + std::to_string(i),
                           "o_" + std::to_string(assignment[static_cast<std::size_t>(i)])});
    }
    r.validate();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<int>> build_training_corpus(std::span<const Relation> relations,
                                                    const Vocabulary& vocab, int epochs,
                                                    int max_tokens, std::uint64_t seed) {
  if (epochs <= 0) throw ContractError("build_training_corpus: epochs must be positive");
  std::vector<std::vector<int>> statements;
  for (const Relation& r : relations) {
    for (std::size_t t = 0; t < r.prompt_templates.size(); ++t) {
      for (const Sample& s : r.samples) {
        statements.push_back(vocab.encode(r.statement(static_cast<int>(t), s)));
      }
    }
  }
  if (statements.empty()) throw ContractError("build_training_corpus: no statements");
  for (const auto& st : statements) {
    if (static_cast<int>(st.size()) > max_tokens) {
      throw ContractError("build_training_corpus: statement exceeds token budget");
    }
  }

  const int newline = vocab.id("\n");
  Rng rng(seed);
  std::vector<std::vector<int>> corpus;
  std::vector<int> order(statements.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const int want = 3 + rng.uniform_int(6); // 3..8 statements per chunk
      std::vector<int> seq;
      int taken = 0;
      while (cursor < order.size() && taken < want) {
        const auto& st = statements[static_cast<std::size_t>(order[cursor])];
        const int extra = static_cast<int>(st.size()) + (seq.empty() ? 0 : 1);
        if (!seq.empty() && static_cast<int>(seq.size()) + extra > max_tokens) break;
        if (!seq.empty()) seq.push_back(newline);
        seq.insert(seq.end(), st.begin(), st.end());
        ++cursor;
        ++taken;
      }
      corpus.push_back(std::move(seq));
    }
  }
  return corpus;
}

std::vector<EvalStatement> build_eval_statements(std::span<const Relation> relations,
                                                 const Vocabulary& vocab) {
  std::vector<EvalStatement> out;
  for (const Relation& r : relations) {
    for (std::size_t t = 0; t < r.prompt_templates.size(); ++t) {
      for (const Sample& s : r.samples) {
        EvalStatement st;
        st.tokens = vocab.encode(r.fill_template(static_cast<int>(t), s.subject));
        st.target = object_first_token(vocab, s);
        out.push_back(std::move(st));
      }
    }
  }
  return out;
}

} // namespace linrel
