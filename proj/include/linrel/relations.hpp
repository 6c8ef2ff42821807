#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "linrel/model.hpp"
#include "linrel/prompt.hpp"
#include "linrel/tokenizer.hpp"
#include "linrel/train.hpp"

namespace linrel {

struct Sample {
  std::string subject;
  std::string object;
};

struct Relation {
  std::string name;
  std::string category; // factual | commonsense | linguistic | bias | synthetic
  std::vector<std::string> prompt_templates; // each contains exactly one "{}"
  std::vector<Sample> samples;               // unique subjects

  void validate() const; // throws DatasetError naming the offending field
  std::string fill_template(int template_index, const std::string& subject) const;
  std::string statement(int template_index, const Sample& sample) const;
  std::vector<std::string> object_set() const; // distinct objects, first-seen order
};

/// JSON schema: {"name", "category", "prompt_templates", "samples":
/// [{"subject","object"}]}; either a single relation object or an array.
std::vector<Relation> load_relations(const std::string& path);
void save_relations(const std::vector<Relation>& relations, const std::string& path);
std::vector<Relation> parse_relations_json(const std::string& text);
std::string relations_to_json(const std::vector<Relation>& relations);

/// Everything the tokenizer needs for these relations, plus "\n" and the
/// instruction words used by the distraction harness; sorted for determinism.
Vocabulary build_vocabulary(std::span<const Relation> relations, int pad_to = 0);

Prompt build_prompt(const Relation& relation, const Sample& target,
                    std::span<const Sample> icl, int template_index, PromptMode mode,
                    const Vocabulary& vocab);

/// First token id of a sample's object string.
int object_first_token(const Vocabulary& vocab, const Sample& sample);

struct FilterResult {
  std::vector<Sample> known;
  int attempted = 0;
  int correct = 0;
};

/// Keeps samples whose first object token is the model argmax under a
/// fewshot prompt with n-1 in-context examples drawn at random from the rest
/// of the relation.
FilterResult filter_known(const TransformerLM& model, const Relation& relation, int n,
                          std::uint64_t seed, int template_index = 0);

struct Trial {
  std::vector<Sample> train; // n samples, in (shuffled) draw order
  std::vector<Sample> test;  // the remaining known samples
};

std::vector<Trial> sample_trials(std::span<const Sample> known, int n, int trials,
                                 std::uint64_t seed);

struct SyntheticSpec {
  int relations = 1;
  int subjects = 60;
  int objects = 10;
  int templates = 1; // up to 2 template forms per relation
  std::uint64_t seed = 0;
};

/// Controlled-|domain|/|range| relations over a shared subject pool, e.g.
/// relation "r0" with statements like "s_17 maps-to-r0 o_3". Object
/// assignment is balanced, so the squared-frequency guess rate is
/// 1/objects.
std::vector<Relation> gen_synthetic_relations(const SyntheticSpec& spec);

/// Training sequences: the relation statements grouped into newline-joined
/// chunks of varying size under a token budget (covering the position range
/// eval prompts use), reshuffled per epoch.
std::vector<std::vector<int>> build_training_corpus(std::span<const Relation> relations,
                                                    const Vocabulary& vocab, int epochs,
                                                    int max_tokens, std::uint64_t seed);

/// Zero-shot probes ("statement accuracy"): one truncated statement per
/// sample per template, target = first object token.
std::vector<EvalStatement> build_eval_statements(std::span<const Relation> relations,
                                                 const Vocabulary& vocab);

} // namespace linrel
