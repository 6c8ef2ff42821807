#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "linrel/evaluation.hpp"
#include "linrel/lre.hpp"
#include "linrel/model.hpp"
#include "linrel/relations.hpp"

namespace linrel {

struct LensCellEntry {
  std::string token;
  double prob = 0.0;
};

/// rows = layers 0..L, columns = token positions; each cell holds the top-k
/// (token, probability) pairs of the decoded operator output, descending.
struct LensGrid {
  int layers = 0;    // L + 1
  int positions = 0;
  std::vector<std::vector<std::vector<LensCellEntry>>> cells; // [layer][position][k]
  std::vector<std::string> prompt_tokens;
};

/// Decodes D(op(hidden[layer][position])) at every grid cell. With the
/// identity operator this is exactly the logit lens.
LensGrid attribute_lens(const TransformerLM& model, const OperatorFn& op,
                        const Prompt& prompt, int k);
LensGrid attribute_lens(const TransformerLM& model, const LreOperator& op,
                        const Prompt& prompt, int k);

enum class GridFormat { Text, Svg, Json };

/// text: aligned top-1 table; svg: heatmap, fill opacity = top-1 probability;
/// json: lossless serialization (see parse_grid).
std::string render_grid(const LensGrid& grid, GridFormat format);
LensGrid parse_grid(const std::string& json_text);

enum class DistractionMode { Repetition, Instruction, None };

/// RD: the falsehood stated twice, then the truncated statement. ID: the
/// falsehood once, then "Repeat exactly.", then the truncated statement.
/// subject span points at the last subject mention.
Prompt build_distracted_prompt(const Relation& relation, const Sample& sample,
                               const std::string& false_object, DistractionMode mode,
                               const Vocabulary& vocab, int template_index = 0);

struct RecallTable {
  std::vector<int> ks;
  std::vector<double> direct; // model top-k recall under the (distracted) prompt
  std::vector<double> lens;   // lens-cell top-k recall at (probe_layer, last subject token)
  Mat lens_by_layer;          // (L+1) x |ks| per-layer lens recall
  int probe_layer = 0;
};

/// For each known sample, bait the model with a false object and measure
/// whether the true object's first token survives: directly in the output
/// distribution, and through the lens at the subject position.
RecallTable distraction_eval(const TransformerLM& model, const LreOperator& op,
                             const Relation& relation, std::span<const Sample> known,
                             DistractionMode mode, const std::vector<int>& k_list,
                             int probe_layer, std::uint64_t seed, int template_index = 0);

} // namespace linrel
