#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "linrel/editing.hpp"
#include "linrel/lre.hpp"
#include "linrel/model.hpp"
#include "linrel/relations.hpp"

namespace linrel {

using OperatorFn = std::function<Vec(const Vec&)>;

/// Prompt construction shared by a trial: the same relation, in-context
/// examples (the trial's training set, in trial order), template and mode.
struct PromptPlan {
  const Relation* relation = nullptr;
  std::vector<Sample> icl;
  int template_index = 0;
  PromptMode mode = PromptMode::Fewshot;

  Prompt prompt_for(const Sample& target, const Vocabulary& vocab) const;
};

/// Fraction of test samples where the decoded operator output matches the
/// model's own first-token prediction (not the dataset label).
double eval_faithfulness(const TransformerLM& model, const PromptPlan& plan,
                         std::span<const Sample> test, int layer, const OperatorFn& op,
                         int workers = 1);

/// Ordered (source, donor) index pairs with distinct objects and distinct
/// object first tokens, capped by seeded subsampling.
std::vector<std::pair<int, int>> causality_pairs(std::span<const Sample> test,
                                                 const Vocabulary& vocab, int max_pairs,
                                                 std::uint64_t seed);

struct CausalityOptions {
  int max_pairs = 200;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Fraction of pairs where patching s + pinv(W)(o' - o) makes the first
/// predicted token equal the donor object's first token.
double eval_causality(const TransformerLM& model, const PromptPlan& plan,
                      std::span<const Sample> test, int layer, const Mat& w_pinv,
                      const CausalityOptions& opts);

/// Same pair protocol, but patching the baseline replacement state instead.
double eval_causality_baseline(CausalBaselineKind kind, const TransformerLM& model,
                               const PromptPlan& plan, std::span<const Sample> test,
                               int layer, const CausalityOptions& opts);

struct GuessRates {
  double squared_frequency = 0.0; // sum_t p_t^2 over object first tokens
  double majority = 0.0;          // max_t p_t
};

GuessRates random_guess_rates(std::span<const Sample> known, const Vocabulary& vocab);

/// Pearson product-moment correlation; lengths must match and be >= 3,
/// EvalError when either side has zero variance.
double correlate(std::span<const double> a, std::span<const double> b);

/// Spearman rank-order correlation (average ranks on ties).
double spearman(std::span<const double> a, std::span<const double> b);

struct EvalConfig {
  int n = 8;
  int trials = 24;
  std::uint64_t seed = 0;
  int layer = 0;
  int rank = 0; // 0 means full rank
  double beta = 1.0;
  int template_index = 0;
  PromptMode estimate_mode = PromptMode::Fewshot;
  PromptMode eval_mode = PromptMode::Fewshot;
  int max_pairs = 200;
  int workers = 1;
  bool with_baselines = true;
};

struct TrialScores {
  int trial = 0;
  double faithfulness = 0.0;
  double causality = 0.0;
  std::map<std::string, double> baseline_faithfulness;
  std::map<std::string, double> baseline_causality;
};

struct RelationReport {
  std::string relation;
  std::string category;
  int n = 0;
  int layer = 0;
  int rank = 0;
  double beta = 1.0;
  std::uint64_t seed = 0;
  int attempted = 0;
  int known_count = 0;
  double random_guess = 0.0;
  double majority_guess = 0.0;
  std::vector<TrialScores> trials;
  double faith_mean = 0.0, faith_std = 0.0;
  double caus_mean = 0.0, caus_std = 0.0;
  std::map<std::string, double> baseline_faith_mean;
  std::map<std::string, double> baseline_caus_mean;
  bool skipped = false;
  std::string skip_reason;
};

/// The full per-relation protocol: filter to known samples, draw trials,
/// estimate the operator per trial, score faithfulness/causality and the
/// comparison baselines. Relations whose known set is too small come back
/// with skipped = true.
RelationReport evaluate_relation(const TransformerLM& model, const Relation& relation,
                                 const EvalConfig& cfg);

/// Same protocol with a fixed, pre-estimated operator (e.g. loaded from an
/// operator file) used for every trial. cfg.n and cfg.seed should come from
/// the operator header so trial reconstruction matches the estimation run.
RelationReport evaluate_relation_with_operator(const TransformerLM& model,
                                               const Relation& relation,
                                               const LreOperator& op,
                                               const EvalConfig& cfg);

struct SweepGrid {
  std::vector<int> layers;
  std::vector<int> ranks;
  std::vector<double> betas{1.0};
  std::vector<int> ns{8};
};

struct SweepCell {
  int layer = 0;
  int rank = 0;
  double beta = 1.0;
  int n = 0;
  double faith_mean = 0.0; // rank-independent
  double caus_mean = 0.0;  // beta-independent (edits always invert at beta = 1)
  int trials = 0;
};

enum class SelectionMetric { Causality, Faithfulness };

struct SweepResult {
  std::vector<SweepCell> cells;
  bool valid = false;
  std::string skip_reason;
  int best_layer = 0;
  int best_rank = 0;
  double best_beta = 1.0;
  int best_n = 0;
  double best_causality = 0.0;
  double best_faithfulness = 0.0;
};

/// Grid search over (layer, rank, beta, n). The best cell maximizes mean
/// causality (ties to the lower layer, then lower rank); the faithfulness
/// selection mode is available for the documented contrast.
SweepResult sweep(const TransformerLM& model, const Relation& relation,
                  const SweepGrid& grid, int trials, std::uint64_t seed,
                  const EvalConfig& base,
                  SelectionMetric metric = SelectionMetric::Causality);

struct BetaRow {
  double beta = 0.0;
  double faith_mean = 0.0, faith_std = 0.0; // across relations
  double caus_mean = 0.0, caus_std = 0.0;
  double correlation = 0.0;
  bool defined = false; // false when a metric had zero variance
};

struct BetaSelection {
  std::vector<BetaRow> rows;
  double best_beta = 0.0;
  bool valid = false;
  std::vector<std::string> relations;          // relations that produced reports
  std::vector<std::string> skipped_relations;  // too few known samples
  std::map<std::string, double> relation_causality;
  std::map<std::string, std::map<std::string, double>> relation_faithfulness; // beta key -> value
};

/// Per-beta faithfulness/causality table with the cross-relation Pearson
/// correlation; best beta maximizes the correlation. Hyperparameters
/// (layer, rank) per relation come from a causality-driven sweep; causality
/// itself does not depend on beta.
BetaSelection select_beta(const TransformerLM& model, std::span<const Relation> relations,
                          const std::vector<double>& beta_grid, int trials,
                          const EvalConfig& base, const SweepGrid& hyper_grid);

// ---- report serialization ----

/// CSV columns: relation, category, trial, layer, rank, beta, n,
/// faithfulness, causality, baseline_kind, baseline_score, random_guess.
/// LRE rows leave the baseline columns empty; baseline rows leave the score
/// columns empty. `provenance` is written as a leading comment line.
std::string eval_reports_csv(std::span<const RelationReport> reports,
                             const std::string& provenance);
std::string eval_reports_json(std::span<const RelationReport> reports,
                              const std::string& config_hash, std::uint64_t seed);

std::string sweep_csv(std::span<const std::pair<std::string, SweepResult>> results,
                      const std::string& provenance);
std::string sweep_json(std::span<const std::pair<std::string, SweepResult>> results,
                       const std::string& config_hash, std::uint64_t seed);

std::string beta_table_csv(const BetaSelection& sel, const std::string& provenance);
std::string beta_table_json(const BetaSelection& sel, const std::string& config_hash,
                            std::uint64_t seed);

/// Fixed-precision float formatting shared by every CSV writer, so artifacts
/// are byte-reproducible.
std::string format_double(double v);

} // namespace linrel
