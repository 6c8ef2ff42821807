#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "linrel/diff.hpp"
#include "linrel/model.hpp"
#include "linrel/relations.hpp"
#include "linrel/types.hpp"

namespace linrel {

/// The estimated affine relation operator: apply(s) = beta * W * s + b,
/// exactly as stored.
struct LreOperator {
  std::string relation;
  int layer = 0;
  double beta = 1.0;
  int n_train = 0;
  std::uint64_t seed = 0;
  Mat W;
  Vec b;

  Vec apply(const Vec& s) const;
};

/// Identity operator at a given dimension (W = I, b = 0, beta = 1); applying
/// it and decoding reproduces the logit lens.
LreOperator identity_operator(Index dim);

struct EstimateOptions {
  PromptMode mode = PromptMode::Fewshot; // zero-shot estimation is the generalization probe
  int template_index = 0;
  double fd_check_h = 0.0;   // > 0: verify each per-sample Jacobian against
  double fd_check_tol = 0.0; // central differences before averaging
  int workers = 1;
};

/// One sample's linearization input: the subject state and the map F_i that
/// carries it to the object state.
struct SampleFunction {
  Vec s;
  std::shared_ptr<const DifferentiableMap> map;
};

/// Mean-Jacobian estimator core: W = mean_i J_i(s_i), b = mean_i [F_i(s_i) -
/// J_i(s_i) s_i]. The per-sample Jacobians come from exact pushforwards.
LreOperator estimate_lre_from_functions(const std::string& relation_name, int layer,
                                        double beta,
                                        std::span<const SampleFunction> samples,
                                        const EstimateOptions& opts = {});

/// Full-model estimator: for each training sample, builds the fewshot prompt
/// with the other n-1 samples in context, reads s at (layer, last subject
/// token), and linearizes the patched forward map around it.
LreOperator estimate_lre(const TransformerLM& model, const Relation& relation,
                         std::span<const Sample> train, int layer, double beta,
                         const EstimateOptions& opts = {});

/// Operator file: u32 header length, JSON header (relation, layer, beta, n,
/// seed), then W and b in the checkpoint tensor encoding.
void save_operator(const LreOperator& op, const std::string& path);
LreOperator load_operator(const std::string& path);

enum class BaselineKind { Identity, Translation, Regression, LreOnEmbedding };

const char* baseline_kind_name(BaselineKind kind);

struct BaselineOperator {
  BaselineKind kind = BaselineKind::Identity;
  int layer = 0; // layer where s is read when this baseline is evaluated
  Mat W;         // regression / lre-on-embedding
  Vec b;         // translation / regression / lre-on-embedding
  double beta = 1.0;
  bool degenerate_fit = false; // regression fell back to the minimum-norm solution

  Vec apply(const Vec& s) const;
};

/// Translation core: b = mean(o - s), W implicitly the identity.
Vec estimate_translation(std::span<const std::pair<Vec, Vec>> pairs);

/// Minimum-norm least-squares fit of o ~= W s + b (bias column appended).
/// degenerate is set when the design matrix is rank-deficient.
std::pair<Mat, Vec> estimate_regression(std::span<const std::pair<Vec, Vec>> pairs,
                                        bool* degenerate = nullptr);

/// (s_i, o_i) pairs for the training samples under the usual prompt
/// construction; shared by the translation and regression baselines.
std::vector<std::pair<Vec, Vec>> gather_subject_object_pairs(
    const TransformerLM& model, const Relation& relation, std::span<const Sample> train,
    int layer, const EstimateOptions& opts = {});

BaselineOperator estimate_baseline(BaselineKind kind, const TransformerLM& model,
                                   const Relation& relation, std::span<const Sample> train,
                                   int layer, double beta = 1.0,
                                   const EstimateOptions& opts = {});

struct UnderestimationResult {
  double ratio = 0.0;
  double line_integral_term = 0.0; // mean of u^T J(s(t)) v along the segment
  double mean_jacobian_term = 0.0; // u^T W v with W the two-sample mean Jacobian
};

/// How much the mean Jacobian understates the actual change of F between two
/// subject states: midpoint-rule quadrature of u^T F'(s) v along the segment
/// s_1 -> s_2 (in sample_1's prompt context), divided by u^T W v. Equals 1
/// for an affine map.
UnderestimationResult underestimation_ratio(const TransformerLM& model,
                                            const Relation& relation, const Sample& sample_1,
                                            const Sample& sample_2, int layer,
                                            int quadrature_steps = 256,
                                            int template_index = 0);

/// Map-level core of the diagnostic; map_1 provides both the path context and
/// the endpoint values, map_2 only contributes its Jacobian at s_2 to the
/// two-sample mean.
UnderestimationResult underestimation_ratio_from_maps(const DifferentiableMap& map_1,
                                                      const DifferentiableMap& map_2,
                                                      const Vec& s_1, const Vec& s_2,
                                                      int quadrature_steps);

} // namespace linrel
