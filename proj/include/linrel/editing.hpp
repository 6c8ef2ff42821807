#pragma once

#include <string>

#include "linrel/lre.hpp"
#include "linrel/model.hpp"
#include "linrel/types.hpp"

namespace linrel {

/// SVD-truncated pseudoinverse: with W = U S V^T (singular values
/// descending), returns V S+_rank U^T where S+ inverts the top `rank`
/// singular values and zeroes the rest. Sign convention: each U column's
/// largest-magnitude entry is made positive.
Mat low_rank_pinv(const Mat& w, int rank);

/// Edit direction (beta treated as 1 in the inversion):
/// delta_s = pinv_rank(W) (o_target - o). Set magnify_by_beta to scale the
/// direction by the operator's beta instead.
Vec edit_direction(const LreOperator& op, const Vec& o, const Vec& o_target, int rank,
                   bool magnify_by_beta = false);

struct EditOutcome {
  int pre_token = -1;  // prediction of the unpatched prompt
  int post_token = -1; // prediction after patching s := s + delta_s
};

/// Patches s + delta_s at (layer, last subject token) and reports the
/// prediction before and after.
EditOutcome apply_causal_edit(const TransformerLM& model, const Prompt& prompt, int layer,
                              const Vec& delta_s);

enum class CausalBaselineKind {
  OracleSubject, // patch s' read from the donor prompt at the same layer
  DecoderRow,    // patch e_{o'}, the decoder head row of the target object
  ObjectState,   // patch o', the donor prompt's final object state
};

const char* causal_baseline_name(CausalBaselineKind kind);

/// Prediction after patching the baseline's replacement vector in place of s.
/// The donor prompt must use the same template and in-context examples with
/// only the subject swapped.
int causal_baseline(CausalBaselineKind kind, const TransformerLM& model,
                    const Prompt& source, const Prompt& donor, int layer,
                    int target_first_token);

/// One edit attempt, as emitted by the edit command.
struct EditRecord {
  std::string relation;
  int trial = 0;
  int layer = 0;
  int rank = 0;
  std::string source_subject;
  std::string donor_subject;
  std::string target_object;
  bool success = false;
  std::string pre_edit_prediction;
  std::string post_edit_prediction;
};

std::string edit_record_json(const EditRecord& record);

} // namespace linrel
