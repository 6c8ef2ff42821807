#include "linrel/editing.hpp"

#include <json.hpp>

#include "linrel/errors.hpp"

namespace linrel {

Mat low_rank_pinv(const Mat& w, int rank) {
  if (w.rows() != w.cols()) throw ContractError("low_rank_pinv: matrix must be square");
  const Index d = w.rows();
  if (rank < 1 || rank > d) throw ContractError("low_rank_pinv: rank must be in [1, d]");

  Eigen::JacobiSVD<Mat> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.info() != Eigen::Success) {
    throw NumericError("low_rank_pinv: SVD failed to converge");
  }
  Mat u = svd.matrixU();
  Mat v = svd.matrixV();
  const Vec sigma = svd.singularValues();

  // fix signs: largest-magnitude entry of each U column positive
  for (Index i = 0; i < d; ++i) {
    Index idx = 0;
    u.col(i).cwiseAbs().maxCoeff(&idx);
    if (u(idx, i) < 0.0) {
      u.col(i) = -u.col(i);
      v.col(i) = -v.col(i);
    }
  }

  Vec inv = Vec::Zero(d);
  for (Index i = 0; i < rank; ++i) {
    if (sigma[i] > 0.0) inv[i] = 1.0 / sigma[i];
  }
  return v * inv.asDiagonal() * u.transpose();
}

Vec edit_direction(const LreOperator& op, const Vec& o, const Vec& o_target, int rank,
                   bool magnify_by_beta) {
  if (o.size() != op.W.rows() || o_target.size() != op.W.rows()) {
    throw ContractError("edit_direction: object state has wrong length");
  }
  Vec delta = low_rank_pinv(op.W, rank) * (o_target - o);
  if (magnify_by_beta) delta *= op.beta;
  return delta;
}

EditOutcome apply_causal_edit(const TransformerLM& model, const Prompt& prompt, int layer,
                              const Vec& delta_s) {
  const RelationForwardResult base = relation_forward(model, prompt, layer);
  const Patch patch{layer, prompt.subject_last, base.s + delta_s};
  const Trace patched = forward_with_trace(model, prompt.tokens, {&patch, 1});

  EditOutcome outcome;
  outcome.pre_token = base.predicted_token;
  outcome.post_token = argmax_index(patched.logits.col(patched.seq_len() - 1));
  return outcome;
}

const char* causal_baseline_name(CausalBaselineKind kind) {
  switch (kind) {
    case CausalBaselineKind::OracleSubject: return "oracle_s_prime";
    case CausalBaselineKind::DecoderRow: return "decoder_row";
    case CausalBaselineKind::ObjectState: return "object_state";
  }
  return "unknown";
}

int causal_baseline(CausalBaselineKind kind, const TransformerLM& model,
                    const Prompt& source, const Prompt& donor, int layer,
                    int target_first_token) {
  Vec replacement;
  switch (kind) {
    case CausalBaselineKind::OracleSubject: {
      replacement = relation_forward(model, donor, layer).s;
      break;
    }
    case CausalBaselineKind::DecoderRow: {
      replacement = model.decoder_row(target_first_token);
      break;
    }
    case CausalBaselineKind::ObjectState: {
      replacement = relation_forward(model, donor, layer).o;
      break;
    }
  }
  const Patch patch{layer, source.subject_last, std::move(replacement)};
  const Trace patched = forward_with_trace(model, source.tokens, {&patch, 1});
  return argmax_index(patched.logits.col(patched.seq_len() - 1));
}

std::string edit_record_json(const EditRecord& r) {
  const nlohmann::json j = {
      {"relation", r.relation},
      {"trial", r.trial},
      {"layer", r.layer},
      {"rank", r.rank},
      {"source_subject", r.source_subject},
      {"donor_subject", r.donor_subject},
      {"target_object", r.target_object},
      {"success", r.success},
      {"pre_edit_prediction", r.pre_edit_prediction},
      {"post_edit_prediction", r.post_edit_prediction},
  };
  return j.dump();
}

} // namespace linrel
