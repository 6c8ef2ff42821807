#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "linrel/diff.hpp"
#include "linrel/prompt.hpp"
#include "linrel/rng.hpp"
#include "linrel/tokenizer.hpp"
#include "linrel/types.hpp"

namespace linrel {

struct ModelConfig {
  int vocab_size = 0;
  int hidden_dim = 0;
  int num_layers = 0;
  int num_heads = 0;
  int context_length = 0;
  bool tie_decoder = true;

  void validate() const;
};

struct LayerNormParams {
  Vec gain;
  Vec bias;
};

struct BlockWeights {
  LayerNormParams ln1;
  Mat wq, wk, wv, wo; // d x d
  Vec bq, bk, bv, bo;
  LayerNormParams ln2;
  Mat w1; // 4d x d
  Vec b1;
  Mat w2; // d x 4d
  Vec b2;
};

/// Mutable view over one named parameter buffer.
struct ParamView {
  std::string name;
  double* data;
  Index rows;
  Index cols;
};

/// Decoder-only pre-norm transformer with learned positional embeddings.
/// Weights are immutable once trained/loaded; the forward pass is pure.
struct TransformerLM {
  ModelConfig config;
  Vocabulary vocab;
  Mat tok_emb; // d x V, one column per token
  Mat pos_emb; // d x T
  std::vector<BlockWeights> blocks;
  LayerNormParams ln_f;
  Mat dec; // d x V; empty when tie_decoder

  const Mat& decoder_matrix() const { return config.tie_decoder ? tok_emb : dec; }

  /// D(h): final norm then vocabulary projection.
  Vec decode_hidden(const Vec& h) const;

  /// e_t, the decoder head row for token t.
  Vec decoder_row(int token) const;

  /// Deterministic weight initialization (embeddings and projections
  /// N(0, 0.02), residual output projections scaled by 1/sqrt(2L), LN at
  /// identity).
  static TransformerLM init(const ModelConfig& config, Vocabulary vocab,
                            std::uint64_t seed);

  /// Canonical parameter list (optimizer state, gradient checks, checkpoint
  /// writers all iterate in this order). rows/cols are the in-memory Eigen
  /// orientation.
  std::vector<ParamView> params();
};

/// Replace the hidden state at (layer, position) before later layers consume
/// it. layer 0 addresses the embedding output.
struct Patch {
  int layer = 0;
  int position = 0;
  Vec value;
};

struct Trace {
  std::vector<Mat> hidden; // (L+1) matrices of d x seq_len; hidden[0] = embeddings
  Mat logits;              // V x seq_len, decoder applied to final-normed hidden[L]

  int seq_len() const { return static_cast<int>(hidden.empty() ? 0 : hidden[0].cols()); }
};

Trace forward_with_trace(const TransformerLM& model, std::span<const int> tokens,
                         std::span<const Patch> patches = {});

/// Re-runs blocks layer+1..L from a full d x seq_len state matrix. Bit-exact
/// against forward_with_trace on the same states.
Mat run_from_layer(const TransformerLM& model, int layer, Mat states);

/// (s, o, predicted_token): s at hidden[layer][last subject token], o at
/// hidden[L][last position], prediction = argmax of the decoded o.
struct RelationForwardResult {
  Vec s;
  Vec o;
  int predicted_token = -1;
};

RelationForwardResult relation_forward(const TransformerLM& model,
                                       const Prompt& prompt, int layer);

/// Greedy continuation of the token sequence; stops at max_new_tokens or the
/// context limit.
std::vector<int> greedy_continue(const TransformerLM& model,
                                 std::vector<int> tokens, int max_new_tokens);

int argmax_index(const Vec& v);

/// The subject-to-object map F: value(x) runs the forward pass with x patched
/// at (layer, position) and returns hidden[L] at the last position, before the
/// final norm. The prompt context is frozen at construction.
class ObjectStateMap final : public DifferentiableMap {
public:
  ObjectStateMap(const TransformerLM& model, std::vector<int> tokens, int layer,
                 int position);

  Index input_dim() const override;
  Index output_dim() const override;
  Vec value(const Vec& x) const override;
  std::pair<Vec, Mat> value_and_pushforward(const Vec& x,
                                            const Mat& tangent) const override;

  int layer() const { return layer_; }
  int position() const { return position_; }

  /// Hidden state the unpatched pass produced at (layer, position); the
  /// natural linearization point.
  Vec base_input() const { return base_states_.col(position_); }

private:
  const TransformerLM* model_;
  std::vector<int> tokens_;
  int layer_;
  int position_;
  Mat base_states_; // hidden[layer] of the unpatched pass, d x seq_len
};

} // namespace linrel
