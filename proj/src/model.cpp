#include "linrel/model.hpp"

#include <cmath>
#include <string>

#include "linrel/errors.hpp"
#include "linrel/ops.hpp"

namespace linrel {

void ModelConfig::validate() const {
  if (vocab_size <= 0 || hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 ||
      context_length <= 0) {
    throw ContractError("ModelConfig: all dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw ContractError("ModelConfig: hidden_dim must be divisible by num_heads");
  }
}

namespace {

inline Vec ln_col(const Vec& x, const LayerNormParams& p) {
  return layer_norm(x, p.gain, p.bias, kLayerNormEps);
}

// Tangent bookkeeping for one forward pass. tan[p] is d x k, or empty when
// that position's tangent is identically zero; positions before first_active
// never acquire a tangent (causal attention).
struct TangentCtx {
  std::vector<Mat>* tan;
  int first_active;
  Index k;
};

// One pre-norm block: x + attn(ln1(x)), then + mlp(ln2(.)). When tc is set,
// tangents are pushed through the same computation exactly. The value
// arithmetic is identical in both modes, so traced and differentiated passes
// agree bit-for-bit.
Mat apply_block(const BlockWeights& b, const ModelConfig& cfg, const Mat& x,
                TangentCtx* tc) {
  const Index d = cfg.hidden_dim;
  const int seq = static_cast<int>(x.cols());
  const int heads = cfg.num_heads;
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat xn(d, seq);
  for (int p = 0; p < seq; ++p) xn.col(p) = ln_col(x.col(p), b.ln1);
  Mat q = (b.wq * xn).colwise() + b.bq;
  Mat k = (b.wk * xn).colwise() + b.bk;
  Mat v = (b.wv * xn).colwise() + b.bv;

  std::vector<Mat> tq, tk, tv;
  if (tc) {
    tq.resize(seq);
    tk.resize(seq);
    tv.resize(seq);
    for (int p = tc->first_active; p < seq; ++p) {
      const Mat& t = (*tc->tan)[static_cast<std::size_t>(p)];
      if (t.size() == 0) continue;
      Mat txn = layer_norm_pushforward(x.col(p), b.ln1.gain, kLayerNormEps, t);
      tq[static_cast<std::size_t>(p)] = b.wq * txn;
      tk[static_cast<std::size_t>(p)] = b.wk * txn;
      tv[static_cast<std::size_t>(p)] = b.wv * txn;
    }
  }

  Mat attn_cat(d, seq);
  std::vector<Mat> tattn;
  if (tc) {
    tattn.resize(seq);
    for (int p = tc->first_active; p < seq; ++p) {
      tattn[static_cast<std::size_t>(p)] = Mat::Zero(d, tc->k);
    }
  }

  for (int h = 0; h < heads; ++h) {
    const Index r0 = static_cast<Index>(h) * dh;
    for (int p = 0; p < seq; ++p) {
      Vec scores(p + 1);
      for (int j = 0; j <= p; ++j) {
        scores[j] = q.col(p).segment(r0, dh).dot(k.col(j).segment(r0, dh)) * scale;
      }
      const Vec probs = softmax(scores);
      Vec out = Vec::Zero(dh);
      for (int j = 0; j <= p; ++j) out += probs[j] * v.col(j).segment(r0, dh);
      attn_cat.col(p).segment(r0, dh) = out;

      if (tc && p >= tc->first_active) {
        Mat dz = Mat::Zero(p + 1, tc->k);
        const Mat& tqp = tq[static_cast<std::size_t>(p)];
        if (tqp.size() != 0) {
          for (int j = 0; j <= p; ++j) {
            dz.row(j) = (k.col(j).segment(r0, dh).transpose() * tqp.middleRows(r0, dh)) * scale;
          }
        }
        for (int j = tc->first_active; j <= p; ++j) {
          const Mat& tkj = tk[static_cast<std::size_t>(j)];
          if (tkj.size() == 0) continue;
          dz.row(j) += (q.col(p).segment(r0, dh).transpose() * tkj.middleRows(r0, dh)) * scale;
        }
        // rowwise softmax pushforward: da_j = p_j (dz_j - sum_l p_l dz_l)
        const Eigen::RowVectorXd wsum = probs.transpose() * dz;
        Mat da = dz;
        da.rowwise() -= wsum;
        da.array().colwise() *= probs.array();

        Mat tout = Mat::Zero(dh, tc->k);
        for (int j = 0; j <= p; ++j) {
          tout.noalias() += v.col(j).segment(r0, dh) * da.row(j);
          if (j >= tc->first_active) {
            const Mat& tvj = tv[static_cast<std::size_t>(j)];
            if (tvj.size() != 0) tout.noalias() += probs[j] * tvj.middleRows(r0, dh);
          }
        }
        tattn[static_cast<std::size_t>(p)].middleRows(r0, dh) = tout;
      }
    }
  }

  Mat x1 = x + ((b.wo * attn_cat).colwise() + b.bo);
  if (tc) {
    for (int p = tc->first_active; p < seq; ++p) {
      Mat t = b.wo * tattn[static_cast<std::size_t>(p)];
      const Mat& prev = (*tc->tan)[static_cast<std::size_t>(p)];
      if (prev.size() != 0) t += prev;
      (*tc->tan)[static_cast<std::size_t>(p)] = std::move(t);
    }
  }

  Mat out(d, seq);
  for (int p = 0; p < seq; ++p) {
    const Vec xn2 = ln_col(x1.col(p), b.ln2);
    const Vec pre = b.w1 * xn2 + b.b1;
    const Vec act = gelu(pre);
    out.col(p) = x1.col(p) + b.w2 * act + b.b2;

    if (tc && p >= tc->first_active) {
      Mat& t = (*tc->tan)[static_cast<std::size_t>(p)];
      Mat txn2 = layer_norm_pushforward(x1.col(p), b.ln2.gain, kLayerNormEps, t);
      Mat tpre = b.w1 * txn2;
      tpre.array().colwise() *= gelu_derivative(pre).array();
      t += b.w2 * tpre;
    }
  }
  return out;
}

void validate_tokens(const TransformerLM& m, std::span<const int> tokens) {
  if (tokens.empty()) throw ContractError("forward: token sequence is empty");
  if (static_cast<int>(tokens.size()) > m.config.context_length) {
    throw ContractError("forward: sequence longer than context_length");
  }
  for (int t : tokens) {
    if (t < 0 || t >= m.config.vocab_size) {
      throw InputError("forward: token id " + std::to_string(t) +
                       " outside vocabulary of size " +
                       std::to_string(m.config.vocab_size));
    }
  }
}

void validate_patch(const TransformerLM& m, const Patch& p, int seq) {
  if (p.layer < 0 || p.layer > m.config.num_layers) {
    throw ContractError("patch: layer out of range");
  }
  if (p.position < 0 || p.position >= seq) {
    throw ContractError("patch: position out of range");
  }
  if (p.value.size() != m.config.hidden_dim) {
    throw ContractError("patch: replacement vector has wrong length");
  }
}

} // namespace

Vec TransformerLM::decode_hidden(const Vec& h) const {
  return decoder_matrix().transpose() * layer_norm(h, ln_f.gain, ln_f.bias, kLayerNormEps);
}

Vec TransformerLM::decoder_row(int token) const {
  if (token < 0 || token >= config.vocab_size) {
    throw ContractError("decoder_row: token out of range");
  }
  return decoder_matrix().col(token);
}

TransformerLM TransformerLM::init(const ModelConfig& config, Vocabulary vocab,
                                  std::uint64_t seed) {
  config.validate();
  if (vocab.size() != config.vocab_size) {
    throw ContractError("TransformerLM::init: vocabulary size does not match config");
  }
  TransformerLM m;
  m.config = config;
  m.vocab = std::move(vocab);

  Rng rng(seed);
  const double std_base = 0.02;
  const double std_resid = std_base / std::sqrt(2.0 * config.num_layers);
  auto fill = [&rng](Mat& mat, Index rows, Index cols, double sd) {
    mat.resize(rows, cols);
    for (Index c = 0; c < cols; ++c) {
      for (Index r = 0; r < rows; ++r) mat(r, c) = sd * rng.normal();
    }
  };

  const Index d = config.hidden_dim;
  fill(m.tok_emb, d, config.vocab_size, std_base);
  fill(m.pos_emb, d, config.context_length, std_base);
  m.blocks.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& b : m.blocks) {
    b.ln1.gain = Vec::Ones(d);
    b.ln1.bias = Vec::Zero(d);
    fill(b.wq, d, d, std_base);
    fill(b.wk, d, d, std_base);
    fill(b.wv, d, d, std_base);
    fill(b.wo, d, d, std_resid);
    b.bq = Vec::Zero(d);
    b.bk = Vec::Zero(d);
    b.bv = Vec::Zero(d);
    b.bo = Vec::Zero(d);
    b.ln2.gain = Vec::Ones(d);
    b.ln2.bias = Vec::Zero(d);
    fill(b.w1, 4 * d, d, std_base);
    b.b1 = Vec::Zero(4 * d);
    fill(b.w2, d, 4 * d, std_resid);
    b.b2 = Vec::Zero(d);
  }
  m.ln_f.gain = Vec::Ones(d);
  m.ln_f.bias = Vec::Zero(d);
  if (!config.tie_decoder) fill(m.dec, d, config.vocab_size, std_base);
  return m;
}

std::vector<ParamView> TransformerLM::params() {
  std::vector<ParamView> out;
  auto add_mat = [&out](const std::string& name, Mat& m) {
    out.push_back({name, m.data(), m.rows(), m.cols()});
  };
  auto add_vec = [&out](const std::string& name, Vec& v) {
    out.push_back({name, v.data(), v.size(), 1});
  };
  add_mat("tok_emb", tok_emb);
  add_mat("pos_emb", pos_emb);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    BlockWeights& b = blocks[i];
    add_vec(prefix + "ln1.gain", b.ln1.gain);
    add_vec(prefix + "ln1.bias", b.ln1.bias);
    add_mat(prefix + "attn.wq", b.wq);
    add_vec(prefix + "attn.bq", b.bq);
    add_mat(prefix + "attn.wk", b.wk);
    add_vec(prefix + "attn.bk", b.bk);
    add_mat(prefix + "attn.wv", b.wv);
    add_vec(prefix + "attn.bv", b.bv);
    add_mat(prefix + "attn.wo", b.wo);
    add_vec(prefix + "attn.bo", b.bo);
    add_vec(prefix + "ln2.gain", b.ln2.gain);
    add_vec(prefix + "ln2.bias", b.ln2.bias);
    add_mat(prefix + "mlp.w1", b.w1);
    add_vec(prefix + "mlp.b1", b.b1);
    add_mat(prefix + "mlp.w2", b.w2);
    add_vec(prefix + "mlp.b2", b.b2);
  }
  add_vec("ln_f.gain", ln_f.gain);
  add_vec("ln_f.bias", ln_f.bias);
  if (!config.tie_decoder) add_mat("dec", dec);
  return out;
}

Trace forward_with_trace(const TransformerLM& model, std::span<const int> tokens,
                         std::span<const Patch> patches) {
  validate_tokens(model, tokens);
  const int seq = static_cast<int>(tokens.size());
  for (const Patch& p : patches) validate_patch(model, p, seq);

  const Index d = model.config.hidden_dim;
  Trace trace;
  trace.hidden.reserve(static_cast<std::size_t>(model.config.num_layers) + 1);

  Mat x(d, seq);
  for (int p = 0; p < seq; ++p) {
    x.col(p) = model.tok_emb.col(tokens[static_cast<std::size_t>(p)]) + model.pos_emb.col(p);
  }
  auto apply_patches = [&](int layer, Mat& states) {
    for (const Patch& p : patches) {
      if (p.layer == layer) states.col(p.position) = p.value;
    }
  };
  apply_patches(0, x);
  trace.hidden.push_back(x);
  for (int l = 0; l < model.config.num_layers; ++l) {
    x = apply_block(model.blocks[static_cast<std::size_t>(l)], model.config, x, nullptr);
    apply_patches(l + 1, x);
    trace.hidden.push_back(x);
  }

  trace.logits.resize(model.config.vocab_size, seq);
  for (int p = 0; p < seq; ++p) {
    trace.logits.col(p) = model.decode_hidden(trace.hidden.back().col(p));
  }
  return trace;
}

Mat run_from_layer(const TransformerLM& model, int layer, Mat states) {
  if (layer < 0 || layer > model.config.num_layers) {
    throw ContractError("run_from_layer: layer out of range");
  }
  if (states.rows() != model.config.hidden_dim) {
    throw ContractError("run_from_layer: state matrix has wrong row count");
  }
  for (int l = layer; l < model.config.num_layers; ++l) {
    states = apply_block(model.blocks[static_cast<std::size_t>(l)], model.config, states,
                         nullptr);
  }
  return states;
}

RelationForwardResult relation_forward(const TransformerLM& model,
                                       const Prompt& prompt, int layer) {
  if (layer < 0 || layer > model.config.num_layers) {
    throw ContractError("relation_forward: layer out of range");
  }
  const int seq = static_cast<int>(prompt.tokens.size());
  if (prompt.subject_first < 0 || prompt.subject_last < prompt.subject_first ||
      prompt.subject_last >= seq) {
    throw ContractError("relation_forward: prompt subject span out of range");
  }
  const Trace trace = forward_with_trace(model, prompt.tokens);
  RelationForwardResult r;
  r.s = trace.hidden[static_cast<std::size_t>(layer)].col(prompt.subject_last);
  r.o = trace.hidden.back().col(seq - 1);
  r.predicted_token = argmax_index(trace.logits.col(seq - 1));
  return r;
}

std::vector<int> greedy_continue(const TransformerLM& model, std::vector<int> tokens,
                                 int max_new_tokens) {
  for (int i = 0; i < max_new_tokens; ++i) {
    if (static_cast<int>(tokens.size()) >= model.config.context_length) break;
    const Trace trace = forward_with_trace(model, tokens);
    tokens.push_back(argmax_index(trace.logits.col(trace.seq_len() - 1)));
  }
  return tokens;
}

int argmax_index(const Vec& v) {
  Index idx = 0;
  v.maxCoeff(&idx);
  return static_cast<int>(idx);
}

ObjectStateMap::ObjectStateMap(const TransformerLM& model, std::vector<int> tokens,
                               int layer, int position)
    : model_(&model), tokens_(std::move(tokens)), layer_(layer), position_(position) {
  if (layer_ < 0 || layer_ > model.config.num_layers) {
    throw ContractError("ObjectStateMap: layer out of range");
  }
  const Trace trace = forward_with_trace(model, tokens_);
  if (position_ < 0 || position_ >= trace.seq_len()) {
    throw ContractError("ObjectStateMap: position out of range");
  }
  base_states_ = trace.hidden[static_cast<std::size_t>(layer_)];
}

Index ObjectStateMap::input_dim() const { return model_->config.hidden_dim; }
Index ObjectStateMap::output_dim() const { return model_->config.hidden_dim; }

Vec ObjectStateMap::value(const Vec& x) const {
  if (x.size() != input_dim()) throw ContractError("ObjectStateMap: input has wrong length");
  Mat states = base_states_;
  states.col(position_) = x;
  for (int l = layer_; l < model_->config.num_layers; ++l) {
    states = apply_block(model_->blocks[static_cast<std::size_t>(l)], model_->config,
                         states, nullptr);
  }
  return states.col(states.cols() - 1);
}

std::pair<Vec, Mat> ObjectStateMap::value_and_pushforward(const Vec& x,
                                                          const Mat& tangent) const {
  if (x.size() != input_dim()) throw ContractError("ObjectStateMap: input has wrong length");
  if (tangent.rows() != input_dim()) {
    throw ContractError("ObjectStateMap: tangent has wrong row count");
  }
  const int seq = static_cast<int>(base_states_.cols());
  Mat states = base_states_;
  states.col(position_) = x;

  std::vector<Mat> tan(static_cast<std::size_t>(seq));
  tan[static_cast<std::size_t>(position_)] = tangent;
  TangentCtx ctx{&tan, position_, tangent.cols()};
  for (int l = layer_; l < model_->config.num_layers; ++l) {
    states = apply_block(model_->blocks[static_cast<std::size_t>(l)], model_->config,
                         states, &ctx);
  }
  Mat out_tan = tan[static_cast<std::size_t>(seq - 1)];
  if (out_tan.size() == 0) out_tan = Mat::Zero(output_dim(), tangent.cols());
  return {states.col(seq - 1), std::move(out_tan)};
}

} // namespace linrel
