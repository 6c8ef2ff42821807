#include "linrel/train.hpp"

#include <cmath>
#include <string>

#include "linrel/errors.hpp"
#include "linrel/ops.hpp"

namespace linrel {

namespace {

struct BlockCache {
  Mat x, xn1, q, k, v, attn_cat, x1, xn2, pre, act;
  std::vector<Mat> probs; // per head, column p holds the distribution over j <= p
};

struct ForwardCache {
  std::vector<BlockCache> layers;
  Mat x_final;   // hidden after last block
  Mat lnf_out;   // final-normed hidden
  Mat logits;    // V x S
};

Vec ln_forward(const Vec& x, const LayerNormParams& p) {
  return layer_norm(x, p.gain, p.bias, kLayerNormEps);
}

// Backward through y = gain .* xhat + bias; accumulates parameter grads and
// returns dx.
Vec ln_backward(const Vec& x, const LayerNormParams& p, const Vec& dy, Vec& dgain,
                Vec& dbias) {
  const Index d = x.size();
  const double mean = x.mean();
  const Vec centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(d);
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  const Vec xhat = centered * inv_std;

  dgain.noalias() += dy.cwiseProduct(xhat);
  dbias.noalias() += dy;

  const Vec dxhat = dy.cwiseProduct(p.gain);
  const double m1 = dxhat.mean();
  const double m2 = dxhat.cwiseProduct(xhat).mean();
  return inv_std * (dxhat.array() - m1 - xhat.array() * m2).matrix();
}

Mat block_forward(const BlockWeights& b, const ModelConfig& cfg, const Mat& x,
                  BlockCache& cache) {
  const Index d = cfg.hidden_dim;
  const int seq = static_cast<int>(x.cols());
  const int heads = cfg.num_heads;
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  cache.x = x;
  cache.xn1.resize(d, seq);
  for (int p = 0; p < seq; ++p) cache.xn1.col(p) = ln_forward(x.col(p), b.ln1);
  cache.q = (b.wq * cache.xn1).colwise() + b.bq;
  cache.k = (b.wk * cache.xn1).colwise() + b.bk;
  cache.v = (b.wv * cache.xn1).colwise() + b.bv;

  cache.attn_cat.resize(d, seq);
  cache.probs.assign(static_cast<std::size_t>(heads), Mat::Zero(seq, seq));
  for (int h = 0; h < heads; ++h) {
    const Index r0 = static_cast<Index>(h) * dh;
    Mat& probs = cache.probs[static_cast<std::size_t>(h)];
    for (int p = 0; p < seq; ++p) {
      Vec scores(p + 1);
      for (int j = 0; j <= p; ++j) {
        scores[j] =
            cache.q.col(p).segment(r0, dh).dot(cache.k.col(j).segment(r0, dh)) * scale;
      }
      const Vec a = softmax(scores);
      probs.col(p).head(p + 1) = a;
      Vec out = Vec::Zero(dh);
      for (int j = 0; j <= p; ++j) out += a[j] * cache.v.col(j).segment(r0, dh);
      cache.attn_cat.col(p).segment(r0, dh) = out;
    }
  }

  cache.x1 = x + ((b.wo * cache.attn_cat).colwise() + b.bo);
  cache.xn2.resize(d, seq);
  for (int p = 0; p < seq; ++p) cache.xn2.col(p) = ln_forward(cache.x1.col(p), b.ln2);
  cache.pre = (b.w1 * cache.xn2).colwise() + b.b1;
  cache.act.resize(cache.pre.rows(), seq);
  for (int p = 0; p < seq; ++p) cache.act.col(p) = gelu(Vec(cache.pre.col(p)));
  return cache.x1 + ((b.w2 * cache.act).colwise() + b.b2);
}

// dout -> dx, accumulating parameter grads into gb.
Mat block_backward(const BlockWeights& b, const ModelConfig& cfg, const BlockCache& cache,
                   const Mat& dout, BlockWeights& gb) {
  const Index d = cfg.hidden_dim;
  const int seq = static_cast<int>(cache.x.cols());
  const int heads = cfg.num_heads;
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP
  Mat dx1 = dout;
  Mat dpre(cache.pre.rows(), seq);
  for (int p = 0; p < seq; ++p) {
    dpre.col(p) =
        (b.w2.transpose() * dout.col(p)).cwiseProduct(gelu_derivative(Vec(cache.pre.col(p))));
  }
  gb.w2.noalias() += dout * cache.act.transpose();
  gb.b2.noalias() += dout.rowwise().sum();
  gb.w1.noalias() += dpre * cache.xn2.transpose();
  gb.b1.noalias() += dpre.rowwise().sum();
  const Mat dxn2 = b.w1.transpose() * dpre;
  for (int p = 0; p < seq; ++p) {
    dx1.col(p) += ln_backward(cache.x1.col(p), b.ln2, dxn2.col(p), gb.ln2.gain, gb.ln2.bias);
  }

  // attention output projection
  Mat dx = dx1;
  gb.wo.noalias() += dx1 * cache.attn_cat.transpose();
  gb.bo.noalias() += dx1.rowwise().sum();
  const Mat dao = b.wo.transpose() * dx1;

  Mat dq = Mat::Zero(d, seq);
  Mat dk = Mat::Zero(d, seq);
  Mat dv = Mat::Zero(d, seq);
  for (int h = 0; h < heads; ++h) {
    const Index r0 = static_cast<Index>(h) * dh;
    const Mat& probs = cache.probs[static_cast<std::size_t>(h)];
    for (int p = 0; p < seq; ++p) {
      const Vec a = probs.col(p).head(p + 1);
      const Vec dao_p = dao.col(p).segment(r0, dh);
      Vec dprob(p + 1);
      for (int j = 0; j <= p; ++j) {
        dprob[j] = cache.v.col(j).segment(r0, dh).dot(dao_p);
        dv.col(j).segment(r0, dh) += a[j] * dao_p;
      }
      const double mix = a.dot(dprob);
      const Vec dscore = (a.array() * (dprob.array() - mix)).matrix() * scale;
      for (int j = 0; j <= p; ++j) {
        dq.col(p).segment(r0, dh) += dscore[j] * cache.k.col(j).segment(r0, dh);
        dk.col(j).segment(r0, dh) += dscore[j] * cache.q.col(p).segment(r0, dh);
      }
    }
  }

  gb.wq.noalias() += dq * cache.xn1.transpose();
  gb.bq.noalias() += dq.rowwise().sum();
  gb.wk.noalias() += dk * cache.xn1.transpose();
  gb.bk.noalias() += dk.rowwise().sum();
  gb.wv.noalias() += dv * cache.xn1.transpose();
  gb.bv.noalias() += dv.rowwise().sum();

  Mat dxn1 = b.wq.transpose() * dq;
  dxn1.noalias() += b.wk.transpose() * dk;
  dxn1.noalias() += b.wv.transpose() * dv;
  for (int p = 0; p < seq; ++p) {
    dx.col(p) += ln_backward(cache.x.col(p), b.ln1, dxn1.col(p), gb.ln1.gain, gb.ln1.bias);
  }
  return dx;
}

double forward_loss(const TransformerLM& model, std::span<const int> tokens,
                    ForwardCache* cache) {
  const int seq = static_cast<int>(tokens.size());
  if (seq < 2) throw ContractError("training sequence needs at least two tokens");
  const Index d = model.config.hidden_dim;

  Mat x(d, seq);
  for (int p = 0; p < seq; ++p) {
    x.col(p) = model.tok_emb.col(tokens[static_cast<std::size_t>(p)]) + model.pos_emb.col(p);
  }
  std::vector<BlockCache> local_layers;
  std::vector<BlockCache>& layers = cache ? cache->layers : local_layers;
  layers.resize(model.blocks.size());
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    x = block_forward(model.blocks[l], model.config, x, layers[l]);
  }

  Mat lnf_out(d, seq);
  for (int p = 0; p < seq; ++p) lnf_out.col(p) = ln_forward(x.col(p), model.ln_f);
  Mat logits = model.decoder_matrix().transpose() * lnf_out;

  double loss = 0.0;
  for (int p = 0; p + 1 < seq; ++p) {
    const Vec col = logits.col(p);
    const double m = col.maxCoeff();
    const double lse = m + std::log((col.array() - m).exp().sum());
    loss += lse - col[tokens[static_cast<std::size_t>(p + 1)]];
  }
  loss /= static_cast<double>(seq - 1);

  if (cache) {
    cache->x_final = std::move(x);
    cache->lnf_out = std::move(lnf_out);
    cache->logits = std::move(logits);
  }
  return loss;
}

} // namespace

double sequence_loss(const TransformerLM& model, std::span<const int> tokens) {
  return forward_loss(model, tokens, nullptr);
}

double sequence_loss_and_grad(const TransformerLM& model, std::span<const int> tokens,
                              TransformerLM& grads, double grad_scale) {
  ForwardCache cache;
  const double loss = forward_loss(model, tokens, &cache);
  const int seq = static_cast<int>(tokens.size());
  const double inv_n = grad_scale / static_cast<double>(seq - 1);

  Mat dlogits = Mat::Zero(model.config.vocab_size, seq);
  for (int p = 0; p + 1 < seq; ++p) {
    Vec probs = softmax(Vec(cache.logits.col(p)));
    probs[tokens[static_cast<std::size_t>(p + 1)]] -= 1.0;
    dlogits.col(p) = inv_n * probs;
  }

  Mat& ddec = grads.config.tie_decoder ? grads.tok_emb : grads.dec;
  ddec.noalias() += cache.lnf_out * dlogits.transpose();
  const Mat dlnf = model.decoder_matrix() * dlogits;

  Mat dx(model.config.hidden_dim, seq);
  for (int p = 0; p < seq; ++p) {
    dx.col(p) = ln_backward(cache.x_final.col(p), model.ln_f, dlnf.col(p), grads.ln_f.gain,
                            grads.ln_f.bias);
  }
  for (int l = static_cast<int>(model.blocks.size()) - 1; l >= 0; --l) {
    dx = block_backward(model.blocks[static_cast<std::size_t>(l)], model.config,
                        cache.layers[static_cast<std::size_t>(l)], dx,
                        grads.blocks[static_cast<std::size_t>(l)]);
  }
  for (int p = 0; p < seq; ++p) {
    grads.tok_emb.col(tokens[static_cast<std::size_t>(p)]) += dx.col(p);
    grads.pos_emb.col(p) += dx.col(p);
  }
  return loss;
}

double statement_accuracy(const TransformerLM& model,
                          std::span<const EvalStatement> statements) {
  if (statements.empty()) return 0.0;
  int hits = 0;
  for (const EvalStatement& st : statements) {
    const Trace trace = forward_with_trace(model, st.tokens);
    if (argmax_index(trace.logits.col(trace.seq_len() - 1)) == st.target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(statements.size());
}

namespace {

TransformerLM zeroed_like(const TransformerLM& model) {
  TransformerLM z = model;
  for (ParamView p : z.params()) {
    std::fill(p.data, p.data + p.rows * p.cols, 0.0);
  }
  return z;
}

} // namespace

TrainResult train(TransformerLM& model, const std::vector<std::vector<int>>& corpus,
                  std::span<const EvalStatement> eval_statements,
                  const TrainSchedule& schedule, std::uint64_t seed) {
  if (corpus.empty()) throw ContractError("train: empty corpus");
  for (const auto& seq : corpus) {
    for (int t : seq) {
      if (t < 0 || t >= model.config.vocab_size) {
        throw InputError("train: corpus token outside vocabulary");
      }
    }
    if (static_cast<int>(seq.size()) > model.config.context_length) {
      throw ContractError("train: corpus sequence longer than context_length");
    }
  }

  TransformerLM grads = zeroed_like(model);
  TransformerLM adam_m = zeroed_like(model);
  TransformerLM adam_v = zeroed_like(model);
  auto params = model.params();
  auto gparams = grads.params();
  auto mparams = adam_m.params();
  auto vparams = adam_v.params();

  Rng rng(seed);
  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(schedule.steps));

  const int ncorpus = static_cast<int>(corpus.size());
  for (int step = 0; step < schedule.steps; ++step) {
    for (ParamView g : gparams) std::fill(g.data, g.data + g.rows * g.cols, 0.0);

    double step_loss = 0.0;
    const double scale = 1.0 / static_cast<double>(schedule.batch_size);
    for (int bi = 0; bi < schedule.batch_size; ++bi) {
      const auto& seq = corpus[static_cast<std::size_t>(rng.uniform_int(ncorpus))];
      step_loss += scale * sequence_loss_and_grad(model, seq, grads, scale);
    }
    if (!std::isfinite(step_loss)) {
      throw TrainingError("train: loss diverged (non-finite) at step " +
                          std::to_string(step));
    }
    result.loss_history.push_back(step_loss);

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(schedule.beta1, t);
    const double bc2 = 1.0 - std::pow(schedule.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* w = params[i].data;
      double* g = gparams[i].data;
      double* m = mparams[i].data;
      double* v = vparams[i].data;
      const Index n = params[i].rows * params[i].cols;
      for (Index j = 0; j < n; ++j) {
        m[j] = schedule.beta1 * m[j] + (1.0 - schedule.beta1) * g[j];
        v[j] = schedule.beta2 * v[j] + (1.0 - schedule.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= schedule.learning_rate * mhat / (std::sqrt(vhat) + schedule.adam_eps);
      }
    }

    result.steps_run = step + 1;
    if (schedule.target_accuracy > 0.0 && !eval_statements.empty() &&
        (step + 1) % schedule.eval_every == 0 && (step + 1) >= schedule.min_steps) {
      if (statement_accuracy(model, eval_statements) >= schedule.target_accuracy) break;
    }
  }

  result.final_accuracy = statement_accuracy(model, eval_statements);
  return result;
}

} // namespace linrel
