#include "linrel/lre.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "linrel/errors.hpp"
#include "linrel/parallel.hpp"
#include "linrel/tensor.hpp"

namespace linrel {

Vec LreOperator::apply(const Vec& s) const {
  if (s.size() != W.cols()) throw ContractError("LreOperator::apply: dimension mismatch");
  return beta * (W * s) + b;
}

LreOperator identity_operator(Index dim) {
  LreOperator op;
  op.relation = "identity";
  op.layer = 0;
  op.beta = 1.0;
  op.W = Mat::Identity(dim, dim);
  op.b = Vec::Zero(dim);
  return op;
}

namespace {

// Per-sample contribution to Eq.-style averaging: o_i = F_i(s_i) and
// J_i = dF_i/ds at s_i, both from one exact pushforward pass.
struct SampleLinearization {
  Vec o;
  Mat jac;
};

SampleLinearization linearize_sample(const DifferentiableMap& map, const Vec& s,
                                     const std::string& label,
                                     const EstimateOptions& opts) {
  if (s.size() != map.input_dim()) {
    throw ContractError("estimate_lre: subject state has wrong length for " + label);
  }
  const Mat seed = Mat::Identity(map.input_dim(), map.input_dim());
  auto [o, jac] = map.value_and_pushforward(s, seed);
  if (!jac.allFinite() || !o.allFinite()) {
    throw NumericError("estimate_lre: non-finite Jacobian for " + label);
  }
  if (opts.fd_check_tol > 0.0) {
    const Mat fd = finite_diff_jacobian(map, s, opts.fd_check_h > 0 ? opts.fd_check_h : 1e-3);
    const double err =
        ((jac - fd).array().abs() / (1.0 + fd.array().abs())).maxCoeff();
    if (err > opts.fd_check_tol) {
      throw NumericError("estimate_lre: Jacobian disagrees with finite differences for " +
                         label + " (max normalized error " + std::to_string(err) + ")");
    }
  }
  return {std::move(o), std::move(jac)};
}

} // namespace

LreOperator estimate_lre_from_functions(const std::string& relation_name, int layer,
                                        double beta,
                                        std::span<const SampleFunction> samples,
                                        const EstimateOptions& opts) {
  if (samples.empty()) throw ContractError("estimate_lre: needs at least one sample");
  const Index din = samples[0].map->input_dim();
  const Index dout = samples[0].map->output_dim();

  std::vector<SampleLinearization> parts(samples.size());
  parallel_for(static_cast<int>(samples.size()), opts.workers, [&](int i) {
    const SampleFunction& sf = samples[static_cast<std::size_t>(i)];
    parts[static_cast<std::size_t>(i)] =
        linearize_sample(*sf.map, sf.s, "sample " + std::to_string(i), opts);
  });

  Mat w_sum = Mat::Zero(dout, din);
  Vec b_sum = Vec::Zero(dout);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    w_sum += parts[i].jac;
    b_sum += parts[i].o - parts[i].jac * samples[i].s;
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());

  LreOperator op;
  op.relation = relation_name;
  op.layer = layer;
  op.beta = beta;
  op.n_train = static_cast<int>(samples.size());
  op.W = inv_n * w_sum;
  op.b = inv_n * b_sum;
  return op;
}

LreOperator estimate_lre(const TransformerLM& model, const Relation& relation,
                         std::span<const Sample> train, int layer, double beta,
                         const EstimateOptions& opts) {
  if (layer < 0 || layer > model.config.num_layers) {
    throw ContractError("estimate_lre: layer out of range");
  }
  if (train.empty()) throw ContractError("estimate_lre: empty training set");

  const int n = static_cast<int>(train.size());
  std::vector<SampleLinearization> parts(static_cast<std::size_t>(n));
  std::vector<Vec> subject_states(static_cast<std::size_t>(n));

  parallel_for(n, opts.workers, [&](int i) {
    const Sample& target = train[static_cast<std::size_t>(i)];
    std::vector<Sample> icl;
    icl.reserve(static_cast<std::size_t>(n - 1));
    for (int j = 0; j < n; ++j) {
      if (j != i) icl.push_back(train[static_cast<std::size_t>(j)]);
    }
    const Prompt prompt =
        build_prompt(relation, target, icl, opts.template_index, opts.mode, model.vocab);
    const ObjectStateMap map(model, prompt.tokens, layer, prompt.subject_last);
    const Vec s = map.base_input();
    parts[static_cast<std::size_t>(i)] =
        linearize_sample(map, s, "sample '" + target.subject + "'", opts);
    subject_states[static_cast<std::size_t>(i)] = s;
  });

  const Index d = model.config.hidden_dim;
  Mat w_sum = Mat::Zero(d, d);
  Vec b_sum = Vec::Zero(d);
  for (int i = 0; i < n; ++i) {
    w_sum += parts[static_cast<std::size_t>(i)].jac;
    b_sum += parts[static_cast<std::size_t>(i)].o -
             parts[static_cast<std::size_t>(i)].jac * subject_states[static_cast<std::size_t>(i)];
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  LreOperator op;
  op.relation = relation.name;
  op.layer = layer;
  op.beta = beta;
  op.n_train = n;
  op.W = inv_n * w_sum;
  op.b = inv_n * b_sum;
  return op;
}

void save_operator(const LreOperator& op, const std::string& path) {
  nlohmann::json header = {
      {"format", "lre-operator"}, {"version", 1},     {"relation", op.relation},
      {"layer", op.layer},        {"beta", op.beta},  {"n", op.n_train},
      {"seed", op.seed},
  };
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("operator: cannot open '" + path + "' for writing");
  io::write_string(os, header_text);
  write_tensor(os, Tensor::from_matrix("W", op.W));
  write_tensor(os, Tensor::from_vector("b", op.b));
  os.flush();
  if (!os) throw FormatError("operator: write to '" + path + "' failed");
}

LreOperator load_operator(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("operator: cannot open '" + path + "'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("operator: bad header: ") + e.what());
  }
  if (header.value("format", "") != "lre-operator" || header.value("version", 0) != 1) {
    throw FormatError("operator: unrecognized header in '" + path + "'");
  }
  LreOperator op;
  try {
    op.relation = header.at("relation").get<std::string>();
    op.layer = header.at("layer").get<int>();
    op.beta = header.at("beta").get<double>();
    op.n_train = header.at("n").get<int>();
    op.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("operator: incomplete header: ") + e.what());
  }
  Tensor w = read_tensor(is);
  Tensor b = read_tensor(is);
  if (w.name != "W" || b.name != "b") throw FormatError("operator: unexpected tensor order");
  op.W = w.to_matrix();
  op.b = b.to_vector();
  if (op.W.rows() != op.b.size()) throw FormatError("operator: W and b disagree on size");
  return op;
}

const char* baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::Identity: return "identity";
    case BaselineKind::Translation: return "translation";
    case BaselineKind::Regression: return "regression";
    case BaselineKind::LreOnEmbedding: return "lre_on_embedding";
  }
  return "unknown";
}

Vec BaselineOperator::apply(const Vec& s) const {
  switch (kind) {
    case BaselineKind::Identity:
      return s;
    case BaselineKind::Translation:
      if (s.size() != b.size()) throw ContractError("translation baseline: dimension mismatch");
      return s + b;
    case BaselineKind::Regression:
      if (s.size() != W.cols()) throw ContractError("regression baseline: dimension mismatch");
      return W * s + b;
    case BaselineKind::LreOnEmbedding:
      if (s.size() != W.cols()) throw ContractError("embedding-LRE baseline: dimension mismatch");
      return beta * (W * s) + b;
  }
  throw ContractError("baseline: unknown kind");
}

Vec estimate_translation(std::span<const std::pair<Vec, Vec>> pairs) {
  if (pairs.empty()) throw ContractError("estimate_translation: no pairs");
  Vec b = Vec::Zero(pairs[0].first.size());
  for (const auto& [s, o] : pairs) b += o - s;
  return b / static_cast<double>(pairs.size());
}

std::pair<Mat, Vec> estimate_regression(std::span<const std::pair<Vec, Vec>> pairs,
                                        bool* degenerate) {
  if (pairs.empty()) throw ContractError("estimate_regression: no pairs");
  const Index d_in = pairs[0].first.size();
  const Index d_out = pairs[0].second.size();
  const Index n = static_cast<Index>(pairs.size());

  Mat design(d_in + 1, n); // columns [s_i; 1]
  Mat targets(d_out, n);
  for (Index i = 0; i < n; ++i) {
    design.col(i).head(d_in) = pairs[static_cast<std::size_t>(i)].first;
    design(d_in, i) = 1.0;
    targets.col(i) = pairs[static_cast<std::size_t>(i)].second;
  }

  Eigen::CompleteOrthogonalDecomposition<Mat> cod(design.transpose());
  if (degenerate) *degenerate = cod.rank() < std::min<Index>(n, d_in + 1);
  // min-norm solution of design^T M^T = targets^T
  const Mat coeffs = cod.solve(targets.transpose()).transpose(); // d_out x (d_in+1)
  return {coeffs.leftCols(d_in), coeffs.col(d_in)};
}

std::vector<std::pair<Vec, Vec>> gather_subject_object_pairs(
    const TransformerLM& model, const Relation& relation, std::span<const Sample> train,
    int layer, const EstimateOptions& opts) {
  if (layer < 0 || layer > model.config.num_layers) {
    throw ContractError("gather_subject_object_pairs: layer out of range");
  }
  const int n = static_cast<int>(train.size());
  std::vector<std::pair<Vec, Vec>> pairs(static_cast<std::size_t>(n));
  parallel_for(n, opts.workers, [&](int i) {
    const Sample& target = train[static_cast<std::size_t>(i)];
    std::vector<Sample> icl;
    for (int j = 0; j < n; ++j) {
      if (j != i) icl.push_back(train[static_cast<std::size_t>(j)]);
    }
    const Prompt prompt =
        build_prompt(relation, target, icl, opts.template_index, opts.mode, model.vocab);
    const RelationForwardResult fwd = relation_forward(model, prompt, layer);
    pairs[static_cast<std::size_t>(i)] = {fwd.s, fwd.o};
  });
  return pairs;
}

BaselineOperator estimate_baseline(BaselineKind kind, const TransformerLM& model,
                                   const Relation& relation, std::span<const Sample> train,
                                   int layer, double beta, const EstimateOptions& opts) {
  BaselineOperator op;
  op.kind = kind;
  op.layer = layer;
  switch (kind) {
    case BaselineKind::Identity:
      break;
    case BaselineKind::Translation: {
      const auto pairs = gather_subject_object_pairs(model, relation, train, layer, opts);
      op.b = estimate_translation(pairs);
      break;
    }
    case BaselineKind::Regression: {
      const auto pairs = gather_subject_object_pairs(model, relation, train, layer, opts);
      auto [w, b] = estimate_regression(pairs, &op.degenerate_fit);
      op.W = std::move(w);
      op.b = std::move(b);
      break;
    }
    case BaselineKind::LreOnEmbedding: {
      const LreOperator lre = estimate_lre(model, relation, train, 0, beta, opts);
      op.layer = 0; // s is read at the embedding output
      op.W = lre.W;
      op.b = lre.b;
      op.beta = lre.beta;
      break;
    }
  }
  return op;
}

UnderestimationResult underestimation_ratio_from_maps(const DifferentiableMap& map_1,
                                                      const DifferentiableMap& map_2,
                                                      const Vec& s_1, const Vec& s_2,
                                                      int quadrature_steps) {
  if (quadrature_steps < 1) throw ContractError("underestimation_ratio: steps must be >= 1");
  const Vec diff = s_2 - s_1;
  if (diff.norm() < 1e-12) {
    throw NumericError("underestimation_ratio: subject states coincide");
  }

  // The line integral needs a single function, so both endpoints are read
  // through map_1's context.
  const Vec f1 = map_1.value(s_1);
  const Vec f2 = map_1.value(s_2);
  Vec u = f2 - f1;
  const double change = u.norm();
  if (change < 1e-10) {
    throw NumericError("underestimation_ratio: degenerate pair, ||F(s_2) - F(s_1)|| = " +
                       std::to_string(change));
  }
  u /= change;
  const Vec v = diff / diff.norm();

  double integral = 0.0;
  for (int k = 0; k < quadrature_steps; ++k) {
    const double t = (static_cast<double>(k) + 0.5) / static_cast<double>(quadrature_steps);
    const Vec point = s_1 + t * diff;
    const Mat jv = map_1.value_and_pushforward(point, v).second;
    integral += u.dot(jv.col(0));
  }
  integral /= static_cast<double>(quadrature_steps);

  // Mean Jacobian of the pair, each sample linearized in its own context,
  // matching how the relation operator would be estimated from them.
  const Vec w_v_1 = map_1.value_and_pushforward(s_1, v).second.col(0);
  const Vec w_v_2 = map_2.value_and_pushforward(s_2, v).second.col(0);
  const double mean_term = 0.5 * (u.dot(w_v_1) + u.dot(w_v_2));

  UnderestimationResult r;
  r.line_integral_term = integral;
  r.mean_jacobian_term = mean_term;
  if (std::abs(mean_term) < 1e-14) {
    throw NumericError("underestimation_ratio: mean Jacobian term vanishes");
  }
  r.ratio = integral / mean_term;
  return r;
}

UnderestimationResult underestimation_ratio(const TransformerLM& model,
                                            const Relation& relation, const Sample& sample_1,
                                            const Sample& sample_2, int layer,
                                            int quadrature_steps, int template_index) {
  if (sample_1.subject == sample_2.subject) {
    throw ContractError("underestimation_ratio: samples must differ");
  }
  const std::vector<Sample> icl_1{sample_2};
  const std::vector<Sample> icl_2{sample_1};
  const Prompt prompt_1 =
      build_prompt(relation, sample_1, icl_1, template_index, PromptMode::Fewshot, model.vocab);
  const Prompt prompt_2 =
      build_prompt(relation, sample_2, icl_2, template_index, PromptMode::Fewshot, model.vocab);

  const ObjectStateMap map_1(model, prompt_1.tokens, layer, prompt_1.subject_last);
  const ObjectStateMap map_2(model, prompt_2.tokens, layer, prompt_2.subject_last);
  return underestimation_ratio_from_maps(map_1, map_2, map_1.base_input(),
                                         map_2.base_input(), quadrature_steps);
}

} // namespace linrel
