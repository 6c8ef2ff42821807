#include "linrel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "linrel/errors.hpp"
#include "linrel/parallel.hpp"
#include "linrel/rng.hpp"

namespace linrel {

Prompt PromptPlan::prompt_for(const Sample& target, const Vocabulary& vocab) const {
  if (!relation) throw ContractError("PromptPlan: relation not set");
  return build_prompt(*relation, target, icl, template_index, mode, vocab);
}

namespace {

struct TestPoint {
  Prompt prompt;
  Vec s; // at the evaluation layer
  Vec o; // final object state
  int model_pred = -1;
};

std::vector<TestPoint> collect_test_points(const TransformerLM& model,
                                           const PromptPlan& plan,
                                           std::span<const Sample> test, int layer,
                                           int workers) {
  std::vector<TestPoint> points(test.size());
  parallel_for(static_cast<int>(test.size()), workers, [&](int i) {
    TestPoint& pt = points[static_cast<std::size_t>(i)];
    pt.prompt = plan.prompt_for(test[static_cast<std::size_t>(i)], model.vocab);
    const RelationForwardResult fwd = relation_forward(model, pt.prompt, layer);
    pt.s = fwd.s;
    pt.o = fwd.o;
    pt.model_pred = fwd.predicted_token;
  });
  return points;
}

double faithfulness_over_points(const TransformerLM& model,
                                std::span<const TestPoint> points, const OperatorFn& op,
                                int workers) {
  std::vector<char> hit(points.size(), 0);
  parallel_for(static_cast<int>(points.size()), workers, [&](int i) {
    const TestPoint& pt = points[static_cast<std::size_t>(i)];
    const int pred = argmax_index(model.decode_hidden(op(pt.s)));
    hit[static_cast<std::size_t>(i)] = (pred == pt.model_pred) ? 1 : 0;
  });
  const int hits = std::accumulate(hit.begin(), hit.end(), 0);
  return static_cast<double>(hits) / static_cast<double>(points.size());
}

// Prediction after patching `replacement` in place of s at the source
// prompt's subject position.
int patched_prediction(const TransformerLM& model, const TestPoint& source, int layer,
                       Vec replacement) {
  const Patch patch{layer, source.prompt.subject_last, std::move(replacement)};
  const Trace patched = forward_with_trace(model, source.prompt.tokens, {&patch, 1});
  return argmax_index(patched.logits.col(patched.seq_len() - 1));
}

double causality_over_points(const TransformerLM& model, std::span<const TestPoint> points,
                             std::span<const Sample> test,
                             const std::vector<std::pair<int, int>>& pairs, int layer,
                             const std::function<Vec(const TestPoint&, const TestPoint&)>&
                                 replacement_for,
                             int workers) {
  std::vector<char> hit(pairs.size(), 0);
  parallel_for(static_cast<int>(pairs.size()), workers, [&](int pi) {
    const auto [si, di] = pairs[static_cast<std::size_t>(pi)];
    const TestPoint& source = points[static_cast<std::size_t>(si)];
    const TestPoint& donor = points[static_cast<std::size_t>(di)];
    const int target = object_first_token(model.vocab, test[static_cast<std::size_t>(di)]);
    const int pred = patched_prediction(model, source, layer, replacement_for(source, donor));
    hit[static_cast<std::size_t>(pi)] = (pred == target) ? 1 : 0;
  });
  const int hits = std::accumulate(hit.begin(), hit.end(), 0);
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

} // namespace

double eval_faithfulness(const TransformerLM& model, const PromptPlan& plan,
                         std::span<const Sample> test, int layer, const OperatorFn& op,
                         int workers) {
  if (test.empty()) throw EvalError("eval_faithfulness: empty test set");
  const auto points = collect_test_points(model, plan, test, layer, workers);
  return faithfulness_over_points(model, points, op, workers);
}

std::vector<std::pair<int, int>> causality_pairs(std::span<const Sample> test,
                                                 const Vocabulary& vocab, int max_pairs,
                                                 std::uint64_t seed) {
  std::vector<std::pair<int, int>> all;
  for (int i = 0; i < static_cast<int>(test.size()); ++i) {
    for (int j = 0; j < static_cast<int>(test.size()); ++j) {
      if (i == j) continue;
      const Sample& a = test[static_cast<std::size_t>(i)];
      const Sample& b = test[static_cast<std::size_t>(j)];
      if (a.object == b.object) continue;
      if (object_first_token(vocab, a) == object_first_token(vocab, b)) continue;
      all.emplace_back(i, j);
    }
  }
  if (all.empty()) {
    throw EvalError("causality: no valid pairs (objects do not differ on first tokens)");
  }
  if (max_pairs > 0 && static_cast<int>(all.size()) > max_pairs) {
    Rng rng(seed);
    std::vector<int> picks = rng.sample_indices(static_cast<int>(all.size()), max_pairs);
    std::sort(picks.begin(), picks.end());
    std::vector<std::pair<int, int>> subset;
    subset.reserve(picks.size());
    for (int p : picks) subset.push_back(all[static_cast<std::size_t>(p)]);
    return subset;
  }
  return all;
}

double eval_causality(const TransformerLM& model, const PromptPlan& plan,
                      std::span<const Sample> test, int layer, const Mat& w_pinv,
                      const CausalityOptions& opts) {
  const auto pairs = causality_pairs(test, model.vocab, opts.max_pairs, opts.seed);
  const auto points = collect_test_points(model, plan, test, layer, opts.workers);
  return causality_over_points(
      model, points, test, pairs, layer,
      [&w_pinv](const TestPoint& src, const TestPoint& donor) -> Vec {
        return src.s + w_pinv * (donor.o - src.o);
      },
      opts.workers);
}

double eval_causality_baseline(CausalBaselineKind kind, const TransformerLM& model,
                               const PromptPlan& plan, std::span<const Sample> test,
                               int layer, const CausalityOptions& opts) {
  const auto pairs = causality_pairs(test, model.vocab, opts.max_pairs, opts.seed);
  const auto points = collect_test_points(model, plan, test, layer, opts.workers);
  auto replacement = [&](const TestPoint& src, const TestPoint& donor) -> Vec {
    switch (kind) {
      case CausalBaselineKind::OracleSubject:
        return donor.s;
      case CausalBaselineKind::DecoderRow: {
        // donor.model_pred is not the label; use the dataset object token
        const Index di = &donor - points.data();
        return model.decoder_row(
            object_first_token(model.vocab, test[static_cast<std::size_t>(di)]));
      }
      case CausalBaselineKind::ObjectState:
        return donor.o;
    }
    throw ContractError("causal baseline: unknown kind");
  };
  return causality_over_points(model, points, test, pairs, layer, replacement,
                               opts.workers);
}

GuessRates random_guess_rates(std::span<const Sample> known, const Vocabulary& vocab) {
  if (known.empty()) throw EvalError("random_guess_rates: empty sample set");
  std::map<int, int> counts;
  for (const Sample& s : known) counts[object_first_token(vocab, s)]++;
  GuessRates rates;
  const double total = static_cast<double>(known.size());
  for (const auto& [token, count] : counts) {
    const double p = static_cast<double>(count) / total;
    rates.squared_frequency += p * p;
    rates.majority = std::max(rates.majority, p);
  }
  return rates;
}

double correlate(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("correlate: length mismatch");
  if (a.size() < 3) throw ContractError("correlate: needs at least 3 points");
  const double n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) {
    throw EvalError("correlate: undefined, one side has zero variance");
  }
  return cov / std::sqrt(var_a * var_b);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

} // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  return correlate(ra, rb);
}

namespace {

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

const BaselineKind kFaithBaselines[] = {BaselineKind::Identity, BaselineKind::Translation,
                                        BaselineKind::Regression,
                                        BaselineKind::LreOnEmbedding};
const CausalBaselineKind kCausalBaselines[] = {CausalBaselineKind::OracleSubject,
                                               CausalBaselineKind::DecoderRow,
                                               CausalBaselineKind::ObjectState};

} // namespace

namespace {

using OperatorProvider = std::function<LreOperator(const Trial&, int)>;

RelationReport evaluate_relation_impl(const TransformerLM& model, const Relation& relation,
                                      const EvalConfig& cfg,
                                      const OperatorProvider& provider);

} // namespace

RelationReport evaluate_relation(const TransformerLM& model, const Relation& relation,
                                 const EvalConfig& cfg) {
  EstimateOptions est_opts;
  est_opts.mode = cfg.estimate_mode;
  est_opts.template_index = cfg.template_index;
  est_opts.workers = cfg.workers;
  return evaluate_relation_impl(
      model, relation, cfg, [&](const Trial& trial, int) {
        return estimate_lre(model, relation, trial.train, cfg.layer, cfg.beta, est_opts);
      });
}

RelationReport evaluate_relation_with_operator(const TransformerLM& model,
                                               const Relation& relation,
                                               const LreOperator& op,
                                               const EvalConfig& cfg) {
  return evaluate_relation_impl(model, relation, cfg,
                                [&op](const Trial&, int) { return op; });
}

namespace {

RelationReport evaluate_relation_impl(const TransformerLM& model, const Relation& relation,
                                      const EvalConfig& cfg,
                                      const OperatorProvider& provider) {
  RelationReport report;
  report.relation = relation.name;
  report.category = relation.category;
  report.n = cfg.n;
  report.layer = cfg.layer;
  report.rank = cfg.rank == 0 ? model.config.hidden_dim : cfg.rank;
  report.beta = cfg.beta;
  report.seed = cfg.seed;

  FilterResult filtered;
  try {
    filtered = filter_known(model, relation, cfg.n, derive_seed(cfg.seed, "filter"),
                            cfg.template_index);
  } catch (const ContractError&) {
    report.skipped = true;
    report.skip_reason = "relation has at most n=" + std::to_string(cfg.n) + " samples";
    return report;
  }
  report.attempted = filtered.attempted;
  report.known_count = static_cast<int>(filtered.known.size());
  if (static_cast<int>(filtered.known.size()) <= cfg.n) {
    report.skipped = true;
    report.skip_reason = "only " + std::to_string(filtered.known.size()) +
                         " known samples for n=" + std::to_string(cfg.n);
    return report;
  }
  const GuessRates rates = random_guess_rates(filtered.known, model.vocab);
  report.random_guess = rates.squared_frequency;
  report.majority_guess = rates.majority;

  const std::vector<Trial> trials =
      sample_trials(filtered.known, cfg.n, cfg.trials, derive_seed(cfg.seed, "trials"));

  EstimateOptions est_opts;
  est_opts.mode = cfg.estimate_mode;
  est_opts.template_index = cfg.template_index;
  est_opts.workers = cfg.workers;

  for (int t = 0; t < static_cast<int>(trials.size()); ++t) {
    const Trial& trial = trials[static_cast<std::size_t>(t)];
    TrialScores scores;
    scores.trial = t;

    const LreOperator op = provider(trial, t);

    PromptPlan plan;
    plan.relation = &relation;
    plan.icl = trial.train;
    plan.template_index = cfg.template_index;
    plan.mode = cfg.eval_mode;

    const auto points = collect_test_points(model, plan, trial.test, cfg.layer, cfg.workers);
    scores.faithfulness = faithfulness_over_points(
        model, points, [&op](const Vec& s) { return op.apply(s); }, cfg.workers);

    const CausalityOptions caus_opts{cfg.max_pairs,
                                     derive_seed(cfg.seed, "pairs", static_cast<std::uint64_t>(t)),
                                     cfg.workers};
    const auto pairs =
        causality_pairs(trial.test, model.vocab, caus_opts.max_pairs, caus_opts.seed);
    const Mat w_pinv = low_rank_pinv(op.W, report.rank);
    scores.causality = causality_over_points(
        model, points, trial.test, pairs, cfg.layer,
        [&w_pinv](const TestPoint& src, const TestPoint& donor) -> Vec {
          return src.s + w_pinv * (donor.o - src.o);
        },
        cfg.workers);

    if (cfg.with_baselines) {
      for (BaselineKind kind : kFaithBaselines) {
        const BaselineOperator bop =
            estimate_baseline(kind, model, relation, trial.train, cfg.layer, cfg.beta,
                              est_opts);
        // the embedding variant reads s at layer 0, everything else at the
        // evaluation layer
        const auto bpoints = (bop.layer == cfg.layer)
                                 ? points
                                 : collect_test_points(model, plan, trial.test, bop.layer,
                                                       cfg.workers);
        scores.baseline_faithfulness[baseline_kind_name(kind)] = faithfulness_over_points(
            model, bpoints, [&bop](const Vec& s) { return bop.apply(s); }, cfg.workers);
      }
      for (CausalBaselineKind kind : kCausalBaselines) {
        auto replacement = [&](const TestPoint& src, const TestPoint& donor) -> Vec {
          switch (kind) {
            case CausalBaselineKind::OracleSubject:
              return donor.s;
            case CausalBaselineKind::DecoderRow: {
              const Index di = &donor - points.data();
              return model.decoder_row(object_first_token(
                  model.vocab, trial.test[static_cast<std::size_t>(di)]));
            }
            case CausalBaselineKind::ObjectState:
              return donor.o;
          }
          throw ContractError("causal baseline: unknown kind");
        };
        scores.baseline_causality[causal_baseline_name(kind)] = causality_over_points(
            model, points, trial.test, pairs, cfg.layer, replacement, cfg.workers);
      }
    }
    report.trials.push_back(std::move(scores));
  }

  std::vector<double> faiths, causes;
  for (const TrialScores& s : report.trials) {
    faiths.push_back(s.faithfulness);
    causes.push_back(s.causality);
  }
  std::tie(report.faith_mean, report.faith_std) = mean_std(faiths);
  std::tie(report.caus_mean, report.caus_std) = mean_std(causes);
  if (cfg.with_baselines && !report.trials.empty()) {
    for (const auto& [kind, unused] : report.trials.front().baseline_faithfulness) {
      std::vector<double> vals;
      for (const TrialScores& s : report.trials) vals.push_back(s.baseline_faithfulness.at(kind));
      report.baseline_faith_mean[kind] = mean_std(vals).first;
    }
    for (const auto& [kind, unused] : report.trials.front().baseline_causality) {
      std::vector<double> vals;
      for (const TrialScores& s : report.trials) vals.push_back(s.baseline_causality.at(kind));
      report.baseline_caus_mean[kind] = mean_std(vals).first;
    }
  }
  return report;
}

} // namespace

SweepResult sweep(const TransformerLM& model, const Relation& relation,
                  const SweepGrid& grid, int trials, std::uint64_t seed,
                  const EvalConfig& base, SelectionMetric metric) {
  const Index d = model.config.hidden_dim;
  SweepGrid g = grid;
  if (g.layers.empty()) {
    for (int l = 0; l <= model.config.num_layers; ++l) g.layers.push_back(l);
  }
  if (g.ranks.empty()) g.ranks.push_back(static_cast<int>(d));
  if (g.betas.empty()) g.betas.push_back(1.0);
  if (g.ns.empty()) g.ns.push_back(base.n);
  for (int l : g.layers) {
    if (l < 0 || l > model.config.num_layers) throw ContractError("sweep: layer out of range");
  }
  for (int r : g.ranks) {
    if (r < 1 || r > d) throw ContractError("sweep: rank out of range");
  }

  SweepResult result;
  // accumulators keyed by flat indices
  const std::size_t nl = g.layers.size(), nr = g.ranks.size(), nb = g.betas.size(),
                    nn = g.ns.size();
  std::vector<double> faith_sum(nn * nl * nb, 0.0);
  std::vector<double> caus_sum(nn * nl * nr, 0.0);
  std::vector<int> trial_count(nn, 0);

  EstimateOptions est_opts;
  est_opts.mode = base.estimate_mode;
  est_opts.template_index = base.template_index;
  est_opts.workers = base.workers;

  for (std::size_t ni = 0; ni < nn; ++ni) {
    const int n = g.ns[ni];
    FilterResult filtered;
    try {
      filtered = filter_known(model, relation, n, derive_seed(seed, "filter"),
                              base.template_index);
    } catch (const ContractError&) {
      continue; // relation smaller than n
    }
    if (static_cast<int>(filtered.known.size()) <= n) continue;
    const std::vector<Trial> trial_list =
        sample_trials(filtered.known, n, trials, derive_seed(seed, "trials", ni));
    trial_count[ni] = static_cast<int>(trial_list.size());

    for (int t = 0; t < static_cast<int>(trial_list.size()); ++t) {
      const Trial& trial = trial_list[static_cast<std::size_t>(t)];
      const auto pairs =
          causality_pairs(trial.test, model.vocab, base.max_pairs,
                          derive_seed(seed, "pairs", static_cast<std::uint64_t>(t)));

      PromptPlan plan;
      plan.relation = &relation;
      plan.icl = trial.train;
      plan.template_index = base.template_index;
      plan.mode = base.eval_mode;

      for (std::size_t li = 0; li < nl; ++li) {
        const int layer = g.layers[li];
        LreOperator op = estimate_lre(model, relation, trial.train, layer, 1.0, est_opts);
        const auto points = collect_test_points(model, plan, trial.test, layer, base.workers);

        for (std::size_t bi = 0; bi < nb; ++bi) {
          LreOperator scaled = op;
          scaled.beta = g.betas[bi];
          faith_sum[(ni * nl + li) * nb + bi] += faithfulness_over_points(
              model, points, [&scaled](const Vec& s) { return scaled.apply(s); },
              base.workers);
        }
        for (std::size_t ri = 0; ri < nr; ++ri) {
          const Mat w_pinv = low_rank_pinv(op.W, g.ranks[ri]);
          caus_sum[(ni * nl + li) * nr + ri] += causality_over_points(
              model, points, trial.test, pairs, layer,
              [&w_pinv](const TestPoint& src, const TestPoint& donor) -> Vec {
                return src.s + w_pinv * (donor.o - src.o);
              },
              base.workers);
        }
      }
    }
  }

  for (std::size_t ni = 0; ni < nn; ++ni) {
    if (trial_count[ni] == 0) continue;
    const double inv = 1.0 / static_cast<double>(trial_count[ni]);
    for (std::size_t li = 0; li < nl; ++li) {
      for (std::size_t ri = 0; ri < nr; ++ri) {
        for (std::size_t bi = 0; bi < nb; ++bi) {
          SweepCell cell;
          cell.layer = g.layers[li];
          cell.rank = g.ranks[ri];
          cell.beta = g.betas[bi];
          cell.n = g.ns[ni];
          cell.faith_mean = faith_sum[(ni * nl + li) * nb + bi] * inv;
          cell.caus_mean = caus_sum[(ni * nl + li) * nr + ri] * inv;
          cell.trials = trial_count[ni];
          result.cells.push_back(cell);
        }
      }
    }
  }

  if (result.cells.empty()) {
    result.valid = false;
    result.skip_reason = "no n in the grid left enough known samples";
    return result;
  }
  result.valid = true;

  const SweepCell* best = &result.cells.front();
  auto better = [metric](const SweepCell& a, const SweepCell& b) {
    const double va = metric == SelectionMetric::Causality ? a.caus_mean : a.faith_mean;
    const double vb = metric == SelectionMetric::Causality ? b.caus_mean : b.faith_mean;
    if (va != vb) return va > vb;
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.rank != b.rank) return a.rank < b.rank;
    if (a.beta != b.beta) return a.beta < b.beta;
    return a.n < b.n;
  };
  for (const SweepCell& cell : result.cells) {
    if (better(cell, *best)) best = &cell;
  }
  result.best_layer = best->layer;
  result.best_rank = best->rank;
  result.best_beta = best->beta;
  result.best_n = best->n;
  result.best_causality = best->caus_mean;
  result.best_faithfulness = best->faith_mean;
  return result;
}

BetaSelection select_beta(const TransformerLM& model, std::span<const Relation> relations,
                          const std::vector<double>& beta_grid, int trials,
                          const EvalConfig& base, const SweepGrid& hyper_grid) {
  if (beta_grid.empty()) throw ContractError("select_beta: empty beta grid");

  BetaSelection sel;
  std::vector<std::vector<double>> faith_by_beta(beta_grid.size());
  std::vector<double> causality;

  for (const Relation& relation : relations) {
    SweepGrid grid = hyper_grid;
    grid.betas = beta_grid;
    grid.ns = {base.n};
    const SweepResult swept = sweep(model, relation, grid, trials,
                                    derive_seed(base.seed, relation.name), base,
                                    SelectionMetric::Causality);
    if (!swept.valid) {
      sel.skipped_relations.push_back(relation.name);
      continue;
    }
    sel.relations.push_back(relation.name);
    sel.relation_causality[relation.name] = swept.best_causality;
    causality.push_back(swept.best_causality);
    for (std::size_t bi = 0; bi < beta_grid.size(); ++bi) {
      // faithfulness at the selected layer for this beta (rank has no effect)
      double value = 0.0;
      for (const SweepCell& cell : swept.cells) {
        if (cell.layer == swept.best_layer && cell.rank == swept.best_rank &&
            cell.beta == beta_grid[bi] && cell.n == base.n) {
          value = cell.faith_mean;
          break;
        }
      }
      faith_by_beta[bi].push_back(value);
      sel.relation_faithfulness[format_double(beta_grid[bi])][relation.name] = value;
    }
  }

  if (sel.relations.size() < 3) {
    throw EvalError("select_beta: needs at least 3 relations with valid reports, got " +
                    std::to_string(sel.relations.size()));
  }

  const auto caus_stats = mean_std(causality);
  double best_corr = -2.0;
  for (std::size_t bi = 0; bi < beta_grid.size(); ++bi) {
    BetaRow row;
    row.beta = beta_grid[bi];
    std::tie(row.faith_mean, row.faith_std) = mean_std(faith_by_beta[bi]);
    row.caus_mean = caus_stats.first;
    row.caus_std = caus_stats.second;
    try {
      row.correlation = correlate(faith_by_beta[bi], causality);
      row.defined = true;
    } catch (const EvalError&) {
      row.correlation = 0.0;
      row.defined = false;
    }
    if (row.defined && row.correlation > best_corr) {
      best_corr = row.correlation;
      sel.best_beta = row.beta;
      sel.valid = true;
    }
    sel.rows.push_back(row);
  }
  return sel;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

namespace {

void csv_row(std::ostringstream& os, const RelationReport& r, int trial,
             const std::string& faith, const std::string& caus,
             const std::string& baseline_kind, const std::string& baseline_score) {
  os << r.relation << ',' << r.category << ',' << trial << ',' << r.layer << ','
     << r.rank << ',' << format_double(r.beta) << ',' << r.n << ',' << faith << ','
     << caus << ',' << baseline_kind << ',' << baseline_score << ','
     << format_double(r.random_guess) << '\n';
}

} // namespace

std::string eval_reports_csv(std::span<const RelationReport> reports,
                             const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << '\n';
  os << "relation,category,trial,layer,rank,beta,n,faithfulness,causality,"
        "baseline_kind,baseline_score,random_guess\n";
  for (const RelationReport& r : reports) {
    if (r.skipped) continue;
    for (const TrialScores& t : r.trials) {
      csv_row(os, r, t.trial, format_double(t.faithfulness), format_double(t.causality),
              "", "");
      for (const auto& [kind, score] : t.baseline_faithfulness) {
        csv_row(os, r, t.trial, "", "", kind, format_double(score));
      }
      for (const auto& [kind, score] : t.baseline_causality) {
        csv_row(os, r, t.trial, "", "", kind, format_double(score));
      }
    }
  }
  return os.str();
}

namespace {

nlohmann::json report_json(const RelationReport& r) {
  nlohmann::json j = {
      {"relation", r.relation},
      {"category", r.category},
      {"n", r.n},
      {"layer", r.layer},
      {"rank", r.rank},
      {"beta", r.beta},
      {"attempted", r.attempted},
      {"known", r.known_count},
      {"skipped", r.skipped},
  };
  if (r.skipped) {
    j["skip_reason"] = r.skip_reason;
    return j;
  }
  j["random_guess"] = r.random_guess;
  j["majority_guess"] = r.majority_guess;
  j["faithfulness"] = {{"mean", r.faith_mean}, {"std", r.faith_std}};
  j["causality"] = {{"mean", r.caus_mean}, {"std", r.caus_std}};
  j["baseline_faithfulness"] = r.baseline_faith_mean;
  j["baseline_causality"] = r.baseline_caus_mean;
  nlohmann::json trials = nlohmann::json::array();
  for (const TrialScores& t : r.trials) {
    trials.push_back({{"trial", t.trial},
                      {"faithfulness", t.faithfulness},
                      {"causality", t.causality},
                      {"baseline_faithfulness", t.baseline_faithfulness},
                      {"baseline_causality", t.baseline_causality}});
  }
  j["trials"] = std::move(trials);
  return j;
}

} // namespace

std::string eval_reports_json(std::span<const RelationReport> reports,
                              const std::string& config_hash, std::uint64_t seed) {
  nlohmann::json j = {{"config_hash", config_hash}, {"seed", seed}};
  nlohmann::json arr = nlohmann::json::array();
  for (const RelationReport& r : reports) arr.push_back(report_json(r));
  j["relations"] = std::move(arr);
  return j.dump(2) + "\n";
}

std::string sweep_csv(std::span<const std::pair<std::string, SweepResult>> results,
                      const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << '\n';
  os << "relation,layer,rank,beta,n,faith_mean,caus_mean,trials\n";
  for (const auto& [relation, result] : results) {
    for (const SweepCell& c : result.cells) {
      os << relation << ',' << c.layer << ',' << c.rank << ',' << format_double(c.beta)
         << ',' << c.n << ',' << format_double(c.faith_mean) << ','
         << format_double(c.caus_mean) << ',' << c.trials << '\n';
    }
  }
  return os.str();
}

namespace {

nlohmann::json sweep_result_json(const SweepResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const SweepCell& c : r.cells) {
    cells.push_back({{"layer", c.layer},
                     {"rank", c.rank},
                     {"beta", c.beta},
                     {"n", c.n},
                     {"faith_mean", c.faith_mean},
                     {"caus_mean", c.caus_mean},
                     {"trials", c.trials}});
  }
  nlohmann::json j = {{"valid", r.valid}, {"cells", std::move(cells)}};
  if (!r.valid) {
    j["skip_reason"] = r.skip_reason;
  } else {
    j["best"] = {{"layer", r.best_layer},     {"rank", r.best_rank},
                 {"beta", r.best_beta},       {"n", r.best_n},
                 {"causality", r.best_causality}, {"faithfulness", r.best_faithfulness}};
  }
  return j;
}

} // namespace

std::string sweep_json(std::span<const std::pair<std::string, SweepResult>> results,
                       const std::string& config_hash, std::uint64_t seed) {
  nlohmann::json j = {{"config_hash", config_hash}, {"seed", seed}};
  nlohmann::json rel = nlohmann::json::object();
  for (const auto& [name, result] : results) rel[name] = sweep_result_json(result);
  j["relations"] = std::move(rel);
  return j.dump(2) + "\n";
}

std::string beta_table_csv(const BetaSelection& sel, const std::string& provenance) {
  std::ostringstream os;
  os << "# " << provenance << '\n';
  os << "beta,faith_mean,faith_std,caus_mean,caus_std,correlation,defined\n";
  for (const BetaRow& r : sel.rows) {
    os << format_double(r.beta) << ',' << format_double(r.faith_mean) << ','
       << format_double(r.faith_std) << ',' << format_double(r.caus_mean) << ','
       << format_double(r.caus_std) << ','
       << (r.defined ? format_double(r.correlation) : std::string("undefined")) << ','
       << (r.defined ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string beta_table_json(const BetaSelection& sel, const std::string& config_hash,
                            std::uint64_t seed) {
  nlohmann::json rows = nlohmann::json::array();
  for (const BetaRow& r : sel.rows) {
    nlohmann::json row = {{"beta", r.beta},
                          {"faith_mean", r.faith_mean},
                          {"faith_std", r.faith_std},
                          {"caus_mean", r.caus_mean},
                          {"caus_std", r.caus_std},
                          {"defined", r.defined}};
    if (r.defined) row["correlation"] = r.correlation;
    rows.push_back(std::move(row));
  }
  nlohmann::json j = {{"config_hash", config_hash},
                      {"seed", seed},
                      {"rows", std::move(rows)},
                      {"valid", sel.valid},
                      {"relations", sel.relations},
                      {"skipped_relations", sel.skipped_relations},
                      {"relation_causality", sel.relation_causality},
                      {"relation_faithfulness", sel.relation_faithfulness}};
  if (sel.valid) j["best_beta"] = sel.best_beta;
  return j.dump(2) + "\n";
}

} // namespace linrel
