#include "linrel/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "linrel/checkpoint.hpp"
#include "linrel/editing.hpp"
#include "linrel/errors.hpp"
#include "linrel/evaluation.hpp"
#include "linrel/lens.hpp"
#include "linrel/lre.hpp"
#include "linrel/relations.hpp"
#include "linrel/rng.hpp"
#include "linrel/train.hpp"

namespace fs = std::filesystem;

namespace linrel {

namespace {

// ---------- option plumbing: JSON config + flag overrides (flags win) ----------

struct CommandContext {
  CLI::App* cmd = nullptr;
  const nlohmann::json* file_config = nullptr;
  nlohmann::json effective = nlohmann::json::object(); // filled post-parse
  std::vector<std::function<void()>> exporters;
  std::vector<std::string> known_keys;

  template <typename T>
  void overlay(const std::string& key, T& var) {
    if (file_config->contains(key)) {
      try {
        var = file_config->at(key).get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw InputError("config: field '" + key + "' has the wrong type: " + e.what());
      }
    }
  }

  template <typename T>
  CLI::Option* add(const std::string& key, T& var, const std::string& desc,
                   bool in_hash = true) {
    overlay(key, var);
    known_keys.push_back(key);
    CLI::Option* opt = cmd->add_option("--" + key, var, desc);
    if constexpr (std::is_same_v<T, std::vector<int>> ||
                  std::is_same_v<T, std::vector<double>>) {
      opt->delimiter(',');
    }
    if (in_hash) {
      exporters.push_back([this, key, &var] { effective[key] = var; });
    }
    return opt;
  }

  CLI::Option* add_flag(const std::string& key, bool& var, const std::string& desc,
                        bool in_hash = true) {
    overlay(key, var);
    known_keys.push_back(key);
    CLI::Option* opt = cmd->add_flag("--" + key, var, desc);
    if (in_hash) {
      exporters.push_back([this, key, &var] { effective[key] = var; });
    }
    return opt;
  }

  void check_config_keys() const {
    for (const auto& [key, unused] : file_config->items()) {
      if (std::find(known_keys.begin(), known_keys.end(), key) == known_keys.end()) {
        throw InputError("config: unknown field '" + key + "' for this command");
      }
    }
  }

  // effective config of this run; the hash covers what is computed, not
  // where it is written (out/force/workers are excluded)
  std::string config_hash() {
    for (const auto& fn : exporters) fn();
    const std::string dump = effective.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : dump) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = 1;
  bool force = false;
};

void add_common(CommandContext& ctx, CommonArgs& common) {
  ctx.known_keys.push_back("config");
  ctx.cmd->add_option("--config", common.config_path,
                      "JSON config file; flags override its fields");
  CLI::Option* seed_opt = ctx.add("seed", common.seed, "random seed (required)");
  if (ctx.file_config->contains("seed")) common.seed_given = true;
  seed_opt->each([&common](const std::string&) { common.seed_given = true; });
  ctx.add("out", common.out, "output file or directory", /*in_hash=*/false);
  ctx.add("workers", common.workers, "worker threads (results identical to --workers 1)",
          /*in_hash=*/false);
  ctx.add_flag("force", common.force, "overwrite existing outputs", /*in_hash=*/false);
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw InputError(field + ": " + what);
}

// Every command does seeded work, so an explicit seed is part of the
// reproducibility contract.
void require_seed(const CommonArgs& c) {
  if (!c.seed_given) {
    throw InputError("seed: required (pass --seed or set it in --config)");
  }
}

void write_artifact(const std::string& path, const std::string& content, bool force) {
  const fs::path p(path);
  if (fs::exists(p) && !force) {
    throw InputError("out: '" + path + "' already exists (pass --force to overwrite)");
  }
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("out: cannot open '" + path + "' for writing");
  os << content;
  os.flush();
  if (!os) throw InputError("out: write to '" + path + "' failed");
}

void check_overwrite(const std::string& path, bool force) {
  if (fs::exists(path) && !force) {
    throw InputError("out: '" + path + "' already exists (pass --force to overwrite)");
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string meta_json(const std::string& config_hash, std::uint64_t seed,
                      const std::string& command, const nlohmann::json& extra = {}) {
  nlohmann::json j = {{"config_hash", config_hash}, {"seed", seed}, {"command", command}};
  if (!extra.is_null()) {
    for (const auto& [k, v] : extra.items()) j[k] = v;
  }
  return j.dump(2) + "\n";
}

std::string provenance_line(const std::string& config_hash, std::uint64_t seed) {
  return "config_hash=" + config_hash + " seed=" + std::to_string(seed);
}

PromptMode parse_mode(const std::string& name) {
  if (name == "fewshot") return PromptMode::Fewshot;
  if (name == "zeroshot") return PromptMode::Zeroshot;
  if (name == "nocontext") return PromptMode::Nocontext;
  throw InputError("mode: unknown prompt mode '" + name + "'");
}

std::vector<Relation> load_dataset(const std::string& path, const std::string& only) {
  require(!path.empty(), "dataset", "required");
  std::vector<Relation> relations = load_relations(path);
  if (!only.empty()) {
    std::vector<Relation> filtered;
    for (Relation& r : relations) {
      if (r.name == only) filtered.push_back(std::move(r));
    }
    require(!filtered.empty(), "relation", "'" + only + "' not found in " + path);
    return filtered;
  }
  return relations;
}

const Relation& single_relation(const std::vector<Relation>& relations,
                                const std::string& flag) {
  require(relations.size() == 1, flag, "this command needs exactly one relation");
  return relations.front();
}

const Sample& find_sample(const Relation& relation, const std::string& subject,
                          const std::string& field) {
  for (const Sample& s : relation.samples) {
    if (s.subject == subject) return s;
  }
  throw InputError(field + ": subject '" + subject + "' not in relation '" +
                   relation.name + "'");
}

// ---------- per-command argument bundles ----------

struct GenDataArgs {
  CommonArgs common;
  int relations = 1, subjects = 60, objects = 10, templates = 1;
};

struct TrainArgs {
  CommonArgs common;
  std::string dataset;
  int hidden = 64, layers = 2, heads = 4, context = 48, vocab_pad = 256;
  bool untied = false;
  int steps = 2000, batch = 16, epochs = 64, eval_every = 100, min_steps = 200;
  double lr = 1e-3, target_acc = 0.995;
};

struct FilterArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation;
  int n = 8;
};

struct EstimateArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, mode = "fewshot";
  int n = 8, layer = 0, template_index = 0;
  double beta = 1.0;
  double fd_check = 0.0;
};

struct EvalArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, operators;
  std::string estimate_mode = "fewshot", eval_mode = "fewshot";
  int n = 8, trials = 24, layer = 0, rank = 0, max_pairs = 200, template_index = 0;
  double beta = 1.0;
  bool no_baselines = false;
};

struct SweepArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, metric = "causality";
  std::vector<int> layers, ranks, ns{8};
  std::vector<double> betas{1.0};
  int trials = 8, max_pairs = 200, template_index = 0;
};

struct BetaSelectArgs {
  CommonArgs common;
  std::string checkpoint, dataset;
  std::vector<double> betas;
  std::vector<int> layers, ranks;
  int trials = 8, n = 8, max_pairs = 200, template_index = 0;
};

struct RatioArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, subject_a, subject_b;
  int layer = 0, pairs = 8, steps = 256, template_index = 0;
};

struct EditArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, source, donor, operator_path;
  int n = 8, layer = 0, rank = 0, continuation = 8, template_index = 0;
  double beta = 1.0;
};

struct LensArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, subject, operator_path, format = "text";
  std::string mode = "fewshot";
  bool identity = false;
  int k = 5, icl = 3, template_index = 0;
};

struct DistractArgs {
  CommonArgs common;
  std::string checkpoint, dataset, relation, operator_path, mode = "rd";
  std::vector<int> ks{1, 2, 3};
  int n = 8, layer = -1, template_index = 0;
  double beta = 1.0;
};

// ---------- command implementations ----------

int cmd_gen_data(GenDataArgs& a, CommandContext& ctx) {
  require(!a.common.out.empty(), "out", "required");
  SyntheticSpec spec;
  spec.relations = a.relations;
  spec.subjects = a.subjects;
  spec.objects = a.objects;
  spec.templates = a.templates;
  spec.seed = a.common.seed;
  const std::vector<Relation> relations = gen_synthetic_relations(spec);
  const std::string hash = ctx.config_hash();
  write_artifact(a.common.out, relations_to_json(relations), a.common.force);
  write_artifact(a.common.out + ".meta.json",
                 meta_json(hash, a.common.seed, "gen-data",
                           {{"relations", relations.size()}}),
                 a.common.force);
  std::cerr << "gen-data: wrote " << relations.size() << " relations to " << a.common.out
            << "\n";
  return 0;
}

int cmd_train(TrainArgs& a, CommandContext& ctx) {
  require(!a.dataset.empty(), "dataset", "required");
  require(!a.common.out.empty(), "out", "required");
  const std::vector<Relation> relations = load_dataset(a.dataset, "");
  const Vocabulary vocab = build_vocabulary(relations, a.vocab_pad);

  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.hidden_dim = a.hidden;
  cfg.num_layers = a.layers;
  cfg.num_heads = a.heads;
  cfg.context_length = a.context;
  cfg.tie_decoder = !a.untied;

  TransformerLM model = TransformerLM::init(cfg, vocab, derive_seed(a.common.seed, "init"));
  const auto corpus = build_training_corpus(relations, model.vocab, a.epochs, a.context,
                                            derive_seed(a.common.seed, "corpus"));
  const auto statements = build_eval_statements(relations, model.vocab);

  TrainSchedule schedule;
  schedule.steps = a.steps;
  schedule.batch_size = a.batch;
  schedule.learning_rate = a.lr;
  schedule.eval_every = a.eval_every;
  schedule.target_accuracy = a.target_acc;
  schedule.min_steps = a.min_steps;

  std::cerr << "train: " << corpus.size() << " sequences, vocab " << vocab.size()
            << ", d=" << cfg.hidden_dim << ", L=" << cfg.num_layers << "\n";
  const TrainResult result =
      train(model, corpus, statements, schedule, derive_seed(a.common.seed, "train"));
  std::cerr << "train: " << result.steps_run << " steps, final loss "
            << (result.loss_history.empty() ? 0.0 : result.loss_history.back())
            << ", statement accuracy " << result.final_accuracy << "\n";

  const std::string hash = ctx.config_hash();
  check_overwrite(a.common.out, a.common.force);
  save_checkpoint(model, a.common.out);
  write_artifact(a.common.out + ".meta.json",
                 meta_json(hash, a.common.seed, "train",
                           {{"steps_run", result.steps_run},
                            {"final_accuracy", result.final_accuracy},
                            {"final_loss",
                             result.loss_history.empty() ? 0.0 : result.loss_history.back()},
                            {"loss_history", result.loss_history}}),
                 a.common.force);
  return 0;
}

int cmd_filter(FilterArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> relations = load_dataset(a.dataset, a.relation);

  const std::string hash = ctx.config_hash();
  nlohmann::json per_relation = nlohmann::json::object();
  std::ostringstream csv;
  csv << "# " << provenance_line(hash, a.common.seed) << "\n";
  csv << "relation,category,attempted,correct\n";
  for (const Relation& r : relations) {
    try {
      const FilterResult res =
          filter_known(model, r, a.n, derive_seed(a.common.seed, "filter"));
      nlohmann::json subjects = nlohmann::json::array();
      for (const Sample& s : res.known) subjects.push_back(s.subject);
      per_relation[r.name] = {{"attempted", res.attempted},
                              {"correct", res.correct},
                              {"known_subjects", std::move(subjects)}};
      csv << r.name << ',' << r.category << ',' << res.attempted << ',' << res.correct
          << "\n";
      std::cerr << "filter: " << r.name << " " << res.correct << "/" << res.attempted
                << " known\n";
    } catch (const ContractError& e) {
      per_relation[r.name] = {{"skipped", true}, {"reason", e.what()}};
      std::cerr << "filter: " << r.name << " skipped: " << e.what() << "\n";
    }
  }
  nlohmann::json j = {{"config_hash", hash}, {"seed", a.common.seed},
                      {"n", a.n},            {"relations", std::move(per_relation)}};
  write_artifact((fs::path(a.common.out) / "filter.json").string(), j.dump(2) + "\n",
                 a.common.force);
  write_artifact((fs::path(a.common.out) / "filter.csv").string(), csv.str(),
                 a.common.force);
  return 0;
}

int cmd_estimate(EstimateArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> relations = load_dataset(a.dataset, a.relation);

  EstimateOptions opts;
  opts.mode = parse_mode(a.mode);
  opts.template_index = a.template_index;
  opts.workers = a.common.workers;
  if (a.fd_check > 0.0) {
    opts.fd_check_h = 1e-3;
    opts.fd_check_tol = a.fd_check;
  }

  const std::string hash = ctx.config_hash();
  for (const Relation& r : relations) {
    FilterResult filtered;
    try {
      filtered = filter_known(model, r, a.n, derive_seed(a.common.seed, "filter"));
    } catch (const ContractError& e) {
      std::cerr << "estimate: " << r.name << " skipped: " << e.what() << "\n";
      continue;
    }
    if (static_cast<int>(filtered.known.size()) <= a.n) {
      std::cerr << "estimate: " << r.name << " skipped: only " << filtered.known.size()
                << " known samples\n";
      continue;
    }
    const std::vector<Trial> trials =
        sample_trials(filtered.known, a.n, 1, derive_seed(a.common.seed, "trials"));
    LreOperator op = estimate_lre(model, r, trials[0].train, a.layer, a.beta, opts);
    op.seed = a.common.seed;
    const std::string path = (fs::path(a.common.out) / (r.name + ".lro")).string();
    check_overwrite(path, a.common.force);
    save_operator(op, path);
    std::cerr << "estimate: " << r.name << " -> " << path << "\n";
  }
  write_artifact((fs::path(a.common.out) / "estimate.meta.json").string(),
                 meta_json(hash, a.common.seed, "estimate"), a.common.force);
  return 0;
}

EvalConfig eval_config_from(const EvalArgs& a) {
  EvalConfig cfg;
  cfg.n = a.n;
  cfg.trials = a.trials;
  cfg.seed = a.common.seed;
  cfg.layer = a.layer;
  cfg.rank = a.rank;
  cfg.beta = a.beta;
  cfg.template_index = a.template_index;
  cfg.estimate_mode = parse_mode(a.estimate_mode);
  cfg.eval_mode = parse_mode(a.eval_mode);
  cfg.max_pairs = a.max_pairs;
  cfg.workers = a.common.workers;
  cfg.with_baselines = !a.no_baselines;
  return cfg;
}

int cmd_eval(EvalArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> relations = load_dataset(a.dataset, a.relation);

  const std::string hash = ctx.config_hash();
  std::vector<RelationReport> reports;
  for (const Relation& r : relations) {
    if (!a.operators.empty()) {
      const std::string path = (fs::path(a.operators) / (r.name + ".lro")).string();
      require(fs::exists(path), "operators", "no operator file for relation '" + r.name + "'");
      const LreOperator op = load_operator(path);
      EvalConfig cfg = eval_config_from(a);
      cfg.n = op.n_train; // reconstruct the estimation run's trial split
      cfg.seed = op.seed;
      cfg.layer = op.layer;
      cfg.beta = op.beta;
      cfg.trials = 1;
      reports.push_back(evaluate_relation_with_operator(model, r, op, cfg));
    } else {
      reports.push_back(evaluate_relation(model, r, eval_config_from(a)));
    }
    std::cerr << "eval: " << r.name
              << (reports.back().skipped
                      ? " skipped: " + reports.back().skip_reason
                      : " faith " + format_double(reports.back().faith_mean) + " caus " +
                            format_double(reports.back().caus_mean))
              << "\n";
  }
  write_artifact((fs::path(a.common.out) / "eval.csv").string(),
                 eval_reports_csv(reports, provenance_line(hash, a.common.seed)),
                 a.common.force);
  write_artifact((fs::path(a.common.out) / "eval.json").string(),
                 eval_reports_json(reports, hash, a.common.seed), a.common.force);
  return 0;
}

int cmd_sweep(SweepArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> relations = load_dataset(a.dataset, a.relation);

  SweepGrid grid;
  grid.layers = a.layers;
  grid.ranks = a.ranks;
  grid.betas = a.betas;
  grid.ns = a.ns;

  EvalConfig base;
  base.seed = a.common.seed;
  base.max_pairs = a.max_pairs;
  base.template_index = a.template_index;
  base.workers = a.common.workers;
  if (!a.ns.empty()) base.n = a.ns.front();

  const SelectionMetric metric = a.metric == "faithfulness" ? SelectionMetric::Faithfulness
                                                            : SelectionMetric::Causality;
  require(a.metric == "causality" || a.metric == "faithfulness", "metric",
          "must be causality or faithfulness");

  const std::string hash = ctx.config_hash();
  std::vector<std::pair<std::string, SweepResult>> results;
  for (const Relation& r : relations) {
    results.emplace_back(r.name, sweep(model, r, grid, a.trials,
                                       derive_seed(a.common.seed, r.name), base, metric));
    const SweepResult& res = results.back().second;
    std::cerr << "sweep: " << r.name
              << (res.valid ? " best layer " + std::to_string(res.best_layer) + " rank " +
                                  std::to_string(res.best_rank) + " caus " +
                                  format_double(res.best_causality)
                            : " skipped: " + res.skip_reason)
              << "\n";
  }
  write_artifact((fs::path(a.common.out) / "sweep.csv").string(),
                 sweep_csv(results, provenance_line(hash, a.common.seed)), a.common.force);
  write_artifact((fs::path(a.common.out) / "sweep.json").string(),
                 sweep_json(results, hash, a.common.seed), a.common.force);
  return 0;
}

int cmd_beta_select(BetaSelectArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> relations = load_dataset(a.dataset, "");

  std::vector<double> betas = a.betas;
  if (betas.empty()) {
    for (double b = 0.0; b <= 5.0 + 1e-9; b += 0.25) betas.push_back(b);
  }

  EvalConfig base;
  base.n = a.n;
  base.seed = a.common.seed;
  base.max_pairs = a.max_pairs;
  base.template_index = a.template_index;
  base.workers = a.common.workers;

  SweepGrid hyper;
  hyper.layers = a.layers;
  hyper.ranks = a.ranks;

  const BetaSelection sel = select_beta(model, relations, betas, a.trials, base, hyper);
  const std::string hash = ctx.config_hash();
  std::cerr << "beta-select: " << (sel.valid ? "best beta " + format_double(sel.best_beta)
                                             : "correlation undefined for every beta")
            << " over " << sel.relations.size() << " relations\n";
  write_artifact((fs::path(a.common.out) / "beta.csv").string(),
                 beta_table_csv(sel, provenance_line(hash, a.common.seed)), a.common.force);
  write_artifact((fs::path(a.common.out) / "beta.json").string(),
                 beta_table_json(sel, hash, a.common.seed), a.common.force);
  return 0;
}

int cmd_ratio(RatioArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> all = load_dataset(a.dataset, a.relation);
  const Relation& relation = single_relation(all, "relation");

  std::vector<std::pair<Sample, Sample>> sample_pairs;
  if (!a.subject_a.empty() || !a.subject_b.empty()) {
    require(!a.subject_a.empty() && !a.subject_b.empty(), "subject-a",
            "both --subject-a and --subject-b are needed");
    sample_pairs.emplace_back(find_sample(relation, a.subject_a, "subject-a"),
                              find_sample(relation, a.subject_b, "subject-b"));
  } else {
    const FilterResult filtered =
        filter_known(model, relation, 2, derive_seed(a.common.seed, "filter"));
    require(filtered.known.size() >= 2, "relation",
            "fewer than 2 known samples for the ratio diagnostic");
    Rng rng(derive_seed(a.common.seed, "ratio-pairs"));
    for (int i = 0; i < a.pairs; ++i) {
      const auto idx = rng.sample_indices(static_cast<int>(filtered.known.size()), 2);
      sample_pairs.emplace_back(filtered.known[static_cast<std::size_t>(idx[0])],
                                filtered.known[static_cast<std::size_t>(idx[1])]);
    }
  }

  const std::string hash = ctx.config_hash();
  std::ostringstream csv;
  csv << "# " << provenance_line(hash, a.common.seed) << "\n";
  csv << "relation,subject_1,subject_2,layer,steps,ratio,line_integral,mean_jacobian\n";
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> ratios;
  for (const auto& [sa, sb] : sample_pairs) {
    const UnderestimationResult res = underestimation_ratio(
        model, relation, sa, sb, a.layer, a.steps, a.template_index);
    ratios.push_back(res.ratio);
    csv << relation.name << ',' << sa.subject << ',' << sb.subject << ',' << a.layer << ','
        << a.steps << ',' << format_double(res.ratio) << ','
        << format_double(res.line_integral_term) << ','
        << format_double(res.mean_jacobian_term) << "\n";
    rows.push_back({{"subject_1", sa.subject},
                    {"subject_2", sb.subject},
                    {"ratio", res.ratio},
                    {"line_integral", res.line_integral_term},
                    {"mean_jacobian", res.mean_jacobian_term}});
    std::cerr << "ratio: " << sa.subject << " -> " << sb.subject << " = "
              << format_double(res.ratio) << "\n";
  }
  double mean = 0.0;
  for (double r : ratios) mean += r;
  mean /= static_cast<double>(ratios.size());
  nlohmann::json j = {{"config_hash", hash}, {"seed", a.common.seed},
                      {"relation", relation.name}, {"layer", a.layer},
                      {"steps", a.steps},    {"mean_ratio", mean},
                      {"pairs", std::move(rows)}};
  write_artifact((fs::path(a.common.out) / "ratio.csv").string(), csv.str(), a.common.force);
  write_artifact((fs::path(a.common.out) / "ratio.json").string(), j.dump(2) + "\n",
                 a.common.force);
  return 0;
}

int cmd_edit(EditArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  require(!a.source.empty(), "source", "required");
  require(!a.donor.empty(), "donor", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> all = load_dataset(a.dataset, a.relation);
  const Relation& relation = single_relation(all, "relation");

  const Sample& source = find_sample(relation, a.source, "source");
  const Sample& donor = find_sample(relation, a.donor, "donor");
  require(source.object != donor.object, "donor",
          "source and donor share the object '" + source.object + "'");

  LreOperator op;
  std::vector<Sample> icl;
  if (!a.operator_path.empty()) {
    op = load_operator(a.operator_path);
    // context examples: first n known samples excluding source and donor
  } else {
    op.layer = a.layer;
    op.beta = a.beta;
  }
  const int layer = a.operator_path.empty() ? a.layer : op.layer;

  FilterResult filtered =
      filter_known(model, relation, a.n, derive_seed(a.common.seed, "filter"));
  std::vector<Sample> pool;
  for (const Sample& s : filtered.known) {
    if (s.subject != source.subject && s.subject != donor.subject) pool.push_back(s);
  }
  require(static_cast<int>(pool.size()) > a.n, "n",
          "not enough known samples besides source and donor");
  const std::vector<Trial> trials =
      sample_trials(pool, a.n, 1, derive_seed(a.common.seed, "trials"));
  icl = trials[0].train;
  if (a.operator_path.empty()) {
    EstimateOptions opts;
    opts.template_index = a.template_index;
    opts.workers = a.common.workers;
    op = estimate_lre(model, relation, icl, layer, a.beta, opts);
    op.seed = a.common.seed;
  }

  const Prompt source_prompt =
      build_prompt(relation, source, icl, a.template_index, PromptMode::Fewshot, model.vocab);
  const Prompt donor_prompt =
      build_prompt(relation, donor, icl, a.template_index, PromptMode::Fewshot, model.vocab);
  const RelationForwardResult src = relation_forward(model, source_prompt, layer);
  const RelationForwardResult don = relation_forward(model, donor_prompt, layer);

  const int rank = a.rank == 0 ? model.config.hidden_dim : a.rank;
  const Vec delta = edit_direction(op, src.o, don.o, rank);
  const EditOutcome outcome = apply_causal_edit(model, source_prompt, layer, delta);

  EditRecord record;
  record.relation = relation.name;
  record.layer = layer;
  record.rank = rank;
  record.source_subject = source.subject;
  record.donor_subject = donor.subject;
  record.target_object = donor.object;
  record.success =
      outcome.post_token == object_first_token(model.vocab, donor);
  record.pre_edit_prediction = model.vocab.token(outcome.pre_token);
  record.post_edit_prediction = model.vocab.token(outcome.post_token);

  // greedy continuations, the patched one keeps the edit active
  std::vector<int> pre_tokens = greedy_continue(model, source_prompt.tokens, a.continuation);
  std::vector<int> post_tokens = source_prompt.tokens;
  {
    const Patch patch{layer, source_prompt.subject_last, src.s + delta};
    for (int i = 0; i < a.continuation; ++i) {
      if (static_cast<int>(post_tokens.size()) >= model.config.context_length) break;
      const Trace t = forward_with_trace(model, post_tokens, {&patch, 1});
      post_tokens.push_back(argmax_index(t.logits.col(t.seq_len() - 1)));
    }
  }

  const std::string hash = ctx.config_hash();
  nlohmann::json j = nlohmann::json::parse(edit_record_json(record));
  j["config_hash"] = hash;
  j["seed"] = a.common.seed;
  j["pre_edit_continuation"] = model.vocab.decode(pre_tokens);
  j["post_edit_continuation"] = model.vocab.decode(post_tokens);
  write_artifact((fs::path(a.common.out) / "edit.json").string(), j.dump(2) + "\n",
                 a.common.force);
  std::cerr << "edit: " << source.subject << " -> " << donor.object
            << (record.success ? " succeeded" : " failed") << " (pre '"
            << record.pre_edit_prediction << "', post '" << record.post_edit_prediction
            << "')\n";
  return 0;
}

int cmd_lens(LensArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  require(!a.subject.empty(), "subject", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> all = load_dataset(a.dataset, a.relation);
  const Relation& relation = single_relation(all, "relation");
  const Sample& target = find_sample(relation, a.subject, "subject");

  LreOperator op;
  if (a.identity) {
    op = identity_operator(model.config.hidden_dim);
  } else {
    require(!a.operator_path.empty(), "operator",
            "required unless --identity is set");
    op = load_operator(a.operator_path);
  }

  std::vector<Sample> icl;
  if (parse_mode(a.mode) == PromptMode::Fewshot && a.icl > 0) {
    std::vector<Sample> pool;
    for (const Sample& s : relation.samples) {
      if (s.subject != target.subject) pool.push_back(s);
    }
    require(static_cast<int>(pool.size()) >= a.icl, "icl",
            "not enough other samples for the requested context size");
    Rng rng(derive_seed(a.common.seed, "lens-icl"));
    for (int idx : rng.sample_indices(static_cast<int>(pool.size()), a.icl)) {
      icl.push_back(pool[static_cast<std::size_t>(idx)]);
    }
  }
  const Prompt prompt =
      build_prompt(relation, target, icl, a.template_index, parse_mode(a.mode), model.vocab);
  const LensGrid grid = attribute_lens(model, op, prompt, a.k);

  const std::string hash = ctx.config_hash();
  std::string ext, content;
  if (a.format == "text") {
    ext = "txt";
    content = "# " + provenance_line(hash, a.common.seed) + "\n" +
              render_grid(grid, GridFormat::Text);
  } else if (a.format == "svg") {
    ext = "svg";
    content = "<!-- " + provenance_line(hash, a.common.seed) + " -->\n" +
              render_grid(grid, GridFormat::Svg);
  } else if (a.format == "json") {
    ext = "json";
    content = render_grid(grid, GridFormat::Json);
  } else {
    throw InputError("format: must be text, svg, or json");
  }
  const std::string path = (fs::path(a.common.out) / ("lens." + ext)).string();
  write_artifact(path, content, a.common.force);
  if (a.format == "json") {
    write_artifact((fs::path(a.common.out) / "lens.meta.json").string(),
                   meta_json(hash, a.common.seed, "lens"), a.common.force);
  }
  std::cerr << "lens: wrote " << path << "\n";
  return 0;
}

int cmd_distract(DistractArgs& a, CommandContext& ctx) {
  require(!a.checkpoint.empty(), "checkpoint", "required");
  require(!a.common.out.empty(), "out", "required");
  const TransformerLM model = load_checkpoint(a.checkpoint);
  const std::vector<Relation> all = load_dataset(a.dataset, a.relation);
  const Relation& relation = single_relation(all, "relation");

  DistractionMode mode;
  if (a.mode == "rd") {
    mode = DistractionMode::Repetition;
  } else if (a.mode == "id") {
    mode = DistractionMode::Instruction;
  } else if (a.mode == "none") {
    mode = DistractionMode::None;
  } else {
    throw InputError("mode: must be rd, id, or none");
  }

  const FilterResult filtered =
      filter_known(model, relation, a.n, derive_seed(a.common.seed, "filter"));
  require(static_cast<int>(filtered.known.size()) > a.n, "relation",
          "too few known samples after filtering");

  LreOperator op;
  if (!a.operator_path.empty()) {
    op = load_operator(a.operator_path);
  } else {
    require(a.layer >= 0, "layer", "required when no --operator is given");
    const std::vector<Trial> trials =
        sample_trials(filtered.known, a.n, 1, derive_seed(a.common.seed, "trials"));
    EstimateOptions opts;
    opts.template_index = a.template_index;
    opts.workers = a.common.workers;
    op = estimate_lre(model, relation, trials[0].train, a.layer, a.beta, opts);
  }
  const int probe_layer = a.layer >= 0 ? a.layer : op.layer;

  const RecallTable table =
      distraction_eval(model, op, relation, filtered.known, mode, a.ks, probe_layer,
                       derive_seed(a.common.seed, "distract"), a.template_index);

  const std::string hash = ctx.config_hash();
  std::ostringstream csv;
  csv << "# " << provenance_line(hash, a.common.seed) << "\n";
  csv << "mode,k,direct_recall,lens_recall\n";
  for (std::size_t i = 0; i < table.ks.size(); ++i) {
    csv << a.mode << ',' << table.ks[i] << ',' << format_double(table.direct[i]) << ','
        << format_double(table.lens[i]) << "\n";
    std::cerr << "distract: R@" << table.ks[i] << " direct "
              << format_double(table.direct[i]) << " lens " << format_double(table.lens[i])
              << "\n";
  }
  nlohmann::json by_layer = nlohmann::json::array();
  for (Index l = 0; l < table.lens_by_layer.rows(); ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (Index k = 0; k < table.lens_by_layer.cols(); ++k) {
      row.push_back(table.lens_by_layer(l, k));
    }
    by_layer.push_back(std::move(row));
  }
  nlohmann::json j = {{"config_hash", hash},
                      {"seed", a.common.seed},
                      {"relation", relation.name},
                      {"mode", a.mode},
                      {"probe_layer", table.probe_layer},
                      {"ks", table.ks},
                      {"direct_recall", table.direct},
                      {"lens_recall", table.lens},
                      {"lens_recall_by_layer", std::move(by_layer)}};
  write_artifact((fs::path(a.common.out) / "distract.csv").string(), csv.str(),
                 a.common.force);
  write_artifact((fs::path(a.common.out) / "distract.json").string(), j.dump(2) + "\n",
                 a.common.force);
  return 0;
}

// ---------- wiring ----------

nlohmann::json load_config_file(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::ifstream is(path);
    if (!is) throw InputError("config: cannot open '" + path + "'");
    try {
      return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("config: invalid JSON in '" + path + "': " + e.what());
    }
  }
  return nlohmann::json::object();
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"relation-operator laboratory for toy transformer LMs"};
  app.require_subcommand(1);

  nlohmann::json file_config;
  try {
    file_config = load_config_file(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  GenDataArgs gen;
  TrainArgs tr;
  FilterArgs fi;
  EstimateArgs es;
  EvalArgs ev;
  SweepArgs sw;
  BetaSelectArgs bs;
  RatioArgs ra;
  EditArgs ed;
  LensArgs le;
  DistractArgs di;

  std::vector<std::unique_ptr<CommandContext>> contexts;
  auto make_ctx = [&](CLI::App* cmd) -> CommandContext& {
    contexts.push_back(std::make_unique<CommandContext>());
    contexts.back()->cmd = cmd;
    contexts.back()->file_config = &file_config;
    return *contexts.back();
  };

  int rc = 0;
  std::function<void()> action;

  {
    CLI::App* cmd = app.add_subcommand("gen-data", "generate synthetic relation datasets");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, gen.common);
    ctx.add("relations", gen.relations, "number of relations");
    ctx.add("subjects", gen.subjects, "subjects per relation");
    ctx.add("objects", gen.objects, "distinct objects per relation");
    ctx.add("templates", gen.templates, "prompt templates per relation (1 or 2)");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(gen.common); rc = cmd_gen_data(gen, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("train", "train a toy LM on a relation dataset");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, tr.common);
    ctx.add("dataset", tr.dataset, "relations JSON file");
    ctx.add("hidden", tr.hidden, "hidden dimension");
    ctx.add("layers", tr.layers, "transformer blocks");
    ctx.add("heads", tr.heads, "attention heads");
    ctx.add("context", tr.context, "context length");
    ctx.add("vocab-pad", tr.vocab_pad, "pad vocabulary to at least this size");
    ctx.add_flag("untied", tr.untied, "use a separate decoder head matrix");
    ctx.add("steps", tr.steps, "max optimizer steps");
    ctx.add("batch", tr.batch, "sequences per step");
    ctx.add("lr", tr.lr, "Adam learning rate");
    ctx.add("epochs", tr.epochs, "corpus epochs to materialize");
    ctx.add("eval-every", tr.eval_every, "statement-accuracy probe cadence");
    ctx.add("min-steps", tr.min_steps, "steps before early stop is allowed");
    ctx.add("target-acc", tr.target_acc, "early-stop statement accuracy (0 disables)");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(tr.common); rc = cmd_train(tr, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("filter", "keep samples the model answers correctly");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, fi.common);
    ctx.add("checkpoint", fi.checkpoint, "model checkpoint");
    ctx.add("dataset", fi.dataset, "relations JSON file");
    ctx.add("relation", fi.relation, "restrict to one relation");
    ctx.add("n", fi.n, "few-shot size used for the filtering prompts");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(fi.common); rc = cmd_filter(fi, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("estimate", "estimate relation operators");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, es.common);
    ctx.add("checkpoint", es.checkpoint, "model checkpoint");
    ctx.add("dataset", es.dataset, "relations JSON file");
    ctx.add("relation", es.relation, "restrict to one relation");
    ctx.add("n", es.n, "training examples per operator");
    ctx.add("layer", es.layer, "subject layer");
    ctx.add("beta", es.beta, "scalar steepness factor");
    ctx.add("template-index", es.template_index, "prompt template index");
    ctx.add("mode", es.mode, "prompt mode: fewshot | zeroshot");
    ctx.add("fd-check", es.fd_check,
            "verify per-sample Jacobians against finite differences at this tolerance");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(es.common); rc = cmd_estimate(es, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("eval", "faithfulness and causality report");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, ev.common);
    ctx.add("checkpoint", ev.checkpoint, "model checkpoint");
    ctx.add("dataset", ev.dataset, "relations JSON file");
    ctx.add("relation", ev.relation, "restrict to one relation");
    ctx.add("operators", ev.operators, "directory of saved operators to evaluate");
    ctx.add("n", ev.n, "training examples per trial");
    ctx.add("trials", ev.trials, "trials per relation");
    ctx.add("layer", ev.layer, "subject layer");
    ctx.add("rank", ev.rank, "pseudoinverse rank (0 = full)");
    ctx.add("beta", ev.beta, "scalar steepness factor");
    ctx.add("template-index", ev.template_index, "prompt template index");
    ctx.add("estimate-mode", ev.estimate_mode, "prompt mode for estimation");
    ctx.add("eval-mode", ev.eval_mode, "prompt mode for evaluation");
    ctx.add("max-pairs", ev.max_pairs, "causality pairs per trial");
    ctx.add_flag("no-baselines", ev.no_baselines, "skip baseline operators");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(ev.common); rc = cmd_eval(ev, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("sweep", "grid search over layer/rank/beta/n");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, sw.common);
    ctx.add("checkpoint", sw.checkpoint, "model checkpoint");
    ctx.add("dataset", sw.dataset, "relations JSON file");
    ctx.add("relation", sw.relation, "restrict to one relation");
    ctx.add("layers", sw.layers, "layers to sweep (default: all)");
    ctx.add("ranks", sw.ranks, "ranks to sweep (default: full)");
    ctx.add("betas", sw.betas, "betas to sweep");
    ctx.add("ns", sw.ns, "training-set sizes to sweep");
    ctx.add("trials", sw.trials, "trials per grid cell");
    ctx.add("max-pairs", sw.max_pairs, "causality pairs per trial");
    ctx.add("template-index", sw.template_index, "prompt template index");
    ctx.add("metric", sw.metric, "selection metric: causality | faithfulness");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(sw.common); rc = cmd_sweep(sw, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("beta-select", "pick beta by metric correlation");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, bs.common);
    ctx.add("checkpoint", bs.checkpoint, "model checkpoint");
    ctx.add("dataset", bs.dataset, "relations JSON file");
    ctx.add("betas", bs.betas, "beta grid (default 0,0.25,...,5)");
    ctx.add("layers", bs.layers, "layers for the hyperparameter sweep");
    ctx.add("ranks", bs.ranks, "ranks for the hyperparameter sweep");
    ctx.add("trials", bs.trials, "trials per relation");
    ctx.add("n", bs.n, "training examples per trial");
    ctx.add("max-pairs", bs.max_pairs, "causality pairs per trial");
    ctx.add("template-index", bs.template_index, "prompt template index");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(bs.common); rc = cmd_beta_select(bs, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("ratio", "line-integral underestimation diagnostic");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, ra.common);
    ctx.add("checkpoint", ra.checkpoint, "model checkpoint");
    ctx.add("dataset", ra.dataset, "relations JSON file");
    ctx.add("relation", ra.relation, "relation to probe");
    ctx.add("subject-a", ra.subject_a, "first subject (optional, else seeded pairs)");
    ctx.add("subject-b", ra.subject_b, "second subject");
    ctx.add("layer", ra.layer, "subject layer");
    ctx.add("pairs", ra.pairs, "number of seeded pairs");
    ctx.add("steps", ra.steps, "quadrature steps");
    ctx.add("template-index", ra.template_index, "prompt template index");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(ra.common); rc = cmd_ratio(ra, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("edit", "one causal edit with continuations");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, ed.common);
    ctx.add("checkpoint", ed.checkpoint, "model checkpoint");
    ctx.add("dataset", ed.dataset, "relations JSON file");
    ctx.add("relation", ed.relation, "relation to edit");
    ctx.add("source", ed.source, "source subject");
    ctx.add("donor", ed.donor, "donor subject providing the target object");
    ctx.add("operator", ed.operator_path, "saved operator file (else estimated)");
    ctx.add("n", ed.n, "training examples when estimating");
    ctx.add("layer", ed.layer, "subject layer");
    ctx.add("rank", ed.rank, "pseudoinverse rank (0 = full)");
    ctx.add("beta", ed.beta, "scalar steepness factor");
    ctx.add("continuation", ed.continuation, "greedy continuation length");
    ctx.add("template-index", ed.template_index, "prompt template index");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(ed.common); rc = cmd_edit(ed, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("lens", "attribute-lens grid for one prompt");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, le.common);
    ctx.add("checkpoint", le.checkpoint, "model checkpoint");
    ctx.add("dataset", le.dataset, "relations JSON file");
    ctx.add("relation", le.relation, "relation to probe");
    ctx.add("subject", le.subject, "subject to prompt with");
    ctx.add("operator", le.operator_path, "saved operator file");
    ctx.add_flag("identity", le.identity, "use the identity operator (logit lens)");
    ctx.add("k", le.k, "top-k entries per cell");
    ctx.add("icl", le.icl, "in-context examples for fewshot prompts");
    ctx.add("mode", le.mode, "prompt mode: fewshot | zeroshot | nocontext");
    ctx.add("format", le.format, "text | svg | json");
    ctx.add("template-index", le.template_index, "prompt template index");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(le.common); rc = cmd_lens(le, ctx); });
  }
  {
    CLI::App* cmd = app.add_subcommand("distract", "distracted-prompt recall harness");
    CommandContext& ctx = make_ctx(cmd);
    add_common(ctx, di.common);
    ctx.add("checkpoint", di.checkpoint, "model checkpoint");
    ctx.add("dataset", di.dataset, "relations JSON file");
    ctx.add("relation", di.relation, "relation to probe");
    ctx.add("operator", di.operator_path, "saved operator file (else estimated)");
    ctx.add("mode", di.mode, "rd | id | none");
    ctx.add("ks", di.ks, "recall cutoffs");
    ctx.add("n", di.n, "few-shot size for filtering/estimation");
    ctx.add("layer", di.layer, "probe layer (default: operator layer)");
    ctx.add("beta", di.beta, "beta when estimating");
    ctx.add("template-index", di.template_index, "prompt template index");
    cmd->callback([&] { ctx.check_config_keys(); require_seed(di.common); rc = cmd_distract(di, ctx); });
  }

  std::vector<std::string> argv_vec = args;
  std::vector<const char*> argv;
  argv.push_back("linrel");
  for (const std::string& s : argv_vec) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}

} // namespace linrel
