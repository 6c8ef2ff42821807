// Shared test fixtures: a small trained model (built once per test run), an
// untrained twin, and helpers for temp files.
#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include "linrel/model.hpp"
#include "linrel/relations.hpp"
#include "linrel/train.hpp"

namespace fixtures {

struct ToyWorld {
  std::vector<linrel::Relation> relations;
  linrel::TransformerLM model;          // trained to memorize the relations
  linrel::TransformerLM untrained;      // same config, random init
  double final_accuracy = 0.0;
};

// 16 subjects x 4 objects, d = 32, 2 layers. Trains in a few seconds and
// reaches full statement accuracy, which "memorized fact" tests rely on.
inline const ToyWorld& toy_world() {
  static const ToyWorld world = [] {
    using namespace linrel;
    ToyWorld w;
    SyntheticSpec spec;
    spec.relations = 1;
    spec.subjects = 16;
    spec.objects = 4;
    spec.templates = 1;
    spec.seed = 11;
    w.relations = gen_synthetic_relations(spec);

    const Vocabulary vocab = build_vocabulary(w.relations, 96);
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.hidden_dim = 32;
    cfg.num_layers = 2;
    cfg.num_heads = 4;
    cfg.context_length = 48;
    cfg.tie_decoder = true;

    w.untrained = TransformerLM::init(cfg, vocab, 202);
    w.model = TransformerLM::init(cfg, vocab, 101);
    const auto corpus = build_training_corpus(w.relations, vocab, 48, cfg.context_length, 7);
    const auto statements = build_eval_statements(w.relations, vocab);
    TrainSchedule schedule;
    schedule.steps = 900;
    schedule.batch_size = 16;
    schedule.learning_rate = 1e-3;
    schedule.eval_every = 50;
    schedule.target_accuracy = 1.0;
    schedule.min_steps = 200;
    const TrainResult result = train(w.model, corpus, statements, schedule, 13);
    w.final_accuracy = result.final_accuracy;
    return w;
  }();
  return world;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("linrel_test_" + tag + "_" + std::to_string(counter.fetch_add(1)));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace fixtures
