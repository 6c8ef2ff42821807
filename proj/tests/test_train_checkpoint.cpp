#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "linrel/checkpoint.hpp"
#include "linrel/errors.hpp"
#include "linrel/rng.hpp"
#include "linrel/train.hpp"

using namespace linrel;

namespace {

// 2-layer toy model and a short sequence for gradient checks
TransformerLM grad_check_model() {
  std::vector<std::string> tokens;
  for (int i = 0; i < 24; ++i) tokens.push_back("t" + std::to_string(i));
  ModelConfig cfg;
  cfg.vocab_size = 24;
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 4;
  cfg.context_length = 12;
  cfg.tie_decoder = true;
  return TransformerLM::init(cfg, Vocabulary(tokens), 77);
}

TransformerLM zeroed_clone(const TransformerLM& m) {
  TransformerLM z = m;
  for (ParamView p : z.params()) std::fill(p.data, p.data + p.rows * p.cols, 0.0);
  return z;
}

} // namespace

TEST_CASE("training gradients agree with finite differences on a 2-layer model") {
  TransformerLM model = grad_check_model();
  const std::vector<int> seq{3, 7, 1, 9, 2, 11, 5};

  TransformerLM grads = zeroed_clone(model);
  sequence_loss_and_grad(model, seq, grads, 1.0);

  auto params = model.params();
  auto gparams = grads.params();
  Rng rng(5);
  const double h = 1e-5;
  int checked = 0;
  for (int probe = 0; probe < 60; ++probe) {
    const std::size_t pi = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(params.size())));
    const Index n = params[pi].rows * params[pi].cols;
    const Index j = rng.uniform_int(static_cast<int>(n));
    double* slot = params[pi].data + j;
    const double w0 = *slot;
    *slot = w0 + h;
    const double lp = sequence_loss(model, seq);
    *slot = w0 - h;
    const double lm = sequence_loss(model, seq);
    *slot = w0;
    const double fd = (lp - lm) / (2.0 * h);
    const double exact = gparams[pi].data[j];
    const double err = std::abs(exact - fd) / (1.0 + std::abs(fd));
    CHECK(err < 1e-4);
    ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("a single repeated statement is memorized within 200 steps") {
  std::vector<std::string> words{"alpha", "likes", "tea", "\n"};
  for (int i = 0; i < 12; ++i) words.push_back("f" + std::to_string(i));
  const Vocabulary vocab(words);
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.context_length = 8;
  TransformerLM model = TransformerLM::init(cfg, vocab, 3);

  const std::vector<std::vector<int>> corpus{vocab.encode("alpha likes tea")};
  const std::vector<EvalStatement> probes{{vocab.encode("alpha likes"), vocab.id("tea")}};

  TrainSchedule schedule;
  schedule.steps = 200;
  schedule.batch_size = 4;
  schedule.learning_rate = 3e-3;
  schedule.target_accuracy = 0.0; // run all steps
  const TrainResult result = train(model, corpus, probes, schedule, 21);
  CHECK(result.final_accuracy == doctest::Approx(1.0));
  CHECK(result.steps_run == 200);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [](std::uint64_t seed) {
    std::vector<std::string> words{"a", "b", "c", "d", "\n"};
    const Vocabulary vocab(words);
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.hidden_dim = 8;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.context_length = 6;
    TransformerLM model = TransformerLM::init(cfg, vocab, 1);
    const std::vector<std::vector<int>> corpus{vocab.encode("a b c d"),
                                               vocab.encode("b a d c")};
    TrainSchedule schedule;
    schedule.steps = 50;
    schedule.batch_size = 2;
    return train(model, corpus, {}, schedule, seed).loss_history;
  };
  const auto h1 = run(9);
  const auto h2 = run(9);
  const auto h3 = run(10);
  REQUIRE(h1.size() == h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) CHECK(h1[i] == h2[i]);
  CHECK(h1 != h3);
}

TEST_CASE("divergent training reports the failing step") {
  std::vector<std::string> words{"a", "b", "\n"};
  const Vocabulary vocab(words);
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.hidden_dim = 8;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.context_length = 4;
  TransformerLM model = TransformerLM::init(cfg, vocab, 1);
  const std::vector<std::vector<int>> corpus{vocab.encode("a b a b")};
  TrainSchedule schedule;
  schedule.steps = 200;
  schedule.batch_size = 2;
  schedule.learning_rate = 1e9; // blows up within a few steps
  CHECK_THROWS_WITH_AS(train(model, corpus, {}, schedule, 2),
                       doctest::Contains("step"), TrainingError);
}

TEST_CASE("checkpoint round trip reproduces logits bit-identically") {
  const auto& w = fixtures::toy_world();
  const auto dir = fixtures::temp_dir("ckpt");
  const std::string path = (dir / "model.tlm").string();
  save_checkpoint(w.model, path);
  const TransformerLM loaded = load_checkpoint(path);

  CHECK(loaded.config.vocab_size == w.model.config.vocab_size);
  CHECK(loaded.config.tie_decoder == w.model.config.tie_decoder);
  CHECK(loaded.vocab.tokens() == w.model.vocab.tokens());

  Rng rng(33);
  const Relation& rel = w.relations.front();
  for (int trial = 0; trial < 10; ++trial) {
    const int nsamples = static_cast<int>(rel.samples.size());
    const Sample& target = rel.samples[static_cast<std::size_t>(rng.uniform_int(nsamples))];
    std::vector<Sample> icl;
    for (const Sample& s : rel.samples) {
      if (s.subject != target.subject && static_cast<int>(icl.size()) < 3) icl.push_back(s);
    }
    const Prompt p = build_prompt(rel, target, icl, 0, PromptMode::Fewshot, w.model.vocab);
    const Trace a = forward_with_trace(w.model, p.tokens);
    const Trace b = forward_with_trace(loaded, p.tokens);
    for (Index i = 0; i < a.logits.size(); ++i) {
      CHECK(a.logits.data()[i] == b.logits.data()[i]);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted checkpoint header fails cleanly") {
  const auto& w = fixtures::toy_world();
  const auto dir = fixtures::temp_dir("ckpt_bad");
  const std::string path = (dir / "model.tlm").string();
  save_checkpoint(w.model, path);

  // flip a magic byte
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  // truncated file
  save_checkpoint(w.model, path);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints from different seeds differ but both load") {
  const auto dir = fixtures::temp_dir("ckpt_seeds");
  std::vector<std::string> words{"a", "b", "c", "\n"};
  ModelConfig cfg;
  cfg.vocab_size = 4;
  cfg.hidden_dim = 8;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.context_length = 4;

  const TransformerLM m1 = TransformerLM::init(cfg, Vocabulary(words), 1);
  const TransformerLM m2 = TransformerLM::init(cfg, Vocabulary(words), 2);
  const std::string p1 = (dir / "m1.tlm").string();
  const std::string p2 = (dir / "m2.tlm").string();
  save_checkpoint(m1, p1);
  save_checkpoint(m2, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 != b2);
  CHECK_NOTHROW(load_checkpoint(p1));
  CHECK_NOTHROW(load_checkpoint(p2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("save/load round trip is byte-stable") {
  const auto& w = fixtures::toy_world();
  const auto dir = fixtures::temp_dir("ckpt_stable");
  const std::string p1 = (dir / "a.tlm").string();
  const std::string p2 = (dir / "b.tlm").string();
  save_checkpoint(w.model, p1);
  save_checkpoint(load_checkpoint(p1), p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  std::filesystem::remove_all(dir);
}
