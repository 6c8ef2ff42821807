#include <doctest.h>

#include <future>
#include <thread>

#include "fixtures.hpp"
#include "linrel/diff.hpp"
#include "linrel/errors.hpp"
#include "linrel/model.hpp"
#include "linrel/relations.hpp"
#include "linrel/rng.hpp"

using namespace linrel;

namespace {

std::vector<int> fewshot_tokens(const fixtures::ToyWorld& w, int target_index,
                                int icl_count, Prompt* out_prompt = nullptr) {
  const Relation& rel = w.relations.front();
  std::vector<Sample> icl;
  for (int i = 0; i < static_cast<int>(rel.samples.size()) && (int)icl.size() < icl_count;
       ++i) {
    if (i != target_index) icl.push_back(rel.samples[static_cast<std::size_t>(i)]);
  }
  const Prompt p = build_prompt(rel, rel.samples[static_cast<std::size_t>(target_index)],
                                icl, 0, PromptMode::Fewshot, w.model.vocab);
  if (out_prompt) *out_prompt = p;
  return p.tokens;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      if (a(i, j) != b(i, j)) return false;
    }
  }
  return true;
}

} // namespace

TEST_CASE("toy fixture trains to full statement accuracy") {
  CHECK(fixtures::toy_world().final_accuracy == doctest::Approx(1.0));
}

TEST_CASE("forward is deterministic and an empty patch list is a no-op") {
  const auto& w = fixtures::toy_world();
  const auto tokens = fewshot_tokens(w, 0, 3);
  const Trace a = forward_with_trace(w.model, tokens);
  const Trace b = forward_with_trace(w.model, tokens, {});
  for (std::size_t l = 0; l < a.hidden.size(); ++l) {
    CHECK(bitwise_equal(a.hidden[l], b.hidden[l]));
  }
  CHECK(bitwise_equal(a.logits, b.logits));
}

TEST_CASE("layer-0 patch with another token's state equals re-tokenized substitution") {
  const auto& w = fixtures::toy_world();
  Prompt prompt;
  const auto tokens = fewshot_tokens(w, 0, 3, &prompt);
  const int pos = prompt.subject_last; // single-token subjects

  // swap in subject s_7's token directly
  std::vector<int> swapped = tokens;
  const int other = w.model.vocab.id("s_7");
  swapped[static_cast<std::size_t>(pos)] = other;
  const Trace direct = forward_with_trace(w.model, swapped);

  // same substitution through a layer-0 patch: the donor's embedding-layer
  // state at that position (token embedding + position embedding)
  const Trace donor = forward_with_trace(w.model, swapped);
  const Patch patch{0, pos, donor.hidden[0].col(pos)};
  const Trace patched = forward_with_trace(w.model, tokens, {&patch, 1});

  for (std::size_t l = 0; l < direct.hidden.size(); ++l) {
    CHECK(bitwise_equal(direct.hidden[l], patched.hidden[l]));
  }
  CHECK(bitwise_equal(direct.logits, patched.logits));
}

TEST_CASE("patch at (layer, last) matches a manual replay of the remaining blocks") {
  const auto& w = fixtures::toy_world();
  const auto tokens = fewshot_tokens(w, 1, 3);
  const int last = static_cast<int>(tokens.size()) - 1;

  Rng rng(42);
  Vec v(w.model.config.hidden_dim);
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();

  for (int layer = 0; layer <= w.model.config.num_layers; ++layer) {
    const Patch patch{layer, last, v};
    const Trace patched = forward_with_trace(w.model, tokens, {&patch, 1});

    const Trace base = forward_with_trace(w.model, tokens);
    Mat states = base.hidden[static_cast<std::size_t>(layer)];
    states.col(last) = v;
    const Mat replayed = run_from_layer(w.model, layer, states);

    CHECK(bitwise_equal(patched.hidden.back(), replayed));
    const Vec logits = w.model.decode_hidden(replayed.col(last));
    CHECK(bitwise_equal(patched.logits.col(last), logits));
  }
}

TEST_CASE("trace consistency: re-running layers l..L reproduces the final hidden state") {
  const auto& w = fixtures::toy_world();
  const auto tokens = fewshot_tokens(w, 2, 4);
  const Trace trace = forward_with_trace(w.model, tokens);
  for (int layer = 0; layer <= w.model.config.num_layers; ++layer) {
    const Mat replayed =
        run_from_layer(w.model, layer, trace.hidden[static_cast<std::size_t>(layer)]);
    CHECK(bitwise_equal(replayed, trace.hidden.back()));
  }
}

TEST_CASE("decoder applied to final-normed hidden reproduces trace logits bit-identically") {
  const auto& w = fixtures::toy_world();
  const auto tokens = fewshot_tokens(w, 3, 2);
  const Trace trace = forward_with_trace(w.model, tokens);
  const int last = trace.seq_len() - 1;
  const Vec logits = w.model.decode_hidden(trace.hidden.back().col(last));
  CHECK(bitwise_equal(trace.logits.col(last), logits));
}

TEST_CASE("relation_forward reads s and o per contract") {
  const auto& w = fixtures::toy_world();
  const Relation& rel = w.relations.front();
  const Sample& target = rel.samples[4];
  std::vector<Sample> icl{rel.samples[1], rel.samples[2], rel.samples[3]};
  const Prompt prompt = build_prompt(rel, target, icl, 0, PromptMode::Fewshot, w.model.vocab);

  // memorized fact: the trained model predicts the object token
  const RelationForwardResult fwd = relation_forward(w.model, prompt, 1);
  CHECK(fwd.predicted_token == object_first_token(w.model.vocab, target));

  // determinism: bit-identical states on a second run
  const RelationForwardResult again = relation_forward(w.model, prompt, 1);
  CHECK(bitwise_equal(fwd.s, again.s));
  CHECK(bitwise_equal(fwd.o, again.o));

  // boundary layer L: s and o come from the same layer, different positions
  const RelationForwardResult top = relation_forward(w.model, prompt, w.model.config.num_layers);
  const Trace trace = forward_with_trace(w.model, prompt.tokens);
  CHECK(bitwise_equal(top.s, Vec(trace.hidden.back().col(prompt.subject_last))));
  CHECK(bitwise_equal(top.o, Vec(trace.hidden.back().col(trace.seq_len() - 1))));
}

TEST_CASE("ObjectStateMap: exact jacobian vs finite differences on the toy model") {
  const auto& w = fixtures::toy_world();
  Prompt prompt;
  const auto tokens = fewshot_tokens(w, 5, 3, &prompt);

  for (int layer = 0; layer <= w.model.config.num_layers; ++layer) {
    const ObjectStateMap map(w.model, tokens, layer, prompt.subject_last);
    const Vec s = map.base_input();
    const Mat exact = jacobian(map, s);
    const Mat fd = finite_diff_jacobian(map, s, 1e-3);
    CHECK((exact - fd).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(((exact - fd).array().abs() / (1.0 + fd.array().abs())).maxCoeff() < 1e-4);
  }
}

TEST_CASE("ObjectStateMap jacobian of the trained model is finite and nonzero") {
  const auto& w = fixtures::toy_world();
  Prompt prompt;
  const auto tokens = fewshot_tokens(w, 6, 3, &prompt);
  const ObjectStateMap map(w.model, tokens, 1, prompt.subject_last);
  const Mat j = jacobian(map, map.base_input());
  CHECK(j.allFinite());
  CHECK(j.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("ObjectStateMap value at the base input reproduces the unpatched object state") {
  const auto& w = fixtures::toy_world();
  Prompt prompt;
  const auto tokens = fewshot_tokens(w, 7, 3, &prompt);
  const Trace trace = forward_with_trace(w.model, tokens);
  const ObjectStateMap map(w.model, tokens, 1, prompt.subject_last);
  const Vec o = map.value(map.base_input());
  CHECK(bitwise_equal(o, Vec(trace.hidden.back().col(trace.seq_len() - 1))));
}

TEST_CASE("concurrent evaluations of one ObjectStateMap are safe and identical") {
  const auto& w = fixtures::toy_world();
  Prompt prompt;
  const auto tokens = fewshot_tokens(w, 8, 3, &prompt);
  const ObjectStateMap map(w.model, tokens, 1, prompt.subject_last);

  Rng rng(9);
  std::vector<Vec> inputs;
  for (int i = 0; i < 8; ++i) {
    Vec x(w.model.config.hidden_dim);
    for (Index k = 0; k < x.size(); ++k) x[k] = rng.normal();
    inputs.push_back(x);
  }
  std::vector<Vec> serial;
  for (const Vec& x : inputs) serial.push_back(map.value(x));

  std::vector<std::future<Vec>> futures;
  for (const Vec& x : inputs) {
    futures.push_back(std::async(std::launch::async, [&map, x] { return map.value(x); }));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(bitwise_equal(futures[i].get(), serial[i]));
  }
}

TEST_CASE("forward input validation") {
  const auto& w = fixtures::toy_world();
  CHECK_THROWS_AS(forward_with_trace(w.model, std::vector<int>{}), ContractError);

  std::vector<int> too_long(static_cast<std::size_t>(w.model.config.context_length) + 1, 0);
  CHECK_THROWS_AS(forward_with_trace(w.model, too_long), ContractError);

  std::vector<int> bad_token{w.model.config.vocab_size};
  CHECK_THROWS_AS(forward_with_trace(w.model, bad_token), InputError);

  const auto tokens = fewshot_tokens(w, 0, 2);
  const Vec v = Vec::Zero(w.model.config.hidden_dim);
  const Patch bad_layer{w.model.config.num_layers + 1, 0, v};
  CHECK_THROWS_AS(forward_with_trace(w.model, tokens, {&bad_layer, 1}), ContractError);
  const Patch bad_pos{0, static_cast<int>(tokens.size()), v};
  CHECK_THROWS_AS(forward_with_trace(w.model, tokens, {&bad_pos, 1}), ContractError);
  const Patch bad_dim{0, 0, Vec::Zero(3)};
  CHECK_THROWS_AS(forward_with_trace(w.model, tokens, {&bad_dim, 1}), ContractError);
}
