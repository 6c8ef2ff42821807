#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "linrel/model.hpp"
#include "linrel/types.hpp"

namespace linrel {

struct TrainSchedule {
  int steps = 2000;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every = 100;       // statement-accuracy probe cadence
  double target_accuracy = 0.0; // early stop once reached (0 disables)
  int min_steps = 200;
};

/// A probe statement: feed `tokens`, require argmax at the last position to
/// equal `target`.
struct EvalStatement {
  std::vector<int> tokens;
  int target = -1;
};

struct TrainResult {
  std::vector<double> loss_history; // one entry per step
  double final_accuracy = 0.0;      // over eval statements, end of training
  int steps_run = 0;
};

/// Mean next-token cross-entropy of one sequence, and parameter gradients of
/// that loss accumulated into `grads` (same shapes as `model`), scaled by
/// `grad_scale`. Exact reverse-mode differentiation.
double sequence_loss_and_grad(const TransformerLM& model, std::span<const int> tokens,
                              TransformerLM& grads, double grad_scale);

double sequence_loss(const TransformerLM& model, std::span<const int> tokens);

/// Fraction of statements whose last-position argmax hits the target.
double statement_accuracy(const TransformerLM& model,
                          std::span<const EvalStatement> statements);

/// Adam on mini-batches drawn uniformly from the corpus. Deterministic given
/// the seed; throws TrainingError naming the step when the loss goes
/// non-finite.
TrainResult train(TransformerLM& model, const std::vector<std::vector<int>>& corpus,
                  std::span<const EvalStatement> eval_statements,
                  const TrainSchedule& schedule, std::uint64_t seed);

} // namespace linrel
