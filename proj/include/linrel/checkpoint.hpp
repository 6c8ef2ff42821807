#pragma once

#include <string>

#include "linrel/model.hpp"

namespace linrel {

/// Binary checkpoint: magic "TLM1", version u32, config fields as
/// little-endian u32 (vocab_size, hidden_dim, num_layers, num_heads,
/// context_length, tie_decoder), the vocabulary as a UTF-8 token list, then
/// each weight tensor as (name length, name bytes, rank, dims, f64 payload).
/// load(save(m)) reproduces forward outputs bit-identically.
void save_checkpoint(const TransformerLM& model, const std::string& path);
TransformerLM load_checkpoint(const std::string& path);

} // namespace linrel
