#include "linrel/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "linrel/errors.hpp"
#include "linrel/tensor.hpp"

namespace linrel {

namespace {

constexpr char kMagic[4] = {'T', 'L', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

// (name, tensor) pairs in canonical order. Embedding-like tensors are
// serialized as [V x d] / [T x d] with one row per token/position; square and
// rectangular projections keep their out x in orientation, row-major.
std::vector<Tensor> collect_tensors(const TransformerLM& m) {
  std::vector<Tensor> out;
  out.push_back(Tensor::from_matrix("tok_emb", m.tok_emb.transpose()));
  out.push_back(Tensor::from_matrix("pos_emb", m.pos_emb.transpose()));
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    const BlockWeights& b = m.blocks[i];
    out.push_back(Tensor::from_vector(prefix + "ln1.gain", b.ln1.gain));
    out.push_back(Tensor::from_vector(prefix + "ln1.bias", b.ln1.bias));
    out.push_back(Tensor::from_matrix(prefix + "attn.wq", b.wq));
    out.push_back(Tensor::from_vector(prefix + "attn.bq", b.bq));
    out.push_back(Tensor::from_matrix(prefix + "attn.wk", b.wk));
    out.push_back(Tensor::from_vector(prefix + "attn.bk", b.bk));
    out.push_back(Tensor::from_matrix(prefix + "attn.wv", b.wv));
    out.push_back(Tensor::from_vector(prefix + "attn.bv", b.bv));
    out.push_back(Tensor::from_matrix(prefix + "attn.wo", b.wo));
    out.push_back(Tensor::from_vector(prefix + "attn.bo", b.bo));
    out.push_back(Tensor::from_vector(prefix + "ln2.gain", b.ln2.gain));
    out.push_back(Tensor::from_vector(prefix + "ln2.bias", b.ln2.bias));
    out.push_back(Tensor::from_matrix(prefix + "mlp.w1", b.w1));
    out.push_back(Tensor::from_vector(prefix + "mlp.b1", b.b1));
    out.push_back(Tensor::from_matrix(prefix + "mlp.w2", b.w2));
    out.push_back(Tensor::from_vector(prefix + "mlp.b2", b.b2));
  }
  out.push_back(Tensor::from_vector("ln_f.gain", m.ln_f.gain));
  out.push_back(Tensor::from_vector("ln_f.bias", m.ln_f.bias));
  if (!m.config.tie_decoder) {
    out.push_back(Tensor::from_matrix("dec", m.dec.transpose()));
  }
  return out;
}

Mat take_matrix(std::map<std::string, Tensor>& pool, const std::string& name,
                Index rows, Index cols) {
  auto it = pool.find(name);
  if (it == pool.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
  Mat m = it->second.to_matrix();
  pool.erase(it);
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError("checkpoint: tensor '" + name + "' has unexpected shape");
  }
  return m;
}

Vec take_vector(std::map<std::string, Tensor>& pool, const std::string& name, Index len) {
  auto it = pool.find(name);
  if (it == pool.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
  Vec v = it->second.to_vector();
  pool.erase(it);
  if (v.size() != len) {
    throw FormatError("checkpoint: tensor '" + name + "' has unexpected length");
  }
  return v;
}

} // namespace

void save_checkpoint(const TransformerLM& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");

  os.write(kMagic, sizeof(kMagic));
  io::write_u32(os, kVersion);
  io::write_u32(os, static_cast<std::uint32_t>(model.config.vocab_size));
  io::write_u32(os, static_cast<std::uint32_t>(model.config.hidden_dim));
  io::write_u32(os, static_cast<std::uint32_t>(model.config.num_layers));
  io::write_u32(os, static_cast<std::uint32_t>(model.config.num_heads));
  io::write_u32(os, static_cast<std::uint32_t>(model.config.context_length));
  io::write_u32(os, model.config.tie_decoder ? 1u : 0u);

  io::write_u32(os, static_cast<std::uint32_t>(model.vocab.size()));
  for (const std::string& t : model.vocab.tokens()) io::write_string(os, t);

  const std::vector<Tensor> tensors = collect_tensors(model);
  io::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor& t : tensors) write_tensor(os, t);
  os.flush();
  if (!os) throw FormatError("checkpoint: write to '" + path + "' failed");
}

TransformerLM load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");

  char magic[4] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = io::read_u32(is);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }

  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(io::read_u32(is));
  cfg.hidden_dim = static_cast<int>(io::read_u32(is));
  cfg.num_layers = static_cast<int>(io::read_u32(is));
  cfg.num_heads = static_cast<int>(io::read_u32(is));
  cfg.context_length = static_cast<int>(io::read_u32(is));
  cfg.tie_decoder = io::read_u32(is) != 0;
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }

  const std::uint32_t vocab_count = io::read_u32(is);
  if (static_cast<int>(vocab_count) != cfg.vocab_size) {
    throw FormatError("checkpoint: vocabulary count does not match config");
  }
  std::vector<std::string> tokens(vocab_count);
  for (auto& t : tokens) t = io::read_string(is);

  const std::uint32_t tensor_count = io::read_u32(is);
  std::map<std::string, Tensor> pool;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    Tensor t = read_tensor(is);
    const std::string name = t.name;
    if (!pool.emplace(name, std::move(t)).second) {
      throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    }
  }

  TransformerLM m;
  m.config = cfg;
  try {
    m.vocab = Vocabulary(std::move(tokens));
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint: bad vocabulary: ") + e.what());
  }

  const Index d = cfg.hidden_dim;
  m.tok_emb = take_matrix(pool, "tok_emb", cfg.vocab_size, d).transpose();
  m.pos_emb = take_matrix(pool, "pos_emb", cfg.context_length, d).transpose();
  m.blocks.resize(static_cast<std::size_t>(cfg.num_layers));
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + ".";
    BlockWeights& b = m.blocks[i];
    b.ln1.gain = take_vector(pool, prefix + "ln1.gain", d);
    b.ln1.bias = take_vector(pool, prefix + "ln1.bias", d);
    b.wq = take_matrix(pool, prefix + "attn.wq", d, d);
    b.bq = take_vector(pool, prefix + "attn.bq", d);
    b.wk = take_matrix(pool, prefix + "attn.wk", d, d);
    b.bk = take_vector(pool, prefix + "attn.bk", d);
    b.wv = take_matrix(pool, prefix + "attn.wv", d, d);
    b.bv = take_vector(pool, prefix + "attn.bv", d);
    b.wo = take_matrix(pool, prefix + "attn.wo", d, d);
    b.bo = take_vector(pool, prefix + "attn.bo", d);
    b.ln2.gain = take_vector(pool, prefix + "ln2.gain", d);
    b.ln2.bias = take_vector(pool, prefix + "ln2.bias", d);
    b.w1 = take_matrix(pool, prefix + "mlp.w1", 4 * d, d);
    b.b1 = take_vector(pool, prefix + "mlp.b1", 4 * d);
    b.w2 = take_matrix(pool, prefix + "mlp.w2", d, 4 * d);
    b.b2 = take_vector(pool, prefix + "mlp.b2", d);
  }
  m.ln_f.gain = take_vector(pool, "ln_f.gain", d);
  m.ln_f.bias = take_vector(pool, "ln_f.bias", d);
  if (!cfg.tie_decoder) {
    m.dec = take_matrix(pool, "dec", cfg.vocab_size, d).transpose();
  }
  if (!pool.empty()) {
    throw FormatError("checkpoint: unexpected extra tensor '" + pool.begin()->first + "'");
  }
  return m;
}

} // namespace linrel
