#include "linrel/lens.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "linrel/errors.hpp"
#include "linrel/ops.hpp"
#include "linrel/rng.hpp"

namespace linrel {

namespace {

std::vector<LensCellEntry> top_k_cell(const Vocabulary& vocab, const Vec& logits, int k) {
  const Vec probs = softmax(logits);
  const int keep = std::min<int>(k, static_cast<int>(probs.size()));
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  // descending probability, token id breaks ties
  std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                    [&probs](int a, int b) {
                      if (probs[a] != probs[b]) return probs[a] > probs[b];
                      return a < b;
                    });
  std::vector<LensCellEntry> cell;
  cell.reserve(static_cast<std::size_t>(keep));
  for (int i = 0; i < keep; ++i) {
    cell.push_back({vocab.token(order[static_cast<std::size_t>(i)]),
                    probs[order[static_cast<std::size_t>(i)]]});
  }
  return cell;
}

} // namespace

LensGrid attribute_lens(const TransformerLM& model, const OperatorFn& op,
                        const Prompt& prompt, int k) {
  if (k < 1) throw ContractError("attribute_lens: k must be >= 1");
  const Trace trace = forward_with_trace(model, prompt.tokens);
  LensGrid grid;
  grid.layers = model.config.num_layers + 1;
  grid.positions = trace.seq_len();
  for (int id : prompt.tokens) grid.prompt_tokens.push_back(model.vocab.token(id));

  grid.cells.resize(static_cast<std::size_t>(grid.layers));
  for (int l = 0; l < grid.layers; ++l) {
    auto& row = grid.cells[static_cast<std::size_t>(l)];
    row.resize(static_cast<std::size_t>(grid.positions));
    for (int p = 0; p < grid.positions; ++p) {
      const Vec h = trace.hidden[static_cast<std::size_t>(l)].col(p);
      row[static_cast<std::size_t>(p)] = top_k_cell(model.vocab, model.decode_hidden(op(h)), k);
    }
  }
  return grid;
}

LensGrid attribute_lens(const TransformerLM& model, const LreOperator& op,
                        const Prompt& prompt, int k) {
  return attribute_lens(
      model, [&op](const Vec& h) { return op.apply(h); }, prompt, k);
}

namespace {

std::string truncate_label(const std::string& s) {
  return s.size() <= 12 ? s : s.substr(0, 12);
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\n': out += "\\n"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string render_text(const LensGrid& grid) {
  constexpr int width = 14;
  std::ostringstream os;
  os << std::string(8, ' ');
  for (int p = 0; p < grid.positions; ++p) {
    std::string label = truncate_label(grid.prompt_tokens[static_cast<std::size_t>(p)] == "\n"
                                           ? "\\n"
                                           : grid.prompt_tokens[static_cast<std::size_t>(p)]);
    label.resize(static_cast<std::size_t>(width), ' ');
    os << label;
  }
  os << '\n';
  // deepest layer on top, embeddings at the bottom
  for (int l = grid.layers - 1; l >= 0; --l) {
    std::string row_label = "L" + std::to_string(l);
    row_label.resize(8, ' ');
    os << row_label;
    for (int p = 0; p < grid.positions; ++p) {
      const auto& cell = grid.cells[static_cast<std::size_t>(l)][static_cast<std::size_t>(p)];
      std::string label = cell.empty() ? "-" : truncate_label(cell.front().token == "\n"
                                                                  ? "\\n"
                                                                  : cell.front().token);
      label.resize(static_cast<std::size_t>(width), ' ');
      os << label;
    }
    os << '\n';
  }
  return os.str();
}

std::string render_svg(const LensGrid& grid) {
  constexpr int cell_w = 90, cell_h = 24, margin_left = 48, margin_top = 28;
  const int width = margin_left + grid.positions * cell_w + 8;
  const int height = margin_top + grid.layers * cell_h + 8;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\">\n";
  for (int p = 0; p < grid.positions; ++p) {
    os << "  <text x=\"" << margin_left + p * cell_w + cell_w / 2 << "\" y=\""
       << margin_top - 8 << "\" font-size=\"10\" text-anchor=\"middle\">"
       << escape_xml(truncate_label(grid.prompt_tokens[static_cast<std::size_t>(p)]))
       << "</text>\n";
  }
  for (int l = 0; l < grid.layers; ++l) {
    const int row = grid.layers - 1 - l; // deepest layer on top
    const int y = margin_top + row * cell_h;
    os << "  <text x=\"" << margin_left - 6 << "\" y=\"" << y + cell_h / 2 + 4
       << "\" font-size=\"10\" text-anchor=\"end\">L" << l << "</text>\n";
    for (int p = 0; p < grid.positions; ++p) {
      const auto& cell = grid.cells[static_cast<std::size_t>(l)][static_cast<std::size_t>(p)];
      const double opacity = cell.empty() ? 0.0 : cell.front().prob;
      const int x = margin_left + p * cell_w;
      os << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w
         << "\" height=\"" << cell_h << "\" fill=\"#2c6fbb\" fill-opacity=\""
         << format_double(opacity) << "\" stroke=\"#444\"/>\n";
      os << "  <text x=\"" << x + cell_w / 2 << "\" y=\"" << y + cell_h / 2 + 4
         << "\" font-size=\"10\" text-anchor=\"middle\">"
         << (cell.empty() ? "" : escape_xml(truncate_label(cell.front().token)))
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_json(const LensGrid& grid) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& layer_row : grid.cells) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& cell : layer_row) {
      nlohmann::json entries = nlohmann::json::array();
      for (const LensCellEntry& e : cell) {
        entries.push_back(nlohmann::json::array({e.token, e.prob}));
      }
      row.push_back(std::move(entries));
    }
    cells.push_back(std::move(row));
  }
  const nlohmann::json j = {{"layers", grid.layers},
                            {"positions", grid.positions},
                            {"cells", std::move(cells)},
                            {"tokens", grid.prompt_tokens}};
  return j.dump() + "\n";
}

} // namespace

std::string render_grid(const LensGrid& grid, GridFormat format) {
  switch (format) {
    case GridFormat::Text: return render_text(grid);
    case GridFormat::Svg: return render_svg(grid);
    case GridFormat::Json: return render_json(grid);
  }
  throw ContractError("render_grid: unknown format");
}

LensGrid parse_grid(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("lens grid: invalid JSON: ") + e.what());
  }
  LensGrid grid;
  try {
    grid.layers = j.at("layers").get<int>();
    grid.positions = j.at("positions").get<int>();
    grid.prompt_tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& row : j.at("cells")) {
      std::vector<std::vector<LensCellEntry>> layer_row;
      for (const auto& cell : row) {
        std::vector<LensCellEntry> entries;
        for (const auto& e : cell) {
          entries.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
        }
        layer_row.push_back(std::move(entries));
      }
      grid.cells.push_back(std::move(layer_row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("lens grid: schema violation: ") + e.what());
  }
  return grid;
}

Prompt build_distracted_prompt(const Relation& relation, const Sample& sample,
                               const std::string& false_object, DistractionMode mode,
                               const Vocabulary& vocab, int template_index) {
  if (mode == DistractionMode::None) {
    return build_prompt(relation, sample, {}, template_index, PromptMode::Zeroshot, vocab);
  }
  if (false_object == sample.object) {
    throw ContractError("build_distracted_prompt: false object equals the true object");
  }
  const auto objects = relation.object_set();
  if (std::find(objects.begin(), objects.end(), false_object) == objects.end()) {
    throw ContractError("build_distracted_prompt: false object '" + false_object +
                        "' is not in the relation's object set");
  }

  const std::string falsehood =
      relation.fill_template(template_index, sample.subject) + " " + false_object;
  const std::string truncated = relation.fill_template(template_index, sample.subject);

  Prompt prompt;
  if (mode == DistractionMode::Repetition) {
    prompt.text = falsehood + "\n" + falsehood + "\n" + truncated;
  } else {
    prompt.text = falsehood + "\nRepeat exactly.\n" + truncated;
  }
  prompt.tokens = vocab.encode(prompt.text);
  prompt.icl_count = mode == DistractionMode::Repetition ? 2 : 1;

  const std::vector<int> subject_tokens = vocab.encode(sample.subject);
  const int n = static_cast<int>(prompt.tokens.size());
  const int m = static_cast<int>(subject_tokens.size());
  int found = -1;
  for (int start = 0; start + m <= n; ++start) {
    if (std::equal(subject_tokens.begin(), subject_tokens.end(),
                   prompt.tokens.begin() + start)) {
      found = start;
    }
  }
  if (found < 0) {
    throw DatasetError("build_distracted_prompt: subject '" + sample.subject +
                       "' not recoverable from the tokenized prompt");
  }
  prompt.subject_first = found;
  prompt.subject_last = found + m - 1;
  return prompt;
}

RecallTable distraction_eval(const TransformerLM& model, const LreOperator& op,
                             const Relation& relation, std::span<const Sample> known,
                             DistractionMode mode, const std::vector<int>& k_list,
                             int probe_layer, std::uint64_t seed, int template_index) {
  if (known.empty()) throw EvalError("distraction_eval: empty known set");
  if (k_list.empty()) throw ContractError("distraction_eval: empty k list");
  const auto objects = relation.object_set();
  if (mode != DistractionMode::None && objects.size() < 2) {
    throw EvalError("distraction_eval: relation '" + relation.name +
                    "' has fewer than 2 distinct objects");
  }
  if (probe_layer < 0 || probe_layer > model.config.num_layers) {
    throw ContractError("distraction_eval: probe layer out of range");
  }

  // rank of the target token under descending scores (competition ranking,
  // ties broken by token id); recall@k checks rank < k
  auto rank_of = [](const Vec& scores, int target) {
    int rank = 0;
    for (Index t = 0; t < scores.size(); ++t) {
      if (scores[t] > scores[target] ||
          (scores[t] == scores[target] && t < target)) {
        ++rank;
      }
    }
    return rank;
  };

  Rng rng(seed);
  const int layers = model.config.num_layers + 1;
  std::vector<int> direct_ranks;
  std::vector<int> lens_ranks;
  Mat layer_ranks(layers, static_cast<Index>(known.size()));

  for (std::size_t i = 0; i < known.size(); ++i) {
    const Sample& sample = known[i];
    Prompt prompt;
    if (mode == DistractionMode::None) {
      prompt = build_distracted_prompt(relation, sample, "", mode, model.vocab,
                                       template_index);
    } else {
      std::vector<std::string> candidates;
      for (const std::string& obj : objects) {
        if (obj != sample.object) candidates.push_back(obj);
      }
      const std::string& false_object =
          candidates[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(candidates.size())))];
      prompt = build_distracted_prompt(relation, sample, false_object, mode, model.vocab,
                                       template_index);
    }

    const int target = object_first_token(model.vocab, sample);
    const Trace trace = forward_with_trace(model, prompt.tokens);
    direct_ranks.push_back(rank_of(trace.logits.col(trace.seq_len() - 1), target));
    for (int l = 0; l < layers; ++l) {
      const Vec h = trace.hidden[static_cast<std::size_t>(l)].col(prompt.subject_last);
      const int r = rank_of(model.decode_hidden(op.apply(h)), target);
      layer_ranks(l, static_cast<Index>(i)) = r;
      if (l == probe_layer) lens_ranks.push_back(r);
    }
  }

  RecallTable table;
  table.ks = k_list;
  table.probe_layer = probe_layer;
  table.lens_by_layer.resize(layers, static_cast<Index>(k_list.size()));
  const double total = static_cast<double>(known.size());
  for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
    const int k = k_list[ki];
    int direct_hits = 0, lens_hits = 0;
    for (std::size_t i = 0; i < known.size(); ++i) {
      if (direct_ranks[i] < k) ++direct_hits;
      if (lens_ranks[i] < k) ++lens_hits;
    }
    table.direct.push_back(direct_hits / total);
    table.lens.push_back(lens_hits / total);
    for (int l = 0; l < layers; ++l) {
      int hits = 0;
      for (Index i = 0; i < layer_ranks.cols(); ++i) {
        if (layer_ranks(l, i) < k) ++hits;
      }
      table.lens_by_layer(l, static_cast<Index>(ki)) = hits / total;
    }
  }
  return table;
}

} // namespace linrel
