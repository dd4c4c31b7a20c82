#include "mmfn/fusion.hpp"

#include <sstream>

#include "mmfn/assets.hpp"
#include "mmfn/errors.hpp"

namespace mmfn {

QueryBlock QueryBlock::init(std::size_t num_queries, std::size_t dim, std::size_t heads, Rng& rng) {
  if (num_queries == 0) throw ConfigError("num_queries must be positive");
  QueryBlock b;
  b.queries = normal_param({num_queries, dim}, 1.0, rng);
  b.ln_self = LayerNorm::init(dim);
  b.self_attn = MultiHeadAttention::init(dim, heads, rng);
  b.ln_cross = LayerNorm::init(dim);
  b.cross_attn = MultiHeadAttention::init(dim, heads, rng);
  b.ln_ffn = LayerNorm::init(dim);
  b.ffn = FeedForward::init(dim, 4 * dim, rng);
  b.proj = Linear::init(dim, dim, rng);
  return b;
}

Tensor query_fuse(const Tensor& patch_feats, const QueryBlock& block, std::size_t batch) {
  if (patch_feats.rank() != 2 || patch_feats.dim(0) == 0 || patch_feats.dim(1) != block.queries.dim(1) ||
      batch == 0 || patch_feats.dim(0) % batch != 0)
    throw DimensionError("query_fuse: patches " + shape_str(patch_feats.shape()) + " vs queries " +
                         shape_str(block.queries.shape()) + " for a batch of " + std::to_string(batch));
  const std::size_t nq = block.num_queries();
  const std::vector<std::size_t> q_seg(batch, nq), k_seg(batch, patch_feats.dim(0) / batch);
  Tensor x = block.queries;
  if (batch > 1) {
    std::vector<std::size_t> ids(batch * nq);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i % nq;
    x = embedding(block.queries, ids);
  }
  const Tensor hs = block.ln_self(x);
  x = add(x, block.self_attn(hs, hs, false, q_seg, q_seg));
  x = add(x, block.cross_attn(block.ln_cross(x), patch_feats, false, q_seg, k_seg));
  x = add(x, block.ffn(block.ln_ffn(x)));
  return block.proj(x);
}

// ---------------------------------------------------------------- templates

const std::vector<PromptTemplate>& prompt_templates() {
  static const std::vector<PromptTemplate> templates = [] {
    std::vector<PromptTemplate> out;
    std::istringstream is{std::string(assets::prompts())};
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto count = [&](const std::string& needle) {
        std::size_t n = 0;
        for (auto p = line.find(needle); p != std::string::npos; p = line.find(needle, p + 1)) ++n;
        return n;
      };
      if (count(kImagePlaceholder) != 1 || count(kTextPlaceholder) != 1)
        throw ConfigError("prompt template needs exactly one image and one text placeholder: " + line);
      out.push_back({static_cast<int>(out.size()) + 1, line});
    }
    if (out.size() != 4) throw ConfigError("expected 4 prompt templates, found " + std::to_string(out.size()));
    return out;
  }();
  return templates;
}

const PromptTemplate& prompt_template(int id) {
  const auto& all = prompt_templates();
  if (id < 1 || id > static_cast<int>(all.size())) throw ConfigError("no prompt template " + std::to_string(id));
  return all[static_cast<std::size_t>(id - 1)];
}

const PromptTemplate& pick_prompt(std::uint64_t draw) {
  const auto& all = prompt_templates();
  return all[draw % all.size()];
}

// ---------------------------------------------------------------- assembly

namespace {

enum class PieceKind { literal, image, text, open, close };

struct Piece {
  PieceKind kind;
  std::string literal;
};

std::vector<Piece> split_template(const std::string& text) {
  static const std::vector<std::pair<std::string, PieceKind>> markers{
      {kImagePlaceholder, PieceKind::image},
      {kTextPlaceholder, PieceKind::text},
      {"<Text>", PieceKind::open},
      {"</Text>", PieceKind::close},
  };
  std::vector<Piece> pieces;
  std::string lit;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& [m, kind] : markers) {
      if (text.compare(i, m.size(), m) == 0) {
        if (!lit.empty()) pieces.push_back({PieceKind::literal, std::move(lit)});
        lit.clear();
        pieces.push_back({kind, {}});
        i += m.size();
        matched = true;
        break;
      }
    }
    if (!matched) lit.push_back(text[i++]);
  }
  if (!lit.empty()) pieces.push_back({PieceKind::literal, std::move(lit)});
  return pieces;
}

}  // namespace

PromptAssembly assemble_prompt(const PromptTemplate& tmpl, const Tensor& image_rows, const TokenSequence& text,
                               const Tensor& embed_table, const BpeVocab& vocab, std::size_t context) {
  const std::size_t d = embed_table.dim(1);
  if (image_rows.rank() != 2 || (image_rows.dim(0) > 0 && image_rows.dim(1) != d))
    throw DimensionError("assemble_prompt: image rows " + shape_str(image_rows.shape()) + " vs embedding width " +
                         std::to_string(d));
  const auto pieces = split_template(tmpl.text);

  // Fixed length excludes the text span; the text is cut to whatever room remains.
  std::vector<std::vector<TokenId>> literal_ids(pieces.size());
  std::size_t fixed = 1;
  for (std::size_t p = 0; p < pieces.size(); ++p) {
    switch (pieces[p].kind) {
      case PieceKind::literal:
        literal_ids[p] = tokenize_ids(pieces[p].literal, vocab);
        fixed += literal_ids[p].size();
        break;
      case PieceKind::image:
        fixed += image_rows.dim(0);
        break;
      case PieceKind::open:
      case PieceKind::close:
        fixed += 1;
        break;
      case PieceKind::text:
        break;
    }
  }
  if (fixed > context)
    throw ContractError("assemble_prompt: template and image span need " + std::to_string(fixed) +
                        " positions, context is " + std::to_string(context));
  const std::size_t text_len = std::min(text.ids.size(), context - fixed);

  PromptAssembly out;
  out.template_id = tmpl.id;
  std::vector<Tensor> parts;
  std::vector<TokenId> run{special::bos};
  auto flush = [&] {
    if (!run.empty()) parts.push_back(embedding(embed_table, run));
    out.token_ids.insert(out.token_ids.end(), run.begin(), run.end());
    run.clear();
  };
  for (std::size_t p = 0; p < pieces.size(); ++p) {
    switch (pieces[p].kind) {
      case PieceKind::literal:
        if (p + 1 == pieces.size()) {
          flush();
          out.instruction.begin = out.token_ids.size();
          out.instruction.end = out.instruction.begin + literal_ids[p].size();
        }
        run.insert(run.end(), literal_ids[p].begin(), literal_ids[p].end());
        break;
      case PieceKind::open:
        run.push_back(special::txt_open);
        break;
      case PieceKind::close:
        run.push_back(special::txt_close);
        break;
      case PieceKind::image:
        flush();
        out.image.begin = out.token_ids.size();
        out.image.end = out.image.begin + image_rows.dim(0);
        if (image_rows.dim(0) > 0) parts.push_back(image_rows);
        out.token_ids.insert(out.token_ids.end(), image_rows.dim(0), special::img_slot);
        break;
      case PieceKind::text:
        flush();
        out.text.begin = out.token_ids.size();
        out.text.end = out.text.begin + text_len;
        run.assign(text.ids.begin(), text.ids.begin() + static_cast<std::ptrdiff_t>(text_len));
        flush();
        break;
    }
  }
  flush();
  if (out.instruction.size() == 0) out.instruction = {out.token_ids.size(), out.token_ids.size()};
  out.embeddings = concat_rows(parts);
  return out;
}

// ---------------------------------------------------------------- language model

TinyLm TinyLm::init(std::size_t vocab, std::size_t dim, std::size_t layers, std::size_t heads, std::size_t context,
                    Rng& rng) {
  TinyLm lm;
  lm.token_table = normal_param({vocab, dim}, 1.0, rng);
  lm.positions = normal_param({context, dim}, 0.02, rng);
  for (std::size_t l = 0; l < layers; ++l) lm.blocks.push_back(TransformerBlock::init(dim, heads, rng));
  lm.final_norm = LayerNorm::init(dim);
  return lm;
}

Tensor lm_forward(const Tensor& embeddings, const TinyLm& lm, std::span<const std::size_t> lengths) {
  const std::size_t t = embeddings.rows();
  const std::vector<std::size_t> lens = lengths.empty() ? std::vector<std::size_t>{t}
                                                        : std::vector<std::size_t>(lengths.begin(), lengths.end());
  std::vector<std::size_t> pos;
  pos.reserve(t);
  for (std::size_t len : lens) {
    if (len == 0 || len > lm.context())
      throw DimensionError("lm_forward: sequence of " + std::to_string(len) + " positions, context " +
                           std::to_string(lm.context()));
    for (std::size_t i = 0; i < len; ++i) pos.push_back(i);
  }
  if (pos.size() != t)
    throw DimensionError("lm_forward: lengths cover " + std::to_string(pos.size()) + " of " + std::to_string(t) +
                         " rows");
  Tensor x = add(embeddings, lens.size() == 1 ? slice_rows(lm.positions, 0, t) : embedding(lm.positions, pos));
  for (const auto& block : lm.blocks) x = block(x, true, lens);
  return lm.final_norm(x);
}

}  // namespace mmfn
