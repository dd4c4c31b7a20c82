#pragma once

// Learnable-query alignment of image patches, prompt assembly, and the small
// causal language model whose hidden states form the fused representation.

#include <cstdint>
#include <string>
#include <vector>

#include "mmfn/nn.hpp"
#include "mmfn/text.hpp"

namespace mmfn {

struct QueryBlock {
  Tensor queries;  // [num_queries × d]
  LayerNorm ln_self, ln_cross, ln_ffn;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
  Linear proj;  // into the language model's embedding space

  static QueryBlock init(std::size_t num_queries, std::size_t dim, std::size_t heads, Rng& rng);
  std::size_t num_queries() const { return queries.dim(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".queries", queries);
    ln_self.visit(prefix + ".ln_self", f);
    self_attn.visit(prefix + ".self_attn", f);
    ln_cross.visit(prefix + ".ln_cross", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    ln_ffn.visit(prefix + ".ln_ffn", f);
    ffn.visit(prefix + ".ffn", f);
    proj.visit(prefix + ".proj", f);
  }
};

// Queries self-attend, cross-attend to the patches, then pass the FFN, each
// with a pre-norm residual; the result is projected. Output is [num_queries × d].
// With batch > 1 the patch rows hold `batch` equal-length images back to back
// and the output stacks one query set per image.
Tensor query_fuse(const Tensor& patch_feats, const QueryBlock& block, std::size_t batch = 1);

struct PromptTemplate {
  int id = 0;  // 1..4
  std::string text;
};

inline constexpr const char* kImagePlaceholder = "<ImageHere>";
inline constexpr const char* kTextPlaceholder = "<TextHere>";
inline constexpr int kEvalTemplateId = 3;

const std::vector<PromptTemplate>& prompt_templates();
const PromptTemplate& prompt_template(int id);
// Uniform over the templates as a function of one random draw.
const PromptTemplate& pick_prompt(std::uint64_t draw);

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

struct PromptAssembly {
  Tensor embeddings;  // [seq_len × d]
  std::vector<TokenId> token_ids;  // IMG_SLOT at image positions
  Span image, text, instruction;
  int template_id = 0;
  std::size_t seq_len() const { return token_ids.size(); }
};

// Token layout: BOS, template literals, <Text>/</Text> as TXT_OPEN/TXT_CLOSE,
// the image span filled by `image_rows` and the text span by `text` tokens.
// When the sequence would exceed `context`, the text span is cut from the right.
PromptAssembly assemble_prompt(const PromptTemplate& tmpl, const Tensor& image_rows, const TokenSequence& text,
                               const Tensor& embed_table, const BpeVocab& vocab, std::size_t context);

struct TinyLm {
  Tensor token_table;  // [vocab × d], shared with the text embedding
  Tensor positions;    // [context × d]
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;

  static TinyLm init(std::size_t vocab, std::size_t dim, std::size_t layers, std::size_t heads,
                     std::size_t context, Rng& rng);
  std::size_t context() const { return positions.dim(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".token_table", token_table);
    f(prefix + ".positions", positions);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(prefix + ".block" + std::to_string(l), f);
    final_norm.visit(prefix + ".final_norm", f);
  }
};

// Hidden states after the final norm, one row per position. `lengths` packs
// several independent sequences along the rows; empty means one sequence.
Tensor lm_forward(const Tensor& embeddings, const TinyLm& lm, std::span<const std::size_t> lengths = {});
inline Tensor lm_forward(const PromptAssembly& assembly, const TinyLm& lm) { return lm_forward(assembly.embeddings, lm); }

}  // namespace mmfn
