#pragma once

// Byte-level BPE tokenizer and token embeddings.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmfn/tensor.hpp"

namespace mmfn {

using TokenId = std::size_t;

namespace special {
inline constexpr TokenId pad = 256;
inline constexpr TokenId bos = 257;
inline constexpr TokenId eos = 258;
inline constexpr TokenId img_slot = 259;
inline constexpr TokenId txt_open = 260;
inline constexpr TokenId txt_close = 261;
inline constexpr std::size_t count = 6;
}  // namespace special

class BpeVocab {
 public:
  static constexpr std::size_t kByteTokens = 256;
  static constexpr TokenId kFirstMerge = kByteTokens + special::count;

  BpeVocab() { rebuild(); }
  BpeVocab(std::size_t vocab_size, std::vector<std::pair<TokenId, TokenId>> merges);

  // Declared size; actual size() may be smaller when training ran out of pairs.
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t size() const { return kFirstMerge + merges_.size(); }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }

  // Byte string of a non-special token.
  const std::string& bytes(TokenId id) const;
  static bool is_special(TokenId id) { return id >= kByteTokens && id < kFirstMerge; }
  // Rank of the merge (left, right), or -1.
  long rank(TokenId left, TokenId right) const;

  bool operator==(const BpeVocab& o) const { return vocab_size_ == o.vocab_size_ && merges_ == o.merges_; }

  // Text format: header "bpe-vocab v1 vocab_size=<n>", then one "left<TAB>right" id pair per line.
  std::string serialize() const;
  static BpeVocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static BpeVocab load(const std::filesystem::path& path);

 private:
  void rebuild();

  std::size_t vocab_size_ = kFirstMerge;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::vector<std::string> token_bytes_;
  std::unordered_map<std::uint64_t, long> ranks_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t max_len = 128;

  std::size_t size() const { return ids.size(); }
  // Copy padded with PAD up to `len` (or truncated to it).
  TokenSequence padded(std::size_t len) const;
};

// Splits before every space; merges never cross these boundaries.
std::vector<std::string_view> pretokenize(std::string_view text);

// Greedy highest-count merges until vocab_size or no pair occurs twice.
// Ties: lexicographically smaller left token bytes, then smaller right.
BpeVocab bpe_train(const std::vector<std::string>& corpus, std::size_t vocab_size);

TokenSequence tokenize(std::string_view text, const BpeVocab& vocab, std::size_t max_len = 128);
std::vector<TokenId> tokenize_ids(std::string_view text, const BpeVocab& vocab);
// Specials are rendered as nothing.
std::string detokenize(std::span<const TokenId> ids, const BpeVocab& vocab);

Tensor embed_tokens(const TokenSequence& seq, const Tensor& table);

}  // namespace mmfn
